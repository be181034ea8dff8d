import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from otformation.costs import CongestionTerm, ObstacleTerm, ShapeTerm
from otformation.scenarios import (
    CATALOG_NAMES,
    ScenarioError,
    ScenarioSpec,
    generate_circle,
    generate_circle_in_circle,
    generate_flying_v,
    generate_grid,
    get_scenario,
    load_scenario,
    paper_scenarios,
    parse_scenario,
    save_scenario,
    set_dotted,
)


# -- generators -------------------------------------------------------------

def test_grid_examples():
    assert generate_grid(1, 1, spacing=3.0).tolist() == [[0.0, 0.0]]
    pts = generate_grid(2, 2, spacing=1.0)
    assert sorted(map(tuple, pts)) == sorted([(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)])
    pts = generate_grid(2, 3, spacing=0.5, anchor=(1.0, -2.0))
    assert len(pts) == 6
    assert np.allclose(pts.mean(0), [1.0, -2.0], atol=1e-12)


def test_circle_in_circle_examples():
    pts = generate_circle_in_circle(4, 0, 1.0, 0.5)
    assert np.allclose(pts, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)
    pts = generate_circle_in_circle(1, 1, 2.0, 1.0)
    assert np.allclose(pts, [[2.0, 0.0], [1.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(0, 20), st.floats(0.1, 1.0), st.floats(1.1, 5.0),
       st.floats(-5, 5), st.floats(-5, 5))
def test_circle_in_circle_radii(n_out, n_in, r_in, r_out, cx, cy):
    pts = generate_circle_in_circle(n_out, n_in, r_out, r_in, (cx, cy))
    assert len(pts) == n_out + n_in
    d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    assert np.allclose(d[:n_out], r_out, atol=1e-12)
    assert np.allclose(d[n_out:], r_in, atol=1e-12)


def test_circle_in_circle_rejects_bad_radii():
    with pytest.raises(ScenarioError):
        generate_circle_in_circle(3, 3, 0.5, 1.0)


def test_circle_points():
    pts = generate_circle(6, 2.0, (1.0, 1.0))
    assert np.allclose(np.hypot(*(pts - 1.0).T), 2.0)


def test_flying_v_examples():
    pts = generate_flying_v(1, apex=(0.0, 0.0), wing_angle=45.0, spacing=1.0)
    assert len(pts) == 3
    h = np.sqrt(2) / 2
    assert sorted(map(tuple, np.round(pts[1:], 12))) == sorted([(-round(h, 12), round(h, 12)),
                                                                (-round(h, 12), -round(h, 12))])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.floats(-3, 3), st.floats(-3, 3), st.floats(10, 80), st.floats(0.1, 2))
def test_flying_v_symmetric(n, ax, ay, angle, spacing):
    pts = generate_flying_v(n, (ax, ay), angle, spacing)
    assert len(pts) == 2 * n + 1
    mirrored = pts * [1, -1] + [0, 2 * ay]
    key = lambda p: sorted(map(tuple, np.round(p, 9)))
    assert key(mirrored) == key(pts)
    assert pts.mean(0)[1] == pytest.approx(ay, abs=1e-12)


def test_generators_deterministic():
    assert np.array_equal(generate_flying_v(3, (1, 2), 30, 0.4), generate_flying_v(3, (1, 2), 30, 0.4))
    assert np.array_equal(generate_grid(3, 4, 0.2), generate_grid(3, 4, 0.2))


# -- catalog ----------------------------------------------------------------

def test_catalog_has_six():
    cat = paper_scenarios()
    assert tuple(cat) == CATALOG_NAMES
    assert len(cat) == 6


def test_prop_split_reference():
    sc = get_scenario("prop-split")
    shapes = [t for t in sc.cost_terms() if isinstance(t, ShapeTerm)]
    assert len(shapes) == 1
    ref = shapes[0].spec.reference
    assert len(ref) == 2
    assert np.allclose(ref.normalized_weights, [0.4, 0.6])
    assert sc.n_agents == 20


def test_pincer_congestion_sigma():
    terms = get_scenario("pincer-congestion").cost_terms()
    assert [t.sigma for t in terms if isinstance(t, CongestionTerm)] == [0.15]


def test_terminal_circle_has_only_terminal_shape():
    shapes = [t for t in get_scenario("terminal-circle").cost_terms() if isinstance(t, ShapeTerm)]
    assert [t.stage for t in shapes] == ["terminal"]


def test_flyv_obstacle_has_one_obstacle():
    sc = get_scenario("flyv-obstacle")
    assert len(sc.obstacles()) == 1
    assert any(isinstance(t, ObstacleTerm) for t in sc.cost_terms())


@pytest.mark.parametrize("name", CATALOG_NAMES)
def test_catalog_round_trip(name, tmp_path):
    sc = get_scenario(name)
    path = tmp_path / f"{name}.json"
    save_scenario(sc, path)
    again = load_scenario(path)
    assert again == sc
    assert again.to_json() == path.read_text()
    # shipped files are already in canonical form
    from otformation.scenarios import CATALOG_DIR
    assert (CATALOG_DIR / f"{name}.json").read_text() == sc.to_json()


# -- validation -------------------------------------------------------------

def minimal(**extra):
    data = {
        "name": "m",
        "initial": [[0.0, 0.0], [1.0, 0.0]],
        "horizon": 1.0,
        "steps": 10,
        "costs": [{"type": "control_effort"}],
    }
    data.update(extra)
    return data


def test_missing_steps_names_field():
    data = minimal()
    del data["steps"]
    with pytest.raises(ScenarioError) as exc:
        ScenarioSpec.from_dict(data)
    assert exc.value.field == "steps"
    assert "steps" in str(exc.value)


def test_unnormalized_weights_rejected():
    term = {"type": "shape_terminal", "reference": [[0, 0], [1, 1]], "b_weights": [0.5, 0.6], "normalize": False}
    with pytest.raises(ScenarioError) as exc:
        ScenarioSpec.from_dict(minimal(costs=[term]))
    assert "b_weights" in exc.value.field
    term["normalize"] = True
    ScenarioSpec.from_dict(minimal(costs=[term]))


def test_unknown_keys_rejected():
    with pytest.raises(ScenarioError, match="colour"):
        ScenarioSpec.from_dict(minimal(colour="red"))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(costs=[{"type": "control_effort", "sigma": 1.0}]))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(costs=[{"type": "teleport"}]))


def test_bad_values_rejected():
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(horizon=-1.0))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(steps=0))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(costs=[{"type": "congestion", "sigma": 0}]))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(costs=[{"type": "shape_running", "reference": [[0, 0]], "centered": False}]))
    with pytest.raises(ScenarioError):
        ScenarioSpec.from_dict(minimal(initial=[[0.0, float("nan")]]))


def test_parse_error_has_location():
    with pytest.raises(ScenarioError, match="line 3"):
        parse_scenario('{\n  "name": "x",\n  "steps": ,\n}')


def test_generator_initial_and_reference():
    data = minimal(initial={"kind": "grid", "params": {"rows": 2, "cols": 3, "spacing": 0.5}})
    sc = ScenarioSpec.from_dict(data)
    assert sc.n_agents == 6
    assert ScenarioSpec.from_dict(sc.to_dict()) == sc


def test_duplicate_term_labels_are_suffixed():
    sc = ScenarioSpec.from_dict(minimal(costs=[{"type": "congestion", "sigma": 0.1},
                                               {"type": "congestion", "sigma": 0.2}]))
    assert sc.term_labels() == ["congestion", "congestion_2"]


def test_overrides():
    sc = get_scenario("prop-split")
    sc2 = sc.with_overrides({"optimizer.max_iters": 7, "costs.2.weight": 10.0})
    assert sc2.optimizer.max_iters == 7
    assert sc2.costs[2]["weight"] == 10.0
    assert sc.optimizer.max_iters != 7
    with pytest.raises(ScenarioError) as exc:
        sc.with_overrides({"optimizer.nope": 1})
    assert exc.value.field == "optimizer.nope"
    with pytest.raises(ScenarioError):
        sc.with_overrides({"costs.99.weight": 1})


def test_set_dotted_only_replaces_existing():
    d = {"a": {"b": [1, 2]}}
    set_dotted(d, "a.b.1", 5)
    assert d == {"a": {"b": [1, 5]}}
    with pytest.raises(ScenarioError):
        set_dotted(d, "a.c", 1)


def test_unknown_scenario_lists_catalog():
    with pytest.raises(ScenarioError) as exc:
        get_scenario("nope")
    for name in CATALOG_NAMES:
        assert name in str(exc.value)


def test_to_json_is_canonical():
    sc = get_scenario("running-flyv")
    text = sc.to_json()
    assert text.endswith("\n")
    assert json.loads(text) == sc.to_dict()
