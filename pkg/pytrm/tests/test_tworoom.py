import json
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from pytrm import settings
from pytrm.exceptions import PyTRMValidationError
from pytrm.tests import common_data
from pytrm.tworoom import (
    CROSS_WALL,
    CROSSED_DOOR_NOT_PRECISE,
    SAME_ROOM,
    SAME_ROOM_NOT_PRECISE,
    STUCK_AT_WALL,
    SUCCESS,
    WRONG_ROOM,
    AgentState,
    WorldGeometry,
    classify_outcome,
    generate_manifest,
    geodesic,
    geodesic_batch,
    load_manifest,
    make_spec,
    save_manifest,
    segment_blocked,
    step,
    step_batch,
)

GEOM = common_data.GEOM


@pytest.fixture(scope="module")
def hard100():
    """Generate the hard manifest once."""
    return generate_manifest('hard100', GEOM, 0)


def test_geometry_validation():
    """Test that inconsistent wall and doorway bounds are rejected."""
    with pytest.raises(PyTRMValidationError) as exception_info:
        WorldGeometry(wall_x=300.0)
    assert exception_info.value.fields == ['wall_x', 'width']
    with pytest.raises(PyTRMValidationError) as exception_info:
        WorldGeometry(door_lo=130.0, door_hi=128.0)
    assert exception_info.value.fields == ['door_lo', 'door_hi']


def test_step_identity():
    """Test that a zero action leaves the state unchanged."""
    assert step(AgentState(56, 56), (0, 0), GEOM) == AgentState(56.0, 56.0)


def test_step_blocked_by_wall():
    """Test that motion into the solid wall stops at the standoff."""
    nxt = step(AgentState(110, 60), (8, 0), GEOM)
    assert nxt.x == pytest.approx(111.5)
    assert nxt.y == pytest.approx(60.0)


def test_step_through_doorway():
    """Test that motion through the doorway is not blocked."""
    nxt = step(AgentState(110, 112), (8, 0), GEOM)
    assert nxt == AgentState(118.0, 112.0)


def test_step_clips_action_and_clamps_to_world():
    """Test action clipping and clamping to the world rectangle."""
    assert step(AgentState(50, 50), (100, -100), GEOM) == AgentState(58.0, 42.0)
    assert step(AgentState(2, 220), (-8, 8), GEOM) == AgentState(0.0, 224.0)


def test_step_never_tunnels():
    """Test that random steps only change side through the doorway."""
    rng = np.random.default_rng(11)
    states = np.column_stack([rng.uniform(100, 124, 5000), rng.uniform(0, 224, 5000)])
    actions = rng.uniform(-8, 8, size=(5000, 2))
    nxt = step_batch(states, actions, GEOM)
    for p0, a, p1 in zip(states, actions, nxt):
        changed = (p0[0] - GEOM.wall_x) * (p1[0] - GEOM.wall_x) < 0
        if changed:
            assert not segment_blocked(p0, p0 + a, GEOM)
        assert 0.0 <= p1[0] <= GEOM.width
        assert 0.0 <= p1[1] <= GEOM.height


def test_geodesic_examples():
    """Test the analytic geodesic against known distances."""
    assert geodesic(common_data.LEFT, common_data.LEFT_FAR, GEOM) == pytest.approx(100.0)
    expected = math.hypot(56, 40) + math.hypot(56, 40)
    assert geodesic(common_data.LEFT, common_data.RIGHT, GEOM) == pytest.approx(expected)
    assert geodesic(common_data.LEFT, common_data.RIGHT, GEOM) == pytest.approx(137.63, abs=0.01)
    assert geodesic(AgentState(111, 100), AgentState(113, 100), GEOM) == pytest.approx(2.0)


def test_geodesic_properties():
    """Test symmetry, the triangle inequality and geodesic >= euclid on random triples."""
    rng = np.random.default_rng(5)
    pts = rng.uniform(0, 224, size=(300, 3, 2))
    a, b, c = pts[:, 0], pts[:, 1], pts[:, 2]
    ab = geodesic_batch(a, b, GEOM)
    assert np.allclose(ab, geodesic_batch(b, a, GEOM))
    assert np.all(ab + 1e-6 >= np.hypot(*(a - b).T))
    assert np.all(geodesic_batch(a, c, GEOM) <= ab + geodesic_batch(b, c, GEOM) + 1e-6)


def test_geodesic_matches_grid_search():
    """Test the closed form against a brute-force search over doorway points."""
    a, b = AgentState(30, 200), AgentState(190, 180)
    p = np.linspace(GEOM.door_lo, GEOM.door_hi, 32001)
    brute = np.min(np.hypot(GEOM.wall_x - a.x, p - a.y) + np.hypot(b.x - GEOM.wall_x, b.y - p))
    assert geodesic(a, b, GEOM) == pytest.approx(brute, abs=1e-3)


def lattice_graph(geom, reach=3):
    """1-unit lattice over the world; edges join nodes up to ``reach`` apart whose segment clears the wall."""
    nx, ny = int(geom.width) + 1, int(geom.height) + 1
    x, y = np.meshgrid(np.arange(nx), np.arange(ny), indexing='ij')
    x, y = x.ravel(), y.ravel()
    free = ~((x == geom.wall_x) & ((y < geom.door_lo) | (y > geom.door_hi)))
    rows, cols, weights = [], [], []
    for dx in range(-reach, reach + 1):
        for dy in range(-reach, reach + 1):
            if math.gcd(dx, dy) != 1:
                continue
            x1, y1 = x + dx, y + dy
            ok = free & (x1 >= 0) & (x1 < nx) & (y1 >= 0) & (y1 < ny)
            ok[ok] &= free[x1[ok] * ny + y1[ok]]
            s0, s1 = x - geom.wall_x, x1 - geom.wall_x
            crossing = s0 * s1 < 0
            y_cross = y + np.divide(s0, s0 - s1, out=np.zeros_like(s0), where=crossing) * dy
            ok &= ~crossing | ((y_cross >= geom.door_lo) & (y_cross <= geom.door_hi))
            src = np.nonzero(ok)[0]
            rows.append(src)
            cols.append(x1[src] * ny + y1[src])
            weights.append(np.full(src.size, math.hypot(dx, dy)))
    graph = csr_matrix((np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
                       shape=(nx * ny, nx * ny))
    return graph, ny


def test_geodesic_matches_lattice_search():
    """Test the closed form against lattice shortest paths on 1000 random pairs."""
    graph, ny = lattice_graph(GEOM)
    rng = np.random.default_rng(11)
    columns = np.setdiff1d(np.arange(int(GEOM.width) + 1), [int(GEOM.wall_x)])

    def points(n):
        return np.stack([rng.choice(columns, n), rng.integers(0, int(GEOM.height) + 1, n)], axis=1)

    sources, targets = points(20), points(50)
    lattice = dijkstra(graph, indices=sources[:, 0] * ny + sources[:, 1])[:, targets[:, 0] * ny + targets[:, 1]]
    exact = geodesic_batch(np.repeat(sources, 50, axis=0), np.tile(targets, (20, 1)), GEOM).reshape(20, 50)
    assert np.all(np.isfinite(lattice))
    # Lattice paths are feasible paths, so they bound the geodesic from above.
    assert np.all(exact <= lattice + 1e-6)
    # Moves of up to 3 units bend any straight leg by at most 1.4%.
    assert np.all(lattice <= 1.015 * exact + 1.5)


def test_balanced_manifest():
    """Test the balanced manifest composition."""
    manifest = generate_manifest('balanced40', GEOM, 1)
    assert manifest.counts() == {SAME_ROOM: 20, CROSS_WALL: 20}
    for spec in manifest.specs:
        assert spec.geodesic >= spec.euclid
        for p in (spec.start, spec.goal):
            assert abs(p.x - GEOM.wall_x) >= 16 - 1e-6
            assert 16 - 1e-6 <= p.y <= 224 - 16 + 1e-6


def test_matched_manifest_bins():
    """Test that matched40 has equal per-bin counts across topology classes."""
    manifest = generate_manifest('matched40', GEOM, 2)
    assert manifest.counts() == {SAME_ROOM: 20, CROSS_WALL: 20}
    same = sorted(int(s.euclid // 20) for s in manifest.specs if s.topology_class == SAME_ROOM)
    cross = sorted(int(s.euclid // 20) for s in manifest.specs if s.topology_class == CROSS_WALL)
    assert same == cross


def test_hard_manifest(hard100):
    """Test hard100 counts, distance bucket and doorway requirement."""
    assert hard100.counts() == {SAME_ROOM: 50, CROSS_WALL: 50}
    assert all(s.euclid >= 120 for s in hard100.specs)
    cross = [s for s in hard100.specs if s.topology_class == CROSS_WALL]
    assert sum(1 for s in cross if s.geodesic < s.euclid + settings.DOORWAY_REQUIRED_GAP) <= settings.HARD_DIRECT_CROSSINGS
    assert sum(1 for s in cross if s.geodesic >= s.euclid + 10) >= 45


def test_manifest_deterministic(tmpdir, hard100):
    """Test that the same seed writes byte-identical manifests and that loading round-trips."""
    first = tmpdir.join('a.json')
    second = tmpdir.join('b.json')
    save_manifest(hard100, str(first))
    save_manifest(generate_manifest('hard100', GEOM, 0), str(second))
    assert first.read() == second.read()
    loaded = load_manifest(str(first))
    assert loaded.specs == hard100.specs
    assert json.loads(first.read())['version'] == 1


def test_unknown_manifest_kind():
    """Test that an unknown manifest kind is rejected."""
    with pytest.raises(PyTRMValidationError) as exception_info:
        generate_manifest('easy10', GEOM, 0)
    assert exception_info.value.fields == ['kind']


def test_classify_outcome():
    """Test the outcome taxonomy examples."""
    cross = make_spec(common_data.LEFT, common_data.RIGHT, GEOM)
    assert classify_outcome(cross, AgentState(60, 60), GEOM).failure_class == WRONG_ROOM
    success = classify_outcome(cross, AgentState(166, 58), GEOM)
    assert success.success
    assert success.failure_class == SUCCESS
    assert success.final_dist == pytest.approx(2.828427, abs=1e-5)
    assert classify_outcome(cross, AgentState(108, 100), GEOM).failure_class == STUCK_AT_WALL
    assert classify_outcome(cross, AgentState(150, 150), GEOM).failure_class == CROSSED_DOOR_NOT_PRECISE

    same = make_spec(common_data.LEFT, common_data.LEFT_FAR, GEOM)
    assert classify_outcome(same, AgentState(56, 120), GEOM).failure_class == SAME_ROOM_NOT_PRECISE


def test_classify_exactly_one_class():
    """Test that success and a failure class are mutually exclusive."""
    spec = make_spec(common_data.LEFT, common_data.RIGHT, GEOM)
    rng = np.random.default_rng(0)
    for xy in rng.uniform(0, 224, size=(200, 2)):
        outcome = classify_outcome(spec, AgentState.from_array(xy), GEOM)
        assert outcome.success != (outcome.failure_class != SUCCESS)
