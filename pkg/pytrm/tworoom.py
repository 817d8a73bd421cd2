"""
TwoRoom: a deterministic 2-D navigation world.

Two rooms split by a vertical wall at ``wall_x`` with a single doorway
``[door_lo, door_hi]``. Provides the simulator step, the analytic geodesic
oracle, start-goal manifests and the outcome taxonomy.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from pytrm import settings
from pytrm.exceptions import PyTRMManifestGenerationError, PyTRMValidationError
from pytrm.validation import validate

logger = logging.getLogger(__name__)

SAME_ROOM = 'same_room'
CROSS_WALL = 'cross_wall'

SUCCESS = 'none'
WRONG_ROOM = 'wrong_room'
STUCK_AT_WALL = 'stuck_at_wall'
SAME_ROOM_NOT_PRECISE = 'same_room_not_precise'
CROSSED_DOOR_NOT_PRECISE = 'crossed_door_not_precise'
FAILURE_CLASSES = (SUCCESS, WRONG_ROOM, STUCK_AT_WALL, SAME_ROOM_NOT_PRECISE, CROSSED_DOOR_NOT_PRECISE)


@dataclass(frozen=True)
class WorldGeometry:
    width: float = settings.WORLD_WIDTH
    height: float = settings.WORLD_HEIGHT
    wall_x: float = settings.WALL_X
    door_lo: float = settings.DOOR_LO
    door_hi: float = settings.DOOR_HI
    a_max: float = settings.A_MAX
    r_succ: float = settings.R_SUCC
    standoff: float = settings.WALL_STANDOFF
    stuck_band: float = settings.STUCK_BAND

    def __post_init__(self):
        validate('geometry', asdict(self))


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float

    def as_array(self):
        return np.array([self.x, self.y], dtype=np.float64)

    @classmethod
    def from_array(cls, xy):
        return cls(float(xy[0]), float(xy[1]))


@dataclass(frozen=True)
class EpisodeSpec:
    start: AgentState
    goal: AgentState
    topology_class: str
    euclid: float
    geodesic: float

    def to_dict(self):
        return {
            'start': [round(self.start.x, 6), round(self.start.y, 6)],
            'goal': [round(self.goal.x, 6), round(self.goal.y, 6)],
            'topology_class': self.topology_class,
            'euclid': round(self.euclid, 6),
            'geodesic': round(self.geodesic, 6),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            start=AgentState(*data['start']),
            goal=AgentState(*data['goal']),
            topology_class=data['topology_class'],
            euclid=data['euclid'],
            geodesic=data['geodesic'],
        )


@dataclass
class Manifest:
    name: str
    seed: int
    specs: List[EpisodeSpec] = field(default_factory=list)
    geometry: WorldGeometry = field(default_factory=WorldGeometry)

    def counts(self):
        same = sum(1 for s in self.specs if s.topology_class == SAME_ROOM)
        return {SAME_ROOM: same, CROSS_WALL: len(self.specs) - same}

    def to_dict(self):
        return {
            'version': settings.MANIFEST_VERSION,
            'name': self.name,
            'seed': self.seed,
            'geometry': asdict(self.geometry),
            'thresholds': {
                'margin': settings.MANIFEST_MARGIN,
                'matched_bin_width': settings.MATCHED_BIN_WIDTH,
                'hard_min_euclid': settings.HARD_MIN_EUCLID,
                'doorway_required_gap': settings.DOORWAY_REQUIRED_GAP,
            },
            'specs': [s.to_dict() for s in self.specs],
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + '\n'


@dataclass(frozen=True)
class Outcome:
    success: bool
    final_state: AgentState
    final_dist: float
    failure_class: str


def step_batch(states, actions, geom):
    """Vectorized simulator step.

    :param numpy.ndarray states: (N, 2) valid agent positions.
    :param numpy.ndarray actions: (N, 2) actions, clipped to ``[-a_max, a_max]``.
    :param WorldGeometry geom: World geometry.
    :return: (N, 2) next positions.
    :rtype: ``numpy.ndarray``
    """
    p0 = np.asarray(states, dtype=np.float64).reshape(-1, 2)
    a = np.clip(np.asarray(actions, dtype=np.float64).reshape(-1, 2), -geom.a_max, geom.a_max)
    p1 = p0 + a
    p1[:, 0] = np.clip(p1[:, 0], 0.0, geom.width)
    p1[:, 1] = np.clip(p1[:, 1], 0.0, geom.height)

    s0 = p0[:, 0] - geom.wall_x
    s1 = p1[:, 0] - geom.wall_x
    reaches_wall = ((s0 * s1 < 0) | (s1 == 0)) & (s0 != 0)
    out = p1.copy()
    if np.any(reaches_wall):
        idx = np.nonzero(reaches_wall)[0]
        dx = p1[idx, 0] - p0[idx, 0]
        t = s0[idx] / (s0[idx] - s1[idx])
        y_cross = p0[idx, 1] + t * (p1[idx, 1] - p0[idx, 1])
        blocked = (y_cross < geom.door_lo) | (y_cross > geom.door_hi)
        b = idx[blocked]
        if b.size:
            side = np.sign(s0[b])
            x_stop = np.where(np.abs(s0[b]) >= geom.standoff, geom.wall_x + side * geom.standoff, p0[b, 0])
            t_stop = np.clip((x_stop - p0[b, 0]) / dx[blocked], 0.0, 1.0)
            out[b, 0] = x_stop
            out[b, 1] = p0[b, 1] + t_stop * (p1[b, 1] - p0[b, 1])
    # Starting on the wall line (inside the doorway) and sliding along it.
    on_line = (s0 == 0) & (s1 == 0)
    if np.any(on_line):
        out[on_line, 1] = np.clip(out[on_line, 1], geom.door_lo, geom.door_hi)
    return out


def step(state, action, geom):
    """Advance one simulator step.

    :param AgentState state: Current position.
    :param tuple action: (dx, dy) action.
    :param WorldGeometry geom: World geometry.
    :rtype: ``AgentState``
    """
    nxt = step_batch(state.as_array()[None, :], np.asarray(action, dtype=np.float64)[None, :], geom)
    return AgentState.from_array(nxt[0])


def segment_blocked(p0, p1, geom):
    """True if the straight segment p0 -> p1 passes through the wall outside the doorway."""
    s0 = p0[0] - geom.wall_x
    s1 = p1[0] - geom.wall_x
    if s0 * s1 > 0 or (s0 == 0 and s1 == 0):
        return False
    if s0 == s1:
        return False
    t = s0 / (s0 - s1)
    y = p0[1] + t * (p1[1] - p0[1])
    return y < geom.door_lo or y > geom.door_hi


def geodesic_batch(a, b, geom):
    """Shortest obstacle-avoiding distances between rows of ``a`` and ``b``.

    When the straight segment is blocked, the path bends at the doorway point
    nearest the straight-line crossing; the detour length is convex in the
    crossing height so clipping the crossing into the doorway is optimal.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    a, b = np.broadcast_arrays(a, b)
    euclid = np.hypot(b[:, 0] - a[:, 0], b[:, 1] - a[:, 1])
    sa = a[:, 0] - geom.wall_x
    sb = b[:, 0] - geom.wall_x
    crossing = sa * sb < 0
    out = euclid.copy()
    if np.any(crossing):
        i = np.nonzero(crossing)[0]
        t = sa[i] / (sa[i] - sb[i])
        y_cross = a[i, 1] + t * (b[i, 1] - a[i, 1])
        p = np.clip(y_cross, geom.door_lo, geom.door_hi)
        detour = np.hypot(geom.wall_x - a[i, 0], p - a[i, 1]) + np.hypot(b[i, 0] - geom.wall_x, b[i, 1] - p)
        out[i] = np.where(p == y_cross, euclid[i], detour)
    return out


def geodesic(a, b, geom):
    """Shortest obstacle-avoiding path length between two states.

    :param AgentState a: First state.
    :param AgentState b: Second state.
    :param WorldGeometry geom: World geometry.
    :rtype: ``float``
    """
    return float(geodesic_batch(a.as_array(), b.as_array(), geom)[0])


def simulate_terminals(state, action_seqs, geom):
    """Execute every candidate action sequence in the simulator.

    :param AgentState state: Common start state.
    :param numpy.ndarray action_seqs: (N, H, 2) candidate sequences.
    :return: (N, 2) true terminal positions.
    :rtype: ``numpy.ndarray``
    """
    seqs = np.asarray(action_seqs, dtype=np.float64)
    pos = np.repeat(state.as_array()[None, :], seqs.shape[0], axis=0)
    for h in range(seqs.shape[1]):
        pos = step_batch(pos, seqs[:, h, :], geom)
    return pos


def topology_of(start, goal, geom):
    if (start.x - geom.wall_x) * (goal.x - geom.wall_x) < 0:
        return CROSS_WALL
    return SAME_ROOM


def make_spec(start, goal, geom):
    """Build an EpisodeSpec with distances rounded the way manifests store them."""
    start = AgentState(round(start.x, 6), round(start.y, 6))
    goal = AgentState(round(goal.x, 6), round(goal.y, 6))
    return EpisodeSpec(
        start=start,
        goal=goal,
        topology_class=topology_of(start, goal, geom),
        euclid=round(math.hypot(goal.x - start.x, goal.y - start.y), 6),
        geodesic=round(geodesic(start, goal, geom), 6),
    )


class PointSampler(object):
    """Uniform room points with a margin from walls and borders."""

    def __init__(self, geom, rng, margin=settings.MANIFEST_MARGIN):
        self.geom = geom
        self.rng = rng
        self.margin = margin

    def in_room(self, left):
        g = self.geom
        if left:
            lo, hi = self.margin, g.wall_x - self.margin
        else:
            lo, hi = g.wall_x + self.margin, g.width - self.margin
        x = self.rng.uniform(lo, hi)
        y = self.rng.uniform(self.margin, g.height - self.margin)
        return AgentState(float(x), float(y))

    def pair(self, topology):
        left = bool(self.rng.integers(0, 2))
        start = self.in_room(left)
        goal = self.in_room(left if topology == SAME_ROOM else not left)
        return start, goal


def _doorway_required(spec):
    return spec.geodesic >= spec.euclid + settings.DOORWAY_REQUIRED_GAP


def generate_manifest(kind, geom, seed):
    """Generate a start-goal manifest.

    :param string kind: One of ``balanced40``, ``matched40``, ``hard100``.
    :param WorldGeometry geom: World geometry.
    :param int seed: RNG seed.
    :return: Manifest whose composition matches ``kind``.
    :rtype: ``Manifest``
    """
    validate('generate_manifest', {'kind': kind, 'seed': seed})
    rng = np.random.default_rng(seed)
    sampler = PointSampler(geom, rng)
    draws = [0]

    def draw(topology):
        draws[0] += 1
        if draws[0] > settings.MAX_REJECTION_DRAWS:
            raise PyTRMManifestGenerationError(
                'Manifest "%s" could not be generated within %d draws.' % (kind, settings.MAX_REJECTION_DRAWS),
                kind, draws[0])
        start, goal = sampler.pair(topology)
        return make_spec(start, goal, geom)

    specs = []
    if kind == 'balanced40':
        specs = [draw(SAME_ROOM) for _ in range(20)] + [draw(CROSS_WALL) for _ in range(20)]
    elif kind == 'matched40':
        width = settings.MATCHED_BIN_WIDTH
        margin = settings.MANIFEST_MARGIN
        # Same-room distances cannot reach past the room diagonal.
        room_w = max(geom.wall_x, geom.width - geom.wall_x) - 2 * margin
        max_bin = int(math.hypot(room_w, geom.height - 2 * margin) // width)
        cross = []
        while len(cross) < 20:
            c = draw(CROSS_WALL)
            if int(c.euclid // width) < max_bin:
                cross.append(c)
        same = []
        for c in cross:
            target = int(c.euclid // width)
            s = draw(SAME_ROOM)
            while int(s.euclid // width) != target:
                s = draw(SAME_ROOM)
            same.append(s)
        specs = same + cross
    elif kind == 'hard100':
        same = []
        while len(same) < 50:
            s = draw(SAME_ROOM)
            if s.euclid >= settings.HARD_MIN_EUCLID:
                same.append(s)
        cross = []
        direct = 0
        while len(cross) < 50:
            c = draw(CROSS_WALL)
            if c.euclid < settings.HARD_MIN_EUCLID:
                continue
            if not _doorway_required(c):
                if direct >= settings.HARD_DIRECT_CROSSINGS:
                    continue
                direct += 1
            cross.append(c)
        specs = same + cross
    logger.info('Generated manifest %s (seed %s) in %d draws: %s', kind, seed, draws[0],
                Manifest(kind, seed, specs, geom).counts())
    return Manifest(name=kind, seed=seed, specs=specs, geometry=geom)


def save_manifest(manifest, path):
    with open(path, 'w') as fp:
        fp.write(manifest.dumps())


def load_manifest(path):
    with open(path) as fp:
        data = json.load(fp)
    if data.get('version') != settings.MANIFEST_VERSION:
        raise PyTRMValidationError('Unsupported manifest version: %s' % data.get('version'), 'load_manifest',
                                   ['version'], [data.get('version')])
    return Manifest(
        name=data['name'],
        seed=data['seed'],
        specs=[EpisodeSpec.from_dict(s) for s in data['specs']],
        geometry=WorldGeometry(**data['geometry']),
    )


def classify_outcome(spec, final, geom):
    """Classify where an episode ended.

    Precedence: success, stuck at the wall, wrong room, then the near-miss
    class matching the spec's topology.

    :param EpisodeSpec spec: Episode spec.
    :param AgentState final: Final agent position.
    :param WorldGeometry geom: World geometry.
    :rtype: ``Outcome``
    """
    dist = math.hypot(final.x - spec.goal.x, final.y - spec.goal.y)
    if dist <= geom.r_succ:
        failure = SUCCESS
    elif abs(final.x - geom.wall_x) <= geom.stuck_band:
        failure = STUCK_AT_WALL
    elif (final.x - geom.wall_x) * (spec.goal.x - geom.wall_x) < 0:
        failure = WRONG_ROOM
    elif spec.topology_class == SAME_ROOM:
        failure = SAME_ROOM_NOT_PRECISE
    else:
        failure = CROSSED_DOOR_NOT_PRECISE
    return Outcome(success=failure == SUCCESS, final_state=final, final_dist=dist, failure_class=failure)
