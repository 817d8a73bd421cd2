"""
Cross-entropy-method planning over the frozen world model and closed-loop
evaluation against start-goal manifests.
"""
from __future__ import annotations

import hashlib
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from pytrm import settings
from pytrm.metric import DEPLOYMENT, TerminalCost, score_candidates
from pytrm.tworoom import (
    CROSS_WALL,
    FAILURE_CLASSES,
    SAME_ROOM,
    SUCCESS,
    WorldGeometry,
    classify_outcome,
    geodesic,
    simulate_terminals,
    step,
)
from pytrm.validation import validate

logger = logging.getLogger(__name__)


@dataclass
class CEMConfig:
    n_samples: int = settings.CEM_SAMPLES
    n_iters: int = settings.CEM_ITERS
    top_k: int = settings.CEM_TOP_K
    horizon: int = settings.CEM_HORIZON
    init_std: float = settings.CEM_INIT_STD
    min_std: float = settings.CEM_MIN_STD
    replan_block: int = settings.CEM_REPLAN_BLOCK
    seed: int = 0
    action_dim: int = 2
    a_max: float = settings.A_MAX

    def __post_init__(self):
        validate('cem_plan', asdict(self))


def stress_config(seed=0, **overrides):
    """The enlarged search used to test whether more optimization repairs a bad objective."""
    values = dict(n_samples=settings.STRESS_SAMPLES, n_iters=settings.STRESS_ITERS, top_k=settings.STRESS_TOP_K,
                  seed=seed)
    values.update(overrides)
    return CEMConfig(**values)


@dataclass
class CandidatePool:
    actions: np.ndarray
    terminals: np.ndarray
    costs: np.ndarray
    pool_hash: str = ''

    def __post_init__(self):
        if not self.pool_hash:
            self.pool_hash = pool_hash(self.actions, self.terminals)

    def __len__(self):
        return self.actions.shape[0]


def pool_hash(actions, terminals):
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(actions, dtype='<f8').tobytes())
    digest.update(np.ascontiguousarray(terminals, dtype='<f8').tobytes())
    return digest.hexdigest()


def _score(cost, terminals, z_g, actions, true_state, goal_state, geom, mode):
    if isinstance(cost, TerminalCost):
        predicted_true = None
        if cost.is_oracle and true_state is not None:
            predicted_true = simulate_terminals(true_state, actions, geom or cost.geom)
        scores = score_candidates(cost, terminals, z_g, goal_true=goal_state, predicted_true=predicted_true,
                                  mode=mode)
        return scores.costs
    return np.asarray(cost(terminals, z_g), dtype=np.float64)


def cem_plan(z_t, z_g, model, cost, cfg, rng=None, true_state=None, goal_state=None, geom=None, mode=DEPLOYMENT):
    """Optimize an action sequence with the cross-entropy method.

    :param numpy.ndarray z_t: Current latent.
    :param numpy.ndarray z_g: Goal latent.
    :param model: Anything with ``rollout(z0, actions)`` returning (N, d) terminals.
    :param cost: ``TerminalCost``, or a callable ``cost(terminals, z_g)`` returning (N,) costs.
    :param CEMConfig cfg: Planner configuration.
    :param numpy.random.Generator rng: Sampling stream; ``default_rng(cfg.seed)`` when omitted.
    :param AgentState true_state: Current true state (oracle costs only).
    :param AgentState goal_state: True goal (oracle costs only).
    :param WorldGeometry geom: World geometry for oracle terminals.
    :param string mode: ``deployment`` or ``diagnostic``.
    :return: (elite-mean sequence of shape (H, action_dim), last-iteration CandidatePool)
    :rtype: ``tuple``
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    shape = (cfg.horizon, cfg.action_dim)
    mean = np.zeros(shape)
    std = np.full(shape, float(cfg.init_std))
    pool = None
    for it in range(cfg.n_iters):
        samples = mean + std * rng.standard_normal((cfg.n_samples,) + shape)
        samples = np.clip(samples, -cfg.a_max, cfg.a_max)
        terminals = np.atleast_2d(model.rollout(z_t, samples))
        costs = _score(cost, terminals, z_g, samples, true_state, goal_state, geom, mode)
        elite = samples[np.argsort(costs, kind='stable')[:cfg.top_k]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cfg.min_std)
        pool = (samples, terminals, costs)
    return mean, CandidatePool(*pool)


def executed_cost(plan, pool, z_t, z_g, model, cost, true_state=None, goal_state=None, geom=None, mode=DEPLOYMENT):
    """Cost of the executed elite-mean sequence, scored in one batch with the final CEM pool.

    Batch-standardized costs need the pool alongside; the pool itself is left untouched.

    :param numpy.ndarray plan: (H, action_dim) elite-mean sequence returned by ``cem_plan``.
    :param CandidatePool pool: Last-iteration pool of the same ``cem_plan`` call.
    :rtype: ``float``
    """
    plan = np.asarray(plan, dtype=np.float64)[None]
    terminal = np.atleast_2d(model.rollout(z_t, plan))
    actions = np.concatenate([pool.actions, plan])
    terminals = np.concatenate([pool.terminals, terminal])
    return float(_score(cost, terminals, z_g, actions, true_state, goal_state, geom, mode)[-1])


@dataclass
class ReplanRecord:
    step: int
    selected_cost: float
    selected_action: List[float]
    pool_hash: str
    costs: Optional[np.ndarray] = None


@dataclass
class PlanTrace:
    records: List[ReplanRecord] = field(default_factory=list)
    steps: int = 0
    final_dist: float = float('nan')
    start_geodesic: float = float('nan')
    final_geodesic: float = float('nan')

    @property
    def geodesic_progress(self):
        return self.start_geodesic - self.final_geodesic

    @property
    def mean_selected_cost(self):
        if not self.records:
            return float('nan')
        return float(np.mean([r.selected_cost for r in self.records]))

    @property
    def first_pool_hash(self):
        return self.records[0].pool_hash if self.records else ''


def episode_streams(encoder, seed, episode_index):
    """Live nuisance process and an independent goal nuisance phase for one episode."""
    live = encoder.nuisance([seed, episode_index, 0])
    goal = encoder.nuisance([seed, episode_index, 1])
    return live, goal.n


def run_episode(spec, model, cost, cfg, budget, geom=None, episode_index=0, seed=0, mode=DEPLOYMENT,
                keep_costs=False):
    """Closed-loop MPC: plan, execute the first block, re-encode, replan.

    :param EpisodeSpec spec: Start and goal.
    :param WorldModel model: Frozen world model.
    :param TerminalCost cost: Terminal cost.
    :param CEMConfig cfg: Planner configuration.
    :param int budget: Executed-step budget.
    :param WorldGeometry geom: World geometry.
    :param int episode_index: Position in the manifest; selects the episode's RNG streams.
    :param int seed: Evaluation seed.
    :param string mode: ``deployment`` or ``diagnostic``.
    :param bool keep_costs: Keep every replan's full cost vector in the trace.
    :return: (Outcome, PlanTrace)
    :rtype: ``tuple``
    """
    validate('run_episode', {'budget': budget})
    geom = geom or WorldGeometry()
    live, goal_phase = episode_streams(model.encoder, seed, episode_index)
    z_g = model.encoder.encode(spec.goal, goal_phase)
    rng = np.random.default_rng([cfg.seed, seed, episode_index])

    state = spec.start
    trace = PlanTrace(start_geodesic=geodesic(spec.start, spec.goal, geom))
    while trace.steps < budget:
        if math.hypot(state.x - spec.goal.x, state.y - spec.goal.y) <= geom.r_succ:
            break
        z_t = model.encoder.encode(state, live.n)
        plan, pool = cem_plan(z_t, z_g, model, cost, cfg, rng, true_state=state, goal_state=spec.goal, geom=geom,
                              mode=mode)
        n_exec = min(cfg.replan_block, budget - trace.steps)
        trace.records.append(ReplanRecord(
            step=trace.steps,
            selected_cost=executed_cost(plan, pool, z_t, z_g, model, cost, state, spec.goal, geom, mode),
            selected_action=[float(v) for v in plan[0]],
            pool_hash=pool.pool_hash,
            costs=pool.costs if keep_costs else None,
        ))
        for h in range(n_exec):
            state = step(state, plan[h], geom)
            live.advance()
            trace.steps += 1

    outcome = classify_outcome(spec, state, geom)
    trace.final_dist = outcome.final_dist
    trace.final_geodesic = geodesic(state, spec.goal, geom)
    logger.debug('Episode %d (%s): %s after %d steps, final distance %.2f', episode_index, spec.topology_class,
                 outcome.failure_class, trace.steps, outcome.final_dist)
    return outcome, trace


def episode_row(index, spec, outcome, trace):
    return {
        'episode_id': index,
        'topology_class': spec.topology_class,
        'success': int(outcome.success),
        'failure_class': outcome.failure_class,
        'final_x': round(outcome.final_state.x, 6),
        'final_y': round(outcome.final_state.y, 6),
        'final_dist': round(outcome.final_dist, 6),
        'steps': trace.steps,
        'start_geodesic': round(trace.start_geodesic, 6),
        'final_geodesic': round(trace.final_geodesic, 6),
        'mean_selected_cost': trace.mean_selected_cost,
        'first_pool_hash': trace.first_pool_hash,
    }


def summarize(rows):
    """Aggregate success and failure-class percentages over episode rows."""
    n = len(rows)

    def pct(count, total):
        return round(100.0 * count / total, 4) if total else 0.0

    summary = {'n_episodes': n, 'success_pct': pct(sum(r['success'] for r in rows), n)}
    for topology, key in ((SAME_ROOM, 'same_room_pct'), (CROSS_WALL, 'cross_wall_pct')):
        subset = [r for r in rows if r['topology_class'] == topology]
        summary[key] = pct(sum(r['success'] for r in subset), len(subset))
    for cls in FAILURE_CLASSES:
        if cls == SUCCESS:
            continue
        summary['%s_pct' % cls] = pct(sum(1 for r in rows if r['failure_class'] == cls), n)
    return summary


@dataclass
class EvaluationResult:
    rows: list
    summary: dict
    traces: list


def _run_indexed(args):
    index, spec, model, cost, cfg, budget, geom, seed, mode = args
    outcome, trace = run_episode(spec, model, cost, cfg, budget, geom, index, seed, mode)
    return outcome, trace


def evaluate_manifest(manifest, model, cost, cfg, budget, seed=0, workers=1, mode=DEPLOYMENT):
    """Run every manifest episode and aggregate outcomes.

    Results are returned in manifest order and do not depend on ``workers``.

    :rtype: ``EvaluationResult``
    """
    geom = manifest.geometry
    jobs = [(i, spec, model, cost, cfg, budget, geom, seed, mode) for i, spec in enumerate(manifest.specs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(_run_indexed, jobs))
    else:
        results = [_run_indexed(job) for job in jobs]

    rows = []
    traces = []
    for (i, spec), (outcome, trace) in zip(enumerate(manifest.specs), results):
        row = episode_row(i, spec, outcome, trace)
        rows.append(row)
        traces.append(trace)
        if settings.PROGRESS_HOOK is not None:
            settings.PROGRESS_HOOK(row)
    summary = summarize(rows)
    logger.info('Evaluated %s (%d episodes, budget %d, cost %s): success %.1f%%', manifest.name, len(rows), budget,
                getattr(cost, 'kind', cost), summary['success_pct'])
    return EvaluationResult(rows, summary, traces)


def solver_stress(manifest, model, cfg_stress=None, budget=settings.BUDGETS[0], cost=None, seed=0, workers=1,
                  mode=DEPLOYMENT):
    """Evaluate with the enlarged CEM search; raw latent MSE unless another cost is given."""
    cfg_stress = cfg_stress or stress_config(seed)
    cost = cost or TerminalCost('raw_mse')
    return evaluate_manifest(manifest, model, cost, cfg_stress, budget, seed, workers, mode)
