"""
Same-candidate selection audits, rank statistics, planner-trace correlations
and the table writers behind ``report``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict

import numpy as np
from scipy.stats import rankdata

from pytrm.exceptions import PyTRMPoolMismatchError, PyTRMValidationError, PyTRMZeroDenominatorError
from pytrm.metric import DIAGNOSTIC, ROWSPACE, rowspace_share, score_candidates
from pytrm.planner import cem_plan, episode_streams
from pytrm.tworoom import AgentState, geodesic_batch, simulate_terminals

logger = logging.getLogger(__name__)

AUDITED_REPLAN = 0


@dataclass
class Correlation:
    value: float
    defined: bool = True

    def __float__(self):
        return float(self.value)


def pearson(x, y):
    """Pearson correlation, undefined (flagged) when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        return Correlation(float('nan'), False)
    return Correlation(max(-1.0, min(1.0, float(np.dot(dx, dy)) / denom)))


def spearman(c, c_star):
    """Pearson correlation of average-tie ranks.

    :param list c: Selector costs.
    :param list c_star: Oracle costs.
    :rtype: ``Correlation``
    """
    c = np.asarray(c, dtype=np.float64)
    c_star = np.asarray(c_star, dtype=np.float64)
    if c.shape != c_star.shape or c.size < 2:
        raise PyTRMValidationError('spearman needs two equal-length lists of at least 2 values.', 'spearman')
    return pearson(rankdata(c, method='average'), rankdata(c_star, method='average'))


def best_rank_pct(c, c_star):
    """Percentile rank the selector gives the oracle-best candidate: 0 best, 100 worst."""
    c = np.asarray(c, dtype=np.float64)
    c_star = np.asarray(c_star, dtype=np.float64)
    if c.shape != c_star.shape or c.size < 2:
        raise PyTRMValidationError('best_rank_pct needs two equal-length lists of at least 2 values.',
                                   'best_rank_pct')
    j = int(np.argmin(c_star))
    ties = int(np.sum(c_star == c_star[j]))
    if ties > 1:
        logger.debug('Oracle argmin tied over %d candidates; using lowest index %d', ties, j)
    rank = rankdata(c, method='average')[j]
    return float((rank - 1.0) / (c.size - 1.0) * 100.0)


@dataclass
class AuditRecord:
    episode_id: int
    pool_hash: str
    start: np.ndarray
    goal: np.ndarray
    actions: np.ndarray
    diffs: np.ndarray
    oracle_euclid: np.ndarray
    oracle_geo: np.ndarray
    selector_costs: Dict[str, np.ndarray] = field(default_factory=dict)
    selector_pool_hash: Dict[str, str] = field(default_factory=dict)


@dataclass
class RankStats:
    selector: str
    spearman_euclid: float
    spearman_geo: float
    best_rank_pct: float
    selected_final_dist: float
    selected_rollout_dist: float
    topk_oracle_cost: float
    n_episodes: int
    n_undefined: int = 0
    rowspace_share: float = float('nan')

    def to_dict(self):
        return asdict(self)


def collect_audit_records(manifest, model, pool_cost, selectors, cfg, seed=0, mode=DIAGNOSTIC):
    """Rebuild each episode's first-replan CEM pool and score it with every selector.

    The pool is generated exactly as ``run_episode`` generates its first
    replan, so its hash matches the one in the evaluation trace.

    :param Manifest manifest: Audited episodes.
    :param WorldModel model: Frozen world model.
    :param TerminalCost pool_cost: Cost the planner used to produce the pool.
    :param dict selectors: Name -> ``TerminalCost`` scoring the same candidates.
    :param CEMConfig cfg: Planner configuration.
    :param int seed: Evaluation seed.
    :rtype: ``list``
    """
    geom = manifest.geometry
    records = []
    for index, spec in enumerate(manifest.specs):
        if math.hypot(spec.start.x - spec.goal.x, spec.start.y - spec.goal.y) <= geom.r_succ:
            # Never replanned, so there is no pool to audit.
            logger.debug('Episode %d starts inside the success radius; not audited', index)
            continue
        live, goal_phase = episode_streams(model.encoder, seed, index)
        z_g = model.encoder.encode(spec.goal, goal_phase)
        z_t = model.encoder.encode(spec.start, live.n)
        rng = np.random.default_rng([cfg.seed, seed, index])
        _, pool = cem_plan(z_t, z_g, model, pool_cost, cfg, rng, true_state=spec.start, goal_state=spec.goal,
                           geom=geom, mode=mode)
        true_terminals = simulate_terminals(spec.start, pool.actions, geom)
        goal_xy = spec.goal.as_array()
        record = AuditRecord(
            episode_id=index,
            pool_hash=pool.pool_hash,
            start=spec.start.as_array(),
            goal=goal_xy,
            actions=pool.actions,
            diffs=pool.terminals - z_g,
            oracle_euclid=np.hypot(*(true_terminals - goal_xy).T),
            oracle_geo=geodesic_batch(true_terminals, np.broadcast_to(goal_xy, true_terminals.shape), geom),
        )
        for name, selector in selectors.items():
            scores = score_candidates(selector, pool.terminals, z_g, goal_true=spec.goal,
                                      predicted_true=true_terminals, mode=mode)
            record.selector_costs[name] = scores.costs
            record.selector_pool_hash[name] = pool.pool_hash
        records.append(record)
    logger.info('Collected %d audit pools at replan %d', len(records), AUDITED_REPLAN)
    return records


def _mean(values):
    return float(np.mean(values)) if len(values) else float('nan')


def _distance_after(start, actions, goal, geom):
    final = simulate_terminals(AgentState.from_array(start), actions[None, :, :], geom)[0]
    return float(np.hypot(*(final - goal)))


def scsa_audit(records, selectors, geom, top_k, replan_block=1, projection=None):
    """Per-selector rank statistics on fixed candidate pools.

    :param list records: ``AuditRecord`` list.
    :param list selectors: Selector names present in every record.
    :param WorldGeometry geom: World geometry.
    :param int top_k: Candidates averaged for ``topk_oracle_cost``.
    :param int replan_block: Actions executed for ``selected_final_dist``.
    :param ProjectionOperator projection: Rowspace projector for the pool share. (Optional).
    :return: (selector -> RankStats, per-episode rows)
    :rtype: ``tuple``
    """
    for record in records:
        hashes = {record.selector_pool_hash.get(name) for name in selectors}
        if hashes != {record.pool_hash}:
            raise PyTRMPoolMismatchError('Selectors scored different candidate pools.', record.episode_id,
                                         sorted(h or '' for h in hashes))

    share = float('nan')
    if projection is not None and records:
        diffs = np.concatenate([r.diffs for r in records])
        try:
            share = rowspace_share(diffs, projection)
            if projection.mode != ROWSPACE:
                share = 1.0 - share
        except PyTRMZeroDenominatorError:
            logger.warning('Audit pools have all-zero differences; rowspace share undefined')

    stats = {}
    rows = []
    for name in selectors:
        sp_e, sp_g, best, first, full, topk = [], [], [], [], [], []
        undefined = 0
        for r in records:
            c = r.selector_costs[name]
            corr_e = spearman(c, r.oracle_euclid)
            corr_g = spearman(c, r.oracle_geo)
            undefined += int(not corr_g.defined)
            chosen = int(np.argmin(c))
            order = np.argsort(c, kind='stable')[:top_k]
            row = {
                'selector': name,
                'episode_id': r.episode_id,
                'pool_hash': r.pool_hash,
                'spearman_euclid': corr_e.value,
                'spearman_geo': corr_g.value,
                'best_rank_pct': best_rank_pct(c, r.oracle_geo),
                'selected_final_dist': _distance_after(r.start, r.actions[chosen, :replan_block], r.goal, geom),
                'selected_rollout_dist': _distance_after(r.start, r.actions[chosen], r.goal, geom),
                'topk_oracle_cost': float(np.mean(r.oracle_geo[order])),
            }
            rows.append(row)
            if corr_e.defined:
                sp_e.append(corr_e.value)
            if corr_g.defined:
                sp_g.append(corr_g.value)
            best.append(row['best_rank_pct'])
            first.append(row['selected_final_dist'])
            full.append(row['selected_rollout_dist'])
            topk.append(row['topk_oracle_cost'])
        stats[name] = RankStats(name, _mean(sp_e), _mean(sp_g), _mean(best), _mean(first), _mean(full), _mean(topk),
                                len(records), undefined, share)
        logger.info('SCSA %s: spearman_geo %.3f, best rank %.2f%%, %d undefined', name, stats[name].spearman_geo,
                    stats[name].best_rank_pct, undefined)
    return stats, rows


def planner_trace_corr(traces):
    """Correlate mean selected cost with final distance and with geodesic progress.

    :param list traces: ``PlanTrace`` list, one per episode.
    :return: (cost vs final distance, cost vs geodesic progress)
    :rtype: ``tuple``
    """
    usable = [t for t in traces if t.records]
    if len(usable) < 3:
        raise PyTRMValidationError('planner_trace_corr needs at least 3 planned episodes.', 'planner_trace_corr',
                                   ['traces'], [len(usable)])
    cost = [t.mean_selected_cost for t in usable]
    final = [t.final_dist for t in usable]
    progress = [t.geodesic_progress for t in usable]
    return pearson(cost, final), pearson(cost, progress)


KEY_COLUMNS = {
    'main_repair': ('cost_label', 'manifest', 'budget'),
    'stress': ('cost_label', 'manifest', 'budget', 'n_samples', 'n_iters', 'top_k'),
    'horizon_ablation': ('regime', 'delta_max', 'pairs', 'source_rows', 'manifest', 'budget'),
    'scsa': ('selector', 'manifest'),
    'planner_trace': ('cost_label', 'manifest', 'budget'),
    'subspace': ('cost_label', 'manifest', 'budget'),
    'fullcache': ('cost_label', 'manifest', 'budget'),
    'hybrid_sweep': ('head_label', 'lam', 'manifest', 'budget'),
    'probe': (),
}

VALUE_COLUMNS = {
    'main_repair': ('success_pct', 'same_room_pct', 'cross_wall_pct', 'wrong_room_pct', 'stuck_at_wall_pct',
                    'same_room_not_precise_pct', 'crossed_door_not_precise_pct'),
    'stress': ('success_pct', 'wrong_room_pct'),
    'horizon_ablation': ('success_pct',),
    'scsa': ('spearman_euclid', 'spearman_geo', 'best_rank_pct', 'selected_final_dist', 'selected_rollout_dist',
             'topk_oracle_cost', 'rowspace_share', 'n_undefined'),
    'planner_trace': ('corr_final_dist', 'corr_geodesic_progress'),
    'subspace': ('success_pct', 'rowspace_share'),
    'fullcache': ('success_pct', 'same_room_pct', 'cross_wall_pct'),
    'hybrid_sweep': ('success_pct',),
    'probe': ('r2', 'rmse', 'rank'),
}

TABLE_SCHEMAS = {name: KEY_COLUMNS[name] + ('seed',) + VALUE_COLUMNS[name] for name in KEY_COLUMNS}
MEAN_SEED = 'mean'


def _average(values):
    finite = [float(v) for v in values if v is not None and v != '' and not math.isnan(float(v))]
    return round(sum(finite) / len(finite), 6) if finite else float('nan')


def aggregate_rows(table, rows):
    """Per-seed rows followed by one arithmetic-mean row per key group."""
    keys = KEY_COLUMNS[table]
    columns = TABLE_SCHEMAS[table]
    out = [{c: row.get(c, '') for c in columns} for row in rows]
    out.sort(key=lambda r: tuple(str(r[k]) for k in keys) + (str(r['seed']),))
    groups = {}
    for row in out:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    means = []
    for key, members in sorted(groups.items(), key=lambda kv: tuple(str(k) for k in kv[0])):
        mean_row = dict(zip(keys, key))
        mean_row['seed'] = MEAN_SEED
        for column in VALUE_COLUMNS[table]:
            mean_row[column] = _average(m[column] for m in members)
        means.append(mean_row)
    return out + means


def _json_row(row):
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}


def write_table(table, rows, directory):
    """Write ``<table>.csv`` and its ``<table>.json`` twin; an empty row set gives a header-only CSV."""
    if table not in TABLE_SCHEMAS:
        raise PyTRMValidationError('Unknown table: %s' % table, 'report', ['table'], [table])
    os.makedirs(directory, exist_ok=True)
    columns = TABLE_SCHEMAS[table]
    data = aggregate_rows(table, rows) if rows else []
    csv_path = os.path.join(directory, '%s.csv' % table)
    with open(csv_path, 'w', newline='') as fp:
        writer = csv.DictWriter(fp, fieldnames=list(columns), lineterminator='\n')
        writer.writeheader()
        for row in data:
            writer.writerow(row)
    with open(os.path.join(directory, '%s.json' % table), 'w') as fp:
        payload = {'table': table, 'columns': list(columns), 'rows': [_json_row(r) for r in data]}
        fp.write(json.dumps(payload, indent=2, sort_keys=True) + '\n')
    return csv_path


def report(tables, directory):
    """Render every known table; tables without runs are written header-only.

    :param dict tables: Table name -> list of per-seed row dicts.
    :param string directory: Output directory.
    :return: Written CSV paths.
    :rtype: ``list``
    """
    unknown = set(tables) - set(TABLE_SCHEMAS)
    if unknown:
        raise PyTRMValidationError('Unknown table(s): %s' % sorted(unknown), 'report', ['tables'], sorted(unknown))
    paths = [write_table(name, tables.get(name, []), directory) for name in sorted(TABLE_SCHEMAS)]
    logger.info('Wrote %d tables to %s', len(paths), directory)
    return paths
