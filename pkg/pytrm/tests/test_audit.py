import csv
import json
import math
import os

import numpy as np
import pytest

from pytrm.audit import (
    TABLE_SCHEMAS,
    AuditRecord,
    aggregate_rows,
    best_rank_pct,
    collect_audit_records,
    pearson,
    planner_trace_corr,
    report,
    scsa_audit,
    spearman,
    write_table,
)
from pytrm.exceptions import PyTRMPoolMismatchError, PyTRMValidationError
from pytrm.metric import TerminalCost, build_projection
from pytrm.neuralcore import DenseNet
from pytrm.planner import CEMConfig, PlanTrace, ReplanRecord, run_episode
from pytrm.tests import common_data
from pytrm.tworoom import Manifest, make_spec
from pytrm.worldmodel import DynamicsNet, Encoder, WorldModel

GEOM = common_data.GEOM

# Candidate k moves straight up by DY[k] per step for two steps.
DY = np.array([8.0, 4.0, 0.0, -4.0])


def audit_record(episode_id):
    actions = np.zeros((4, 2, 2))
    actions[:, :, 1] = DY[:, None]
    final_y = 56.0 + 2 * DY
    oracle = np.abs(156.0 - final_y)
    record = AuditRecord(
        episode_id=episode_id,
        pool_hash='pool%d' % episode_id,
        start=np.array([56.0, 56.0]),
        goal=np.array([56.0, 156.0]),
        actions=actions,
        diffs=np.tile([3.0, 4.0, 0.0], (4, 1)),
        oracle_euclid=oracle,
        oracle_geo=oracle,
    )
    for name, costs in (('good', [1.0, 2.0, 3.0, 4.0]), ('bad', [4.0, 3.0, 2.0, 1.0]), ('flat', [1.0] * 4)):
        record.selector_costs[name] = np.array(costs)
        record.selector_pool_hash[name] = record.pool_hash
    return record


@pytest.fixture(scope="module")
def model():
    encoder = Encoder.create(1, latent_dim=4)
    net = DenseNet([6, 8, 4], ['silu', 'linear'], seed=1)
    return WorldModel(encoder, DynamicsNet(net, np.zeros(4), np.ones(4), np.ones(4)), np.zeros(4), np.ones(4))


def test_spearman():
    """Test average-tie Spearman correlations."""
    assert spearman([1, 1, 2], [1, 2, 3]).value == pytest.approx(0.8660254)
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]).value == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]).value == pytest.approx(-1.0)
    undefined = spearman([5, 5, 5], [1, 2, 3])
    assert not undefined.defined
    assert math.isnan(undefined.value)
    with pytest.raises(PyTRMValidationError):
        spearman([1, 2], [1, 2, 3])


def brute_force_spearman(c, c_star):
    """Average-tie ranks from explicit pairwise comparisons, then Pearson on the ranks."""
    def ranks(values):
        return [1.0 + sum(w < v for w in values) + 0.5 * (sum(w == v for w in values) - 1) for v in values]

    rc, rs = ranks(c), ranks(c_star)
    mc, ms = sum(rc) / len(rc), sum(rs) / len(rs)
    num = sum((a - mc) * (b - ms) for a, b in zip(rc, rs))
    den = math.sqrt(sum((a - mc) ** 2 for a in rc) * sum((b - ms) ** 2 for b in rs))
    return num / den if den else float('nan')


def test_spearman_matches_brute_force():
    """Test spearman against pairwise ranks on random lists with and without ties."""
    rng = np.random.default_rng(8)
    for trial in range(10000):
        n = int(rng.integers(2, 12))
        if trial % 2:
            c, c_star = rng.integers(0, 4, n).tolist(), rng.integers(0, 4, n).tolist()
        else:
            c, c_star = rng.random(n).tolist(), rng.random(n).tolist()
        expected = brute_force_spearman(c, c_star)
        result = spearman(c, c_star)
        if math.isnan(expected):
            assert not result.defined
        else:
            assert result.defined
            assert result.value == pytest.approx(expected, abs=1e-12)


def random_increasing_map(values, rng):
    levels = np.unique(values)
    mapped = np.cumsum(rng.uniform(0.1, 5.0, levels.size)) - rng.uniform(0.0, 50.0)
    return mapped[np.searchsorted(levels, values)]


def test_rank_stats_ignore_increasing_transforms():
    """Test that strictly increasing maps of selector costs leave rank statistics unchanged."""
    rng = np.random.default_rng(9)
    for _ in range(500):
        n = int(rng.integers(2, 30))
        c = np.round(rng.normal(size=n), 1)
        c_star = np.round(rng.random(n), 2)
        reference = spearman(c, c_star)
        for mapped in (random_increasing_map(c, rng), np.exp(c), c ** 3 + 2.0):
            result = spearman(mapped, c_star)
            assert result.defined == reference.defined
            assert result.value == reference.value or (math.isnan(result.value) and math.isnan(reference.value))
            assert best_rank_pct(mapped, c_star) == best_rank_pct(c, c_star)

    record = audit_record(0)
    record.selector_costs['warped'] = np.exp(record.selector_costs['good'])
    record.selector_pool_hash['warped'] = record.pool_hash
    projection = build_projection(np.array([[1.0, 0.0, 0.0]]))
    stats, _ = scsa_audit([record], ['good', 'warped'], GEOM, top_k=2, projection=projection)
    good, warped = stats['good'].to_dict(), stats['warped'].to_dict()
    good.pop('selector')
    warped.pop('selector')
    assert good == warped


def test_pearson():
    """Test Pearson correlation and its zero-variance flag."""
    assert float(pearson([1, 2, 3], [2, 4, 6])) == pytest.approx(1.0)
    assert not pearson([1, 1, 1], [1, 2, 3]).defined


def test_best_rank_pct():
    """Test the percentile rank of the oracle-best candidate."""
    assert best_rank_pct([1, 2, 3], [1, 2, 3]) == 0.0
    assert best_rank_pct([3, 1, 2], [1, 2, 3]) == 100.0
    assert best_rank_pct([1, 3, 2, 4, 5], [5, 4, 1, 2, 3]) == 25.0


def test_scsa_audit():
    """Test rank statistics for an aligned, an inverted and a constant selector."""
    records = [audit_record(0), audit_record(1)]
    projection = build_projection(np.array([[1.0, 0.0, 0.0]]))
    stats, rows = scsa_audit(records, ['good', 'bad', 'flat'], GEOM, top_k=2, replan_block=1,
                             projection=projection)
    good, bad, flat = stats['good'], stats['bad'], stats['flat']
    assert good.spearman_geo == pytest.approx(1.0)
    assert good.best_rank_pct == 0.0
    assert good.selected_final_dist == pytest.approx(92.0)
    assert good.selected_rollout_dist == pytest.approx(84.0)
    assert good.topk_oracle_cost == pytest.approx(88.0)
    assert bad.spearman_euclid == pytest.approx(-1.0)
    assert bad.best_rank_pct == 100.0
    assert bad.selected_final_dist == pytest.approx(104.0)
    assert bad.topk_oracle_cost == pytest.approx(104.0)
    assert flat.n_undefined == 2
    assert math.isnan(flat.spearman_geo)
    assert good.rowspace_share == pytest.approx(0.36)
    assert good.n_episodes == 2
    assert len(rows) == 6
    assert good.to_dict()['selector'] == 'good'


def test_scsa_pool_mismatch():
    """Test that selectors scoring different pools are refused."""
    record = audit_record(3)
    record.selector_pool_hash['bad'] = 'another pool'
    with pytest.raises(PyTRMPoolMismatchError) as exception_info:
        scsa_audit([record], ['good', 'bad'], GEOM, top_k=2)
    assert exception_info.value.episode_id == 3
    assert exception_info.value.exit_code == 3


def test_collect_audit_records(model):
    """Test that audited pools are the first-replan pools of the planner."""
    specs = [make_spec(common_data.LEFT, common_data.RIGHT, GEOM), make_spec(common_data.LEFT_FAR,
                                                                             common_data.LEFT, GEOM)]
    manifest = Manifest('balanced40', 0, specs, GEOM)
    cfg = CEMConfig(n_samples=10, n_iters=2, top_k=3, horizon=3, seed=2)
    selectors = {'raw_mse': TerminalCost('raw_mse'), 'oracle_geodesic': TerminalCost('oracle_geodesic')}
    records = collect_audit_records(manifest, model, TerminalCost('raw_mse'), selectors, cfg, seed=5)
    assert len(records) == 2
    for index, (spec, record) in enumerate(zip(specs, records)):
        _, trace = run_episode(spec, model, TerminalCost('raw_mse'), cfg, 1, GEOM, index, seed=5)
        assert record.pool_hash == trace.first_pool_hash
        assert np.allclose(record.selector_costs['oracle_geodesic'], record.oracle_geo)
        assert set(record.selector_pool_hash.values()) == {record.pool_hash}
    stats, _ = scsa_audit(records, ['raw_mse', 'oracle_geodesic'], GEOM, top_k=3)
    assert stats['oracle_geodesic'].spearman_geo == pytest.approx(1.0)
    assert stats['oracle_geodesic'].best_rank_pct == 0.0


def test_collect_audit_records_skips_solved_starts(model):
    """Test that an episode starting at its goal has no pool to audit."""
    specs = [make_spec(common_data.LEFT, common_data.LEFT, GEOM), make_spec(common_data.LEFT, common_data.RIGHT, GEOM)]
    cfg = CEMConfig(n_samples=10, n_iters=1, top_k=3, horizon=3, seed=2)
    records = collect_audit_records(Manifest('balanced40', 0, specs, GEOM), model, TerminalCost('raw_mse'),
                                    {'raw_mse': TerminalCost('raw_mse')}, cfg)
    assert [r.episode_id for r in records] == [1]


def test_planner_trace_corr():
    """Test cost-outcome correlations over planned episodes."""
    traces = []
    for cost, final in ((1.0, 10.0), (2.0, 20.0), (3.0, 30.0)):
        trace = PlanTrace(records=[ReplanRecord(0, cost, [0.0, 0.0], 'h')], steps=1, final_dist=final,
                          start_geodesic=100.0, final_geodesic=final)
        traces.append(trace)
    to_final, to_progress = planner_trace_corr(traces + [PlanTrace()])
    assert to_final.value == pytest.approx(1.0)
    assert to_progress.value == pytest.approx(-1.0)
    with pytest.raises(PyTRMValidationError):
        planner_trace_corr(traces[:2])


def test_aggregate_rows():
    """Test per-seed rows followed by one mean row per key group."""
    rows = [
        {'cost_label': 'trm', 'manifest': 'hard100', 'budget': 50, 'seed': '1', 'success_pct': 40.0},
        {'cost_label': 'trm', 'manifest': 'hard100', 'budget': 50, 'seed': '0', 'success_pct': 60.0},
        {'cost_label': 'raw_mse', 'manifest': 'hard100', 'budget': 50, 'seed': '0', 'success_pct': float('nan')},
    ]
    out = aggregate_rows('main_repair', rows)
    assert [r['seed'] for r in out] == ['0', '0', '1', 'mean', 'mean']
    means = {r['cost_label']: r for r in out if r['seed'] == 'mean'}
    assert means['trm']['success_pct'] == 50.0
    assert math.isnan(means['raw_mse']['success_pct'])


def test_write_table(tmpdir):
    """Test the CSV layout and the JSON twin with NaN as null."""
    rows = [{'selector': 'trm', 'manifest': 'hard100', 'seed': '0', 'spearman_geo': float('nan')}]
    path = write_table('scsa', rows, str(tmpdir))
    with open(path) as fp:
        lines = list(csv.reader(fp))
    assert lines[0] == list(TABLE_SCHEMAS['scsa'])
    assert len(lines) == 3
    with open(os.path.join(str(tmpdir), 'scsa.json')) as fp:
        data = json.load(fp)
    assert data['rows'][0]['spearman_geo'] is None
    with pytest.raises(PyTRMValidationError):
        write_table('leaderboard', rows, str(tmpdir))


def test_report_without_runs(tmpdir):
    """Test that every table is written header-only when there are no runs."""
    paths = report({}, str(tmpdir))
    assert len(paths) == len(TABLE_SCHEMAS)
    for path in paths:
        with open(path) as fp:
            assert len(fp.read().splitlines()) == 1
