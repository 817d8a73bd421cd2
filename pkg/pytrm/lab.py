import csv
import json
import logging
import os
from dataclasses import asdict

import numpy as np

from pytrm import settings
from pytrm.artifact_handler import RUN_MANIFEST, ArtifactHandler
from pytrm.audit import collect_audit_records, planner_trace_corr, report, scsa_audit
from pytrm.config import split_list
from pytrm.exceptions import (
    PyTRMDiagnosticOnlyError,
    PyTRMException,
    PyTRMMissingArtifactError,
    PyTRMPartialGridError,
    PyTRMPoolMismatchError,
)
from pytrm.grid import GridBuilder, GridEntry, GridResponse
from pytrm.metric import (
    DEPLOYMENT,
    DIAGNOSTIC,
    RESIDUAL,
    ROWSPACE,
    SHUFFLED_LABELS,
    TRUE_LABELS,
    PairHead,
    TerminalCost,
    build_projection,
    train_head,
)
from pytrm.planner import evaluate_manifest
from pytrm.trajstore import collect, load_dataset, save_dataset
from pytrm.tworoom import generate_manifest, load_manifest, save_manifest
from pytrm.worldmodel import Encoder, WorldModel, fit_probe, train_dynamics

logger = logging.getLogger(__name__)

SUBSPACE_KINDS = ('raw_mse', 'rowspace_mse', 'residual_mse', 'decoded_euclid', 'decoded_geodesic')
EPISODE_COLUMNS = ('episode_id', 'topology_class', 'success', 'failure_class', 'final_x', 'final_y', 'final_dist',
                   'steps', 'start_geodesic', 'final_geodesic', 'mean_selected_cost', 'selected_costs',
                   'first_pool_hash')
SUMMARY_COLUMNS = ('success_pct', 'same_room_pct', 'cross_wall_pct', 'wrong_room_pct', 'stuck_at_wall_pct',
                   'same_room_not_precise_pct', 'crossed_door_not_precise_pct', 'n_episodes')
SCSA_COLUMNS = ('selector', 'episode_id', 'pool_hash', 'spearman_euclid', 'spearman_geo', 'best_rank_pct',
                'selected_final_dist', 'selected_rollout_dist', 'topk_oracle_cost')


def head_label(regime, pairs, delta_max=None, source_rows=None, shuffled=False):
    """Directory-safe name of a trained head configuration."""
    label = '%s_p%d' % (regime, pairs)
    if delta_max is not None:
        label += '_dmax%d' % delta_max
    if source_rows is not None:
        label += '_rows%d' % source_rows
    if shuffled:
        label += '_shuffled'
    return label


class Lab(object):
    """One seed's experiment pipeline.
    Each method is one stage; stages read and write artifacts through an ArtifactHandler.
    """

    def __init__(self, config, workers=None):
        """
        Example Usage:

        pytrm.Lab(RunConfig.from_file('lab.ini'))

        :param RunConfig config: Run configuration.
        :param int workers: Process count for episode-level parallelism. (Optional, default from config)
        """
        self.config = config
        self.workers = workers or config.workers
        self.geom = config.geometry()
        self.handler = ArtifactHandler(config.output_dir, config.seed)

    @property
    def seed(self):
        return self.config.seed

    def _stage_config(self, **extra):
        data = {'seed': self.seed, 'geometry': asdict(self.geom)}
        data.update(extra)
        return data

    def gen_manifests(self, kinds=settings.MANIFEST_KINDS):
        """Generate and store start-goal manifests.

        :param tuple kinds: Manifest kinds to generate.
        :return: Kind -> Manifest.
        :rtype: ``dict``
        """
        directory = self.handler.path('manifests')
        manifests = {}
        with self.handler.stage(directory, self.config.dumps()):
            for kind in kinds:
                manifests[kind] = generate_manifest(kind, self.geom, self.seed)
                save_manifest(manifests[kind], self.handler.manifest_path(kind))
            outputs = {kind: self.handler.manifest_path(kind) for kind in kinds}
            self.handler.record(directory, 'gen-manifests', {}, outputs,
                                self._stage_config(counts={k: m.counts() for k, m in manifests.items()}))
        return manifests

    def manifest(self, kind):
        directory = self.handler.path('manifests')
        path = self.handler.require(self.handler.manifest_path(kind))
        self.handler.verify(directory)
        return load_manifest(path)

    def collect(self):
        """Roll the exploration policy, encode it and store the dataset with its encoder.

        :rtype: ``Dataset``
        """
        wm = self.config.section('worldmodel')
        ds = self.config.section('dataset')
        directory = self.handler.dataset_dir
        with self.handler.stage(directory, self.config.dumps()):
            encoder = Encoder.create(self.seed, latent_dim=wm['latent_dim'], freq_scale=wm['freq_scale'],
                                     gamma_xy=wm['gamma_xy'], gamma_n=wm['gamma_n'],
                                     nuisance_radius=wm['nuisance_radius'])
            dataset = collect(self.geom, encoder, ds['n_episodes'], ds['length'], self.seed, self.workers,
                              ds['min_crossing'])
            save_dataset(dataset, directory)
            encoder.save(directory)
            self.handler.record(directory, 'collect', {}, {'dataset': directory},
                                self._stage_config(dataset=ds, crossing_fraction=dataset.crossing_fraction(self.geom)))
        return dataset

    def dataset(self):
        self.handler.verify(self.handler.dataset_dir)
        return load_dataset(self.handler.dataset_dir)

    def train_wm(self):
        """Train and freeze the latent dynamics.

        :rtype: ``WorldModel``
        """
        dataset = self.dataset()
        encoder = Encoder.load(self.handler.dataset_dir)
        cfg = self.config.dynamics_config()
        directory = self.handler.worldmodel_dir
        with self.handler.stage(directory, self.config.dumps()):
            dynamics, rmse = train_dynamics(dataset, cfg)
            mean, std = dataset.latent_stats()
            model = WorldModel(encoder, dynamics, mean, std)
            freeze = model.save(directory)
            self.handler.record(directory, 'train-wm', {'dataset': self.handler.dataset_dir},
                                {'bundle': directory},
                                self._stage_config(dynamics=asdict(cfg), validation_rmse=rmse, freeze_hash=freeze))
        return model

    @property
    def probe_path(self):
        return self.handler.path('probe', 'probe.json')

    def fit_probe(self):
        """Fit the linear XY readout used by decoded and projection costs.

        :rtype: ``XYProbe``
        """
        model = self.model()
        dataset = self.dataset()
        wm = self.config.section('worldmodel')
        directory = self.handler.path('probe')
        with self.handler.stage(directory, self.config.dumps()):
            probe = fit_probe(dataset, wm['probe_rows'], wm['probe_ridge'], self.seed, wm['probe_holdout_rows'])
            model.probe = probe
            model.save_probe(self.probe_path)
            self.handler.record(directory, 'fit-probe',
                                {'dataset': self.handler.dataset_dir, 'bundle': self.handler.worldmodel_dir},
                                {'probe': self.probe_path},
                                self._stage_config(r2=probe.fit_r2, rmse=probe.fit_rmse,
                                                   rank=int(np.linalg.matrix_rank(probe.W))))
        return probe

    def model(self, require_probe=False):
        self.handler.verify(self.handler.worldmodel_dir)
        if require_probe:
            self.handler.verify(self.handler.path('probe'))
        return WorldModel.load(self.handler.worldmodel_dir, self.probe_path, require_probe)

    def train_trm(self, regime=None, pairs=None, delta_max=None, shuffle_labels=False, source_rows=None):
        """Train a pair head; unset arguments fall back to the ``[head]`` section.

        :return: (label, PairHead)
        :rtype: ``tuple``
        """
        overrides = {}
        if regime is not None:
            # a new regime does not inherit the configured cap or row budget
            overrides.update(regime=regime, delta_max=delta_max, source_rows=source_rows)
        else:
            overrides.update({k: v for k, v in (('delta_max', delta_max), ('source_rows', source_rows))
                              if v is not None})
        if pairs is not None:
            overrides['n_pairs'] = pairs
        sampler = self.config.sampler(**overrides)
        label = head_label(sampler.regime, sampler.n_pairs, sampler.delta_max, sampler.source_rows, shuffle_labels)
        dataset = self.dataset()
        h = self.config.section('head')
        directory = os.path.dirname(self.handler.head_prefix(label))
        with self.handler.stage(directory, self.config.dumps()):
            head = train_head(dataset, sampler, SHUFFLED_LABELS if shuffle_labels else TRUE_LABELS,
                              self.config.train_config('head'), h['hidden'], h['scale'], h['validation_pairs'])
            head.save(self.handler.head_prefix(label))
            self.handler.record(directory, 'train-trm', {'dataset': self.handler.dataset_dir},
                                {'head': self.handler.head_prefix(label)},
                                self._stage_config(label=label, sampler=asdict(sampler),
                                                   label_mode=head.label_mode, validation=head.validation))
        return label, head

    def default_head_label(self, shuffled=False):
        s = self.config.sampler()
        return head_label(s.regime, s.n_pairs, s.delta_max, s.source_rows, shuffled)

    def head(self, label):
        prefix = self.handler.require(self.handler.head_prefix(label))
        self.handler.verify(os.path.dirname(prefix))
        return PairHead.load(prefix)

    def build_cost(self, kind, model, head=None, lam=None):
        """Assemble a TerminalCost with its head, probe or projection.

        :return: (TerminalCost, cost label, input artifacts)
        :rtype: ``tuple``
        """
        ev = self.config.section('evaluate')
        lam = ev['lam'] if lam is None else lam
        inputs = {}
        kwargs = {'kind': kind, 'lam': lam, 'eps': ev['eps'], 'geom': self.geom}
        label = kind
        if kind in ('trm', 'hybrid'):
            head = head or self.default_head_label()
            kwargs['head'] = self.head(head)
            inputs['head'] = self.handler.head_prefix(head)
            label = '%s.%s' % (kind, head)
        if kind in ('decoded_euclid', 'decoded_geodesic', 'rowspace_mse', 'residual_mse'):
            if model.probe is None:
                model = self.model(require_probe=True)
            inputs['probe'] = self.probe_path
            if kind.startswith('decoded'):
                kwargs['probe'] = model.probe
            else:
                kwargs['projection'] = build_projection(model.probe, ROWSPACE if kind == 'rowspace_mse' else RESIDUAL)
        if kind == 'perdim_std_mse':
            kwargs['latent_mean'] = model.latent_mean
            kwargs['latent_std'] = model.latent_std
        if kind in ('hybrid', 'oracle_aux_geodesic'):
            label += '.lam%g' % lam
            logger.info('%s: standardization statistics are recomputed for every scored candidate batch', label)
        return TerminalCost(**kwargs), label, inputs

    def evaluate(self, cost, manifest, budget, head=None, lam=None, diagnostic=False, cem=None, run_tag=None,
                 table=None, labels=None):
        """Closed-loop evaluation of one cost on one manifest at one budget.

        :param string cost: Cost kind.
        :param string manifest: Manifest kind.
        :param int budget: Executed-step budget.
        :param string head: Head label for ``trm``/``hybrid``. (Optional, default head from config)
        :param float lam: Hybrid weight. (Optional)
        :param bool diagnostic: Allow oracle costs.
        :param CEMConfig cem: Planner configuration. (Optional, default ``[cem]``)
        :param string run_tag: Suffix distinguishing runs with the same cost/manifest/budget. (Optional)
        :param string table: Report table this run belongs to. (Optional, inferred by ``report``)
        :param dict labels: Extra report columns. (Optional)
        :return: Run summary.
        :rtype: ``dict``
        """
        if cost in settings.ORACLE_COST_KINDS and not diagnostic:
            raise PyTRMDiagnosticOnlyError('Cost "%s" is diagnostic-only; pass --diagnostic.' % cost, cost)
        model = self.model()
        terminal_cost, cost_label, inputs = self.build_cost(cost, model, head, lam)
        episodes = self.manifest(manifest)
        cem = cem or self.config.cem_config()
        run_id = '%s__%s__b%d' % (cost_label, manifest, budget) + ('__%s' % run_tag if run_tag else '')
        directory = self.handler.run_dir(run_id)
        mode = DIAGNOSTIC if diagnostic else DEPLOYMENT
        with self.handler.stage(directory, self.config.dumps()):
            result = evaluate_manifest(episodes, model, terminal_cost, cem, budget, self.seed, self.workers, mode)
            rows = []
            for row, trace in zip(result.rows, result.traces):
                row = dict(row)
                row['selected_costs'] = ';'.join('%.6g' % r.selected_cost for r in trace.records)
                rows.append(row)
            corr = {'corr_final_dist': float('nan'), 'corr_geodesic_progress': float('nan'), 'defined': False}
            if sum(1 for t in result.traces if t.records) >= 3:
                final, progress = planner_trace_corr(result.traces)
                corr = {'corr_final_dist': final.value, 'corr_geodesic_progress': progress.value,
                        'defined': final.defined and progress.defined}
            summary = {'run_id': run_id, 'cost_label': cost_label, 'cost': terminal_cost.describe(),
                       'manifest': manifest, 'budget': budget, 'summary': result.summary, 'planner_trace': corr,
                       'table': table, 'labels': labels or {}}
            self.handler.write_csv(os.path.join(directory, 'episodes.csv'), rows, EPISODE_COLUMNS)
            self.handler.write_json(os.path.join(directory, 'summary.json'), _json_safe(summary))
            self.handler.write_csv(os.path.join(directory, 'summary.csv'), [result.summary], SUMMARY_COLUMNS)
            inputs.update({'manifest': self.handler.manifest_path(manifest), 'bundle': self.handler.worldmodel_dir})
            self.handler.record(directory, 'evaluate', inputs,
                                {'episodes': os.path.join(directory, 'episodes.csv'),
                                 'summary': os.path.join(directory, 'summary.json')},
                                self._stage_config(cost=terminal_cost.describe(), cem=asdict(cem), budget=budget,
                                                   manifest=manifest, mode=mode))
        summary['traces'] = result.traces
        return summary

    def stress(self, manifest=None, budget=None, cost='raw_mse', diagnostic=False):
        """Evaluate under the enlarged CEM search."""
        manifest = manifest or self.config.manifests()[0]
        budget = budget or self.config.budgets()[0]
        cem = self.config.stress_config()
        return self.evaluate(cost, manifest, budget, diagnostic=diagnostic, cem=cem, run_tag='stress',
                             table='stress', labels={'n_samples': cem.n_samples, 'n_iters': cem.n_iters,
                                                     'top_k': cem.top_k})

    def selectors(self, names, model):
        """Selector name -> TerminalCost; ``trm_shuffled`` uses the shuffled twin of the default head."""
        out = {}
        for name in names:
            if name == 'trm_shuffled':
                out[name] = self.build_cost('trm', model, self.default_head_label(shuffled=True))[0]
            else:
                out[name] = self.build_cost(name, model)[0]
        return out

    def scsa(self, manifest=None):
        """Same-candidate selection audit on first-replan pools.

        :return: Selector -> RankStats.
        :rtype: ``dict``
        """
        s = self.config.section('scsa')
        manifest = manifest or s['manifest']
        model = self.model()
        if model.probe is None and os.path.exists(self.probe_path):
            model = self.model(require_probe=True)
        episodes = self.manifest(manifest)
        cem = self.config.cem_config()
        pool_cost, pool_label, _ = self.build_cost(s['pool_cost'], model)
        names = split_list(s['selectors'])
        selectors = self.selectors(names, model)
        projection = build_projection(model.probe, ROWSPACE) if model.probe is not None else None
        directory = self.handler.scsa_dir(manifest)
        with self.handler.stage(directory, self.config.dumps()):
            records = collect_audit_records(episodes, model, pool_cost, selectors, cem, self.seed)
            self.check_pool_links(records, pool_label, manifest)
            stats, rows = scsa_audit(records, names, self.geom, cem.top_k, cem.replan_block, projection)
            outputs = {}
            for name in names:
                path = os.path.join(directory, '%s.csv' % name)
                self.handler.write_csv(path, [r for r in rows if r['selector'] == name], SCSA_COLUMNS)
                outputs[name] = path
            summary_path = os.path.join(directory, 'summary.json')
            self.handler.write_json(summary_path, _json_safe({
                'manifest': manifest,
                'pool_cost': pool_label,
                'pool_hashes': {str(r.episode_id): r.pool_hash for r in records},
                'stats': {name: st.to_dict() for name, st in stats.items()},
            }))
            outputs['summary'] = summary_path
            self.handler.record(directory, 'scsa', {'manifest': self.handler.manifest_path(manifest),
                                                    'bundle': self.handler.worldmodel_dir}, outputs,
                                self._stage_config(pool_cost=pool_cost.describe(), selectors=names, cem=asdict(cem)))
        return stats

    def check_pool_links(self, records, pool_label, manifest):
        """Compare audited pools with the first-replan hashes of matching evaluation runs.

        At least one evaluation run of ``pool_label`` on ``manifest`` must exist, and every audited
        episode must appear in it with the same non-empty pool hash.
        """
        paths = [os.path.join(self.handler.run_dir('%s__%s__b%d' % (pool_label, manifest, budget)), 'episodes.csv')
                 for budget in self.config.budgets()]
        paths = [path for path in paths if os.path.exists(path)]
        if not paths:
            raise PyTRMMissingArtifactError('No %s evaluation run on %s to link the audit pools to.'
                                            % (pool_label, manifest), self.handler.path('runs'))
        for path in paths:
            with open(path) as fp:
                planned = {int(row['episode_id']): row['first_pool_hash'] for row in csv.DictReader(fp)}
            for record in records:
                linked = planned.get(record.episode_id)
                if linked != record.pool_hash:
                    raise PyTRMPoolMismatchError('Audited pool differs from the planner pool.', record.episode_id,
                                                 [linked or '', record.pool_hash])
            logger.info('Audit pools match the planner pools of %s', path)

    def run_grid(self, builder):
        """Execute every grid entry, collecting failures instead of stopping at the first.

        :param GridBuilder builder: Grid to run.
        :rtype: ``GridResponse``
        """
        entries = list()
        for request in builder.build():
            data = dict(request['data'])
            try:
                if request['stage'] == 'train_head':
                    result = self.train_trm(**data)[0]
                else:
                    result = self.evaluate(table=request['table'], labels=request['labels'], **data)
                entries.append(GridEntry(request, result))
            except PyTRMException as e:
                logger.error('Grid entry %s failed: %s', request, e.message)
                entries.append(GridEntry(request, error=e))

        result = GridResponse(entries)
        if result.has_errors():
            msg = 'Grid contains %i errors' % len(result.errors())
            raise PyTRMPartialGridError(msg, result)
        return result

    def ablate_horizon(self):
        """Train and evaluate one head per ablation entry (regime, pairs, max separation, source rows)."""
        ab = self.config.section('ablation')
        grid = self.config.ablation_grid()
        heads = GridBuilder()
        for entry in grid:
            label = head_label(entry['regime'], entry['pairs'], entry['delta_max'], entry['source_rows'])
            if not self.handler.exists(self.handler.head_prefix(label)):
                heads.train_head(entry['regime'], entry['pairs'], entry['delta_max'], entry['source_rows'])
        self.run_grid(heads)
        runs = GridBuilder()
        for entry in grid:
            label = head_label(entry['regime'], entry['pairs'], entry['delta_max'], entry['source_rows'])
            runs.evaluate('trm', ab['manifest'], ab['budget'], head=label, table='horizon_ablation', labels=entry)
        return self.run_grid(runs)

    def sweep_lambda(self, lambdas=None):
        """Hybrid cost at several weights for the true and the shuffled default head."""
        ab = self.config.section('ablation')
        lambdas = lambdas or self.config.lambdas()
        builder = GridBuilder()
        for shuffled in (False, True):
            label = self.default_head_label(shuffled)
            for lam in lambdas:
                builder.evaluate('hybrid', ab['manifest'], ab['budget'], head=label, lam=lam, table='hybrid_sweep',
                                 labels={'head_label': label, 'lam': lam})
        return self.run_grid(builder)

    def report(self):
        """Merge every seed's runs under the output directory into report tables.

        :return: Written CSV paths.
        :rtype: ``list``
        """
        tables = {}
        out = self.config.output_dir
        seed_dirs = sorted(d for d in os.listdir(out) if d.startswith('seed_')) if os.path.isdir(out) else []
        for seed_dir in seed_dirs:
            _collect_seed_rows(os.path.join(out, seed_dir), seed_dir[len('seed_'):], tables)
        return report(tables, os.path.join(out, 'tables'))


def _json_safe(value):
    if isinstance(value, float) and value != value:
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _read_json(path):
    with open(path) as fp:
        return json.load(fp)


def _nan(value):
    return float('nan') if value is None else value


def _collect_seed_rows(root, seed, tables):
    shares = {}
    scsa_root = os.path.join(root, 'scsa')
    if os.path.isdir(scsa_root):
        for manifest in sorted(os.listdir(scsa_root)):
            path = os.path.join(scsa_root, manifest, 'summary.json')
            if not os.path.exists(path):
                continue
            data = _read_json(path)
            for name, st in sorted(data['stats'].items()):
                row = {k: _nan(v) for k, v in st.items()}
                row.update({'selector': name, 'manifest': manifest, 'seed': seed})
                tables.setdefault('scsa', []).append(row)
                shares[manifest] = _nan(st.get('rowspace_share'))

    probe_manifest = os.path.join(root, 'probe', RUN_MANIFEST)
    if os.path.exists(probe_manifest):
        cfg = _read_json(probe_manifest)['config']
        tables.setdefault('probe', []).append({'seed': seed, 'r2': cfg['r2'], 'rmse': cfg['rmse'], 'rank': cfg['rank']})

    runs_root = os.path.join(root, 'runs')
    if not os.path.isdir(runs_root):
        return
    for run_id in sorted(os.listdir(runs_root)):
        path = os.path.join(runs_root, run_id, 'summary.json')
        if not os.path.exists(path):
            continue
        data = _read_json(path)
        base = {'cost_label': data['cost_label'], 'manifest': data['manifest'], 'budget': data['budget'],
                'seed': seed}
        base.update({k: _nan(v) for k, v in data['summary'].items()})
        base.update(data.get('labels') or {})
        table = data.get('table')
        kind = data['cost']['kind']
        if table:
            tables.setdefault(table, []).append(base)
        else:
            tables.setdefault('main_repair' if data['manifest'] == 'hard100' else 'fullcache', []).append(base)
            if kind in SUBSPACE_KINDS:
                row = dict(base)
                row['rowspace_share'] = shares.get(data['manifest'], float('nan'))
                tables.setdefault('subspace', []).append(row)
            corr = data['planner_trace']
            row = dict(base)
            row.update({'corr_final_dist': _nan(corr['corr_final_dist']),
                        'corr_geodesic_progress': _nan(corr['corr_geodesic_progress'])})
            tables.setdefault('planner_trace', []).append(row)
