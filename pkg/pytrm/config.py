"""
Run configuration: a single ``key = value`` file with sections, overlaid on
the defaults in ``pytrm.settings``.
"""
from __future__ import annotations

import configparser
import io
import logging

from pytrm import settings
from pytrm.exceptions import PyTRMMissingArtifactError, PyTRMValidationError
from pytrm.neuralcore import TrainConfig
from pytrm.planner import CEMConfig, stress_config
from pytrm.trajstore import SamplerConfig
from pytrm.tworoom import WorldGeometry
from pytrm.worldmodel import DynamicsConfig

logger = logging.getLogger(__name__)

# Ablation entries are regime:pairs:delta_max:source_rows, '-' for unset.
DEFAULT_ABLATION_GRID = (
    'balanced_full:100000:-:-, balanced_capped:100000:50:-, balanced_full:20000:-:-, '
    'random_full:100000:-:20000, random_full:100000:-:-'
)

DEFAULTS = {
    'run': {
        'seed': 0,
        'output_dir': 'runs',
        'workers': 1,
    },
    'geometry': {
        'width': settings.WORLD_WIDTH,
        'height': settings.WORLD_HEIGHT,
        'wall_x': settings.WALL_X,
        'door_lo': settings.DOOR_LO,
        'door_hi': settings.DOOR_HI,
        'a_max': settings.A_MAX,
        'r_succ': settings.R_SUCC,
        'standoff': settings.WALL_STANDOFF,
        'stuck_band': settings.STUCK_BAND,
    },
    'dataset': {
        'n_episodes': settings.N_EPISODES,
        'length': settings.EPISODE_LENGTH,
        'min_crossing': settings.MIN_DOOR_CROSSING_FRACTION,
    },
    'worldmodel': {
        'latent_dim': settings.LATENT_DIM,
        'freq_scale': settings.NUISANCE_FREQ_SCALE,
        'gamma_xy': settings.GAMMA_XY,
        'gamma_n': settings.GAMMA_N,
        'nuisance_radius': settings.NUISANCE_RADIUS,
        'hidden': settings.HIDDEN_WIDTH,
        'lr': settings.LEARNING_RATE,
        'weight_decay': settings.WEIGHT_DECAY,
        'batch_size': settings.BATCH_SIZE,
        'epochs': settings.DYNAMICS_EPOCHS,
        'holdout_episodes': 50,
        'probe_rows': settings.PROBE_ROWS,
        'probe_holdout_rows': settings.PROBE_HOLDOUT_ROWS,
        'probe_ridge': settings.PROBE_RIDGE,
    },
    'head': {
        'regime': 'balanced_full',
        'pairs': settings.HEAD_PAIRS,
        'bins': settings.SAMPLER_BINS,
        'delta_max': '',
        'source_rows': '',
        'hidden': settings.HIDDEN_WIDTH,
        'lr': settings.LEARNING_RATE,
        'weight_decay': settings.WEIGHT_DECAY,
        'batch_size': settings.BATCH_SIZE,
        'epochs': settings.EPOCHS,
        'scale': settings.LABEL_SCALE,
        'validation_pairs': settings.VALIDATION_PAIRS,
    },
    'cem': {
        'n_samples': settings.CEM_SAMPLES,
        'n_iters': settings.CEM_ITERS,
        'top_k': settings.CEM_TOP_K,
        'horizon': settings.CEM_HORIZON,
        'init_std': settings.CEM_INIT_STD,
        'min_std': settings.CEM_MIN_STD,
        'replan_block': settings.CEM_REPLAN_BLOCK,
    },
    'stress': {
        'n_samples': settings.STRESS_SAMPLES,
        'n_iters': settings.STRESS_ITERS,
        'top_k': settings.STRESS_TOP_K,
    },
    'evaluate': {
        'manifests': 'hard100',
        'budgets': ', '.join(str(b) for b in settings.BUDGETS),
        'lam': settings.HYBRID_LAMBDA,
        'eps': settings.HYBRID_EPS,
    },
    'scsa': {
        'manifest': 'hard100',
        'pool_cost': 'raw_mse',
        'selectors': 'raw_mse, trm, trm_shuffled, hybrid, decoded_euclid, oracle_geodesic',
    },
    'ablation': {
        'grid': DEFAULT_ABLATION_GRID,
        'manifest': 'hard100',
        'budget': settings.BUDGETS[0],
        'lambdas': '0.25, 0.5, 0.75, 1.0',
    },
}


def split_list(value):
    return [item.strip() for item in str(value).split(',') if item.strip()]


def _optional_int(value):
    value = str(value).strip()
    return None if value in ('', '-', 'none', 'None') else int(value)


def _coerce(section, key, raw, default):
    try:
        if isinstance(default, bool):
            return str(raw).strip().lower() in ('1', 'true', 'yes', 'on')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise PyTRMValidationError('Config [%s] %s: cannot parse "%s".' % (section, key, raw), section, [key], [raw])
    return str(raw).strip()


class RunConfig(object):
    """Typed view over the run configuration sections."""

    def __init__(self, values=None):
        """
        :param dict values: Section -> {key: value} overrides on the defaults. (Optional).
        """
        self.values = {section: dict(keys) for section, keys in DEFAULTS.items()}
        for section, keys in (values or {}).items():
            if section not in DEFAULTS:
                raise PyTRMValidationError('Unknown config section [%s].' % section, 'config', [section])
            for key, raw in keys.items():
                if key not in DEFAULTS[section]:
                    raise PyTRMValidationError('Unknown config key [%s] %s.' % (section, key), section, [key])
                self.values[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])
        self.check()

    @classmethod
    def from_string(cls, text):
        parser = configparser.ConfigParser()
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise PyTRMValidationError('Config is not valid key = value text: %s' % e, 'config')
        return cls({section: dict(parser.items(section)) for section in parser.sections()})

    @classmethod
    def from_file(cls, path):
        try:
            with open(path) as fp:
                text = fp.read()
        except (IOError, OSError):
            raise PyTRMMissingArtifactError('Config file not found: %s' % path, path)
        logger.debug('Reading config from %s', path)
        return cls.from_string(text)

    def with_overrides(self, **sections):
        """Copy with ``section={key: value}`` overrides applied."""
        merged = {s: dict(k) for s, k in self.values.items()}
        for section, keys in sections.items():
            merged.setdefault(section, {}).update(keys)
        return RunConfig(merged)

    def check(self):
        """Build every typed section so invalid values fail before any stage runs."""
        self.geometry()
        self.sampler()
        self.train_config('head')
        self.dynamics_config()
        self.cem_config()
        self.stress_config()
        self.ablation_grid()
        for kind in split_list(self.values['evaluate']['manifests']) + [self.values['scsa']['manifest'],
                                                                         self.values['ablation']['manifest']]:
            if kind not in settings.MANIFEST_KINDS:
                raise PyTRMValidationError('Unknown manifest kind: %s' % kind, 'config', ['manifest'], [kind])

    def dumps(self):
        parser = configparser.ConfigParser()
        for section in DEFAULTS:
            parser[section] = {key: str(self.values[section][key]) for key in sorted(self.values[section])}
        out = io.StringIO()
        parser.write(out)
        return out.getvalue()

    @property
    def seed(self):
        return self.values['run']['seed']

    @property
    def output_dir(self):
        return self.values['run']['output_dir']

    @property
    def workers(self):
        return self.values['run']['workers']

    def section(self, name):
        return dict(self.values[name])

    def geometry(self):
        return WorldGeometry(**self.values['geometry'])

    def sampler(self, **overrides):
        head = self.values['head']
        values = dict(regime=head['regime'], n_pairs=head['pairs'], bins=head['bins'],
                      delta_max=_optional_int(head['delta_max']), source_rows=_optional_int(head['source_rows']),
                      seed=self.seed)
        values.update(overrides)
        if values['regime'] != 'balanced_capped':
            values['delta_max'] = None
        return SamplerConfig(**values)

    def train_config(self, section='head'):
        s = self.values[section]
        return TrainConfig(lr=s['lr'], weight_decay=s['weight_decay'], batch_size=s['batch_size'],
                           epochs=s['epochs'], seed=self.seed)

    def dynamics_config(self):
        s = self.values['worldmodel']
        return DynamicsConfig(hidden=s['hidden'], lr=s['lr'], weight_decay=s['weight_decay'],
                              batch_size=s['batch_size'], epochs=s['epochs'],
                              holdout_episodes=s['holdout_episodes'], seed=self.seed)

    def cem_config(self, horizon=None):
        s = dict(self.values['cem'])
        if horizon is not None:
            s['horizon'] = horizon
        return CEMConfig(seed=self.seed, a_max=self.values['geometry']['a_max'], **s)

    def stress_config(self):
        s = self.values['stress']
        return stress_config(self.seed, horizon=self.values['cem']['horizon'],
                             init_std=self.values['cem']['init_std'], min_std=self.values['cem']['min_std'],
                             replan_block=self.values['cem']['replan_block'], a_max=self.values['geometry']['a_max'],
                             **s)

    def ablation_grid(self):
        """Parsed ablation entries as dicts (regime, pairs, delta_max, source_rows)."""
        entries = []
        for item in split_list(self.values['ablation']['grid']):
            parts = item.split(':')
            if len(parts) != 4:
                raise PyTRMValidationError('Ablation entry "%s" is not regime:pairs:delta_max:source_rows.' % item,
                                           'ablation', ['grid'], [item])
            entry = {'regime': parts[0].strip(), 'pairs': int(parts[1]), 'delta_max': _optional_int(parts[2]),
                     'source_rows': _optional_int(parts[3])}
            self.sampler(regime=entry['regime'], n_pairs=entry['pairs'], delta_max=entry['delta_max'],
                         source_rows=entry['source_rows'])
            entries.append(entry)
        return entries

    def budgets(self):
        return [int(b) for b in split_list(self.values['evaluate']['budgets'])]

    def manifests(self):
        return split_list(self.values['evaluate']['manifests'])

    def lambdas(self):
        return [float(v) for v in split_list(self.values['ablation']['lambdas'])]
