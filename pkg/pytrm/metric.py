"""
Terminal costs for ranking candidate action sequences.

The learned trajectory reachability head predicts same-episode temporal
separation from a pair of latents. It can replace raw latent MSE, or be
combined with it through per-batch standardization. Probe-based costs
(decoded XY, rowspace and residual projections) and simulator oracles are
provided as mechanism controls.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from pytrm import settings
from pytrm.exceptions import (
    PyTRMDiagnosticOnlyError,
    PyTRMDimensionError,
    PyTRMMissingOracleStateError,
    PyTRMRankDeficiencyError,
    PyTRMValidationError,
    PyTRMZeroDenominatorError,
)
from pytrm.neuralcore import DenseNet, SmoothL1Loss, TrainConfig, fit
from pytrm.trajstore import sample_pairs
from pytrm.tworoom import WorldGeometry, geodesic_batch
from pytrm.validation import validate

logger = logging.getLogger(__name__)

TRUE_LABELS = 'true_labels'
SHUFFLED_LABELS = 'shuffled_labels'
LABEL_MODES = (TRUE_LABELS, SHUFFLED_LABELS)

DEPLOYMENT = 'deployment'
DIAGNOSTIC = 'diagnostic'

ROWSPACE = 'rowspace'
RESIDUAL = 'residual'

VALIDATION_SEED_OFFSET = 7919


def pair_features(z_i, z_j):
    """psi(z_i, z_j) = [z_i, z_j, z_i - z_j, |z_i - z_j|].

    ``z_j`` broadcasts against a batch of ``z_i`` rows.

    :param numpy.ndarray z_i: (d,) or (N, d).
    :param numpy.ndarray z_j: (d,) or (N, d).
    :rtype: ``numpy.ndarray``
    """
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z_i.shape[-1] != z_j.shape[-1]:
        raise PyTRMDimensionError('Pair latents differ in dimension.', z_i.shape[-1], z_j.shape[-1])
    z_i, z_j = np.broadcast_arrays(z_i, z_j)
    diff = z_i - z_j
    return np.concatenate([z_i, z_j, diff, np.abs(diff)], axis=-1)


class PairHead(object):
    """Softplus-output network predicting scaled temporal separation."""

    def __init__(self, net, scale=settings.LABEL_SCALE, label_mode=TRUE_LABELS, train_config=None,
                 validation=None):
        if scale <= 0:
            raise PyTRMValidationError('Head scale must be positive.', 'PairHead', ['scale'], [scale])
        if label_mode not in LABEL_MODES:
            raise PyTRMValidationError('Unknown label mode: %s' % label_mode, 'PairHead', ['label_mode'],
                                       [label_mode])
        self.net = net
        self.scale = scale
        self.label_mode = label_mode
        self.train_config = train_config or {}
        self.validation = validation or {}

    @classmethod
    def create(cls, latent_dim=settings.LATENT_DIM, hidden=settings.HIDDEN_WIDTH, seed=0, **kwargs):
        net = DenseNet([4 * latent_dim, hidden, hidden, 1], ['silu', 'silu', 'softplus'], seed=seed)
        return cls(net, **kwargs)

    def predict_scaled(self, z_i, z_j):
        return self.net.forward(pair_features(z_i, z_j))[..., 0]

    def cost(self, z_i, z_j):
        """Predicted separation in time steps (strictly positive)."""
        return self.predict_scaled(z_i, z_j) * self.scale

    def content_hash(self):
        return self.net.content_hash()

    def save(self, path):
        self.net.save(path, train_config=self.train_config,
                      extra={'scale': self.scale, 'label_mode': self.label_mode, 'validation': self.validation})
        return path

    @classmethod
    def load(cls, path):
        net, header = DenseNet.load(path)
        extra = header['extra']
        return cls(net, extra['scale'], extra['label_mode'], header['train_config'], extra.get('validation'))


def train_head(dataset, sampler, label_mode=TRUE_LABELS, train_config=None, hidden=settings.HIDDEN_WIDTH,
               scale=settings.LABEL_SCALE, validation_pairs=settings.VALIDATION_PAIRS):
    """Train a pair head with Smooth-L1 on label / scale.

    The shuffled-label control differs from the true head only in the
    permuted training label column. Validation always uses true labels drawn
    independently with the same regime.

    :param Dataset dataset: Logged trajectories.
    :param SamplerConfig sampler: Pair sampler configuration.
    :param string label_mode: ``true_labels`` or ``shuffled_labels``.
    :param TrainConfig train_config: Optimizer configuration.
    :param int hidden: Hidden width.
    :param float scale: Label scale.
    :param int validation_pairs: Held-out pair count.
    :rtype: ``PairHead``
    """
    if label_mode not in LABEL_MODES:
        raise PyTRMValidationError('Unknown label mode: %s' % label_mode, 'train_head', ['label_mode'], [label_mode])
    train_config = train_config or TrainConfig(seed=sampler.seed)
    sampler = replace(sampler, shuffle_labels=(label_mode == SHUFFLED_LABELS))
    pairs = sample_pairs(dataset, sampler)
    head = PairHead.create(dataset.latent_dim, hidden, seed=train_config.seed, scale=scale, label_mode=label_mode)
    x = pair_features(pairs.z_i, pairs.z_j)
    y = (pairs.labels / scale)[:, None]
    history = fit(head.net, x, y, SmoothL1Loss(), train_config, label='head[%s/%s]' % (sampler.regime, label_mode))

    val_sampler = replace(sampler, n_pairs=validation_pairs, shuffle_labels=False, source_rows=None,
                          seed=sampler.seed + VALIDATION_SEED_OFFSET)
    val = sample_pairs(dataset, val_sampler)
    pred = head.predict_scaled(val.z_i, val.z_j)
    target = val.labels / scale
    loss, _ = SmoothL1Loss()(pred[:, None], target[:, None])
    constant = np.median(pairs.labels / scale)
    head.validation = {
        'n_pairs': validation_pairs,
        'smooth_l1': float(loss),
        'mae_scaled': float(np.mean(np.abs(pred - target))),
        'rmse_steps': float(np.sqrt(np.mean((pred - target) ** 2)) * scale),
        'constant_mae_scaled': float(np.mean(np.abs(constant - target))),
    }
    head.train_config = {'sampler': asdict(sampler), 'optimizer': asdict(train_config), 'hidden': hidden,
                         'history': history}
    logger.info('Head %s/%s: validation MAE %.4f (constant predictor %.4f), RMSE %.2f steps',
                sampler.regime, label_mode, head.validation['mae_scaled'], head.validation['constant_mae_scaled'],
                head.validation['rmse_steps'])
    return head


@dataclass
class ProjectionOperator:
    P: np.ndarray
    mode: str = ROWSPACE

    def apply(self, d):
        return np.asarray(d, dtype=np.float64) @ self.P.T


def build_projection(probe, mode=ROWSPACE):
    """P = W^T (W W^T)^{-1} W for the rowspace, I - P for the residual.

    :param probe: ``XYProbe`` or a readout matrix W of shape (k, d).
    :param string mode: ``rowspace`` or ``residual``.
    :rtype: ``ProjectionOperator``
    """
    if mode not in (ROWSPACE, RESIDUAL):
        raise PyTRMValidationError('Unknown projection mode: %s' % mode, 'build_projection', ['mode'], [mode])
    w = np.atleast_2d(np.asarray(getattr(probe, 'W', probe), dtype=np.float64))
    if np.linalg.matrix_rank(w) < w.shape[0]:
        raise PyTRMRankDeficiencyError('Probe readout of shape %s is not full row rank.' % (w.shape,))
    p = w.T @ np.linalg.solve(w @ w.T, w)
    p = 0.5 * (p + p.T)
    if mode == RESIDUAL:
        p = np.eye(w.shape[1]) - p
    return ProjectionOperator(p, mode)


def rowspace_share(diffs, projection):
    """sum ||P d||^2 / sum ||d||^2 over the given differences."""
    d = np.atleast_2d(np.asarray(diffs, dtype=np.float64))
    p = getattr(projection, 'P', projection)
    total = float(np.sum(d * d))
    if total == 0.0:
        raise PyTRMZeroDenominatorError('Rowspace share of all-zero differences is undefined.')
    pd = d @ p.T
    return float(np.sum(pd * pd)) / total


@dataclass
class TerminalCost:
    kind: str = 'raw_mse'
    lam: float = settings.HYBRID_LAMBDA
    eps: float = settings.HYBRID_EPS
    head: Optional[PairHead] = None
    probe: Optional[object] = None
    projection: Optional[ProjectionOperator] = None
    latent_mean: Optional[np.ndarray] = None
    latent_std: Optional[np.ndarray] = None
    geom: WorldGeometry = field(default_factory=WorldGeometry)

    def __post_init__(self):
        validate('terminal_cost', {'kind': self.kind, 'lam': self.lam, 'eps': self.eps})
        needs = {
            'trm': ('head',),
            'hybrid': ('head',),
            'decoded_euclid': ('probe',),
            'decoded_geodesic': ('probe',),
            'rowspace_mse': ('projection',),
            'residual_mse': ('projection',),
            'perdim_std_mse': ('latent_mean', 'latent_std'),
        }.get(self.kind, ())
        missing = [n for n in needs if getattr(self, n) is None]
        if missing:
            raise PyTRMValidationError('Cost "%s" needs %s.' % (self.kind, missing), 'terminal_cost', missing)

    @property
    def is_oracle(self):
        return self.kind in settings.ORACLE_COST_KINDS

    def describe(self):
        """Serializable summary for run manifests."""
        data = {'kind': self.kind}
        if self.kind in ('hybrid', 'oracle_aux_geodesic'):
            data.update({'lam': self.lam, 'eps': self.eps})
        if self.head is not None:
            data['head'] = {'hash': self.head.content_hash(), 'label_mode': self.head.label_mode}
        if self.projection is not None:
            data['projection'] = self.projection.mode
        return data


@dataclass
class Scores:
    costs: np.ndarray
    degenerate: bool = False


def standardize(x, eps=settings.HYBRID_EPS):
    """Population-std standardization; also reports whether the batch was constant."""
    x = np.asarray(x, dtype=np.float64)
    std = x.std()
    return (x - x.mean()) / (std + eps), bool(std == 0.0)


def standardized_hybrid(primary, secondary, lam, eps=settings.HYBRID_EPS):
    """standardized(primary) + lam * standardized(secondary), falling back to the varying component."""
    a, a_flat = standardize(primary, eps)
    b, b_flat = standardize(secondary, eps)
    if a_flat and b_flat:
        return Scores(np.zeros_like(a), True)
    if a_flat:
        logger.debug('Hybrid batch: primary component constant, using secondary alone')
        return Scores(lam * b, True)
    if b_flat:
        logger.debug('Hybrid batch: secondary component constant, using primary alone')
        return Scores(a, True)
    return Scores(a + lam * b, False)


def _as_xy(states):
    if states is None:
        return None
    if hasattr(states, 'as_array'):
        return states.as_array()
    if len(states) and hasattr(states[0], 'as_array'):
        return np.array([s.as_array() for s in states])
    return np.asarray(states, dtype=np.float64)


def _clamp(xy, geom):
    return np.stack([np.clip(xy[..., 0], 0.0, geom.width), np.clip(xy[..., 1], 0.0, geom.height)], axis=-1)


def score_candidates(cost, terminals, z_g, goal_true=None, predicted_true=None, mode=DEPLOYMENT):
    """Score predicted terminal latents against the goal latent.

    :param TerminalCost cost: Cost configuration.
    :param numpy.ndarray terminals: (N, d) predicted terminal latents.
    :param numpy.ndarray z_g: (d,) goal latent.
    :param goal_true: True goal position (oracle kinds only).
    :param predicted_true: (N, 2) simulator terminals (oracle kinds only).
    :param string mode: ``deployment`` refuses oracle kinds; ``diagnostic`` allows them.
    :rtype: ``Scores``
    """
    terminals = np.atleast_2d(np.asarray(terminals, dtype=np.float64))
    z_g = np.asarray(z_g, dtype=np.float64)
    if terminals.shape[0] == 0:
        raise PyTRMValidationError('No candidates to score.', 'score_candidates')
    if terminals.shape[1] != z_g.shape[-1]:
        raise PyTRMDimensionError('Terminal and goal latents differ in dimension.', z_g.shape[-1], terminals.shape[1])
    kind = cost.kind
    d = terminals - z_g
    raw = np.sum(d * d, axis=1)

    if cost.is_oracle:
        if mode != DIAGNOSTIC:
            raise PyTRMDiagnosticOnlyError('Cost "%s" is diagnostic-only.' % kind, kind)
        goal_xy = _as_xy(goal_true)
        pred_xy = _as_xy(predicted_true)
        if goal_xy is None or pred_xy is None:
            raise PyTRMMissingOracleStateError('Cost "%s" needs true terminal and goal states.' % kind)
        if kind == 'oracle_euclid':
            return Scores(np.hypot(*(pred_xy - goal_xy).T))
        geo = geodesic_batch(pred_xy, np.broadcast_to(goal_xy, pred_xy.shape), cost.geom)
        if kind == 'oracle_geodesic':
            return Scores(geo)
        return standardized_hybrid(raw, geo, cost.lam, cost.eps)

    if kind == 'raw_mse':
        return Scores(raw)
    if kind == 'perdim_std_mse':
        std = np.maximum(np.asarray(cost.latent_std, dtype=np.float64), cost.eps)
        s = d / std
        return Scores(np.sum(s * s, axis=1))
    if kind == 'trm':
        return Scores(cost.head.cost(terminals, z_g))
    if kind == 'hybrid':
        return standardized_hybrid(raw, cost.head.cost(terminals, z_g), cost.lam, cost.eps)
    if kind in ('decoded_euclid', 'decoded_geodesic'):
        pred_xy = _clamp(cost.probe.decode(terminals), cost.geom)
        goal_xy = _clamp(cost.probe.decode(z_g), cost.geom)
        if kind == 'decoded_euclid':
            return Scores(np.hypot(*(pred_xy - goal_xy).T))
        return Scores(geodesic_batch(pred_xy, np.broadcast_to(goal_xy, pred_xy.shape), cost.geom))
    # rowspace_mse / residual_mse; either projection mode serves both kinds
    pd = cost.projection.apply(d)
    if (kind == 'residual_mse') != (cost.projection.mode == RESIDUAL):
        pd = d - pd
    return Scores(np.sum(pd * pd, axis=1))
