"""
Fixed latent world model for the TwoRoom testbed.

The encoder mixes a small-scale XY block with a large, predictable nuisance
block through a fixed orthogonal matrix, so the task state is linearly
decodable yet carries well under 1% of raw latent distance. A dense dynamics
network learns one-step transitions and is rolled forward by composition.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from pytrm import settings
from pytrm.exceptions import (
    PyTRMHashMismatchError,
    PyTRMMissingArtifactError,
    PyTRMRankDeficiencyError,
    PyTRMSingularSystemError,
    PyTRMValidationError,
)
from pytrm.neuralcore import DenseNet, MSELoss, TrainConfig, fit
from pytrm.validation import validate

logger = logging.getLogger(__name__)

FREEZE_FILES = ('encoder.json', 'encoder.bin', 'dynamics.json', 'dynamics.bin', 'stats.json')


def nuisance_frequencies(nuisance_dim=settings.NUISANCE_DIM, scale=settings.NUISANCE_FREQ_SCALE,
                         period=settings.EPISODE_LENGTH):
    """Angular frequency per 2-D rotation block: 2*pi*k/period * scale, k = 1..dim/2."""
    k = np.arange(1, nuisance_dim // 2 + 1, dtype=np.float64)
    return 2.0 * np.pi * k / period * scale


def rotation_blocks(freqs):
    """Block-diagonal rotation matrix with one 2x2 block per frequency."""
    n = 2 * len(freqs)
    rot = np.zeros((n, n))
    for i, w in enumerate(freqs):
        c, s = np.cos(w), np.sin(w)
        rot[2 * i:2 * i + 2, 2 * i:2 * i + 2] = [[c, -s], [s, c]]
    return rot


class NuisanceProcess(object):
    """Deterministic nuisance phase n_{t+1} = R n_t on a sphere of fixed radius."""

    def __init__(self, rot, n0):
        self.rot = rot
        self.n = np.array(n0, dtype=np.float64)

    @classmethod
    def from_seed(cls, rot, seed, radius=settings.NUISANCE_RADIUS):
        rng = np.random.default_rng(seed)
        n0 = rng.standard_normal(rot.shape[0])
        return cls(rot, radius * n0 / np.linalg.norm(n0))

    def advance(self):
        self.n = self.rot @ self.n
        return self.n

    def trajectory(self, length):
        """(length, dim) phases n_0 .. n_{length-1}; leaves the process at n_{length-1}."""
        out = np.empty((length, self.n.size))
        out[0] = self.n
        for t in range(1, length):
            out[t] = self.advance()
        return out


class Encoder(object):
    """z = M [gamma_xy * x / s, gamma_xy * y / s, gamma_n * n] with M orthogonal."""

    def __init__(self, mixing, nuisance_rot, gamma_xy=settings.GAMMA_XY, gamma_n=settings.GAMMA_N,
                 nuisance_radius=settings.NUISANCE_RADIUS, scale=settings.LABEL_SCALE, seed=None):
        self.mixing = np.asarray(mixing, dtype=np.float64)
        self.nuisance_rot = np.asarray(nuisance_rot, dtype=np.float64)
        self.gamma_xy = gamma_xy
        self.gamma_n = gamma_n
        self.nuisance_radius = nuisance_radius
        self.scale = scale
        self.seed = seed
        d = self.mixing.shape[0]
        if self.mixing.shape != (d, d) or not np.allclose(self.mixing.T @ self.mixing, np.eye(d), atol=1e-10):
            raise PyTRMValidationError('Mixing matrix must be orthogonal.', 'Encoder', ['mixing'])
        k = self.nuisance_rot.shape[0]
        if k != d - 2 or not np.allclose(self.nuisance_rot.T @ self.nuisance_rot, np.eye(k), atol=1e-10):
            raise PyTRMValidationError('Nuisance rotation must be orthogonal with dim latent_dim - 2.',
                                       'Encoder', ['nuisance_rot'])

    @classmethod
    def create(cls, seed, latent_dim=settings.LATENT_DIM, freq_scale=settings.NUISANCE_FREQ_SCALE, **kwargs):
        """Random orthogonal mixing (QR of a Gaussian matrix, sign-fixed) and fixed nuisance rotations."""
        rng = np.random.default_rng(seed)
        q, r = np.linalg.qr(rng.standard_normal((latent_dim, latent_dim)))
        q = q * np.sign(np.diag(r))
        rot = rotation_blocks(nuisance_frequencies(latent_dim - 2, freq_scale))
        return cls(q, rot, seed=seed, **kwargs)

    @property
    def latent_dim(self):
        return self.mixing.shape[0]

    @property
    def nuisance_dim(self):
        return self.nuisance_rot.shape[0]

    def nuisance(self, seed):
        return NuisanceProcess.from_seed(self.nuisance_rot, seed, self.nuisance_radius)

    def encode_batch(self, xy, nuisance):
        """Encode (N, 2) positions with (N, nuisance_dim) nuisance phases."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        nuisance = np.asarray(nuisance, dtype=np.float64).reshape(-1, self.nuisance_dim)
        raw = np.concatenate([self.gamma_xy * xy / self.scale, self.gamma_n * nuisance], axis=1)
        return raw @ self.mixing.T

    def encode(self, state, nuisance):
        """Encode one AgentState.

        :param AgentState state: True position.
        :param numpy.ndarray nuisance: Current nuisance phase.
        :rtype: ``numpy.ndarray``
        """
        return self.encode_batch(state.as_array(), nuisance)[0]

    def save(self, bundle_dir):
        header = {
            'latent_dim': self.latent_dim,
            'gamma_xy': self.gamma_xy,
            'gamma_n': self.gamma_n,
            'nuisance_radius': self.nuisance_radius,
            'scale': self.scale,
            'seed': self.seed,
            'dtype': '<f8',
        }
        blob = np.concatenate([self.mixing.astype('<f8').ravel(), self.nuisance_rot.astype('<f8').ravel()])
        blob.tofile(os.path.join(bundle_dir, 'encoder.bin'))
        with open(os.path.join(bundle_dir, 'encoder.json'), 'w') as fp:
            fp.write(json.dumps(header, indent=2, sort_keys=True) + '\n')

    @classmethod
    def load(cls, bundle_dir):
        with open(os.path.join(bundle_dir, 'encoder.json')) as fp:
            header = json.load(fp)
        d = header['latent_dim']
        blob = np.fromfile(os.path.join(bundle_dir, 'encoder.bin'), dtype='<f8')
        mixing = blob[:d * d].reshape(d, d)
        rot = blob[d * d:].reshape(d - 2, d - 2)
        return cls(mixing, rot, header['gamma_xy'], header['gamma_n'], header['nuisance_radius'],
                   header['scale'], header['seed'])


class DynamicsNet(object):
    """z_{t+1} = z_t + net([(z_t - mu) / sigma, a_t / a_max]) * sigma_delta."""

    def __init__(self, net, z_mean, z_std, delta_std, a_max=settings.A_MAX):
        if net.in_dim != net.out_dim + 2:
            raise PyTRMValidationError('Dynamics net must map latent + action to latent.', 'DynamicsNet',
                                       ['dims'], [net.dims])
        self.net = net
        self.z_mean = np.asarray(z_mean, dtype=np.float64)
        self.z_std = np.asarray(z_std, dtype=np.float64)
        self.delta_std = np.asarray(delta_std, dtype=np.float64)
        self.a_max = a_max

    @property
    def latent_dim(self):
        return self.net.out_dim

    def inputs(self, z, a):
        a = np.clip(a, -self.a_max, self.a_max)
        return np.concatenate([(z - self.z_mean) / self.z_std, a / self.a_max], axis=1)

    def predict(self, z, a):
        """One step for a batch: (N, d) latents, (N, 2) actions -> (N, d)."""
        z = np.asarray(z, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        return z + self.net.forward(self.inputs(z, a)) * self.delta_std

    def stats(self):
        return {'z_mean': self.z_mean.tolist(), 'z_std': self.z_std.tolist(),
                'delta_std': self.delta_std.tolist(), 'a_max': self.a_max}


@dataclass
class DynamicsConfig:
    hidden: int = settings.HIDDEN_WIDTH
    lr: float = settings.LEARNING_RATE
    weight_decay: float = settings.WEIGHT_DECAY
    batch_size: int = settings.BATCH_SIZE
    epochs: int = settings.DYNAMICS_EPOCHS
    holdout_episodes: int = 50
    seed: int = 0

    def train_config(self):
        return TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                           epochs=self.epochs, seed=self.seed)


def transitions(dataset, episodes):
    z = dataset.latents[episodes].astype(np.float64)
    a = dataset.actions[episodes].astype(np.float64)
    return (z[:, :-1].reshape(-1, z.shape[-1]), a.reshape(-1, 2), z[:, 1:].reshape(-1, z.shape[-1]))


def train_dynamics(dataset, config):
    """Fit one-step latent dynamics on all but the last ``holdout_episodes`` episodes.

    :param Dataset dataset: Logged trajectories.
    :param DynamicsConfig config: Training configuration.
    :return: (dynamics, validation one-step RMSE in latent units)
    :rtype: ``tuple``
    """
    n_train = max(1, dataset.n_episodes - config.holdout_episodes)
    z, a, z_next = transitions(dataset, np.arange(n_train))
    delta = z_next - z
    z_mean = z.mean(axis=0)
    z_std = z.std(axis=0) + 1e-8
    delta_std = delta.std(axis=0) + 1e-8
    d = z.shape[1]
    net = DenseNet([d + 2, config.hidden, config.hidden, d], ['silu', 'silu', 'linear'], seed=config.seed)
    dyn = DynamicsNet(net, z_mean, z_std, delta_std)
    fit(net, dyn.inputs(z, a), delta / delta_std, MSELoss(), config.train_config(), label='dynamics')

    rmse = float('nan')
    if n_train < dataset.n_episodes:
        zv, av, zv_next = transitions(dataset, np.arange(n_train, dataset.n_episodes))
        err = dyn.predict(zv, av) - zv_next
        rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
        logger.info('Dynamics validation one-step RMSE %.5f on %d transitions', rmse, zv.shape[0])
    return dyn, rmse


def rollout(dyn, z0, actions, return_path=False):
    """Compose one-step predictions over an action sequence.

    :param DynamicsNet dyn: Frozen dynamics.
    :param numpy.ndarray z0: (d,) or (N, d) start latents.
    :param numpy.ndarray actions: (H, 2) or (N, H, 2) actions.
    :param bool return_path: Also return every intermediate latent.
    :return: Terminal latent(s), plus the (H + 1)-step path when requested.
    """
    z = np.asarray(z0, dtype=np.float64)
    acts = np.asarray(actions, dtype=np.float64)
    single = z.ndim == 1 and acts.ndim == 2
    if z.ndim == 1:
        z = z[None, :]
    if acts.ndim == 2:
        acts = acts[None, :, :]
    if z.shape[0] != acts.shape[0]:
        z = np.repeat(z, acts.shape[0], axis=0)
    path = [z]
    for h in range(acts.shape[1]):
        z = dyn.predict(z, acts[:, h, :])
        path.append(z)
    terminal = z[0] if single else z
    if not return_path:
        return terminal
    stacked = np.stack(path, axis=1)
    return terminal, (stacked[0] if single else stacked)


@dataclass
class XYProbe:
    W: np.ndarray
    b: np.ndarray
    fit_r2: float = float('nan')
    fit_rmse: float = float('nan')

    def decode(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z @ self.W.T + self.b

    def to_dict(self):
        return {'W': self.W.tolist(), 'b': self.b.tolist(), 'fit_r2': self.fit_r2, 'fit_rmse': self.fit_rmse,
                'rank': int(np.linalg.matrix_rank(self.W))}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data['W']), np.array(data['b']), data['fit_r2'], data['fit_rmse'])


def fit_probe(dataset, n_rows=settings.PROBE_ROWS, ridge=settings.PROBE_RIDGE, seed=0,
              holdout_rows=settings.PROBE_HOLDOUT_ROWS):
    """Ridge least squares from latents to true (x, y).

    :param Dataset dataset: Logged trajectories.
    :param int n_rows: Training rows.
    :param float ridge: Ridge strength (bias unpenalized).
    :param int seed: Row-selection seed.
    :param int holdout_rows: Disjoint held-out rows for RMSE and R^2.
    :rtype: ``XYProbe``
    """
    validate('fit_probe', {'n_rows': n_rows, 'ridge': ridge, 'seed': seed})
    z_all = dataset.latents.reshape(-1, dataset.latent_dim)
    xy_all = dataset.states.reshape(-1, 2)
    total = z_all.shape[0]
    if n_rows >= total:
        raise PyTRMValidationError('Probe needs n_rows < dataset rows (%d >= %d).' % (n_rows, total),
                                   'fit_probe', ['n_rows'], [n_rows])
    holdout_rows = min(holdout_rows, total - n_rows)
    rows = np.random.default_rng(seed).permutation(total)
    train, test = rows[:n_rows], rows[n_rows:n_rows + holdout_rows]
    z = z_all[train].astype(np.float64)
    xy = xy_all[train].astype(np.float64)
    x1 = np.concatenate([z, np.ones((z.shape[0], 1))], axis=1)
    gram = x1.T @ x1
    reg = ridge * np.eye(x1.shape[1])
    reg[-1, -1] = 0.0
    try:
        coef = linalg.solve(gram + reg, x1.T @ xy, assume_a='pos')
    except (linalg.LinAlgError, ValueError):
        raise PyTRMSingularSystemError('Ridge normal equations are singular.')
    probe = XYProbe(W=coef[:-1].T.copy(), b=coef[-1].copy())
    if np.linalg.matrix_rank(probe.W) < 2:
        raise PyTRMRankDeficiencyError('Probe readout has rank < 2.')

    zt = z_all[test].astype(np.float64)
    xyt = xy_all[test].astype(np.float64)
    err = probe.decode(zt) - xyt
    probe.fit_rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
    ss_res = np.sum(err * err, axis=0)
    ss_tot = np.sum((xyt - xyt.mean(axis=0)) ** 2, axis=0)
    probe.fit_r2 = float(np.mean(1.0 - ss_res / ss_tot))
    logger.info('XY probe: R^2 %.6f, RMSE %.4f on %d held-out rows', probe.fit_r2, probe.fit_rmse, test.size)
    return probe


def bundle_hash(bundle_dir):
    digest = hashlib.sha256()
    for name in FREEZE_FILES:
        with open(os.path.join(bundle_dir, name), 'rb') as fp:
            digest.update(name.encode('utf-8'))
            digest.update(fp.read())
    return digest.hexdigest()


class WorldModel(object):
    """Frozen encoder + dynamics (+ dataset latent statistics), optionally with a fitted probe."""

    def __init__(self, encoder, dynamics, latent_mean, latent_std, probe=None, freeze_hash=None):
        self.encoder = encoder
        self.dynamics = dynamics
        self.latent_mean = np.asarray(latent_mean, dtype=np.float64)
        self.latent_std = np.asarray(latent_std, dtype=np.float64)
        self.probe = probe
        self.freeze_hash = freeze_hash

    @property
    def latent_dim(self):
        return self.encoder.latent_dim

    def rollout(self, z0, actions, return_path=False):
        return rollout(self.dynamics, z0, actions, return_path)

    def save(self, bundle_dir):
        """Write the bundle and freeze it. Returns the freeze hash."""
        os.makedirs(bundle_dir, exist_ok=True)
        self.encoder.save(bundle_dir)
        self.dynamics.net.save(os.path.join(bundle_dir, 'dynamics'), extra=self.dynamics.stats())
        with open(os.path.join(bundle_dir, 'stats.json'), 'w') as fp:
            fp.write(json.dumps({'latent_mean': self.latent_mean.tolist(),
                                 'latent_std': self.latent_std.tolist()}, indent=2, sort_keys=True) + '\n')
        self.freeze_hash = bundle_hash(bundle_dir)
        with open(os.path.join(bundle_dir, 'freeze.hash'), 'w') as fp:
            fp.write(self.freeze_hash + '\n')
        return self.freeze_hash

    def save_probe(self, path):
        """Write the probe next to, not inside, the frozen bundle."""
        os.makedirs(os.path.dirname(path) or '.', exist_ok=True)
        with open(path, 'w') as fp:
            fp.write(json.dumps(self.probe.to_dict(), indent=2, sort_keys=True) + '\n')

    @classmethod
    def load(cls, bundle_dir, probe_path=None, require_probe=False):
        """Load a frozen bundle, refusing it if its content no longer matches the freeze hash."""
        hash_path = os.path.join(bundle_dir, 'freeze.hash')
        if not os.path.exists(hash_path):
            raise PyTRMMissingArtifactError('World-model bundle not found: %s' % bundle_dir, bundle_dir)
        with open(hash_path) as fp:
            expected = fp.read().strip()
        actual = bundle_hash(bundle_dir)
        if actual != expected:
            raise PyTRMHashMismatchError('World-model bundle changed after freeze.', bundle_dir, expected, actual)
        encoder = Encoder.load(bundle_dir)
        net, header = DenseNet.load(os.path.join(bundle_dir, 'dynamics'))
        extra = header['extra']
        dynamics = DynamicsNet(net, extra['z_mean'], extra['z_std'], extra['delta_std'], extra['a_max'])
        with open(os.path.join(bundle_dir, 'stats.json')) as fp:
            stats = json.load(fp)
        probe = None
        if probe_path and os.path.exists(probe_path):
            with open(probe_path) as fp:
                probe = XYProbe.from_dict(json.load(fp))
        elif require_probe:
            raise PyTRMMissingArtifactError('XY probe not fitted: %s' % probe_path, probe_path or bundle_dir)
        return cls(encoder, dynamics, stats['latent_mean'], stats['latent_std'], probe, expected)