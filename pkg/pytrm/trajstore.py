"""
Logged exploration trajectories and same-episode temporal pair sampling.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from pytrm import settings
from pytrm.exceptions import PyTRMCoverageError, PyTRMMissingArtifactError, PyTRMValidationError
from pytrm.tworoom import PointSampler, step_batch
from pytrm.validation import validate

logger = logging.getLogger(__name__)

START_MARGIN = 2.0
DATA_FILE = 'data.bin'
HEADER_FILE = 'header.json'


@dataclass
class Episode:
    id: int
    states: np.ndarray
    latents: np.ndarray
    actions: np.ndarray
    nuisance_seed: int

    def __len__(self):
        return self.states.shape[0]


@dataclass
class TrainPair:
    z_i: np.ndarray
    z_j: np.ndarray
    label: float


@dataclass
class SamplerConfig:
    regime: str = 'balanced_full'
    n_pairs: int = settings.HEAD_PAIRS
    bins: int = settings.SAMPLER_BINS
    delta_max: Optional[int] = None
    source_rows: Optional[int] = None
    shuffle_labels: bool = False
    seed: int = 0

    def __post_init__(self):
        validate('sample_pairs', asdict(self))
        if self.regime != 'balanced_capped' and self.delta_max is not None:
            raise PyTRMValidationError('delta_max is only used by balanced_capped.', 'sample_pairs',
                                       ['delta_max', 'regime'], [self.delta_max, self.regime])
        if self.regime == 'balanced_capped' and self.delta_max is None:
            raise PyTRMValidationError('balanced_capped needs delta_max.', 'sample_pairs', ['delta_max'])


class Dataset(object):
    """Episode-major arrays of logged exploration data.

    ``states`` is (E, L, 2), ``latents`` (E, L, d) and ``actions`` (E, L - 1, 2),
    all float32 as stored on disk.
    """

    def __init__(self, states, latents, actions, nuisance_seeds, seed):
        self.states = np.asarray(states, dtype=np.float32)
        self.latents = np.asarray(latents, dtype=np.float32)
        self.actions = np.asarray(actions, dtype=np.float32)
        self.nuisance_seeds = [int(s) for s in nuisance_seeds]
        self.seed = seed
        e, l = self.states.shape[:2]
        if self.latents.shape[:2] != (e, l) or self.actions.shape != (e, l - 1, 2) or len(self.nuisance_seeds) != e:
            raise PyTRMValidationError('Dataset arrays are not length-consistent.', 'Dataset')

    @property
    def n_episodes(self):
        return self.states.shape[0]

    @property
    def length(self):
        return self.states.shape[1]

    @property
    def latent_dim(self):
        return self.latents.shape[2]

    @property
    def n_rows(self):
        return self.n_episodes * self.length

    def episode(self, idx):
        return Episode(idx, self.states[idx], self.latents[idx], self.actions[idx], self.nuisance_seeds[idx])

    def latent_stats(self):
        """Dataset-wide per-dimension latent mean and (population) std.

        :rtype: ``tuple``
        """
        z = self.latents.reshape(-1, self.latent_dim).astype(np.float64)
        return z.mean(axis=0), z.std(axis=0)

    def crossing_fraction(self, geom):
        """Fraction of episodes visiting both sides of the wall."""
        side = self.states[:, :, 0] - geom.wall_x
        crossed = np.any(side < 0, axis=1) & np.any(side > 0, axis=1)
        return float(np.mean(crossed))


def _collect_chunk(geom, encoder, episode_ids, length, seed):
    """Roll the exploration policy for a block of episodes in lockstep.

    Each episode draws from its own stream seeded by (seed, episode id).
    """
    n = len(episode_ids)
    rngs = [np.random.default_rng([seed, int(e)]) for e in episode_ids]
    states = np.empty((n, length, 2))
    noise = np.empty((n, length - 1, 2))
    nuisance_seeds = []
    for i, rng in enumerate(rngs):
        sampler = PointSampler(geom, rng, margin=START_MARGIN)
        states[i, 0] = sampler.in_room(bool(rng.integers(0, 2))).as_array()
        noise[i] = rng.uniform(-settings.EXPLORE_NOISE, settings.EXPLORE_NOISE, size=(length - 1, 2))
        nuisance_seeds.append(int(rng.integers(0, 2 ** 31 - 1)))

    actions = np.empty((n, length - 1, 2))
    a = np.clip(noise[:, 0], -geom.a_max, geom.a_max)
    for t in range(length - 1):
        if t > 0:
            a = np.clip(settings.EXPLORE_MOMENTUM * a + noise[:, t], -geom.a_max, geom.a_max)
        actions[:, t] = a
        states[:, t + 1] = step_batch(states[:, t], a, geom)

    latents = np.empty((n, length, encoder.latent_dim))
    for i, ns in enumerate(nuisance_seeds):
        phases = encoder.nuisance(ns).trajectory(length)
        latents[i] = encoder.encode_batch(states[i], phases)
    return states, latents, actions, nuisance_seeds


def collect(geom, encoder, n_episodes=settings.N_EPISODES, length=settings.EPISODE_LENGTH, seed=0, workers=1,
            min_crossing=settings.MIN_DOOR_CROSSING_FRACTION):
    """Roll the correlated random-walk exploration policy and encode every visited state.

    :param WorldGeometry geom: World geometry.
    :param Encoder encoder: Fixed encoder.
    :param int n_episodes: Number of episodes.
    :param int length: States per episode.
    :param int seed: Collection seed.
    :param int workers: Processes to shard episodes over. Output does not depend on it.
    :param float min_crossing: Minimum fraction of episodes that must pass the doorway.
    :rtype: ``Dataset``
    """
    validate('collect', {'n_episodes': n_episodes, 'length': length, 'seed': seed})
    ids = np.arange(n_episodes)
    if workers > 1 and n_episodes > 1:
        chunks = np.array_split(ids, min(workers, n_episodes))
        with ProcessPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(_collect_chunk, [geom] * len(chunks), [encoder] * len(chunks), chunks,
                                      [length] * len(chunks), [seed] * len(chunks)))
    else:
        parts = [_collect_chunk(geom, encoder, ids, length, seed)]

    dataset = Dataset(
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        [s for p in parts for s in p[3]],
        seed,
    )
    fraction = dataset.crossing_fraction(geom)
    logger.info('Collected %d episodes x %d steps (seed %s); doorway crossing fraction %.3f',
                n_episodes, length, seed, fraction)
    if fraction < min_crossing:
        raise PyTRMCoverageError('Doorway crossing fraction %.3f is below %.2f.' % (fraction, min_crossing), fraction)
    return dataset


def save_dataset(dataset, directory):
    """Write ``header.json`` and the little-endian float32 row blob.

    Each row is ``[x, y, z_0 .. z_{d-1}, ax, ay]``; the last row of an
    episode carries a zero action.
    """
    os.makedirs(directory, exist_ok=True)
    e, l, d = dataset.n_episodes, dataset.length, dataset.latent_dim
    rows = np.zeros((e, l, 2 + d + 2), dtype='<f4')
    rows[:, :, :2] = dataset.states
    rows[:, :, 2:2 + d] = dataset.latents
    rows[:, :-1, 2 + d:] = dataset.actions
    rows.tofile(os.path.join(directory, DATA_FILE))
    header = {
        'version': settings.DATASET_VERSION,
        'n_episodes': e,
        'length': l,
        'latent_dim': d,
        'seeds': {'collect': dataset.seed, 'nuisance': dataset.nuisance_seeds},
        'layout': {
            'dtype': '<f4',
            'order': 'episode-major, row-major',
            'row': ['x', 'y'] + ['z%d' % i for i in range(d)] + ['ax', 'ay'],
            'last_row_action': 'zero',
        },
    }
    with open(os.path.join(directory, HEADER_FILE), 'w') as fp:
        fp.write(json.dumps(header, indent=2, sort_keys=True) + '\n')
    return directory


def load_dataset(directory):
    header_path = os.path.join(directory, HEADER_FILE)
    data_path = os.path.join(directory, DATA_FILE)
    if not (os.path.exists(header_path) and os.path.exists(data_path)):
        raise PyTRMMissingArtifactError('Dataset not found: %s' % directory, directory)
    with open(header_path) as fp:
        header = json.load(fp)
    if header.get('version') != settings.DATASET_VERSION:
        raise PyTRMValidationError('Unsupported dataset version: %s' % header.get('version'), 'load_dataset',
                                   ['version'], [header.get('version')])
    e, l, d = header['n_episodes'], header['length'], header['latent_dim']
    rows = np.fromfile(data_path, dtype='<f4')
    if rows.size != e * l * (d + 4):
        raise PyTRMValidationError('Dataset blob has %d floats, header implies %d.' % (rows.size, e * l * (d + 4)),
                                   'load_dataset')
    rows = rows.reshape(e, l, d + 4)
    return Dataset(rows[:, :, :2], rows[:, :, 2:2 + d], rows[:, :-1, 2 + d:],
                   header['seeds']['nuisance'], header['seeds']['collect'])


class PairSet(object):
    """Column-oriented training pairs: ``z_i``, ``z_j``, ``labels`` plus provenance."""

    def __init__(self, z_i, z_j, labels, episode, t_i, t_j, shuffled=False):
        self.z_i = z_i
        self.z_j = z_j
        self.labels = labels
        self.episode = episode
        self.t_i = t_i
        self.t_j = t_j
        self.shuffled = shuffled

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, idx):
        return TrainPair(self.z_i[idx], self.z_j[idx], float(self.labels[idx]))


def separation_bins(delta_max, bins):
    """Integer separation bins covering [1, delta_max] with equal-width real edges.

    :return: (lo, hi) inclusive integer bounds per non-empty bin.
    """
    edges = np.linspace(1.0, delta_max + 1.0, bins + 1)
    lo = np.ceil(edges[:-1]).astype(np.int64)
    hi = np.ceil(edges[1:]).astype(np.int64) - 1
    keep = hi >= lo
    return lo[keep], hi[keep]


def retained_episodes(n_episodes, length, source_rows, rng):
    """Whole episodes from a random order until ``source_rows`` rows are covered."""
    if source_rows is None or source_rows >= n_episodes * length:
        return np.arange(n_episodes)
    n_keep = max(1, int(math.ceil(source_rows / float(length))))
    return np.sort(rng.permutation(n_episodes)[:n_keep])


def sample_pairs(dataset, cfg):
    """Draw same-episode temporal pairs under one of the sampling regimes.

    :param Dataset dataset: Logged trajectories.
    :param SamplerConfig cfg: Sampler configuration.
    :rtype: ``PairSet``
    """
    length = dataset.length
    if dataset.n_episodes < 1 or length < 2:
        raise PyTRMValidationError('Dataset has no pairs to sample.', 'sample_pairs')
    if cfg.regime == 'balanced_capped' and cfg.delta_max >= length:
        raise PyTRMValidationError('delta_max %d must be below the episode length %d.' % (cfg.delta_max, length),
                                   'sample_pairs', ['delta_max'], [cfg.delta_max])

    pair_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    rng = np.random.default_rng(pair_seq)
    episodes = retained_episodes(dataset.n_episodes, length, cfg.source_rows, rng)
    n = cfg.n_pairs

    if cfg.regime == 'random_full':
        delta = rng.integers(1, length, size=n)
    else:
        delta_max = cfg.delta_max if cfg.regime == 'balanced_capped' else length - 1
        lo, hi = separation_bins(delta_max, cfg.bins)
        b = rng.integers(0, lo.size, size=n)
        delta = rng.integers(lo[b], hi[b] + 1)

    ep = episodes[rng.integers(0, episodes.size, size=n)]
    t = rng.integers(0, length - delta)
    swap = rng.random(n) < 0.5
    t_i = np.where(swap, t + delta, t)
    t_j = np.where(swap, t, t + delta)

    labels = delta.astype(np.float64)
    if cfg.shuffle_labels:
        labels = np.random.default_rng(shuffle_seq).permutation(labels)

    logger.debug('Sampled %d %s pairs from %d episodes (shuffled=%s)', n, cfg.regime, episodes.size,
                 cfg.shuffle_labels)
    return PairSet(dataset.latents[ep, t_i].astype(np.float64), dataset.latents[ep, t_j].astype(np.float64),
                   labels, ep, t_i, t_j, cfg.shuffle_labels)
