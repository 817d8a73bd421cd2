import os
from collections import Counter

import numpy as np
import pytest

from pytrm.exceptions import PyTRMCoverageError, PyTRMMissingArtifactError, PyTRMValidationError
from pytrm.tests import common_data
from pytrm.trajstore import (
    DATA_FILE,
    Dataset,
    SamplerConfig,
    collect,
    load_dataset,
    retained_episodes,
    sample_pairs,
    save_dataset,
    separation_bins,
)
from pytrm.worldmodel import Encoder

GEOM = common_data.GEOM


@pytest.fixture(scope="module")
def encoder():
    """Small fixed encoder."""
    return Encoder.create(0, latent_dim=8)


@pytest.fixture(scope="module")
def dataset(encoder):
    """A dozen short exploration episodes."""
    return collect(GEOM, encoder, n_episodes=12, length=30, seed=1, min_crossing=0.0)


def test_collect_shapes(dataset):
    """Test dataset array shapes and bounds."""
    assert dataset.states.shape == (12, 30, 2)
    assert dataset.latents.shape == (12, 30, 8)
    assert dataset.actions.shape == (12, 29, 2)
    assert dataset.n_rows == 360
    assert np.all(np.abs(dataset.actions) <= GEOM.a_max)
    assert np.all((dataset.states >= 0) & (dataset.states <= 224))
    assert 0.0 <= dataset.crossing_fraction(GEOM) <= 1.0
    assert len(dataset.episode(3)) == 30


def test_collect_deterministic(encoder, dataset):
    """Test that collection depends only on the seed, not the worker count."""
    again = collect(GEOM, encoder, n_episodes=12, length=30, seed=1, workers=2, min_crossing=0.0)
    assert np.array_equal(again.states, dataset.states)
    assert np.array_equal(again.latents, dataset.latents)
    assert again.nuisance_seeds == dataset.nuisance_seeds


def test_collect_coverage(encoder):
    """Test that too few doorway crossings abort collection."""
    with pytest.raises(PyTRMCoverageError) as exception_info:
        collect(GEOM, encoder, n_episodes=4, length=10, seed=0, min_crossing=1.01)
    assert exception_info.value.exit_code == 4


def test_collect_validation(encoder):
    """Test that episodes need at least two states."""
    with pytest.raises(PyTRMValidationError) as exception_info:
        collect(GEOM, encoder, n_episodes=4, length=1)
    assert exception_info.value.fields == ['length']


def test_dataset_round_trip(tmpdir, dataset):
    """Test the header + float32 row blob format."""
    directory = str(tmpdir.join('dataset'))
    save_dataset(dataset, directory)
    assert os.path.getsize(os.path.join(directory, DATA_FILE)) == 12 * 30 * (8 + 4) * 4
    loaded = load_dataset(directory)
    assert np.array_equal(loaded.states, dataset.states)
    assert np.array_equal(loaded.latents, dataset.latents)
    assert np.array_equal(loaded.actions, dataset.actions)
    assert loaded.nuisance_seeds == dataset.nuisance_seeds
    assert loaded.seed == 1


def test_missing_dataset(tmpdir):
    """Test that loading an absent dataset raises a missing-artifact error."""
    with pytest.raises(PyTRMMissingArtifactError):
        load_dataset(str(tmpdir.join('nothing')))


def test_inconsistent_dataset():
    """Test that arrays of mismatched lengths are refused."""
    with pytest.raises(PyTRMValidationError):
        Dataset(np.zeros((2, 5, 2)), np.zeros((2, 4, 8)), np.zeros((2, 4, 2)), [0, 1], 0)


def test_latent_stats(dataset):
    """Test population statistics over every row."""
    mean, std = dataset.latent_stats()
    flat = dataset.latents.reshape(-1, 8).astype(np.float64)
    assert np.allclose(mean, flat.mean(axis=0))
    assert np.allclose(std, flat.std(axis=0, ddof=0))


def test_separation_bins():
    """Test integer bins over [1, delta_max], dropping empty ones."""
    lo, hi = separation_bins(10, 10)
    assert lo.tolist() == list(range(1, 11))
    assert hi.tolist() == list(range(1, 11))
    lo, hi = separation_bins(5, 10)
    assert lo.tolist() == [1, 2, 3, 4, 5]
    assert hi.tolist() == [1, 2, 3, 4, 5]
    lo, hi = separation_bins(29, 10)
    assert lo[0] == 1
    assert hi[-1] == 29
    assert np.all(lo[1:] == hi[:-1] + 1)


def test_sampler_config_validation():
    """Test the regime and cap combinations."""
    with pytest.raises(PyTRMValidationError) as exception_info:
        SamplerConfig(regime='balanced_full', delta_max=10)
    assert exception_info.value.fields == ['delta_max', 'regime']
    with pytest.raises(PyTRMValidationError) as exception_info:
        SamplerConfig(regime='balanced_capped')
    assert exception_info.value.fields == ['delta_max']
    with pytest.raises(PyTRMValidationError) as exception_info:
        SamplerConfig(regime='uniform')
    assert exception_info.value.fields == ['regime']


@pytest.mark.parametrize('regime, delta_max', [('random_full', None), ('balanced_full', None),
                                               ('balanced_capped', 10)])
def test_pairs_are_same_episode(dataset, regime, delta_max):
    """Test that labels are the temporal separation of two rows of one episode."""
    pairs = sample_pairs(dataset, SamplerConfig(regime=regime, n_pairs=500, delta_max=delta_max, seed=2))
    assert len(pairs) == 500
    assert np.array_equal(np.abs(pairs.t_i - pairs.t_j), pairs.labels.astype(np.int64))
    assert pairs.labels.min() >= 1
    assert pairs.labels.max() <= (delta_max or 29)
    assert np.array_equal(pairs.z_i, dataset.latents[pairs.episode, pairs.t_i].astype(np.float64))
    assert np.array_equal(pairs.z_j, dataset.latents[pairs.episode, pairs.t_j].astype(np.float64))
    assert 0 < np.mean(pairs.t_i > pairs.t_j) < 1
    assert pairs[0].label == pairs.labels[0]


def test_balanced_bins_are_even(dataset):
    """Test that balanced sampling spreads pairs evenly over separation bins."""
    pairs = sample_pairs(dataset, SamplerConfig(regime='balanced_full', n_pairs=5000, seed=3))
    lo, hi = separation_bins(29, 10)
    counts = [np.sum((pairs.labels >= a) & (pairs.labels <= b)) for a, b in zip(lo, hi)]
    assert all(350 <= c <= 650 for c in counts)


def test_sampling_deterministic(dataset):
    """Test that the same seed gives the same pairs."""
    cfg = SamplerConfig(regime='random_full', n_pairs=200, seed=4)
    a = sample_pairs(dataset, cfg)
    b = sample_pairs(dataset, cfg)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.z_i, b.z_i)


def test_pair_order_is_balanced(dataset):
    """Test that the later state comes first in about half of the pairs."""
    pairs = sample_pairs(dataset, SamplerConfig(regime='random_full', n_pairs=100000, seed=6))
    assert np.all(np.abs(pairs.t_i - pairs.t_j) == pairs.labels)
    assert abs(np.mean(pairs.t_i < pairs.t_j) - 0.5) <= 0.02


def test_capped_at_full_length_matches_random(dataset):
    """Test that one uncapped bin samples the same separations as random_full."""
    capped = sample_pairs(dataset, SamplerConfig(regime='balanced_capped', n_pairs=100000, bins=1, delta_max=29,
                                                 seed=7))
    uniform = sample_pairs(dataset, SamplerConfig(regime='random_full', n_pairs=100000, seed=7))
    edges = np.linspace(1, 30, 11)
    capped_share = np.histogram(capped.labels, edges)[0] / 100000.0
    uniform_share = np.histogram(uniform.labels, edges)[0] / 100000.0
    assert np.all(np.abs(capped_share - uniform_share) <= 0.02)
    assert capped.labels.min() == 1 and capped.labels.max() == 29


def test_shuffled_labels(dataset):
    """Test that shuffling permutes labels but keeps the pairs and the label multiset."""
    true = sample_pairs(dataset, SamplerConfig(n_pairs=1000, seed=5))
    shuffled = sample_pairs(dataset, SamplerConfig(n_pairs=1000, seed=5, shuffle_labels=True))
    assert shuffled.shuffled
    assert np.array_equal(true.z_i, shuffled.z_i)
    assert Counter(true.labels.tolist()) == Counter(shuffled.labels.tolist())
    assert not np.array_equal(true.labels, shuffled.labels)


def test_length_two_episodes(encoder):
    """Test that two-state episodes only yield separation 1."""
    short = collect(GEOM, encoder, n_episodes=3, length=2, seed=0, min_crossing=0.0)
    for regime in ('random_full', 'balanced_full'):
        pairs = sample_pairs(short, SamplerConfig(regime=regime, n_pairs=50, seed=0))
        assert np.all(pairs.labels == 1)


def test_capped_regime_needs_short_cap(dataset):
    """Test that the cap must stay below the episode length."""
    with pytest.raises(PyTRMValidationError) as exception_info:
        sample_pairs(dataset, SamplerConfig(regime='balanced_capped', delta_max=30, n_pairs=10))
    assert exception_info.value.fields == ['delta_max']


def test_source_rows(dataset):
    """Test whole-episode subsampling to a row budget."""
    rng = np.random.default_rng(0)
    assert retained_episodes(12, 30, None, rng).tolist() == list(range(12))
    assert retained_episodes(12, 30, 400, rng).size == 12
    assert retained_episodes(12, 30, 61, rng).size == 3
    pairs = sample_pairs(dataset, SamplerConfig(n_pairs=300, source_rows=60, seed=6))
    assert np.unique(pairs.episode).size <= 2
