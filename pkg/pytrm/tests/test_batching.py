import numpy as np

from pytrm.batching import Batches


def test_automatic_pagination():
    """Test that iteration walks every epoch."""
    batches = Batches(n_rows=5, batch_size=2, rng=np.random.default_rng(0), epochs=3)
    assert len(batches) == 3
    assert batches.steps_per_page == 3
    assert batches.total_steps == 9
    seen = list(batches)
    assert len(seen) == 9
    for epoch in range(3):
        rows = np.concatenate(seen[3 * epoch:3 * epoch + 3])
        assert sorted(rows.tolist()) == [0, 1, 2, 3, 4]
    assert batches.current == 3


def test_manual_pagination():
    """Test that without automatic pagination iteration stops after one epoch."""
    batches = Batches(n_rows=5, batch_size=2, rng=np.random.default_rng(0), epochs=3, automatic_pagination=False)
    assert len(list(batches)) == 3
    batches.fetch_next_page()
    assert batches.current == 2
    assert [b.size for b in batches.current_page()] == [2, 2, 1]


def test_all():
    """Test that all() returns every minibatch of every epoch."""
    batches = Batches(n_rows=4, batch_size=4, rng=np.random.default_rng(1), epochs=5)
    pages = batches.all()
    assert len(pages) == 5
    assert all(sorted(p.tolist()) == [0, 1, 2, 3] for p in pages)


def test_same_seed_same_order():
    """Test that the permutation stream is reproducible."""
    a = Batches(n_rows=50, batch_size=8, rng=np.random.default_rng(7), epochs=2).all()
    b = Batches(n_rows=50, batch_size=8, rng=np.random.default_rng(7), epochs=2).all()
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
