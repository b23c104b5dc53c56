import threading

import numpy as np
import pytest

from mixflow.errors import ValidationError
from mixflow.replay import PRIORITY_EPS, PrioritizedReplayBuffer, SumTree


def _filled(n, capacity=64, obs_dim=3, **kwargs):
    buf = PrioritizedReplayBuffer(capacity, obs_dim, rng=np.random.default_rng(0), **kwargs)
    for i in range(n):
        buf.add(np.full(obs_dim, i), float(i), float(-i), np.full(obs_dim, i + 1), i % 2 == 0)
    return buf


### SumTree ###
def test_sum_tree_totals_and_find():
    tree = SumTree(4)
    for i, v in enumerate([1.0, 2.0, 3.0, 4.0]):
        tree.update(i, v)
    assert tree.total == 10.0
    assert [tree.find(v) for v in (0.5, 1.5, 3.5, 6.5, 9.99)] == [0, 1, 2, 3, 3]
    tree.update(3, 0.0)
    assert tree.total == 6.0
    assert tree.find(5.99) == 2


def test_sum_tree_non_power_of_two():
    tree = SumTree(5)
    for i in range(5):
        tree.update(i, 1.0)
    assert tree.total == 5.0
    assert sorted({tree.find(v + 0.5) for v in range(5)}) == [0, 1, 2, 3, 4]


### add / probabilities ###
def test_new_transitions_get_max_priority():
    buf = _filled(4)
    buf.update_priorities([0], [3.0])
    buf.add(np.zeros(3), 0.0, 0.0, np.zeros(3), False)
    leaves = buf.tree.leaves()
    assert leaves[4] == pytest.approx(leaves.max())
    assert buf.max_priority == pytest.approx((3.0 + PRIORITY_EPS) ** 0.5)


def test_probabilities_sum_to_one_and_positive():
    buf = _filled(10)
    buf.update_priorities(np.arange(10), np.linspace(0, 5, 10))
    p = buf.probabilities()
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p > 0)


def test_priority_formula():
    buf = _filled(3, alpha=0.6)
    buf.update_priorities([0, 1, 2], [0.0, -2.0, 8.0])
    expected = (np.array([0.0, 2.0, 8.0]) + PRIORITY_EPS) ** 0.6
    np.testing.assert_allclose(buf.tree.leaves()[:3], expected)


def test_ring_buffer_overwrites_oldest():
    buf = _filled(10, capacity=4)
    assert len(buf) == 4
    assert sorted(buf.act.tolist()) == [6.0, 7.0, 8.0, 9.0]


### sample ###
def test_sample_contents_and_weights():
    buf = _filled(32)
    batch = buf.sample(8, step=0)
    assert len(batch) == 8
    assert batch.obs.shape == (8, 3)
    np.testing.assert_array_equal(batch.obs[:, 0], batch.act)
    np.testing.assert_array_equal(batch.rew, -batch.act)
    assert batch.weights.max() == pytest.approx(1.0)
    assert np.all(batch.weights > 0)


def test_importance_weights_follow_beta():
    buf = _filled(16, beta0=0.4, beta_steps=100)
    buf.update_priorities(np.arange(16), np.arange(16, dtype=float))
    batch = buf.sample(16, step=50)
    total = buf.tree.total
    prob = buf.tree.leaves()[batch.indices] / total
    raw = (16 * prob) ** -0.7
    np.testing.assert_allclose(batch.weights, raw / raw.max())
    assert buf.beta(0) == pytest.approx(0.4)
    assert buf.beta(100) == 1.0
    assert buf.beta(10**6) == 1.0


def test_high_priority_sampled_more_often():
    buf = _filled(8)
    buf.update_priorities(np.arange(8), [100.0] + [0.0] * 7)
    counts = np.zeros(8)
    for _ in range(200):
        for i in buf.sample(4).indices:
            counts[i] += 1
    assert counts[0] == counts.max()
    assert counts[0] > counts[1:].sum()


def test_sample_needs_enough_transitions():
    buf = _filled(3)
    with pytest.raises(ValidationError):
        buf.sample(4)
    with pytest.raises(ValidationError):
        PrioritizedReplayBuffer(0, 3)


def test_sampling_is_reproducible():
    a = _filled(20).sample(6, step=3)
    b = _filled(20).sample(6, step=3)
    np.testing.assert_array_equal(a.indices, b.indices)


### concurrency ###
@pytest.mark.timeout(30)
def test_concurrent_adds_are_not_lost():
    buf = PrioritizedReplayBuffer(4000, 2, rng=np.random.default_rng(1))

    def writer(k):
        for i in range(500):
            buf.add(np.full(2, k), float(k), 0.0, np.zeros(2), False)

    threads = [threading.Thread(target=writer, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(buf) == 2000
    assert buf.tree.total == pytest.approx(2000.0)
    print("[SUCCESS] 2000 concurrent adds recorded")
