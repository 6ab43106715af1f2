"""Memory bank tests: seeding, momentum algebra, hardest-pick enumeration."""

import numpy as np
import pytest

from ccreid.errors import (
    EmptyBatchError,
    EmptyClusterError,
    UnknownClusterError,
    WrongBatchSizeError,
    ZeroVectorError,
)
from ccreid.memory import (
    DualMemory,
    InstanceMemory,
    hardest_index,
    init_memory,
    update_average,
    update_hard,
)
from ccreid.numerics import softmax

from helpers import kl_oracle, unit_rows


def random_clusters(rng, num_clusters, dim, low=2, high=8):
    return [
        unit_rows(rng, int(rng.integers(low, high)), dim)
        for _ in range(num_clusters)
    ]


def hardest_oracle(entry, batch):
    """Loop enumeration of the most divergent batch feature."""
    target = softmax(entry)
    best_index, best_value = 0, -1.0
    for i, feature in enumerate(batch):
        value = kl_oracle(softmax(feature), target)
        if value > best_value:
            best_index, best_value = i, value
    return best_index


class TestInit:
    def test_entries_are_cluster_members_and_banks_match(self):
        rng = np.random.default_rng(0)
        clusters = random_clusters(rng, 5, 6)
        mem = init_memory(clusters, 0.3, np.random.default_rng(1))
        assert mem.num_clusters == 5
        np.testing.assert_array_equal(mem.average, mem.hardest)
        for cid, feats in enumerate(clusters):
            assert any(np.array_equal(mem.average[cid], row) for row in feats)

    def test_deterministic_given_rng_seed(self):
        rng = np.random.default_rng(2)
        clusters = random_clusters(rng, 4, 5)
        a = init_memory(clusters, 0.3, np.random.default_rng(7))
        b = init_memory(clusters, 0.3, np.random.default_rng(7))
        np.testing.assert_array_equal(a.average, b.average)

    def test_reinit_ignores_previous_updates(self):
        rng = np.random.default_rng(3)
        clusters = random_clusters(rng, 3, 4)
        mem = init_memory(clusters, 0.3, np.random.default_rng(5))
        update_hard(mem, 0, unit_rows(rng, 4, 4))
        update_average(mem, 1, unit_rows(rng, 6, 4), synth_count=2, k_count=2)
        fresh = init_memory(clusters, 0.3, np.random.default_rng(5))
        reference = init_memory(clusters, 0.3, np.random.default_rng(5))
        np.testing.assert_array_equal(fresh.average, reference.average)
        np.testing.assert_array_equal(fresh.hardest, reference.hardest)

    def test_single_member_cluster_forced_choice(self):
        rng = np.random.default_rng(4)
        lone = unit_rows(rng, 1, 6)
        mem = init_memory([lone], 0.3, np.random.default_rng(0))
        np.testing.assert_array_equal(mem.average[0], lone[0])

    def test_empty_cluster_rejected(self):
        with pytest.raises(EmptyClusterError):
            init_memory([np.zeros((0, 4))], 0.3, np.random.default_rng(0))
        with pytest.raises(EmptyClusterError):
            init_memory([], 0.3, np.random.default_rng(0))


class TestMomentumAlgebra:
    def test_momentum_one_fixes_entries(self):
        rng = np.random.default_rng(5)
        clusters = random_clusters(rng, 3, 8)
        mem = init_memory(clusters, 1.0, np.random.default_rng(1))
        original = mem.copy()
        for _ in range(50):
            update_hard(mem, 0, unit_rows(rng, 5, 8))
            update_average(mem, 0, unit_rows(rng, 6, 8), synth_count=1, k_count=3)
        assert np.max(np.abs(mem.hardest[0] - original.hardest[0])) <= 1e-12
        assert np.max(np.abs(mem.average[0] - original.average[0])) <= 1e-12

    def test_momentum_zero_replaces(self):
        rng = np.random.default_rng(6)
        clusters = random_clusters(rng, 2, 5)
        mem = init_memory(clusters, 0.0, np.random.default_rng(1))
        batch = unit_rows(rng, 4, 5)
        update_hard(mem, 1, batch)
        pick = hardest_oracle(init_memory(clusters, 0.0, np.random.default_rng(1)).hardest[1], batch)
        np.testing.assert_allclose(mem.hardest[1], batch[pick], atol=1e-12)
        # average bank: entry becomes the normalized batch mean
        update_average(mem, 1, batch, synth_count=1, k_count=2)
        mean = batch.mean(axis=0)
        np.testing.assert_allclose(mem.average[1], mean / np.linalg.norm(mean), atol=1e-12)

    def test_blend_direction_and_unit_norm(self):
        rng = np.random.default_rng(7)
        clusters = random_clusters(rng, 4, 7)
        mem = init_memory(clusters, 0.3, np.random.default_rng(2))
        old = mem.hardest[2].copy()
        batch = unit_rows(rng, 5, 7)
        update_hard(mem, 2, batch)
        pick = hardest_oracle(old, batch)
        expected = 0.3 * old + 0.7 * batch[pick]
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(mem.hardest[2], expected, atol=1e-12)
        assert np.linalg.norm(mem.hardest[2]) == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_zero_mean_raises(self):
        v = np.zeros(4)
        v[0] = 1.0
        clusters = [np.array([v])]
        mem = init_memory(clusters, 0.0, np.random.default_rng(0))
        batch = np.array([v, -v])
        with pytest.raises(ZeroVectorError):
            update_average(mem, 0, batch, synth_count=1, k_count=1)


class TestHardestSelection:
    def test_matches_enumeration_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(300):
            dim = int(rng.integers(3, 12))
            entry = unit_rows(rng, 1, dim)[0]
            batch = unit_rows(rng, int(rng.integers(1, 24)), dim)
            assert hardest_index(entry, batch) == hardest_oracle(entry, batch)

    def test_tie_goes_to_lowest_index(self):
        rng = np.random.default_rng(9)
        entry = unit_rows(rng, 1, 6)[0]
        row = unit_rows(rng, 1, 6)[0]
        batch = np.array([row, row, row])
        assert hardest_index(entry, batch) == 0

    def test_selection_sees_pre_update_entry(self):
        # two sequential updates: the second pick must compare against the
        # entry produced by the first, not the original
        rng = np.random.default_rng(10)
        clusters = random_clusters(rng, 1, 6)
        mem = init_memory(clusters, 0.5, np.random.default_rng(3))
        batch1 = unit_rows(rng, 4, 6)
        batch2 = unit_rows(rng, 4, 6)
        update_hard(mem, 0, batch1)
        intermediate = mem.hardest[0].copy()
        update_hard(mem, 0, batch2)
        pick = hardest_oracle(intermediate, batch2)
        expected = 0.5 * intermediate + 0.5 * batch2[pick]
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(mem.hardest[0], expected, atol=1e-12)


class TestValidation:
    def setup_method(self):
        rng = np.random.default_rng(11)
        self.mem = init_memory(random_clusters(rng, 3, 5), 0.3, np.random.default_rng(0))
        self.batch = unit_rows(rng, 4, 5)

    def test_unknown_cluster(self):
        with pytest.raises(UnknownClusterError):
            update_hard(self.mem, 3, self.batch)
        with pytest.raises(UnknownClusterError):
            update_average(self.mem, -1, self.batch, 1, 2)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatchError):
            update_hard(self.mem, 0, np.zeros((0, 5)))

    def test_wrong_batch_size(self):
        with pytest.raises(WrongBatchSizeError):
            update_average(self.mem, 0, self.batch, synth_count=4, k_count=4)

    def test_candidates_shapes(self):
        assert self.mem.candidates("both").shape == (6, 5)
        assert self.mem.candidates("average").shape == (3, 5)
        assert self.mem.candidates("hardest").shape == (3, 5)
        with pytest.raises(ValueError):
            self.mem.candidates("none")


class TestInstanceMemory:
    def test_update_touches_single_slot(self):
        rng = np.random.default_rng(12)
        feats = unit_rows(rng, 6, 5)
        labels = np.array([0, 0, 1, 1, 2, 2])
        mem = InstanceMemory(feats, labels, momentum=0.4)
        new = unit_rows(rng, 1, 5)[0]
        mem.update(3, new)
        expected = 0.4 * feats[3] + 0.6 * new
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(mem.features[3], expected, atol=1e-12)
        for i in (0, 1, 2, 4, 5):
            np.testing.assert_array_equal(mem.features[i], feats[i])

    def test_positives_by_label(self):
        rng = np.random.default_rng(13)
        mem = InstanceMemory(unit_rows(rng, 5, 4), np.array([1, 0, 1, 2, 1]), 0.3)
        np.testing.assert_array_equal(mem.positives_of(1), [0, 2, 4])

    def test_validation(self):
        rng = np.random.default_rng(14)
        with pytest.raises(WrongBatchSizeError):
            InstanceMemory(unit_rows(rng, 3, 4), np.array([0, 1]), 0.3)
        mem = InstanceMemory(unit_rows(rng, 3, 4), np.array([0, 1, 2]), 0.3)
        with pytest.raises(UnknownClusterError):
            mem.update(3, unit_rows(rng, 1, 4)[0])
