"""Latent statistics, distances, regularizer gradients, and the wire format."""
import numpy as np
import pytest

from helpers import central_diff, global_rel_err, loop_class_means, loop_matvec
from latentfed.errors import ProtocolError, ShapeError
from latentfed.latent import (
    FLOAT_BYTES,
    HEADER_BYTES,
    ClassStats,
    DistanceKind,
    LatentPacket,
    Projection,
    class_means,
    expand_mean_gradient,
    phi,
    phi_grad_x,
    project,
    regularizer_terms,
)

SQ = DistanceKind.SQUARED_L2
L2 = DistanceKind.L2


class TestClassMeans:
    def test_identical_samples(self):
        row = np.array([1.0, 2.0, 3.0])
        stats = class_means(np.stack([row, row]), np.array([3, 3]))
        assert len(stats) == 1
        assert stats[0].class_id == 3 and stats[0].sample_count == 2
        np.testing.assert_array_equal(stats[0].mean_feature, row)

    def test_missing_classes_omitted(self):
        feats = np.arange(8.0).reshape(4, 2)
        stats = class_means(feats, np.array([0, 2, 0, 2]))
        assert [s.class_id for s in stats] == [0, 2]

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(17)
        feats = rng.normal(size=(40, 6))
        labels = rng.integers(0, 5, size=40)
        stats = class_means(feats, labels)
        oracle = loop_class_means(feats, labels)
        assert sorted(oracle) == [s.class_id for s in stats]
        for s in stats:
            np.testing.assert_allclose(s.mean_feature, oracle[s.class_id], atol=1e-12)


class TestProjection:
    def test_selector_projection(self):
        d, d_i = 3, 9
        p = Projection(np.hstack([np.eye(d), np.zeros((d, d_i - d))]))
        v = np.arange(float(d_i))
        stats = [ClassStats(0, v, 1)]
        np.testing.assert_array_equal(project(p, stats)[0], v[:d])

    def test_zero_projection(self):
        p = Projection(np.zeros((2, 8)))
        out = project(p, [ClassStats(1, np.ones(8), 2)])
        np.testing.assert_array_equal(out[1], np.zeros(2))

    def test_matches_loop_matvec(self):
        rng = np.random.default_rng(3)
        p = Projection(rng.normal(size=(4, 10)))
        v = rng.normal(size=10)
        out = project(p, [ClassStats(0, v, 1)])[0]
        np.testing.assert_allclose(out, loop_matvec(p.matrix, v), atol=1e-12)

    def test_compression_enforced(self):
        with pytest.raises(ShapeError):
            Projection(np.zeros((9, 4)))

    def test_weak_compression_warns(self):
        with pytest.warns(UserWarning):
            Projection(np.zeros((4, 6)))

    def test_init_deterministic(self):
        a = Projection.init(3, 12, np.random.default_rng(5))
        b = Projection.init(3, 12, np.random.default_rng(5))
        assert np.array_equal(a.matrix, b.matrix)


class TestPhi:
    def test_identity_of_indiscernibles(self):
        x = np.array([1.0, -2.0])
        assert phi(SQ, x, x) == 0.0
        assert phi(L2, x, x) == 0.0

    def test_three_four_five(self):
        x, y = np.array([3.0, 4.0]), np.zeros(2)
        assert phi(L2, x, y) == pytest.approx(5.0)
        assert phi(SQ, x, y) == pytest.approx(25.0)

    def test_kinds_consistent(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            x, y = rng.normal(size=(2, 6))
            assert phi(L2, x, y) ** 2 == pytest.approx(phi(SQ, x, y), abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            phi(SQ, np.zeros(3), np.zeros(4))

    def test_convexity_along_rays(self):
        # t -> phi(y + t r, y) must satisfy the midpoint inequality
        rng = np.random.default_rng(12)
        for kind in (SQ, L2):
            for _ in range(25):
                y = rng.normal(size=5)
                r = rng.normal(size=5)
                t1, t2 = rng.uniform(-3, 3, size=2)
                mid = phi(kind, y + 0.5 * (t1 + t2) * r, y)
                avg = 0.5 * (phi(kind, y + t1 * r, y) + phi(kind, y + t2 * r, y))
                assert mid <= avg + 1e-10


class TestPhiGrad:
    def test_zero_at_coincidence(self):
        x = np.array([0.5, 0.5])
        np.testing.assert_array_equal(phi_grad_x(SQ, x, x), np.zeros(2))
        np.testing.assert_array_equal(phi_grad_x(L2, x, x), np.zeros(2))

    def test_l2_unit_direction(self):
        g = phi_grad_x(L2, np.array([3.0, 4.0]), np.zeros(2))
        np.testing.assert_allclose(g, [0.6, 0.8])

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        for kind in (SQ, L2):
            for _ in range(10):
                x = rng.normal(size=5)
                y = x + rng.normal(size=5)  # generic, away from the kink
                g = phi_grad_x(kind, x, y)
                fd = central_diff(lambda: phi(kind, x, y), x)
                assert global_rel_err(g, fd) < 1e-6

    def test_squared_antisymmetry(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            x, y = rng.normal(size=(2, 4))
            np.testing.assert_allclose(
                phi_grad_x(SQ, x, y), -phi_grad_x(SQ, y, x), atol=1e-12
            )


def _random_instance(rng, kind, d=3, d_i=7, n_classes=4):
    p = Projection(rng.normal(size=(d, d_i)))
    stats = [
        ClassStats(m, rng.normal(size=d_i), int(rng.integers(1, 5)))
        for m in range(n_classes)
    ]
    targets = {m: rng.normal(size=d) for m in range(n_classes)}
    return p, stats, targets


class TestRegularizer:
    def test_perfect_consensus(self):
        rng = np.random.default_rng(2)
        p, stats, _ = _random_instance(rng, SQ)
        targets = {s.class_id: p.matrix @ s.mean_feature for s in stats}
        value, dp, dmeans = regularizer_terms(p, stats, targets, SQ)
        assert value == pytest.approx(0.0, abs=1e-18)
        np.testing.assert_array_equal(dp, np.zeros_like(p.matrix))
        for g in dmeans.values():
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_one_dimensional_chain_rule(self):
        p = Projection(np.array([[1.0]]))
        stats = [ClassStats(0, np.array([2.0]), 1)]
        targets = {0: np.array([1.0])}
        value, dp, dmeans = regularizer_terms(p, stats, targets, SQ)
        assert value == pytest.approx(1.0)
        assert dp[0, 0] == pytest.approx(4.0)  # 2 * (2 - 1) * 2
        assert dmeans[0][0] == pytest.approx(2.0)  # P^T * 2(u - t)

    @pytest.mark.parametrize("kind", [SQ, L2])
    def test_gradients_match_finite_differences(self, kind):
        rng = np.random.default_rng(31)
        for _ in range(5):
            p, stats, targets = _random_instance(rng, kind)
            value, dp, dmeans = regularizer_terms(p, stats, targets, kind)

            def reg_value():
                return regularizer_terms(p, stats, targets, kind)[0]

            fd_p = central_diff(reg_value, p.matrix)
            assert global_rel_err(dp, fd_p) < 1e-4
            for s in stats:
                fd_m = central_diff(reg_value, s.mean_feature)
                assert global_rel_err(dmeans[s.class_id], fd_m) < 1e-4

    def test_no_overlap_contributes_nothing(self):
        rng = np.random.default_rng(7)
        p, stats, _ = _random_instance(rng, SQ)
        value, dp, dmeans = regularizer_terms(p, stats, {9: rng.normal(size=3)}, SQ)
        assert value == 0.0 and not dmeans
        np.testing.assert_array_equal(dp, np.zeros_like(p.matrix))

    def test_missing_class_changes_only_its_term(self):
        rng = np.random.default_rng(13)
        p, stats, targets = _random_instance(rng, SQ, n_classes=4)
        full, _, _ = regularizer_terms(p, stats, targets, SQ)
        dropped = dict(targets)
        dropped.pop(2)
        partial, _, _ = regularizer_terms(p, stats, dropped, SQ)
        u2 = p.matrix @ stats[2].mean_feature
        expected = (4 * full - phi(SQ, u2, targets[2])) / 3
        assert partial == pytest.approx(expected, rel=1e-12)

    def test_expand_mean_gradient_is_adjoint(self):
        labels = np.array([0, 1, 0, 2, 1, 0])
        dmeans = {0: np.array([1.0, 2.0]), 2: np.array([-1.0, 0.5])}
        out = expand_mean_gradient(dmeans, labels, 2)
        np.testing.assert_allclose(out[0], dmeans[0] / 3)
        np.testing.assert_allclose(out[3], dmeans[2] / 1)
        np.testing.assert_array_equal(out[1], np.zeros(2))  # class 1: no gradient


class TestPacketWire:
    def test_wire_size_formula(self):
        rng = np.random.default_rng(1)
        d = 16
        entries = {m: rng.normal(size=d) for m in range(4)}
        packet = LatentPacket(2, 7, d, entries)
        assert packet.wire_size() == HEADER_BYTES + FLOAT_BYTES * d * 4 == 16 + 256
        assert len(packet.serialize()) == packet.wire_size()

    def test_round_trip_bit_exact(self):
        rng = np.random.default_rng(5)
        entries = {m: rng.normal(size=6) for m in (0, 3, 5)}
        packet = LatentPacket(9, 41, 6, entries)
        blob = packet.serialize()
        back = LatentPacket.deserialize(blob)
        assert back.sender == 9 and back.round == 41 and back.dim == 6
        assert back.classes() == [0, 3, 5]
        for m in back.entries:
            assert np.array_equal(back.entries[m], packet.entries[m])
        assert back.serialize() == blob

    def test_entries_quantized_and_frozen(self):
        val = np.array([0.1, 0.2, 0.3])
        packet = LatentPacket(0, 0, 3, {1: val})
        stored = packet.entries[1]
        np.testing.assert_array_equal(stored, val.astype(np.float32).astype(np.float64))
        with pytest.raises(ValueError):
            stored[0] = 5.0

    def test_header_layout(self):
        packet = LatentPacket(0x0102, 0x01020304, 2, {0: np.zeros(2), 2: np.zeros(2)})
        blob = packet.serialize()
        assert blob[:2] == (0x0102).to_bytes(2, "little")
        assert blob[2:6] == (0x01020304).to_bytes(4, "little")
        assert blob[6:8] == (2).to_bytes(2, "little")
        assert blob[8:16] == (0b101).to_bytes(8, "little")

    def test_truncated_rejected(self):
        packet = LatentPacket(0, 0, 4, {0: np.zeros(4)})
        with pytest.raises(ProtocolError):
            LatentPacket.deserialize(packet.serialize()[:-1])

    def test_class_out_of_bitmask(self):
        with pytest.raises(ProtocolError):
            LatentPacket(0, 0, 2, {64: np.zeros(2)})
