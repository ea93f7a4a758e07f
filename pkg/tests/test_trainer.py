"""Round orchestration: update rules, ordering, baselines, determinism."""
import numpy as np
import pytest

from helpers import central_diff, global_rel_err
from latentfed.consensus import targets_as_map
from latentfed.errors import ConfigError, NumericBlowupError
from latentfed.latent import ClassStats, DistanceKind, class_means, regularizer_terms
from latentfed.netsim import AdversarySpec, Topology, make_topology
from latentfed.numcore import softmax_cross_entropy
from latentfed.trainer import (
    Client,
    TrainConfig,
    evaluate,
    local_weight_step,
    projection_step,
    run,
    run_baseline,
    run_modality_fedavg,
)
from worlds import make_clients

SQ = DistanceKind.SQUARED_L2


def cfg_for(rounds=4, lam=0.4, eta_w=0.05, eta_p=0.05, **kw):
    return TrainConfig(
        rounds=rounds, eta_w=eta_w, eta_p=eta_p, lam=lam,
        p_steps=kw.pop("p_steps", 3), batch_size=kw.pop("batch_size", 6),
        eval_every=kw.pop("eval_every", 2), **kw,
    )


def params_equal(a, b):
    return all(np.array_equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))


class TestLocalWeightStep:
    def test_lambda_zero_is_plain_sgd(self):
        a, b = make_clients(n=2, seed=3)[0], make_clients(n=2, seed=3)[0]
        feats, labels = a.dataset.batch(a.dataset.train_idx[:6])
        targets = {0: np.ones(4)}
        local_weight_step(a, feats, labels, targets, cfg_for(lam=0.0))
        local_weight_step(b, feats, labels, None, cfg_for(lam=0.0))
        assert params_equal(a.model, b.model)

    def test_zero_learning_rate_leaves_model_unchanged(self):
        c = make_clients(n=1, seed=1)[0]
        before = c.model.get_parameters()
        cfg = cfg_for()
        cfg.eta_w = 0.0  # bypasses construction-time invariant to probe the op
        feats, labels = c.dataset.batch(c.dataset.train_idx[:6])
        local_weight_step(c, feats, labels, None, cfg)
        assert all(np.array_equal(x, y) for x, y in zip(before, c.model.get_parameters()))

    def test_combined_update_matches_finite_differences(self):
        cfg = cfg_for(lam=0.4, eta_w=0.01)
        client = make_clients(n=2, seed=7)[0]
        rng = np.random.default_rng(0)
        targets = {m: rng.normal(size=4) for m in range(3)}
        idx = client.dataset.train_idx[:6]
        feats, labels = client.dataset.batch(idx)

        def objective():
            logits, tap = client.model.forward_full(feats)
            loss, _ = softmax_cross_entropy(logits, labels)
            stats = class_means(tap.features, labels)
            reg, _, _ = regularizer_terms(client.projection, stats, targets, cfg.distance)
            return loss + cfg.lam * reg

        before = client.model.get_parameters()
        local_weight_step(client, feats, labels, targets, cfg)
        after = client.model.get_parameters()
        # restore and measure the analytic step against finite differences
        client.model.set_parameters(before)
        arrays = client.model.parameters()
        for arr, post in zip(arrays, after):
            fd = central_diff(objective, arr)
            applied = (arr - post) / cfg.eta_w
            assert global_rel_err(applied, fd) < 1e-4

    def test_reg_loss_nonnegative_and_reported(self):
        cfg = cfg_for(lam=0.4)
        client = make_clients(n=1, seed=5)[0]
        rng = np.random.default_rng(2)
        targets = {m: rng.normal(size=4) for m in range(3)}
        feats, labels = client.dataset.batch(client.dataset.train_idx[:6])
        result = local_weight_step(client, feats, labels, targets, cfg)
        assert result.reg_loss >= 0.0
        assert result.train_loss >= 0.0


class TestProjectionStep:
    def test_fixed_point_when_targets_match(self):
        client = make_clients(n=1, seed=2)[0]
        feats, labels = client.dataset.batch(client.dataset.train_idx[:8])
        _, tap = client.model.forward_full(feats)
        stats = class_means(tap.features, labels)
        targets = {s.class_id: client.projection.matrix @ s.mean_feature for s in stats}
        before = client.projection.matrix.copy()
        projection_step(client, stats, targets, cfg_for(p_steps=5))
        np.testing.assert_array_equal(client.projection.matrix, before)

    def test_one_dimensional_hand_arithmetic(self):
        import warnings

        from latentfed.latent import Projection
        client = make_clients(n=1, seed=0, tap_dim=8)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            client.projection = Projection(np.array([[1.0]] * 1))
        client.projection.matrix[...] = 1.0
        stats = [ClassStats(0, np.array([2.0]), 1)]
        targets = {0: np.array([1.0])}
        cfg = cfg_for(eta_p=0.25, lam=0.4, p_steps=1)
        projection_step(client, stats, targets, cfg)
        # P <- 1 - (0.25 * 0.4) * 4 = 0.6
        assert client.projection.matrix[0, 0] == pytest.approx(0.6)

    def test_monotone_descent_toward_targets(self):
        client = make_clients(n=1, seed=9)[0]
        rng = np.random.default_rng(1)
        feats, labels = client.dataset.batch(client.dataset.train_idx[:8])
        _, tap = client.model.forward_full(feats)
        stats = class_means(tap.features, labels)
        targets = {s.class_id: rng.normal(size=4) for s in stats}
        cfg = cfg_for(eta_p=0.02, lam=0.4, p_steps=1)

        def misalignment():
            return sum(
                float(np.linalg.norm(client.projection.matrix @ s.mean_feature
                                     - targets[s.class_id]))
                for s in stats
            )

        history = [misalignment()]
        for _ in range(10):
            projection_step(client, stats, targets, cfg)
            history.append(misalignment())
        assert all(b < a for a, b in zip(history, history[1:]))

    def test_noop_without_targets_or_lambda(self):
        client = make_clients(n=1, seed=4)[0]
        before = client.projection.matrix.copy()
        projection_step(client, [], None, cfg_for())
        projection_step(client, [], {}, cfg_for())
        cfg = cfg_for(lam=0.0)
        projection_step(client, [], {0: np.zeros(4)}, cfg)
        np.testing.assert_array_equal(client.projection.matrix, before)


class TestRun:
    def test_lambda_zero_equals_local_only(self):
        cfg = cfg_for(rounds=5, lam=0.0)
        topo = make_topology("complete", 3)
        a = make_clients(n=3, seed=11)
        b = make_clients(n=3, seed=11)
        res_a = run(topo, a, cfg)
        res_b = run(None, b, cfg, method="local_only")
        for ca, cb in zip(a, b):
            assert params_equal(ca.model, cb.model)
        acc_a = [r.test_acc for r in res_a.records if r.test_acc is not None]
        acc_b = [r.test_acc for r in res_b.records if r.test_acc is not None]
        assert acc_a == acc_b
        assert res_b.ledger.total_uplink() == 0
        assert res_a.ledger.total_uplink() > 0

    def test_single_client_degenerate_network(self):
        topo = Topology("graph", 1, [[]])
        clients = make_clients(n=1, seed=3)
        result = run(topo, clients, cfg_for(rounds=3))
        assert len(result.records) == 3
        assert all(np.isfinite(r.train_loss) for r in result.records)

    def test_round_zero_is_pure_sgd(self):
        # one round: with and without the regularizer the outcome is identical
        # (no targets exist yet); a second round separates them
        topo = make_topology("complete", 2)
        one_a = make_clients(n=2, seed=6)
        one_b = make_clients(n=2, seed=6)
        run(topo, one_a, cfg_for(rounds=1, lam=0.4))
        run(make_topology("complete", 2), one_b, cfg_for(rounds=1, lam=0.0))
        assert params_equal(one_a[0].model, one_b[0].model)
        two_a = make_clients(n=2, seed=6)
        two_b = make_clients(n=2, seed=6)
        run(make_topology("complete", 2), two_a, cfg_for(rounds=2, lam=0.4))
        run(make_topology("complete", 2), two_b, cfg_for(rounds=2, lam=0.0))
        assert not params_equal(two_a[0].model, two_b[0].model)

    def test_identical_data_clients_packets_converge(self):
        from latentfed.data import SyntheticSpec, generate
        from worlds import MODS
        spec = SyntheticSpec(n_classes=3, modalities=MODS, noise_std=0.5,
                             samples_per_class=10, seed=21)
        ds = generate(spec, [["acc", "gyr"]], skew=100.0)[0]
        shared = [ds, ds]  # literally the same data on both clients
        clients = make_clients(n=2, seed=33, datasets=shared)
        distances = []

        def observer(view):
            a, b = view.packets
            common = set(a.entries) & set(b.entries)
            if common:
                distances.append(float(np.mean([
                    np.linalg.norm(a.entries[m] - b.entries[m]) for m in common
                ])))

        cfg = cfg_for(rounds=40, lam=0.4, eta_w=0.02, eta_p=0.1, p_steps=10,
                      eval_every=20)
        run(make_topology("complete", 2), clients, cfg, observer=observer)
        early = np.mean(distances[:5])
        late = np.mean(distances[-5:])
        assert late < 0.5 * early, (early, late)

    def test_targets_are_stop_gradient_snapshots(self):
        seen = []

        def observer(view):
            for t in view.targets:
                if t:
                    seen.extend(t.values())

        clients = make_clients(n=2, seed=8)
        run(make_topology("complete", 2), clients, cfg_for(rounds=2), observer=observer)
        assert seen
        for arr in seen:
            assert not arr.flags.writeable

    def test_seed_determinism(self):
        def trajectory():
            clients = make_clients(n=3, seed=17)
            result = run(make_topology("ring", 3), clients, cfg_for(rounds=4))
            return [(r.round, r.client_id, r.train_loss, r.reg_loss, r.test_acc,
                     r.cum_uplink_bytes) for r in result.records]

        assert trajectory() == trajectory()

    def test_regularizer_nonnegative_every_round(self):
        clients = make_clients(n=3, seed=19)
        result = run(make_topology("complete", 3), clients,
                     cfg_for(rounds=6, lam=0.4, distance=DistanceKind.L2))
        assert all(r.reg_loss >= 0.0 for r in result.records)

    def test_ps_mode_requires_star(self):
        clients = make_clients(n=2, seed=0)
        with pytest.raises(ConfigError):
            run(make_topology("complete", 2), clients,
                cfg_for(consensus_mode="ps"))

    def test_mismatched_latent_dims_rejected(self):
        a = make_clients(n=1, seed=0, shared_dim=4)
        b = make_clients(n=1, seed=1, shared_dim=6)
        b[0].client_id = 1
        with pytest.raises(ConfigError):
            run(make_topology("complete", 2), a + b, cfg_for())

    def test_numeric_blowup_names_round_and_client(self):
        clients = make_clients(n=2, seed=2)
        clients[1].dataset.features["acc"][:] = np.nan  # poison one client
        with pytest.raises(NumericBlowupError) as err:
            run(make_topology("complete", 2), clients, cfg_for(rounds=3))
        assert err.value.round_index == 0
        assert err.value.client_id == 1
        assert "round 0" in str(err.value) and "client 1" in str(err.value)

    def test_byzantine_clients_still_train(self):
        clients = make_clients(n=3, seed=13)
        adv = AdversarySpec(byzantine_ids={1}, attack="sign_flip")
        result = run(make_topology("complete", 3), clients, cfg_for(rounds=4),
                     adversary=adv)
        losses = [r.train_loss for r in result.records if r.client_id == 1]
        assert len(losses) == 4 and all(np.isfinite(x) for x in losses)


class TestEvaluate:
    def test_constant_predictor_on_single_class(self):
        client = make_clients(n=1, seed=1, n_classes=3)[0]
        zeroed = [np.zeros_like(p) for p in client.model.get_parameters()]
        client.model.set_parameters(zeroed)  # all-zero logits -> argmax class 0
        client.dataset.labels[:] = 0
        assert evaluate(client) == 1.0

    def test_matches_prediction_loop_oracle(self):
        client = make_clients(n=1, seed=23)[0]
        feats, labels = client.dataset.test_batch()
        logits, _ = client.model.forward_full(feats)
        correct = 0
        for row, lab in zip(logits, labels):
            best, arg = -np.inf, 0
            for j, v in enumerate(row):
                if v > best:  # strict: ties stay at the lowest index
                    best, arg = v, j
            correct += int(arg == lab)
        assert evaluate(client) == correct / len(labels)


class TestBaselines:
    def test_fedavg_two_identical_clients_average(self):
        clients = make_clients(n=2, seed=3)
        a0 = clients[0].model.get_parameters()
        b0 = clients[1].model.get_parameters()
        cfg = cfg_for(rounds=1, lam=0.0)
        cfg.eta_w = 1e-12  # make the local step negligible
        run_modality_fedavg(clients, cfg)
        for pa, pb, qa, qb in zip(
            clients[0].model.parameters(), clients[1].model.parameters(), a0, b0
        ):
            np.testing.assert_allclose(pa, (qa + qb) / 2, atol=1e-9)
            np.testing.assert_array_equal(pa, pb)

    def test_fedavg_ledger_counts_parameters(self):
        clients = make_clients(n=2, seed=5)
        result = run_modality_fedavg(clients, cfg_for(rounds=3, lam=0.0))
        expected = 4 * clients[0].model.param_count() * 3
        assert result.ledger.cumulative_uplink(0) == expected
        assert result.ledger.cumulative_downlink(0) == expected

    def test_fedavg_rejects_mixed_architectures_in_group(self):
        from latentfed.latent import Projection
        from latentfed.models import ClientModel
        from worlds import MODS, small_arch
        clients = make_clients(n=2, seed=7)
        other_arch = small_arch(MODS, n_classes=3, tap_dim=8, hidden=20)
        clients[1].model = ClientModel.build(other_arch, 1)
        with pytest.raises(ConfigError, match="mixes architectures"):
            run_modality_fedavg(clients, cfg_for(rounds=1))

    def test_fedavg_groups_by_modality_subset(self):
        assignment = [["acc"], ["acc"], ["gyr"]]
        clients = make_clients(n=3, seed=9, assignment=assignment)
        gyr_before = clients[2].model.get_parameters()
        cfg = cfg_for(rounds=1, lam=0.0)
        cfg.eta_w = 1e-12
        run_modality_fedavg(clients, cfg)
        assert params_equal(clients[0].model, clients[1].model)
        # the lone gyr client only averaged with itself
        for p, q in zip(clients[2].model.parameters(), gyr_before):
            np.testing.assert_allclose(p, q, atol=1e-9)

    def test_local_only_baseline_dispatch(self):
        clients = make_clients(n=2, seed=2)
        result = run_baseline("local_only", None, clients, cfg_for(rounds=2))
        assert result.ledger.total_uplink() == 0

    def test_unknown_baseline(self):
        with pytest.raises(ConfigError):
            run_baseline("krum", None, make_clients(n=1), cfg_for())


class TestExchangeFirstFlag:
    def test_exchange_first_differs_from_default(self):
        a = make_clients(n=2, seed=31)
        b = make_clients(n=2, seed=31)
        run(make_topology("complete", 2), a, cfg_for(rounds=3, lam=0.4))
        run(make_topology("complete", 2), b,
            cfg_for(rounds=3, lam=0.4, exchange_first=True))
        assert not params_equal(a[0].model, b[0].model)

    def test_exchange_first_round_zero_already_regularized(self):
        # under exchange-first the very first weight step sees targets
        a = make_clients(n=2, seed=37)
        b = make_clients(n=2, seed=37)
        run(make_topology("complete", 2), a,
            cfg_for(rounds=1, lam=0.4, exchange_first=True))
        run(make_topology("complete", 2), b,
            cfg_for(rounds=1, lam=0.0, exchange_first=True))
        assert not params_equal(a[0].model, b[0].model)
