import numpy as np
import pytest

from csilab import refiner as rf
from csilab.codebook import Codebook, CodebookKind, generate_rvq, quantize_batch
from csilab.errors import DegenerateOutputError, InvalidInputError, NumericFailureError
from csilab.refiner import RefinerConfig
from csilab.trainer import (AdamState, TrainingConfig, adam_step, build_pairs, ds_validation_loss,
                            eigen_centroid, enhance_codebook, oracle_ds, oracle_ss, snap_params,
                            train_ds, train_ss)

from conftest import crandn


def realizable_data(seed=0, copies=16):
    """Each of 4 cells holds copies of one direction near (but not at) its codeword."""
    r = np.random.default_rng(seed)
    cb = generate_rvq(2, 4, 1)
    U = cb.entries + 0.3 * crandn(r, 4, 4)
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    assert list(quantize_batch(U, cb)[0]) == [0, 1, 2, 3]
    return cb, U, np.repeat(U, copies, axis=0)


SMALL = RefinerConfig(n_t=2, d_model=16, n_layers=1, n_heads=2, seed=0)


def identity_params(n_t):
    """Hand-built parameters under which the refiner preserves every codeword's direction.

    The embedding computes [x; -x; M; -M]: zero mean, and a variance dominated by M,
    so layer norm scales every token by (nearly) the same factor.  Because
    GELU(z) - GELU(-z) = z, the second embedding layer recovers x exactly up to
    that factor.  The features sit on rotary pairs whose angle is negligible
    with a huge rotary base.  Residual branches are zeroed, and the head keeps
    tanh in its linear range.
    """
    n_c = 2 * n_t
    half = 2 * n_c + 2
    d = 2 * half
    cfg = RefinerConfig(n_t=n_t, d_model=d, n_layers=1, n_heads=1, rope_base=1e200, seed=0)
    P = {k: np.zeros_like(v) for k, v in rf.init_params(cfg).items()}
    M = 1e6
    I = np.eye(n_c)
    P["embed.w1"][:n_c] = I
    P["embed.w1"][n_c:2 * n_c] = -I
    P["embed.b1"][2 * n_c:] = [M, -M]
    P["embed.ln_gain"][:] = 1.0
    off = 2  # skip rotary pair 0, whose angle is exactly one radian per position
    P["embed.w2"][off:off + n_c, :n_c] = I
    P["embed.w2"][off:off + n_c, n_c:2 * n_c] = -I
    P["layer0.attn_norm"][:] = 1.0
    P["layer0.ffn_norm"][:] = 1.0
    P["head.w3"][:, off:off + n_c] = 1e3 * I
    return cfg, P


class TestPairs:
    def test_codeword_channel(self):
        cb = generate_rvq(3, 4, 0)
        pairs = build_pairs(cb.entries[[5]], cb)
        np.testing.assert_array_equal(pairs.codewords[0], cb.entries[5])
        assert pairs.indices[0] == 5

    def test_count_and_scan(self, rng):
        cb = generate_rvq(5, 8, 3)
        H = crandn(rng, 500, 8)
        pairs = build_pairs(H, cb)
        assert len(pairs) == 500
        for n, h in enumerate(H):
            sims = [abs(np.vdot(c, h)) for c in cb.entries]
            assert pairs.indices[n] == int(np.argmax(sims))

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            build_pairs(np.zeros((0, 4), complex), generate_rvq(2, 4, 0))


class TestAdam:
    def test_zero_gradient(self):
        p = {"w": np.array([1.0, -2.0])}
        adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p), 0.1)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0])

    def test_first_step_is_sign(self):
        p = {"w": np.zeros(3)}
        adam_step(p, {"w": np.array([0.5, -3.0, 1e-3])}, AdamState.zeros_like(p), 0.01)
        np.testing.assert_allclose(p["w"], [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_quadratic_descent(self):
        A = np.array([[3.0, 0.5], [0.5, 1.0]])
        p = {"x": np.array([2.0, -1.5])}
        st = AdamState.zeros_like(p)
        vals = []
        for _ in range(100):
            x = p["x"]
            vals.append(0.5 * x @ A @ x)
            adam_step(p, {"x": A @ x}, st, 0.01)
        assert all(b < a for a, b in zip(vals[5:], vals[6:]))

    def test_non_finite(self):
        p = {"w": np.zeros(2)}
        with pytest.raises(NumericFailureError):
            adam_step(p, {"w": np.array([np.nan, 0])}, AdamState.zeros_like(p), 0.1)


class TestTrainingConfig:
    def test_default_ss_setup(self):
        t = TrainingConfig()
        assert (t.batch_size, t.epochs, t.learning_rate) == (512, 200, 1e-3)

    @pytest.mark.parametrize("kw", [{"batch_size": 0}, {"epochs": 0}, {"decay_rate": 0.0},
                                    {"decay_rate": 1.1}, {"update_interval": 0}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            TrainingConfig(**kw)


class TestTrainSS:
    def test_lr_zero_is_noop(self):
        cb, _, H = realizable_data()
        p0 = rf.init_params(SMALL)
        p, rep = train_ss(H, cb, SMALL, TrainingConfig(batch_size=16, epochs=1, learning_rate=0.0))
        snapped = snap_params(p0)
        assert all(np.array_equal(p[k], snapped[k]) for k in p)
        pairs = build_pairs(H, cb)
        initial = rf.batch_loss(rf.forward(pairs.codewords, p0, SMALL), pairs.channels)
        assert rep.epoch_loss[0] == pytest.approx(initial, abs=1e-12)

    def test_realizable_optimum(self):
        cb, U, H = realizable_data()
        tcfg = TrainingConfig(batch_size=16, epochs=150, learning_rate=1e-2, seed=0)
        p, rep = train_ss(H, cb, SMALL, tcfg)
        assert len(rep.epoch_loss) == 150
        assert rep.epoch_loss[-1] < -0.99
        enh = enhance_codebook(p, cb, SMALL)
        assert np.all(np.abs(np.sum(enh.entries.conj() * U, axis=1)) > 0.99)

    def test_deterministic(self):
        cb, _, H = realizable_data()
        tcfg = TrainingConfig(batch_size=8, epochs=3, learning_rate=1e-2, seed=4)
        a, ra = train_ss(H, cb, SMALL, tcfg)
        b, rb = train_ss(H, cb, SMALL, tcfg)
        assert ra.epoch_loss == rb.epoch_loss
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_numeric_failure_keeps_partial_report(self):
        cb, _, H = realizable_data()
        p = rf.init_params(SMALL)
        p["head.b3"][:] = np.nan
        with pytest.raises(NumericFailureError) as exc:
            train_ss(H, cb, SMALL, TrainingConfig(batch_size=16, epochs=2), params=p)
        assert exc.value.report is not None and exc.value.report.epoch_loss == []


class TestEnhance:
    def test_constructed_identity(self, rng):
        cfg, P = identity_params(n_t=3)
        cb = Codebook.from_vectors(crandn(rng, 16, 6))
        enh = enhance_codebook(P, cb, cfg)
        sims = np.abs(np.sum(enh.entries.conj() * cb.entries, axis=1))
        np.testing.assert_allclose(sims, 1.0, atol=1e-9)

    def test_count_order_and_norm(self):
        cfg = RefinerConfig(n_t=4, d_model=16, n_layers=1, n_heads=2, seed=3)
        cb = generate_rvq(8, 8, 0)
        P = rf.init_params(cfg)
        enh = enhance_codebook(P, cb, cfg, CodebookKind.ENHANCED_DS, "x")
        assert enh.size == 256 and enh.kind is CodebookKind.ENHANCED_DS
        np.testing.assert_allclose(np.linalg.norm(enh.entries, axis=1), 1.0, atol=1e-12)
        g = rf.refine(cb.entries[37], P, cfg)
        assert abs(np.vdot(enh.entries[37], g)) / np.linalg.norm(g) == pytest.approx(1.0, abs=1e-6)

    def test_degenerate(self):
        cfg = RefinerConfig(n_t=2, d_model=8, n_layers=1, n_heads=1)
        P = {k: np.zeros_like(v) for k, v in rf.init_params(cfg).items()}
        with pytest.raises(DegenerateOutputError) as exc:
            enhance_codebook(P, generate_rvq(2, 4, 0), cfg)
        assert exc.value.index == 0


class TestTrainDS:
    def _data(self):
        cb, _, H = realizable_data(copies=8)
        _, _, V = realizable_data(seed=1, copies=4)
        return cb, H, V

    def test_gate_count_400_40_schedule(self):
        cb, H, V = self._data()
        tcfg = TrainingConfig(batch_size=32, epochs=400, update_interval=40, learning_rate=1e-2)
        _, rep = train_ds(H, V, cb, SMALL, tcfg)
        assert len(rep.gate_epochs) == 10
        assert rep.gate_epochs == list(range(40, 401, 40))
        assert len(rep.epoch_loss) == 400

    def test_accepted_losses_non_increasing_and_last_returned(self):
        cb, H, V = self._data()
        tcfg = TrainingConfig(batch_size=16, epochs=60, update_interval=10, learning_rate=1e-2)
        out, rep = train_ds(H, V, cb, SMALL, tcfg)
        acc = rep.accepted_val_loss
        assert all(b < a for a, b in zip(acc, acc[1:]))
        assert all(v < rep.initial_val_loss for v in acc)
        if acc:
            assert ds_validation_loss(V, out) == pytest.approx(acc[-1], abs=1e-12)
        assert out.kind is CodebookKind.ENHANCED_DS
        np.testing.assert_allclose(np.linalg.norm(out.entries, axis=1), 1.0, atol=1e-12)

    def test_lr_zero_never_worsens(self):
        cb, H, V = self._data()
        tcfg = TrainingConfig(batch_size=16, epochs=30, update_interval=5, learning_rate=0.0)
        out, rep = train_ds(H, V, cb, SMALL, tcfg)
        best = rep.initial_val_loss
        for loss, ok in zip(rep.gate_val_loss, rep.gate_accepted):
            assert ok == (loss < best)
            best = min(best, loss)
        assert ds_validation_loss(V, out) <= rep.initial_val_loss

    def test_all_rejected_returns_initial_entries(self):
        # validation channels equal to the codewords: nothing can beat the initial codebook
        cb = generate_rvq(2, 4, 1)
        H = np.repeat(cb.entries, 4, axis=0)
        tcfg = TrainingConfig(batch_size=16, epochs=4, update_interval=2, learning_rate=0.0)
        out, rep = train_ds(H, cb.entries, cb, SMALL, tcfg)
        assert not any(rep.gate_accepted)
        assert out.raw.tobytes() == cb.raw.tobytes()

    def test_interval_beyond_epochs(self):
        cb, H, V = self._data()
        with pytest.raises(InvalidInputError):
            train_ds(H, V, cb, SMALL, TrainingConfig(epochs=5, update_interval=10))

    def test_deterministic(self):
        cb, H, V = self._data()
        tcfg = TrainingConfig(batch_size=16, epochs=6, update_interval=3, learning_rate=1e-2)
        a, ra = train_ds(H, V, cb, SMALL, tcfg)
        b, rb = train_ds(H, V, cb, SMALL, tcfg)
        assert a == b and ra.to_dict(timing=False) == rb.to_dict(timing=False)


class TestOracles:
    def test_eigen_centroid_single_direction(self, rng):
        u = crandn(rng, 6)
        g = eigen_centroid(np.stack([u, 2j * u, -0.5 * u]))
        assert abs(np.vdot(g, u)) / np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
        k = np.argmax(np.abs(g))
        assert g[k].imag == pytest.approx(0.0, abs=1e-15) and g[k].real > 0

    def test_eigen_centroid_two_vectors(self):
        u = np.array([1.0, 0.0], complex)
        v = np.array([np.cos(0.6), np.sin(0.6) * np.exp(0.4j)])
        g = eigen_centroid(np.stack([u, v]))
        # hand solution in span{u, v}: with r = |u^H v| the top eigenvector of
        # uu^H + vv^H is proportional to u + (v^H u / r) v, with eigenvalue 1 + r
        r = abs(np.vdot(u, v))
        want = u + (np.vdot(v, u) / r) * v
        want /= np.linalg.norm(want)
        assert abs(np.vdot(g, want)) == pytest.approx(1.0, abs=1e-12)
        cov = np.outer(u, u.conj()) + np.outer(v, v.conj())
        assert np.real(g.conj() @ cov @ g) == pytest.approx(1 + r, abs=1e-12)

    def test_oracle_ss_cells(self, rng):
        cb = generate_rvq(3, 4, 2)
        H = np.repeat(cb.entries[[1, 4]] + 0.2 * crandn(rng, 2, 4), 5, axis=0)
        idx = quantize_batch(H, cb)[0]
        out = oracle_ss(H, cb)
        assert out.kind is CodebookKind.ORACLE_SS
        for j in range(8):
            if j not in idx:  # empty cells keep the conventional codeword
                np.testing.assert_allclose(out.entries[j], cb.entries[j], atol=1e-7)
        for j in set(idx):
            h = H[idx == j][0]
            assert abs(np.vdot(out.entries[j], h)) / np.linalg.norm(h) == pytest.approx(1.0, abs=1e-6)

    def test_oracle_ds_fixed_point(self):
        cb = generate_rvq(3, 4, 5)
        H = np.repeat(cb.entries, 3, axis=0)
        out, trace = oracle_ds(H, cb, max_iters=5, return_trace=True)
        assert trace.changed == [0]
        np.testing.assert_allclose(np.abs(np.sum(out.entries.conj() * cb.entries, axis=1)), 1.0, atol=1e-6)

    def test_oracle_ds_monotone_and_beats_ss(self, small_scenario):
        from csilab.chansim import generate_dataset
        H = generate_dataset(small_scenario, 3000, 0, 0).train
        cb = generate_rvq(5, 16, 0)
        ods, trace = oracle_ds(H, cb, max_iters=30, return_trace=True)
        assert np.all(np.diff(trace.objective_sq) >= -1e-12)
        assert np.all(np.diff(trace.objective) >= -1e-12)
        train_ss_sim = quantize_batch(H, cb)[0]
        s_ss = np.mean(np.abs(np.sum(oracle_ss(H, cb).entries[train_ss_sim].conj() * H, axis=1))
                       / np.linalg.norm(H, axis=1))
        assert trace.objective[-1] >= s_ss - 1e-12
        assert ods.kind is CodebookKind.ORACLE_DS

    def test_empty_split(self):
        cb = generate_rvq(2, 4, 0)
        with pytest.raises(InvalidInputError):
            oracle_ss(np.zeros((0, 4), complex), cb)
        with pytest.raises(InvalidInputError):
            oracle_ds(np.zeros((0, 4), complex), cb)
        with pytest.raises(InvalidInputError):
            oracle_ds(np.ones((2, 4), complex), cb, max_iters=0)
