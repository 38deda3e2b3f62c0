import numpy as np
import pytest

from oddmsim.channel import channel_from_cells, gen_synthetic_channel, snr_to_noise_var
from oddmsim.core import make_frame_config, random_frame, vectorize
from oddmsim.effchan import assemble_H, path_coefficient_matrix
from oddmsim.estimator import (EstimationConfig, estimate_channel, mle_exhaustive,
                               nmse, path_objective, refresh_gains, solve_gains)


def cfg16():
    return make_frame_config(M=16, N=8, delta_f=15e3, f_c=5e9, Q=3)


def est_cfg(cfg, P, **kw):
    args = dict(frame=cfg, p_assumed=P, l_range=(0, 8), k_range=(-4, 4))
    args.update(kw)
    return EstimationConfig(**args)


def observe(cfg, chan, snr_db, seed=0, s_seed=1):
    """Known sensing frame through the grid-level model plus noise."""
    _, frame = random_frame(cfg, np.random.default_rng(s_seed))
    s = vectorize(frame)
    y = assemble_H(chan, cfg).apply(s)
    if snr_db is not None:
        nv = snr_to_noise_var(snr_db)
        rng = np.random.default_rng(seed)
        y = y + np.sqrt(nv / 2) * (rng.standard_normal(s.size) + 1j * rng.standard_normal(s.size))
    return s, y


class TestSolveGains:
    def test_scalar_case_matched_filter(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(4, 2)], [0.7 - 0.4j])
        s, y = observe(cfg, chan, None)
        pc = path_coefficient_matrix(4, 2, cfg)
        gains, flag = solve_gains(y, s, [pc])
        expected = np.vdot(pc.apply(s), y) / np.vdot(s, s)
        assert not flag
        assert gains[0] == pytest.approx(expected)
        assert gains[0] == pytest.approx(0.7 - 0.4j, abs=1e-12)

    def test_planted_two_paths_noiseless(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(1, -2), (5, 3)], [0.8j, 0.5])
        s, y = observe(cfg, chan, None)
        pcs = [path_coefficient_matrix(p.l, p.k, cfg) for p in chan.paths]
        gains, flag = solve_gains(y, s, pcs)
        assert not flag
        assert np.allclose(gains, [p.h for p in chan.paths], atol=1e-10)

    def test_duplicate_hypotheses_flagged(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(2, 0)], [1.0])
        s, y = observe(cfg, chan, None)
        pcs = [path_coefficient_matrix(2, 0, cfg)] * 2
        _, flag = solve_gains(y, s, pcs)
        assert flag


class TestPathObjective:
    def test_single_path_peak_at_planted_cell(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(5, -1)], [1.0])
        s, y = observe(cfg, chan, None)
        vals = {(l, k): path_objective(0, y, s, [(l, k)], np.array([0j]), cfg)
                for l in range(8) for k in range(-4, 4)}
        assert max(vals, key=vals.get) == (5, -1)

    def test_zero_observation(self):
        cfg = cfg16()
        s = vectorize(random_frame(cfg, np.random.default_rng(0))[1])
        y = np.zeros(cfg.mn, dtype=complex)
        assert path_objective(0, y, s, [(3, 1)], np.array([0j]), cfg) == 0.0

    def test_orthogonal_geometry_interference_vanishes(self):
        # sparse sensing frame so the two paths' responses have disjoint
        # delay support: the cross-Gram is exactly zero
        cfg = cfg16()
        S = np.zeros((cfg.M, cfg.N), dtype=complex)
        S[0, :] = np.exp(2j * np.pi * np.arange(cfg.N) / cfg.N)
        s = vectorize(S)
        chan = channel_from_cells(cfg, [(0, 0), (8, 0)], [1.0, 0.9])
        y = assemble_H(chan, cfg).apply(s)
        hyp = [(0, 0), (8, 0)]
        gains = np.array([1.0 + 0j, 0.9 + 0j])
        full = path_objective(0, y, s, hyp, gains, cfg)
        q_only = path_objective(0, y, s, [(0, 0)], np.array([0j]), cfg)
        assert full == pytest.approx(q_only, abs=1e-12)


class TestEstimateChannel:
    def test_planted_p2_high_snr(self):
        cfg = cfg16()
        chan = gen_synthetic_channel(cfg, 2, 3, l_max=7, k_max=3)
        s, y = observe(cfg, chan, 30.0, seed=4)
        res = estimate_channel(y, s, est_cfg(cfg, 2))
        assert sorted(res.cells) == sorted((p.l, p.k) for p in chan.paths)
        true = {(p.l, p.k): p.h for p in chan.paths}
        for p in res.paths:
            assert abs(p.h - true[(p.l, p.k)]) <= 1e-2

    def test_single_path_noiseless_fast_convergence(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(6, 2)], [0.4 + 0.6j])
        s, y = observe(cfg, chan, None)
        res = estimate_channel(y, s, est_cfg(cfg, 1))
        assert res.iterations <= 2
        assert res.converged
        assert res.cells == [(6, 2)]
        assert abs(res.paths[0].h - (0.4 + 0.6j)) < 1e-10

    def test_noise_only_flags_low_confidence(self):
        cfg = cfg16()
        rng = np.random.default_rng(8)
        s = vectorize(random_frame(cfg, rng)[1])
        y = np.sqrt(0.5) * (rng.standard_normal(cfg.mn) + 1j * rng.standard_normal(cfg.mn))
        res = estimate_channel(y, s, est_cfg(cfg, 1))
        assert res.low_confidence

    def test_objective_trace_nondecreasing(self):
        cfg = cfg16()
        for seed in range(8):
            chan = gen_synthetic_channel(cfg, 3, seed, l_max=7, k_max=3)
            s, y = observe(cfg, chan, 5.0, seed=seed)
            res = estimate_channel(y, s, est_cfg(cfg, 3))
            tr = res.objective_trace
            assert all(a <= b + 1e-9 * max(1, abs(a)) for a, b in zip(tr, tr[1:]))

    def test_argmax_invariant_to_positive_scaling(self):
        cfg = cfg16()
        chan = gen_synthetic_channel(cfg, 2, 12, l_max=7, k_max=3)
        s, y = observe(cfg, chan, 10.0, seed=12)
        a = estimate_channel(y, s, est_cfg(cfg, 2))
        b = estimate_channel(3.7 * y, s, est_cfg(cfg, 2))
        assert a.cells == b.cells

    def test_deterministic(self):
        cfg = cfg16()
        chan = gen_synthetic_channel(cfg, 2, 21, l_max=7, k_max=3)
        s, y = observe(cfg, chan, 10.0, seed=21)
        a = estimate_channel(y, s, est_cfg(cfg, 2))
        b = estimate_channel(y.copy(), s.copy(), est_cfg(cfg, 2))
        assert a.cells == b.cells
        assert np.array_equal(a.gains(), b.gains())
        assert a.objective_trace == b.objective_trace


class TestMleExhaustive:
    def test_p1_equals_objective_scan(self):
        cfg = make_frame_config(M=8, N=4, delta_f=15e3, f_c=5e9, Q=2)
        chan = channel_from_cells(cfg, [(3, 1)], [0.9])
        s, y = observe(cfg, chan, 20.0, seed=2)
        ec = EstimationConfig(frame=cfg, p_assumed=1, l_range=(0, 8), k_range=(-2, 2))
        res = mle_exhaustive(y, s, ec)
        vals = {(l, k): path_objective(0, y, s, [(l, k)], np.array([0j]), cfg)
                for l in range(8) for k in range(-2, 2)}
        assert res.cells[0] == max(vals, key=vals.get)

    def test_zero_residual_at_planted_tuple(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(2, -1), (5, 0)], [0.9, 0.3j])
        s, y = observe(cfg, chan, None)
        ec = est_cfg(cfg, 2)
        res = mle_exhaustive(y, s, ec)
        assert sorted(res.cells) == [(2, -1), (5, 0)]
        yy = float(np.vdot(y, y).real)
        assert res.objective_trace[0] == pytest.approx(yy, rel=1e-12)

    def test_search_cap_enforced(self):
        cfg = cfg16()
        ec = est_cfg(cfg, 3, mle_max_hypotheses=100)
        s, y = observe(cfg, channel_from_cells(cfg, [(0, 0)], [1.0]), None)
        with pytest.raises(ValueError, match="tuples"):
            mle_exhaustive(y, s, ec)

    def test_oracle_dominance(self):
        cfg = cfg16()
        for seed in range(10):
            chan = gen_synthetic_channel(cfg, 2, 100 + seed, l_max=7, k_max=3)
            s, y = observe(cfg, chan, 0.0, seed=seed)
            ec = est_cfg(cfg, 2)
            fast = estimate_channel(y, s, ec)
            full = mle_exhaustive(y, s, ec)
            # trace stores ||y||^2 - residual, so dominance flips the inequality
            assert full.objective_trace[-1] >= fast.objective_trace[-1] - 1e-9


class TestRefreshGains:
    def test_unchanged_channel_same_gains(self):
        cfg = cfg16()
        chan = gen_synthetic_channel(cfg, 2, 31, l_max=7, k_max=3)
        s, y = observe(cfg, chan, None)
        prior = estimate_channel(y, s, est_cfg(cfg, 2))
        again = refresh_gains(y, s, prior, cfg)
        assert np.allclose(again.gains(), prior.gains(), atol=1e-10)

    def test_gain_scaling_is_linear(self):
        cfg = cfg16()
        chan = gen_synthetic_channel(cfg, 2, 32, l_max=7, k_max=3)
        s, y = observe(cfg, chan, None)
        prior = estimate_channel(y, s, est_cfg(cfg, 2))
        alpha = 1.7 - 0.3j
        scaled = refresh_gains(alpha * y, s, prior, cfg)
        assert np.allclose(scaled.gains(), alpha * prior.gains(), atol=1e-10)
        assert scaled.cells == prior.cells

    def test_single_path_noiseless(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(3, 2)], [0.5 - 0.5j])
        s, y = observe(cfg, chan, None)
        prior = estimate_channel(y, s, est_cfg(cfg, 1))
        res = refresh_gains(y, s, prior, cfg)
        assert res.paths[0].h == pytest.approx(0.5 - 0.5j, abs=1e-12)


class TestNmse:
    def test_perfect_estimate_floored(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(2, 1)], [1.0])
        assert nmse(chan, chan, cfg) == -100.0

    def test_zero_estimate_is_zero_db(self):
        cfg = cfg16()
        chan = channel_from_cells(cfg, [(2, 1)], [1.0])
        zero = channel_from_cells(cfg, [(2, 1)], [0.0])
        assert nmse(zero, chan, cfg) == pytest.approx(0.0, abs=1e-12)

    def test_ten_percent_gain_error(self):
        cfg = cfg16()
        truth = channel_from_cells(cfg, [(4, -2)], [1.0])
        est = channel_from_cells(cfg, [(4, -2)], [1.1])
        assert nmse(est, truth, cfg) == pytest.approx(20 * np.log10(0.1), abs=1e-9)

    def test_zero_truth_rejected(self):
        cfg = cfg16()
        truth = channel_from_cells(cfg, [(0, 0)], [0.0])
        est = channel_from_cells(cfg, [(0, 0)], [1.0])
        with pytest.raises(ValueError):
            nmse(est, truth, cfg)
