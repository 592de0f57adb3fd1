import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import grid_posterior_mean_1d, multinomial_frequencies, sym2_top_eig
from retarget_kit.config import Config
from retarget_kit.particle_filter import (
    ParticleSet,
    PfParams,
    PoseTracker,
    pf_init,
    pf_mean,
    pf_predict,
    pf_resample_if_needed,
    pf_update,
    systematic_indices,
)
from retarget_kit.perception import PoseProxy, pose_proxy
from retarget_kit.world import World

P = PfParams()


def proxy(x, y, sigma=0.005, valid=True):
    return PoseProxy(np.array([x, y, 0.02]), valid, 100, sigma, 0.001, 0.0)


def set_from(xy, w=None, params=P):
    xy = np.asarray(xy, dtype=float)
    s = np.zeros((len(xy), 6))
    s[:, :2] = xy
    w = np.full(len(xy), 1 / len(xy)) if w is None else np.asarray(w, dtype=float)
    return ParticleSet(s, w, params)


class TestInit:
    def test_delta_init(self):
        ps = pf_init(proxy(0.3, 0.1), PfParams(sigma0_xy=0.0, sigma0_theta=0.0), np.random.default_rng(0))
        assert np.all(ps.states[:, 0] == 0.3) and np.all(ps.states[:, 1] == 0.1)
        assert np.all(ps.states[:, 3:] == 0.0)

    def test_uniform_ess(self):
        ps = pf_init(proxy(0, 0), P, np.random.default_rng(0))
        assert ps.ess == pytest.approx(P.n, abs=1e-9)

    def test_sample_mean(self):
        n = 10_000
        ps = pf_init(proxy(0.3, 0.1), PfParams(n=n), np.random.default_rng(3))
        bound = 3 * P.sigma0_xy / math.sqrt(n)
        assert abs(ps.states[:, 0].mean() - 0.3) < bound and abs(ps.states[:, 1].mean() - 0.1) < bound

    def test_invalid_proxy(self):
        with pytest.raises(ValueError):
            pf_init(proxy(0, 0, valid=False), P, np.random.default_rng(0))


class TestPredict:
    def test_stationary(self):
        ps = pf_init(proxy(0.3, 0.1), PfParams(sigma_v=0, sigma_omega=0), np.random.default_rng(0))
        out = pf_predict(ps, 0.01, np.random.default_rng(1))
        assert np.array_equal(out.states, ps.states) and np.array_equal(out.weights, ps.weights)

    def test_euler_step(self):
        ps = set_from([[0.0, 0.0]], params=PfParams(sigma_v=0, sigma_omega=0))
        ps.states[0, 3] = 0.1
        out = pf_predict(ps, 0.01, np.random.default_rng(0))
        assert out.states[0, 0] == pytest.approx(0.001, abs=1e-15)

    def test_variance_grows(self):
        # start from a point mass so the diffusion is not masked by sampling noise in the prior
        ps = pf_init(proxy(0, 0), PfParams(n=4000, sigma0_xy=0.0), np.random.default_rng(0))
        rng = np.random.default_rng(1)
        prev = np.var(ps.states[:, 0])
        for _ in range(30):
            ps = pf_predict(ps, 0.05, rng)
            v = np.var(ps.states[:, 0])
            assert v > prev
            prev = v

    def test_dt_positive(self):
        with pytest.raises(ValueError):
            pf_predict(set_from([[0, 0]]), 0.0, np.random.default_rng(0))


class TestUpdate:
    def test_all_at_z(self):
        ps = pf_update(set_from([[0.1, 0.2]] * 10), (0.1, 0.2), 0.005)
        assert np.allclose(ps.weights, 0.1, atol=1e-15)

    def test_weight_ratio(self):
        d, sigma = 0.003, 0.005
        ps = pf_update(set_from([[d, 0.0], [2 * d, 0.0]]), (0.0, 0.0), sigma)
        assert ps.weights[0] / ps.weights[1] == pytest.approx(math.exp(3 * d * d / (2 * sigma * sigma)), rel=1e-12)

    def test_mean_moves_toward_measurement(self):
        rng = np.random.default_rng(0)
        xy = rng.normal([0.0, 0.0], 0.01, (500, 2))
        ps = set_from(xy)
        z = (0.01, -0.005)
        out = pf_update(ps, z, 0.005)
        # brute-force weights
        w = [math.exp(-0.5 * ((x - z[0]) ** 2 + (y - z[1]) ** 2) / 0.005 ** 2) for x, y in xy]
        tot = sum(w)
        ref = (sum(wi * x for wi, (x, _) in zip(w, xy)) / tot, sum(wi * y for wi, (_, y) in zip(w, xy)) / tot)
        mu, _ = pf_mean(out)
        assert np.allclose(mu, ref, atol=1e-12)
        before, _ = pf_mean(ps)
        assert np.linalg.norm(mu - z) < np.linalg.norm(before - z)

    def test_underflow_resets(self):
        ps = pf_update(set_from([[0.0, 0.0], [0.001, 0.0]]), (10.0, 10.0), 1e-6)
        assert ps.degenerate and np.allclose(ps.weights, 0.5)

    def test_sigma_floor(self):
        a = pf_update(set_from([[0.0, 0.0], [0.001, 0.0]]), (0.0, 0.0), 1e-9)
        b = pf_update(set_from([[0.0, 0.0], [0.001, 0.0]]), (0.0, 0.0), P.sigma_floor)
        assert np.array_equal(a.weights, b.weights)

    def test_grid_posterior(self):
        # linear-Gaussian: N(0, 1 cm) prior, z = 8 mm with 5 mm likelihood
        n = 20_000
        ps = pf_init(proxy(0.0, 0.0), PfParams(n=n), np.random.default_rng(7))
        out = pf_update(ps, (0.008, 0.0), 0.005)
        mu, _ = pf_mean(out)
        ref = grid_posterior_mean_1d(0.0, 0.01, 0.008, 0.005, -0.06, 0.06)
        assert ref == pytest.approx(0.008 * 0.01 ** 2 / (0.01 ** 2 + 0.005 ** 2), abs=1e-9)
        assert abs(mu[0] - ref) < 2e-3


class TestResample:
    def test_offset_just_below_one_stays_in_range(self):
        idx = systematic_indices(np.array([0.5, 0.5]), 0.9999999999999999)
        assert idx.tolist() == [0, 1]

    def test_uniform_untouched(self):
        ps = set_from(np.arange(20).reshape(10, 2))
        out = pf_resample_if_needed(ps, np.random.default_rng(0))
        assert not out.resampled and np.array_equal(out.states, ps.states)

    def test_degenerate_copies(self):
        w = np.zeros(10)
        w[3] = 1.0
        ps = set_from(np.arange(20).reshape(10, 2), w)
        assert ps.ess == 1.0
        out = pf_resample_if_needed(ps, np.random.default_rng(0))
        assert out.resampled and np.all(out.states[:, 0] == 6) and np.allclose(out.weights, 0.1)

    def test_frequencies_match_multinomial(self):
        import random

        w = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
        n = 1000
        # 200 particles per group, group g sharing total weight w[g]
        group = np.repeat(np.arange(5), 200)
        idx = systematic_indices(w[group] / 200, 0.37)
        freq = np.bincount(group[idx], minlength=5) / n
        # low-variance resampling is within one particle of n*w per bin
        assert np.all(np.abs(freq - w) <= 1 / n + 1e-12)
        ref = multinomial_frequencies(list(w), 200_000, random.Random(0))
        assert np.all(np.abs(freq - np.array(ref)) < 0.005)

    @given(st.lists(st.floats(0.001, 1.0), min_size=2, max_size=64), st.floats(0, 1, exclude_max=True))
    def test_counts_bracket(self, raw, u0):
        w = np.array(raw) / sum(raw)
        n = len(w)
        counts = np.bincount(systematic_indices(w, u0), minlength=n)
        assert counts.sum() == n
        assert np.all(np.abs(counts - n * w) < 1 + 1e-9)


class TestMean:
    def test_point_mass(self):
        mu, disp = pf_mean(set_from([[0.2, -0.1]] * 7))
        assert np.allclose(mu, [0.2, -0.1], atol=1e-15) and disp == 0.0

    def test_two_particles(self):
        mu, disp = pf_mean(set_from([[-0.004, 0.0], [0.004, 0.0]]))
        assert np.allclose(mu, 0, atol=1e-18) and disp == pytest.approx(0.004, rel=1e-12)

    @given(st.integers(0, 1000))
    def test_permutation_and_dispersion_oracle(self, seed):
        rng = np.random.default_rng(seed)
        xy = rng.normal(size=(30, 2))
        w = rng.random(30)
        w /= w.sum()
        mu, disp = pf_mean(set_from(xy, w))
        perm = rng.permutation(30)
        mu2, disp2 = pf_mean(set_from(xy[perm], w[perm]))
        assert np.allclose(mu, mu2, atol=1e-12) and disp == pytest.approx(disp2, rel=1e-9)
        d = xy - mu
        sxx, syy, sxy = (w * d[:, 0] ** 2).sum(), (w * d[:, 1] ** 2).sum(), (w * d[:, 0] * d[:, 1]).sum()
        assert disp == pytest.approx(math.sqrt(sym2_top_eig(sxx, sxy, syy)), rel=1e-9)


class TestTracker:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_weights_normalised_every_step(self, seed):
        rng = np.random.default_rng(seed)
        tr = PoseTracker(P, np.random.default_rng(seed + 1))
        for _ in range(30):
            tr.predict(0.01)
            tr.observe(proxy(*rng.normal([0.4, 0.0], 0.005), sigma=0.005))
            assert abs(tr.ps.weights.sum() - 1.0) <= 1e-12
            assert 1.0 - 1e-9 <= tr.ps.ess <= P.n + 1e-9

    def test_skip_invalid(self):
        tr = PoseTracker(P, np.random.default_rng(0))
        assert tr.observe(proxy(0, 0, valid=False)) == "skip" and not tr.ready
        assert tr.observe(proxy(0.4, 0)) == "init"
        before = tr.estimate()[0].copy()
        assert tr.observe(proxy(0, 0, valid=False)) == "skip"
        assert np.array_equal(tr.estimate()[0], before)

    def test_teleport_reacquired(self):
        cfg = Config()
        w = World(cfg, np.random.default_rng(0), np.random.default_rng(1))
        w.add_cube("obj", (0.45, 0.0))
        tr = PoseTracker(PfParams.from_config(cfg), np.random.default_rng(2), cfg.pf_reseed_gate)
        for _ in range(20):
            tr.predict(cfg.tick_dt)
            tr.observe(pose_proxy(w.scan("obj"), 0.04))
            w.step([0, 0, 0])
        w.apply_shift("obj", 0.10, 0.7)
        truth = w.objects["obj"].center[:2]
        # 400 ms of prediction only while the post-shift scan waits in the lag buffer
        for _ in range(40):
            tr.predict(cfg.tick_dt)
        for k in range(4):
            kind = tr.observe(pose_proxy(w.scan("obj"), 0.04))
            if k == 0:
                assert kind == "reseed"
            tr.predict(cfg.tick_dt)
        assert np.linalg.norm(tr.estimate()[0] - truth) < 0.01
