import numpy as np
import pytest

import oracles
from mfg_charax import PathBatch, PicardConfig
from mfg_charax.measure import (
    MeasureProblem,
    MeasureState,
    WField,
    default_anchors,
    picard_solve_grad,
    psi_grad,
    psi_grad_common_noise,
    reconstruct_value,
    torus_grid,
    wrapped_gaussian_state,
)

GRID = torus_grid(64)
AMP = 0.1  # initial-gradient amplitude of the viscous-Burgers benchmark


def quadratic_problem(sigma=0.05, sigma_prime=0.05, sigma_0=0.0, amp=AMP):
    """H = p^2/2, B = p, m-independent sine data: the gradient field solves
    viscous Burgers w_t + w w_x = sigma w_xx with w(0) = amp cos(2 pi x)."""
    return MeasureProblem(
        H=lambda x, p, m: 0.5 * p ** 2,
        D_pH=lambda x, p, m: p,
        B=lambda x, p, m: p,
        u0=lambda x, m: (amp / (2 * np.pi)) * np.sin(2 * np.pi * np.asarray(x)),
        grad_u0=lambda x, m: amp * np.cos(2 * np.pi * np.asarray(x)),
        sigma=sigma,
        sigma_prime=sigma_prime,
        sigma_0=sigma_0,
    )


def make_batch(cfg, n_steps, n_sub, T):
    return PathBatch(n_paths=cfg.mc_samples, n_steps=n_steps * n_sub,
                     n_coords=1, dt=(T / n_steps) / n_sub, seed=cfg.seed)


class TestPsiGrad:
    def test_static_degenerate_case_freezes_w0(self):
        prob = MeasureProblem(
            H=lambda x, p, m: 0.0 * p,
            D_pH=lambda x, p, m: 0.0 * p,
            B=lambda x, p, m: 0.0 * p,
            u0=lambda x, m: 0.0 * np.asarray(x),
            grad_u0=None,
            sigma=1e-12, sigma_prime=1e-8,
        )
        anchors = default_anchors(GRID, 3, seed=2)
        batch = PathBatch(n_paths=64, n_steps=8, n_coords=1, dt=(0.2 / 4) / 2, seed=0)
        W0 = lambda x, m: np.cos(2 * np.pi * np.asarray(x)) + m.mean()
        out = psi_grad(0.2, None, None, lambda s, x, m: np.zeros_like(x),
                       W0, prob, batch, anchors, n_steps=4, n_sub=2)
        for ai, anchor in enumerate(anchors):
            expect = W0(GRID.axis(0), anchor)
            assert np.max(np.abs(out.values[-1, :, ai] - expect)) < 1e-5

    def test_heat_kernel(self):
        sigma = 0.05
        prob = quadratic_problem(sigma=sigma)
        anchors = [MeasureState.uniform(GRID)]
        cfg = PicardConfig(mc_samples=20000, seed=3)
        batch = make_batch(cfg, 5, 2, 0.5)
        W0 = lambda x, m: np.cos(2 * np.pi * np.asarray(x))
        out = psi_grad(0.5, None, None, lambda s, x, m: np.zeros_like(x),
                       W0, prob, batch, anchors, n_steps=5, n_sub=2)
        x = GRID.axis(0)
        expect = oracles.heat_cos_value(x, sigma, 0.5)
        gap = np.abs(out.values[-1, :, 0] - expect)
        assert np.all(gap <= 3.0 * out.stderr[-1, :, 0])

    def test_first_moment_source(self):
        prob = MeasureProblem(
            H=lambda x, p, m: 0.0 * p,
            D_pH=lambda x, p, m: 0.0 * p,
            B=lambda x, p, m: 0.0 * p,
            u0=lambda x, m: 0.0 * np.asarray(x),
            grad_u0=None,
            sigma=1e-12, sigma_prime=1e-8,
        )
        anchors = default_anchors(GRID, 4, seed=5)
        batch = PathBatch(n_paths=32, n_steps=12, n_coords=1, dt=(0.3 / 6) / 2, seed=1)
        A = lambda s, x, m: np.full_like(np.asarray(x, dtype=float), m.mean())
        out = psi_grad(0.3, A, None, lambda s, x, m: np.zeros_like(x),
                       lambda x, m: 0.0 * np.asarray(x), prob, batch, anchors,
                       n_steps=6, n_sub=2)
        for ai, anchor in enumerate(anchors):
            for k, t in enumerate(out.time.times):
                assert np.allclose(out.values[k, :, ai], t * anchor.mean(), atol=1e-6)


class TestPicardGrad:
    def test_decoupled_viscous_burgers_cole_hopf(self):
        sigma = 0.05
        prob = quadratic_problem(sigma=sigma)
        anchors = default_anchors(GRID, 3, seed=7)
        cfg = PicardConfig(tol_sup=5e-4, max_iters=12, mc_samples=4000, seed=11)
        T = 0.1
        W, rep = picard_solve_grad(prob, T, cfg, anchors, n_steps=5, n_sub=2)
        assert rep.converged
        x = GRID.axis(0)
        w0 = AMP * np.cos(2 * np.pi * x)
        worst = 0.0
        for k, t in enumerate(W.time.times):
            ref = oracles.cole_hopf_burgers(w0, sigma, t)
            for ai in range(len(anchors)):
                worst = max(worst, float(np.max(np.abs(W.values[k, :, ai] - ref))))
        assert worst < 8e-3
        # Decoupling: anchor-to-anchor deviation within Monte Carlo noise.
        dev = np.max(np.abs(W.values - W.values[:, :, :1]))
        se = float(np.max(W.stderr))
        assert dev <= 3.0 * max(se, 1e-6)

    def test_zero_hamiltonian_keeps_gradient(self):
        prob = MeasureProblem(
            H=lambda x, p, m: 0.0 * p,
            D_pH=lambda x, p, m: 0.0 * p,
            B=lambda x, p, m: 0.0 * p,
            u0=lambda x, m: np.sin(2 * np.pi * np.asarray(x)) / (2 * np.pi),
            grad_u0=lambda x, m: np.cos(2 * np.pi * np.asarray(x)),
            sigma=1e-4, sigma_prime=0.05,
        )
        anchors = default_anchors(GRID, 2, seed=3)
        cfg = PicardConfig(tol_sup=1e-3, max_iters=8, mc_samples=4000, seed=2)
        W, rep = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=4, n_sub=2)
        assert rep.converged
        x = GRID.axis(0)
        # sigma is tiny: the heat factor is 1 - 4 pi^2 sigma t ~ 1 - 4e-4.
        gap = np.max(np.abs(W.values[-1] - np.cos(2 * np.pi * x)[:, None]))
        assert gap <= 3.0 * float(np.max(W.stderr)) + 5e-4

    def test_nonlocal_mean_drift(self):
        # H = p * mean(m): the gradient field advects at the anchor's mean
        # (the measure itself only diffuses, preserving the mean up to wrap).
        sigma = 0.02
        prob = MeasureProblem(
            H=lambda x, p, m: p * m.mean(),
            D_pH=lambda x, p, m: np.full_like(np.asarray(p, dtype=float), m.mean()),
            B=lambda x, p, m: 0.0 * p,
            u0=lambda x, m: np.sin(2 * np.pi * np.asarray(x)) / (2 * np.pi),
            grad_u0=lambda x, m: np.cos(2 * np.pi * np.asarray(x)),
            sigma=sigma, sigma_prime=1e-6,
        )
        anchors = [wrapped_gaussian_state(GRID, 0.5, 0.07)]
        cfg = PicardConfig(tol_sup=1e-4, max_iters=10, mc_samples=8000, seed=6)
        T = 0.2
        W, rep = picard_solve_grad(prob, T, cfg, anchors, n_steps=4, n_sub=2)
        assert rep.converged
        x = GRID.axis(0)
        mean = anchors[0].mean()
        w0 = np.cos(2 * np.pi * x)
        ref = oracles.torus_heat_evolve(np.cos(2 * np.pi * (x - T * mean)), sigma, T)
        gap = np.max(np.abs(W.values[-1, :, 0] - ref))
        assert gap <= 3.0 * float(np.max(W.stderr[-1])) + 2e-3

    def test_deterministic_given_seed(self):
        prob = quadratic_problem()
        anchors = default_anchors(GRID, 2, seed=1)
        cfg = PicardConfig(tol_sup=1e-3, max_iters=6, mc_samples=2000, seed=42)
        W1, _ = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=3, n_sub=2)
        W2, _ = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=3, n_sub=2)
        assert np.array_equal(W1.values, W2.values)
        W3, _ = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=3, n_sub=2, workers=3)
        assert np.array_equal(W1.values, W3.values)

    def test_inconsistent_gradient_rejected(self):
        from mfg_charax import CoefficientError
        bad = MeasureProblem(
            H=lambda x, p, m: 0.5 * p ** 2,
            D_pH=lambda x, p, m: 3.0 * p,  # wrong slope
            B=lambda x, p, m: p,
            u0=lambda x, m: 0.0 * np.asarray(x),
            grad_u0=lambda x, m: 0.0 * np.asarray(x),
            sigma=0.05, sigma_prime=0.05,
        )
        anchors = default_anchors(GRID, 2, seed=0)
        with pytest.raises(CoefficientError):
            picard_solve_grad(bad, 0.05, PicardConfig(mc_samples=64), anchors,
                              n_steps=2, n_sub=2)

    def test_lip_components_finite(self):
        prob = quadratic_problem()
        anchors = default_anchors(GRID, 3, seed=2)
        cfg = PicardConfig(tol_sup=1e-3, max_iters=6, mc_samples=2000, seed=5)
        W, _ = picard_solve_grad(prob, 0.05, cfg, anchors, n_steps=3, n_sub=2)
        assert np.isfinite(W.lip_x()) and np.isfinite(W.lip_m())
        assert W.lip_total() >= max(W.lip_x(), W.lip_m())


class TestReconstructValue:
    def test_constant_data_gives_constant_value(self):
        prob = MeasureProblem(
            H=lambda x, p, m: 0.0 * p,
            D_pH=lambda x, p, m: 0.0 * p,
            B=lambda x, p, m: 0.0 * p,
            u0=lambda x, m: np.full_like(np.asarray(x, dtype=float), 0.7),
            grad_u0=lambda x, m: 0.0 * np.asarray(x),
            sigma=0.05, sigma_prime=0.05,
        )
        anchors = default_anchors(GRID, 2, seed=4)
        cfg = PicardConfig(tol_sup=1e-3, max_iters=5, mc_samples=500, seed=1)
        W, _ = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=3, n_sub=2)
        U = reconstruct_value(W, prob, mc_samples=500, seed=8)
        assert np.max(np.abs(U.values - 0.7)) < 1e-10

    def test_pure_diffusion_value_with_supplied_zero_w(self):
        # H = p^2/2 evaluated on a hand-built W == 0: the running cost
        # vanishes and U is the heat-smoothed initial value.
        prob = quadratic_problem(sigma=0.05)
        anchors = [MeasureState.uniform(GRID)]
        from mfg_charax import TimeGrid
        time = TimeGrid(0.2, 4)
        W0f = WField(grid=GRID, time=time, anchors=tuple(anchors),
                     values=np.zeros((5, GRID.n_nodes, 1)))
        U = reconstruct_value(W0f, prob, mc_samples=20000, seed=9)
        x = GRID.axis(0)
        u0 = (AMP / (2 * np.pi)) * np.sin(2 * np.pi * x)
        ref = oracles.torus_heat_evolve(u0, 0.05, 0.2)
        gap = np.abs(U.values[-1, :, 0] - ref)
        assert np.all(gap <= 3.0 * U.stderr[-1, :, 0] + 1e-6)

    def test_gradient_consistency_on_burgers(self):
        sigma = 0.05
        prob = quadratic_problem(sigma=sigma)
        anchors = default_anchors(GRID, 2, seed=6)
        cfg = PicardConfig(tol_sup=5e-4, max_iters=10, mc_samples=4000, seed=13)
        W, _ = picard_solve_grad(prob, 0.1, cfg, anchors, n_steps=5, n_sub=2)
        U = reconstruct_value(W, prob, mc_samples=20000, seed=14)
        dx = GRID.bounds[0] / GRID.n_nodes
        for ai in range(len(anchors)):
            u = U.values[-1, :, ai]
            du = (np.roll(u, -1) - np.roll(u, 1)) / (2 * dx)
            w = W.values[-1, :, ai]
            assert np.max(np.abs(du - w)) < 2e-2


class TestCommonNoise:
    def test_homogeneous_data_stays_constant(self):
        prob = quadratic_problem(sigma=0.03, sigma_0=0.02)
        anchors = default_anchors(GRID, 2, seed=8)
        cfg = PicardConfig(mc_samples=256, seed=3)
        batch = make_batch(cfg, 3, 2, 0.1)
        cbatch = PathBatch(n_paths=8, n_steps=6, n_coords=1, dt=(0.1 / 3) / 2, seed=21)
        W0 = lambda x, m: np.full_like(np.asarray(x, dtype=float), 1.3)
        out = psi_grad_common_noise(0.1, None, None, lambda s, x, m: np.zeros_like(x),
                                    W0, prob, batch, cbatch, anchors, n_steps=3, n_sub=2)
        assert np.max(np.abs(out.values - 1.3)) < 1e-12

    def test_effective_volatility_adds(self):
        sigma, sigma_0 = 0.04, 0.03
        prob = quadratic_problem(sigma=sigma, sigma_0=sigma_0)
        anchors = [MeasureState.uniform(GRID)]
        cfg = PicardConfig(mc_samples=4096, seed=5)
        T = 0.3
        batch = make_batch(cfg, 3, 2, T)
        cbatch = PathBatch(n_paths=64, n_steps=6, n_coords=1, dt=(T / 3) / 2, seed=31)
        W0 = lambda x, m: np.cos(2 * np.pi * np.asarray(x))
        out = psi_grad_common_noise(T, None, None, lambda s, x, m: np.zeros_like(x),
                                    W0, prob, batch, cbatch, anchors, n_steps=3, n_sub=2)
        x = GRID.axis(0)
        expect = oracles.heat_cos_value(x, sigma + sigma_0, T)
        gap = np.abs(out.values[-1, :, 0] - expect)
        assert np.all(gap <= 3.0 * out.stderr[-1, :, 0] + 1e-12)

    def test_small_sigma0_matches_plain_operator(self):
        sigma = 0.05
        T = 0.1
        anchors = [wrapped_gaussian_state(GRID, 0.5, 0.1)]
        x = GRID.axis(0)
        b = lambda s, xx, m: -AMP * np.cos(2 * np.pi * np.asarray(xx))
        F = lambda s, xx, m: np.zeros_like(np.asarray(xx, dtype=float))
        W0 = lambda xx, m: AMP * np.cos(2 * np.pi * np.asarray(xx))
        plain_prob = quadratic_problem(sigma=sigma)
        noisy_prob = quadratic_problem(sigma=sigma, sigma_0=1e-7)
        cfg = PicardConfig(mc_samples=8192, seed=17)
        batch = make_batch(cfg, 4, 2, T)
        plain = psi_grad(T, None, b, F, W0, plain_prob, batch, anchors,
                         n_steps=4, n_sub=2)
        cbatch = PathBatch(n_paths=16, n_steps=8, n_coords=1, dt=(T / 4) / 2, seed=19)
        noisy = psi_grad_common_noise(T, None, b, F, W0, noisy_prob, batch, cbatch,
                                      anchors, n_steps=4, n_sub=2)
        gap = np.max(np.abs(plain.values[-1] - noisy.values[-1]))
        se = float(np.max(plain.stderr[-1])) + float(np.max(noisy.stderr[-1]))
        assert gap <= 3.0 * se + 1e-4
