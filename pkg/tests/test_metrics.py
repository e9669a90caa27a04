import numpy as np
import pytest

from mfg_charax import GridError, GridFunction, SpaceGrid, growth_norm, lipschitz_x
from mfg_charax.metrics import lipschitz_of_values


def sample(grid, fn):
    return GridFunction.from_callback(grid, fn)


class TestLipschitz:
    def test_identity_on_box(self):
        g = SpaceGrid("box", 1, [[0.0, 1.0]], [33])
        assert lipschitz_x(sample(g, lambda X: X[:, 0])) == pytest.approx(1.0)

    def test_constant_is_zero(self):
        g = SpaceGrid("box", 1, [[0.0, 1.0]], [33])
        assert lipschitz_x(sample(g, lambda X: 0 * X[:, 0] + 3.0)) == 0.0

    def test_sine_on_torus(self):
        g = SpaceGrid("torus", 1, [1.0], [512])
        lip = lipschitz_x(sample(g, lambda X: np.sin(2 * np.pi * X[:, 0])))
        assert lip == pytest.approx(2 * np.pi, rel=0.01)

    def test_wrap_edge_counted(self):
        g = SpaceGrid("torus", 1, [1.0], [8])
        vals = np.zeros(8)
        vals[-1] = 1.0  # jump across the wrap edge
        assert lipschitz_of_values(g, vals) == pytest.approx(8.0)

    def test_shift_invariance_and_scaling(self):
        g = SpaceGrid("torus", 1, [1.0], [128])
        rng = np.random.default_rng(3)
        vals = rng.normal(size=128)
        base = lipschitz_of_values(g, vals)
        assert lipschitz_of_values(g, vals + 17.3) == pytest.approx(base, abs=1e-12)
        for c in rng.normal(size=5):
            assert lipschitz_of_values(g, c * vals) == pytest.approx(abs(c) * base, rel=1e-12)

    def test_refinement_grows(self):
        fn = lambda X: np.sin(2 * np.pi * X[:, 0]) + 0.3 * np.cos(6 * np.pi * X[:, 0])
        coarse = SpaceGrid("torus", 1, [1.0], [64])
        fine = SpaceGrid("torus", 1, [1.0], [256])
        lip_c = lipschitz_x(sample(coarse, fn))
        lip_f = lipschitz_x(sample(fine, fn))
        assert lip_f >= lip_c - 1e-12

    def test_2d_max_over_axes(self):
        g = SpaceGrid("box", 2, [[0.0, 1.0], [0.0, 1.0]], [17, 17])
        f = sample(g, lambda X: 2.0 * X[:, 0] + 5.0 * X[:, 1])
        assert lipschitz_x(f) == pytest.approx(5.0)


class TestGrowthNorm:
    def test_linear_gives_slope(self):
        g = SpaceGrid("box", 1, [[-2.0, 2.0]], [41])
        rng = np.random.default_rng(11)
        for a in rng.normal(size=20):
            f = sample(g, lambda X, a=a: a * X[:, 0])
            assert growth_norm(f) == pytest.approx(abs(a), abs=1e-12)

    def test_zero(self):
        g = SpaceGrid("box", 1, [[-1.0, 1.0]], [21])
        assert growth_norm(sample(g, lambda X: 0.0 * X[:, 0])) == 0.0

    def test_square_attained_at_boundary(self):
        g = SpaceGrid("box", 1, [[-2.0, 2.0]], [81])
        f = sample(g, lambda X: X[:, 0] ** 2)
        assert growth_norm(f) == pytest.approx(2.0, abs=1e-12)

    def test_origin_required(self):
        g = SpaceGrid("box", 1, [[1.0, 2.0]], [11])
        with pytest.raises(GridError):
            growth_norm(sample(g, lambda X: X[:, 0]))

    def test_torus_rejected(self):
        g = SpaceGrid("torus", 1, [1.0], [8])
        with pytest.raises(GridError):
            growth_norm(sample(g, lambda X: X[:, 0]))
