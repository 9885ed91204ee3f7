import math

import numpy as np
import pytest

from mvloss import kernels
from mvloss.kernels import (
    GridSpec,
    heat_kernel,
    lemma1_lhs,
    lemma1_rhs_form1,
    lemma1_rhs_form2,
    normal_cdf,
    xi_kernel,
)

RNG = np.random.default_rng(2026)


class TestGridSpec:
    def test_nodes_and_delta(self):
        grid = GridSpec(1.0, 4)
        assert grid.delta == 0.25
        np.testing.assert_allclose(grid.nodes, [0.0, 0.25, 0.5, 0.75, 1.0], rtol=0, atol=0)
        assert grid.delta * grid.n_steps == pytest.approx(grid.t_end, rel=1e-15)

    def test_uniform_spacing(self):
        grid = GridSpec(2.7, 321)
        steps = np.diff(grid.nodes)
        np.testing.assert_allclose(steps, grid.delta, rtol=1e-12)

    @pytest.mark.parametrize("t_end,n", [(0.0, 10), (-1.0, 10), (1.0, 1), (1.0, 0), (math.inf, 5)])
    def test_invalid(self, t_end, n):
        with pytest.raises(ValueError):
            GridSpec(t_end, n)

    def test_refined(self):
        assert GridSpec(1.0, 250).refined(4).n_steps == 1000


class TestNormalCdf:
    def test_center(self):
        assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)

    def test_reference_value(self):
        # high-precision erf oracle, computed independently before the build
        assert normal_cdf(0.5) == pytest.approx(0.6914624612740131, abs=1e-12)

    def test_tail(self):
        assert normal_cdf(-8.0) < 1e-14

    def test_symmetry_and_monotone(self):
        x = np.sort(RNG.uniform(-8.0, 8.0, size=400))
        vals = normal_cdf(x)
        assert np.all(np.diff(vals) >= 0.0)
        assert np.max(np.abs(vals + normal_cdf(-x) - 1.0)) <= 1e-14


class TestHeatKernel:
    def test_peak(self):
        assert heat_kernel(1.0, 0.5, 0.5) == pytest.approx(0.3989422804014327, abs=1e-14)

    def test_reference_value(self):
        assert heat_kernel(1.0, 0.0, 0.5) == pytest.approx(0.35206532676429948, abs=1e-14)

    def test_concentration(self):
        assert heat_kernel(1e-12, 0.0, 0.5) == 0.0

    def test_domain(self):
        with pytest.raises(ValueError):
            heat_kernel(0.0, 0.0, 0.5)
        with pytest.raises(ValueError):
            heat_kernel(-1.0, 0.0, 0.5)

    @pytest.mark.parametrize("t,z", [(1.0, 0.5), (0.3, 2.0), (4.0, 0.0)])
    def test_unit_mass(self, t, z):
        y = np.linspace(z - 10 * math.sqrt(t), z + 10 * math.sqrt(t), 20001)
        mass = np.trapezoid(heat_kernel(t, y, z), y)
        assert mass == pytest.approx(1.0, abs=1e-8)


class TestXiKernel:
    def test_diagonal_convention(self):
        assert xi_kernel(1.0, 1.0, 123.4) == 1.0

    def test_zero_displacement(self):
        assert xi_kernel(1.0, 0.5, 0.0) == 1.0

    def test_reference_value(self):
        assert xi_kernel(1.0, 0.5, 1.0) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_domain(self):
        with pytest.raises(ValueError):
            xi_kernel(0.5, 1.0, 0.0)

    def test_diagonal_continuity(self):
        # along psi = c (t - t') the kernel tends to its diagonal value 1
        eps = 10.0 ** -np.arange(3, 10, dtype=float)
        vals = np.array([xi_kernel(1.0, 1.0 - e, 0.7 * e) for e in eps])
        assert np.all(np.abs(vals - 1.0) <= 0.25 * eps)  # 1 - exp(-c^2 e / 2) ~ c^2 e / 2


XI_NU_PAIRS = {
    "exp_ramp": (
        lambda t, tp: np.exp(-(t - tp)),
        lambda tp: np.asarray(tp, dtype=float),
        lambda t, tp: -np.exp(-(t - tp)),
    ),
    "damped_sine": (
        lambda t, tp: xi_kernel(t, tp, 0.3 * (np.asarray(t) - np.asarray(tp))),
        lambda tp: np.sin(np.asarray(tp, dtype=float)),
        None,
    ),
}


class TestDerivativeIdentity:
    def test_constant_pair_analytic(self):
        # xi = 1, nu = 1: the convolution is 2 sqrt(t / 2pi), derivative 1/sqrt(2 pi t)
        xi = lambda t, tp: np.ones_like(np.asarray(tp, dtype=float) + t)  # noqa: E731
        xi_t = lambda t, tp: np.zeros_like(np.asarray(tp, dtype=float) + t)  # noqa: E731
        nu = lambda tp: np.ones_like(np.asarray(tp, dtype=float))  # noqa: E731
        expected = 1.0 / math.sqrt(2.0 * math.pi)
        assert lemma1_lhs(xi, nu, 1.0, 2048) == pytest.approx(expected, abs=1e-8)
        assert lemma1_rhs_form1(xi, nu, 1.0, 2048, xi_t) == pytest.approx(expected, abs=1e-9)
        # the boundary contribution carries the whole value here
        assert lemma1_rhs_form2(xi, nu, 1.0, 2048, xi_t) == pytest.approx(expected, abs=1e-9)

    @pytest.mark.parametrize("name", sorted(XI_NU_PAIRS))
    def test_three_forms_agree(self, name):
        xi, nu, xi_t = XI_NU_PAIRS[name]
        lhs = lemma1_lhs(xi, nu, 1.0, 4096)
        f1 = lemma1_rhs_form1(xi, nu, 1.0, 4096, xi_t)
        f2 = lemma1_rhs_form2(xi, nu, 1.0, 4096, xi_t)
        assert abs(lhs - f1) <= 1e-4
        assert abs(lhs - f2) <= 1e-4

    def test_agreement_rate(self):
        # deviation shrinks at least linearly in quad_n
        xi, nu, xi_t = XI_NU_PAIRS["exp_ramp"]
        dev = {}
        for qn in (256, 4096):
            lhs = lemma1_lhs(xi, nu, 1.0, qn)
            dev[qn] = abs(lhs - lemma1_rhs_form1(xi, nu, 1.0, qn, xi_t))
        assert dev[256] >= 8.0 * dev[4096]

    def test_domain(self):
        xi, nu, _ = XI_NU_PAIRS["exp_ramp"]
        with pytest.raises(ValueError):
            lemma1_lhs(xi, nu, 0.0, 64)
        with pytest.raises(ValueError):
            lemma1_rhs_form1(xi, nu, -1.0, 64)
        with pytest.raises(ValueError):
            lemma1_rhs_form2(xi, nu, 0.0, 64)
