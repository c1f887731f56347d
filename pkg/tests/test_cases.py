import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldd_richards.cases import (
    SANDSTONE,
    SILT_LOAM,
    DimensionalVG,
    ManufacturedCase,
    RealisticCase,
    Scales,
    exact_pressure,
    gravity_number,
    manufactured_bc,
    nondimensionalize,
    realistic_bc,
    redimensionalize,
    source_term,
    write_exact_profile,
)
from ldd_richards.constitutive import PowerLawModel


class TestExact:
    def test_values(self):
        assert exact_pressure(1, 0.0, 0.0, 0.0) == 0.0
        assert exact_pressure(1, -1.0, 0.5, 0.0) == pytest.approx(-1.25)
        assert exact_pressure(2, 0.3, 0.0, 1.0) == pytest.approx(-1.0)

    def test_bad_subdomain(self):
        with pytest.raises(ValueError):
            exact_pressure(3, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            source_term(0, 0.0, 0.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(y=st.floats(0, 1), t=st.floats(0, 5))
    def test_interface_continuity(self, y, t):
        assert exact_pressure(1, 0.0, y, t) == pytest.approx(exact_pressure(2, 0.0, y, t), rel=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(y=st.floats(0, 1), t=st.floats(0, 5))
    def test_zero_interface_flux(self, y, t):
        h = 1e-6
        dpdx = (exact_pressure(1, h, y, t) - exact_pressure(1, -h, y, t)) / (2 * h)
        assert abs(dpdx) < 1e-8

    def test_vectorised(self):
        x = np.array([-0.5, -0.25])
        np.testing.assert_allclose(exact_pressure(1, x, 0.5, 0.1),
                                   [exact_pressure(1, v, 0.5, 0.1) for v in x])


class TestSource:
    def test_values(self):
        assert source_term(1, 0.0, 0.0, 0.0) == pytest.approx(4.0)
        assert source_term(2, 0.5, 1.0, 0.0) == pytest.approx(0.0, abs=1e-15)
        assert source_term(2, 0.5, 0.0, 0.0) == pytest.approx(2.0)

    @staticmethod
    def fd_residual(l, x, y, t, h):
        # d_t S(p) - div(k(S(p)) grad p) by conservative central differences
        model = PowerLawModel(l)

        def p(x_, y_, t_):
            return exact_pressure(l, x_, y_, t_)

        def k(x_, y_):
            return model.mobility(p(x_, y_, t))

        dS = (model.saturation(p(x, y, t + h)) - model.saturation(p(x, y, t - h))) / (2 * h)
        fx = (k(x + h / 2, y) * (p(x + h, y, t) - p(x, y, t))
              - k(x - h / 2, y) * (p(x, y, t) - p(x - h, y, t))) / h**2
        fy = (k(x, y + h / 2) * (p(x, y + h, t) - p(x, y, t))
              - k(x, y - h / 2) * (p(x, y, t) - p(x, y - h, t))) / h**2
        return dS - fx - fy

    @pytest.mark.parametrize("l", [1, 2])
    def test_finite_difference_oracle(self, l):
        rng = np.random.default_rng(10 + l)
        xs = rng.uniform(-0.9, -0.1, 20) if l == 1 else rng.uniform(0.1, 0.9, 20)
        ys = rng.uniform(0.1, 0.9, 20)
        ts = rng.uniform(0.05, 1.0, 20)
        for x, y, t in zip(xs, ys, ts):
            f = source_term(l, x, y, t)
            e1 = abs(f - self.fd_residual(l, x, y, t, 1e-3))
            e2 = abs(f - self.fd_residual(l, x, y, t, 5e-4))
            assert e1 < 1e-5
            assert e2 < 0.35 * e1 + 1e-8


class TestBoundaryData:
    def test_manufactured_trace(self):
        assert manufactured_bc("left", -1.0, 0.5, 0.0) == pytest.approx(-1.25)
        assert manufactured_bc("right", 1.0, 0.0, 0.0) == pytest.approx(0.0)

    @settings(max_examples=30, deadline=None)
    @given(y=st.sampled_from([0.0, 1.0]), t=st.floats(0, 3))
    def test_interface_corners(self, y, t):
        v = manufactured_bc("bottom" if y == 0 else "top", 0.0, y, t)
        assert v == pytest.approx(exact_pressure(1, 0.0, y, t))
        assert v == pytest.approx(exact_pressure(2, 0.0, y, t))

    def test_realistic_values(self):
        assert realistic_bc(0.5, 1.0, 0.1) == pytest.approx(-0.5)
        assert realistic_bc(0.95, 1.0, 0.1) == pytest.approx(-0.1)
        np.testing.assert_array_equal(realistic_bc(np.linspace(0, 1, 7), 0.0, 0.1), -1.0)

    @settings(max_examples=50, deadline=None)
    @given(t=st.floats(1.0, 10.0), eps=st.floats(1e-3, 0.5))
    def test_realistic_continuity_at_branch(self, t, eps):
        yb = (1 - eps) / t
        below = realistic_bc(yb * (1 - 1e-12), t, eps)
        above = realistic_bc(yb * (1 + 1e-12), t, eps)
        assert below == pytest.approx(-eps, abs=1e-9)
        assert above == pytest.approx(-eps, abs=1e-9)

    def test_epsilon_must_be_positive(self):
        with pytest.raises(ValueError):
            realistic_bc(0.5, 1.0, 0.0)
        with pytest.raises(ValueError):
            RealisticCase(dx=0.5, epsilon=-1.0)


class TestNondimensional:
    def test_gravity_number(self):
        assert gravity_number(Scales()) == pytest.approx(0.981, abs=5e-4)
        assert gravity_number(Scales()) == pytest.approx(1e3 * 9.81 * 1.48 / 14800, rel=1e-14)

    def test_identity_scales(self):
        mat = DimensionalVG(0.1, 0.4, 2.0, 3.0, kappa=5.0, mu=1.0)
        m = nondimensionalize(mat, Scales(pressure=1.0, length=1.0, time=1.0))
        assert m.alpha == 2.0 and m.n_hat == 3.0
        assert m.mobility_scale == 5.0
        assert m.S_r == pytest.approx(0.25) and m.phi == 0.4

    def test_mobility_scale_convention(self):
        mat = DimensionalVG(0.1, 0.4, 1e-4, 2.0, kappa=1e-13, mu=1e-3)
        m = nondimensionalize(mat, Scales())
        assert m.mobility_scale == pytest.approx(1e-13 * 14.8e3 * 41440 / (1e-3 * 1.48**2), rel=1e-14)
        assert m.alpha == pytest.approx(1e-4 * 14.8e3)

    def test_literature_soils(self):
        silt = nondimensionalize(SILT_LOAM, Scales())
        sand = nondimensionalize(SANDSTONE, Scales())
        assert silt.mobility_scale == pytest.approx(0.01639, rel=1e-3)
        assert silt.alpha == pytest.approx(0.638, rel=1e-3)
        assert sand.mobility_scale == pytest.approx(0.357, rel=2e-3)
        assert sand.alpha == pytest.approx(1.19, rel=2e-3)

    def test_zero_scale(self):
        with pytest.raises(ValueError):
            Scales(length=0.0)

    @settings(max_examples=100, deadline=None)
    @given(theta_r=st.floats(0.0, 0.3), dtheta=st.floats(0.05, 0.6), alpha=st.floats(1e-6, 1e-2),
           n_hat=st.floats(1.1, 12.0), kappa=st.floats(1e-16, 1e-10), mu=st.floats(1e-4, 1e-2),
           P=st.floats(1e2, 1e6), X=st.floats(0.1, 10.0), T=st.floats(1.0, 1e6))
    def test_round_trip(self, theta_r, dtheta, alpha, n_hat, kappa, mu, P, X, T):
        mat = DimensionalVG(theta_r, theta_r + dtheta, alpha, n_hat, kappa, mu)
        scales = Scales(pressure=-P, length=X, time=T)
        back = redimensionalize(nondimensionalize(mat, scales), scales)
        for name in ("theta_r", "theta_s", "alpha", "n_hat", "kappa", "mu"):
            assert getattr(back, name) == pytest.approx(getattr(mat, name), rel=1e-12, abs=1e-300)


class TestCaseObjects:
    def test_manufactured(self):
        case = ManufacturedCase(dx=0.25)
        assert case.has_exact and case.gravity == 0.0
        assert [m.subdomain_index for m in case.models] == [1, 2]
        p1, p2 = case.cell_values(case.exact, 0.0)
        assert p1.size == case.grid.n_cells(1) and p2.size == case.grid.n_cells(2)
        bc = case.boundary()
        assert all(bc[s].kind == "dirichlet" for s in bc)

    def test_manufactured_mixed(self):
        bc = ManufacturedCase(dx=0.25, boundary_mix="mixed").boundary()
        assert bc["bottom"].kind == "neumann"
        # dp/dy vanishes at y = 0 for both exact branches
        assert bc["bottom"](np.array([-0.5, 0.5]), np.zeros(2), 0.3).tolist() == [0.0, 0.0]
        with pytest.raises(ValueError):
            ManufacturedCase(dx=0.25, boundary_mix="robin")

    def test_realistic(self):
        case = RealisticCase(dx=0.25)
        assert not case.has_exact
        with pytest.raises(NotImplementedError):
            case.exact(1, 0.0, 0.0, 0.0)
        assert case.gravity == pytest.approx(0.981, abs=5e-4)
        bc = case.boundary()
        assert bc["top"].kind == bc["bottom"].kind == "neumann"
        assert bc["right"](np.array([1.0]), np.array([0.3]), 2.0)[0] == -1.0
        assert bc["left"](np.array([-1.0]), np.array([0.5]), 1.0)[0] == pytest.approx(-0.5)
        p1, p2 = case.cell_values(case.initial)
        assert (p1 == -1.0).all() and (p2 == -1.0).all()


def test_write_exact_profile(tmp_path):
    path = tmp_path / "exact.csv"
    write_exact_profile(path, 0.5, y=0.5, n=11)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x", "p_exact"]
    assert len(rows) == 12
    x, p = map(float, rows[1])
    assert x == -1.0 and p == pytest.approx(exact_pressure(1, -1.0, 0.5, 0.5))
