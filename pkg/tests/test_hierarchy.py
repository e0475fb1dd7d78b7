import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qssep import hierarchy as hy
from qssep import oracles
from qssep.functions import grid, on_grid

SMOOTH = {"kind": "fourier", "const": 0.5, "cos": [[1, 0.2]], "sin": [[2, 0.1]]}


def _herm(rng, m):
    a = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return a + a.conj().T


def _specs(M=64):
    rng = np.random.default_rng(0)
    out = []
    for v in ("periodic", "neumann", "dirichlet"):
        out.append((hy.GridLaplacian(v, M), lambda: np.cos(np.pi * grid(M)) + 0.3 * grid(M)))
        out.append((hy.FiniteEps(hy.heat_kernel(v, 1e-2, M)), lambda: np.sin(2 * grid(M)) + 0.5))
    out.append((hy.KrausFamily.self_adjoint([_herm(rng, 4) for _ in range(2)]), lambda: _herm(rng, 4)))
    out.append((hy.KrausFamily([rng.normal(size=(4, 4)) for _ in range(3)]), lambda: _herm(rng, 4)))
    return out


class TestHeatKernels:
    @pytest.mark.parametrize("variant", ["periodic", "neumann"])
    def test_unit_preserved(self, variant):
        hk = hy.heat_kernel(variant, 5e-3, 128)
        assert np.max(np.abs(hk.unit_image() - 1.0)) <= 1e-8
        assert np.allclose(hk.kernel, hk.kernel.T)
        assert hk.kernel.min() >= -1e-10

    def test_dirichlet_unit_image(self):
        img = hy.heat_kernel("dirichlet", 5e-3, 128).unit_image()
        assert img[0] == 0.0 and img[-1] == 0.0
        assert np.all(img[1:-1] > 0) and np.all(img[1:-1] <= 1 + 1e-8)

    def test_truncation_refused(self):
        with pytest.raises(ValueError, match="n_max"):
            hy.heat_kernel("neumann", 1e-2, 32, n_max=3)
        assert math.exp(-1e-2 * (hy.required_modes(1e-2) * math.pi) ** 2) < 1e-12


class TestLindblad:
    @pytest.mark.parametrize("idx", range(8))
    def test_identities(self, idx):
        spec, draw = _specs()[idx]
        one = spec.unit()
        d, d1, d2 = draw(), draw(), draw()
        scale = max(1.0, float(np.max(np.abs(spec.apply(d)))))
        assert np.max(np.abs(hy.apply_L(spec, one))) <= 1e-10 * scale
        assert np.max(np.abs(hy.apply_L_dressed(spec, d, one, one) - hy.apply_L(spec, d))) <= 1e-10 * scale
        assert np.max(np.abs(hy.apply_L_dressed(spec, one, d1, d2))) <= 1e-10 * scale ** 2
        assert np.max(np.abs(hy.apply_D_defect(spec, one, one, d))) <= 1e-10 * scale
        # failure of the Leibniz rule is twice the defect with a unit middle slot
        m, L = spec.mul, spec.apply
        lhs = L(m(d1, d2)) - m(L(d1), d2) - m(d1, L(d2))
        assert np.max(np.abs(lhs - 2 * hy.apply_D_defect(spec, d1, d2, one))) <= 1e-10 * scale ** 2

    def test_finite_eps_converges_linearly(self):
        M = 128
        x = grid(M)
        f = np.cos(np.pi * x)
        devs = []
        for eps in (1e-2, 5e-3, 2.5e-3):
            mask = hy.interior_mask(M, eps)
            out = hy.apply_L(hy.FiniteEps(hy.heat_kernel("neumann", eps, M)), f)
            exact = hy.apply_L(hy.GridLaplacian("neumann", M), f)
            devs.append(float(np.max(np.abs(out - exact)[mask])))
        for a, b in zip(devs, devs[1:]):
            assert 1.5 <= a / b <= 3.0

    def test_finite_eps_eigenvalue(self):
        # cos(pi x) is a Neumann eigenfunction, so the finite-eps operator
        # multiplies it by (exp(-eps pi^2) - 1) / eps up to quadrature error
        M, eps = 128, 2.5e-3
        f = np.cos(np.pi * grid(M))
        out = hy.apply_L(hy.FiniteEps(hy.heat_kernel("neumann", eps, M)), f)
        lam = math.expm1(-eps * np.pi ** 2) / eps
        assert np.max(np.abs(out - lam * f)) <= 1e-2
        assert np.max(np.abs(out + np.pi ** 2 * f)) <= np.pi ** 4 * eps / 2 + 1e-2

    def test_kraus_double_commutator(self):
        rng = np.random.default_rng(1)
        ell, d = _herm(rng, 5), _herm(rng, 5)
        spec = hy.KrausFamily.self_adjoint([ell])
        comm = lambda a, b: a @ b - b @ a
        assert np.allclose(hy.apply_L(spec, d), -comm(ell, comm(ell, d)), atol=1e-10)

    def test_kraus_defect_from_commutators(self):
        rng = np.random.default_rng(2)
        ells = [_herm(rng, 4) for _ in range(3)]
        d1, d2, d = (_herm(rng, 4) for _ in range(3))
        spec = hy.KrausFamily.self_adjoint(ells)
        comm = lambda a, b: a @ b - b @ a
        expected = -sum(comm(l, d1) @ d @ comm(l, d2) for l in ells)
        assert np.allclose(hy.apply_D_defect(spec, d1, d2, d), expected, atol=1e-10)

    def test_grid_laplacian_dressed_and_defect(self):
        errs_l, errs_d = [], []
        for M in (64, 128):
            x = grid(M)
            d1, d2, D = 1 + 0.3 * np.sin(2 * np.pi * x), 2 + np.cos(2 * np.pi * x), np.cos(4 * np.pi * x)
            spec = hy.GridLaplacian("periodic", M)
            inner = slice(2, -2)
            # d(d1 d(Delta) d2) and d(d1) Delta d(d2) in closed form
            dD = -4 * np.pi * np.sin(4 * np.pi * x)
            dd1, dd2 = 0.6 * np.pi * np.cos(2 * np.pi * x), -2 * np.pi * np.sin(2 * np.pi * x)
            ddD = -16 * np.pi ** 2 * np.cos(4 * np.pi * x)
            exact_l = dd1 * dD * d2 + d1 * ddD * d2 + d1 * dD * dd2
            exact_d = dd1 * D * dd2
            errs_l.append(np.max(np.abs(hy.apply_L_dressed(spec, D, d1, d2) - exact_l)[inner]))
            errs_d.append(np.max(np.abs(hy.apply_D_defect(spec, d1, d2, D) - exact_d)[inner]))
        assert errs_l[0] / errs_l[1] > 3.5 and errs_d[0] / errs_d[1] > 3.5
        assert errs_l[1] < 1.0 and errs_d[1] < 0.1


class TestPhiEvolution:
    def test_periodic_constant_is_fixed(self):
        sol = hy.evolve_phi(hy.product_initial(0.3, 32, 2), "periodic", 0.05)
        assert np.max(np.abs(sol.phis[1] - 0.3)) <= 1e-14
        assert np.max(np.abs(sol.phis[2] - 0.09)) <= 1e-13

    @pytest.mark.parametrize("variant", ["periodic", "neumann", "dirichlet", "open"])
    def test_heat_equation(self, variant):
        M, T = 128, 0.05
        case = {"periodic": dict(const=0.5, cos=[[2, 0.2]], sin=[[4, 0.1]]),
                "neumann": dict(const=0.5, cos=[[1, 0.3], [3, 0.1]]),
                "dirichlet": dict(sin=[[1, 0.4]]),
                "open": dict(n_a=0.2, n_b=0.8, sin=[[1, 0.1]])}[variant]
        x = grid(M)
        init = oracles.heat_solution(variant, 0.0, x, **case)
        drive = hy.BoundaryDrive(case["n_a"], case["n_b"]) if variant == "open" else None
        sol = hy.evolve_phi([init], variant, T, boundary=drive, method="rk4")
        assert np.max(np.abs(sol.phis[1] - oracles.heat_solution(variant, T, x, **case))) <= 1e-4

    def test_open_linear_steady_state(self):
        sol = hy.evolve_phi(hy.product_initial(0.5, 32, 1), "open", 0.0, boundary=hy.BoundaryDrive(0.2, 0.8),
                            steady=True, tol=1e-10)
        assert np.max(np.abs(sol.phis[1] - (0.2 + 0.6 * grid(32)))) <= 1e-9

    def test_open_order_two_steady_state(self):
        M = 64
        sol = hy.evolve_phi(hy.product_initial(0.5, M, 2), "open", 0.0, boundary=hy.BoundaryDrive(0.0, 1.0),
                            steady=True, tol=1e-8)
        x = grid(M)
        assert np.max(np.abs(sol.phis[2] - np.minimum.outer(x, x))) <= 2e-2

    def test_closed_form_kernels_are_steady(self):
        for M in (8, 16):
            phis = oracles.open_steady_phis(M, 3, 0.0, 1.0)
            assert hy.steady_residual(phis, "open", hy.BoundaryDrive(0.0, 1.0)) <= 1e-9 * M ** 2

    def test_relaxation_matches_direct(self):
        M = 16
        drive = hy.BoundaryDrive(0.0, 1.0)
        direct = hy.evolve_phi(hy.product_initial(0.5, M, 2), "open", 0.0, boundary=drive, steady=True, tol=1e-8)
        relax = hy.evolve_phi(hy.product_initial(0.5, M, 2), "open", 0.0, boundary=drive, steady=True, tol=1e-8,
                              mode="relaxation")
        x = grid(M)
        disc = max(np.max(np.abs(direct.phis[2] - np.minimum.outer(x, x))), 1e-8)
        assert np.max(np.abs(direct.phis[2] - relax.phis[2])) <= 2 * disc

    def test_grid_refinement_is_second_order(self):
        init = {"kind": "polynomial", "coeffs": [0, 1.8, -0.8]}
        delta = {"kind": "gaussian", "center": 0.5, "width": 0.15}
        probes = [0.25, 0.5, 0.75]
        vals = []
        for M in (16, 32, 64):
            s = hy.evolve_phi(hy.product_initial(init, M, 2), "open", 0.05, boundary=hy.BoundaryDrive(0, 1),
                              method="rk4")
            c2 = hy.c2_from_phi(s.phis, on_grid(delta, M))
            vals.append(np.concatenate([np.interp(probes, grid(M), s.phis[1]), np.interp(probes, grid(M), c2)]))
        coarse = np.max(np.abs(vals[0] - vals[1]))
        fine = np.max(np.abs(vals[1] - vals[2]))
        assert fine <= 1.25 * coarse / 4

    def test_conservation(self):
        M = 48
        for variant in ("periodic", "neumann"):
            phis0 = [np.ones(())] + [hy.periodize(a) if variant == "periodic" else a
                                    for a in hy.product_initial(SMOOTH if variant == "neumann" else
                                                                {"kind": "fourier", "const": 0.5, "cos": [[2, 0.3]]},
                                                                M, 2)]
            sol = hy.evolve_phi(phis0[1:], variant, 0.3)
            before, after = hy.global_moments(phis0), hy.global_moments(sol.phis)
            assert abs(after["tau1"] - before["tau1"]) <= 1e-3
            assert abs(after["tau2"] - before["tau2"]) <= 1e-3

    def test_stability_bound(self):
        with pytest.raises(hy.StabilityError):
            hy.evolve_phi(hy.product_initial(0.5, 32, 2), "periodic", 0.01, dt=1e-3)
        with pytest.raises(ValueError):
            hy.evolve_phi(hy.product_initial(0.5, 8, 2), "open", 0.01)


class TestLocalMoments:
    def test_periodic_constant_fixed_point(self):
        M = 32
        g1, g2 = hy.local_moments_from_profile(0.4, M, "periodic")
        r1, r2 = hy.local_moment_rhs(g1, g2, "periodic")
        assert max(np.max(np.abs(r1)), np.max(np.abs(r2))) <= 1e-6 * M

    def test_periodic_integral_conserved(self):
        M = 48
        init = {"kind": "fourier", "const": 0.5, "cos": [[2, 0.3]]}
        g1, g2 = hy.local_moments_from_profile(init, M, "periodic")
        sol = hy.evolve_local_moments(g1, g2, "periodic", 0.5)
        # periodic rectangle rule; the grid delta on the diagonal integrates to its full mass
        w = np.full(M + 1, 1.0 / M)
        w[-1] = 0.0
        integ = lambda a: float(w @ a @ w)
        assert abs(integ(sol.g2) - integ(g2)) <= 1e-3

    def test_routes_agree_on_c2(self):
        M = 48
        drive = hy.BoundaryDrive(0.0, 1.0)
        init = {"kind": "polynomial", "coeffs": [0, 1.8, -0.8]}
        phi = hy.evolve_phi(hy.product_initial(init, M, 2), "open", 0.05, boundary=drive)
        g1, g2 = hy.local_moments_from_profile(init, M, "open")
        loc = hy.evolve_local_moments(g1, g2, "open", 0.05, boundary=drive)
        delta = on_grid({"kind": "gaussian", "center": 0.5, "width": 0.15}, M)
        diff = np.abs(hy.c2_from_phi(phi.phis, delta) - hy.c2_from_local_moments(loc.g2, delta))
        assert np.max(diff) <= 2e-2


class TestKernelIO:
    def test_roundtrip(self, tmp_path):
        k = hy.Kernel(2, 8, "auxiliary", np.random.default_rng(0).random((9, 9)), "open", 0.25)
        path, desc = hy.save_kernel(k, tmp_path / "phi2.bin")
        back = hy.load_kernel(path)
        assert np.array_equal(back.values, k.values) and back.descriptor() == k.descriptor()
        assert desc.name == "phi2.bin.json"

    def test_bad_shape(self):
        with pytest.raises(ValueError):
            hy.Kernel(2, 4, "auxiliary", np.zeros((5, 4)))
        with pytest.raises(ValueError):
            hy.Kernel(1, 4, "mystery", np.zeros(5))


@given(st.integers(0, 2**31 - 1))
def test_leibniz_defect_kraus(seed):
    rng = np.random.default_rng(seed)
    spec = hy.KrausFamily([rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) for _ in range(2)])
    d1, d2 = _herm(rng, 3), _herm(rng, 3)
    lhs = spec.apply(d1 @ d2) - spec.apply(d1) @ d2 - d1 @ spec.apply(d2)
    assert np.allclose(lhs, 2 * hy.apply_D_defect(spec, d1, d2, spec.unit()), atol=1e-9)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 0.3))
def test_heat_kernel_symmetric_and_positive(a, b, eps):
    hk = hy.heat_kernel("neumann", eps, 32)
    f = a + b * grid(32)
    assert np.allclose(hk.apply(f).sum() / 32, f.sum() / 32, atol=0.05)
    assert hk.kernel.min() >= -1e-10
