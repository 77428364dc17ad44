import numpy as np
import pytest
from scipy.integrate import quad

from singular_elliptic.integrand import bilinear_a, make_params
from singular_elliptic.quadrature import (
    TestFunction,
    annulus_bump_profile,
    build_rule,
    default_test_family,
)
from singular_elliptic.singular import (
    a_du_sing,
    div_central,
    du_sing,
    flux_sing,
    p_harmonic_residual,
    strong_divergence_residual,
    u_sing,
    w1p_seminorm_sing,
)
from singular_elliptic.tensor import apply_form, form_pair, fro_norm

RNG = np.random.default_rng(303)


def annulus_points(n, r_min=0.05, r_max=3.0, rng=RNG):
    r = rng.uniform(r_min, r_max, n)
    th = rng.uniform(0, 2 * np.pi, n)
    return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)


class TestUnitField:
    def test_examples(self):
        np.testing.assert_allclose(u_sing(np.array([0.5, 0.0])), [1.0, 0.0])
        np.testing.assert_allclose(u_sing(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_unit_norm(self):
        x = annulus_points(10_000, r_min=1e-6)
        np.testing.assert_allclose(np.linalg.norm(u_sing(x), axis=-1), 1.0, rtol=1e-14)

    def test_origin_rejected(self):
        with pytest.raises(ValueError):
            u_sing(np.zeros(2))
        with pytest.raises(ValueError):
            du_sing(np.zeros(2))


class TestGradient:
    def test_closed_form_at_axis(self):
        np.testing.assert_allclose(
            du_sing(np.array([1.0, 0.0])), [[0.0, 0.0], [0.0, 1.0]], atol=1e-15
        )

    def test_frobenius_and_trace(self):
        x = annulus_points(10_000, r_min=1e-3)
        r = np.linalg.norm(x, axis=-1)
        du = du_sing(x)
        np.testing.assert_allclose(fro_norm(du), 1.0 / r, rtol=1e-12)
        np.testing.assert_allclose(
            np.trace(du, axis1=-2, axis2=-1), 1.0 / r, rtol=1e-12
        )

    def test_matches_finite_differences(self):
        x = annulus_points(200, r_min=0.05, r_max=1.5)
        du = du_sing(x)
        h = 1e-6
        fd = np.zeros_like(du)
        for k in range(2):
            step = np.zeros(2)
            step[k] = h
            fd[..., :, k] = (u_sing(x + step) - u_sing(x - step)) / (2 * h)
        np.testing.assert_allclose(du, fd, rtol=1e-6, atol=1e-7)

    def test_x_in_kernel(self):
        # Du x = 0 and hence Du . (u(x)u) = 0
        x = annulus_points(500, r_min=1e-2)
        du = du_sing(x)
        np.testing.assert_allclose(
            np.einsum("nik,nk->ni", du, x), 0.0, atol=1e-12
        )


class TestADu:
    def test_closed_form_vs_contraction(self, params15):
        x = annulus_points(2000, r_min=1e-2)
        closed = a_du_sing(params15, x)
        contracted = apply_form(bilinear_a(params15, u_sing(x)), du_sing(x))
        np.testing.assert_allclose(closed, contracted, rtol=1e-12)

    def test_pairing_value(self, params15):
        x = annulus_points(2000, r_min=1e-2)
        r = np.linalg.norm(x, axis=-1)
        pair = form_pair(bilinear_a(params15, u_sing(x)), du_sing(x), du_sing(x))
        np.testing.assert_allclose(pair, 2.0 / r**2, rtol=1e-12)

    def test_axis_value_p15(self, params15):
        np.testing.assert_allclose(
            a_du_sing(params15, np.array([1.0, 0.0])),
            [[4.0, 0.0], [0.0, 2.0]],
            rtol=1e-14,
        )

    def test_cutoff_inactive_inside_disk(self, params15):
        x = annulus_points(500, r_min=1e-3, r_max=1.0)
        s = fro_norm(du_sing(x)) ** 2  # = |x|^{-2} >= 1
        assert np.all(params15.cutoff.value(s) == 0.0)
        assert np.all(params15.cutoff.deriv(s) == 0.0)


class TestStrongDivergence:
    def test_residual_bound_at_reference_point(self, params15):
        x = np.array([0.5, 0.3])
        res = strong_divergence_residual(params15, x, 1e-4)
        bound = 1e-5 * fro_norm(flux_sing(params15, x)) / np.linalg.norm(x)
        assert np.linalg.norm(res) <= bound

    def test_residual_bound_on_samples(self, params15):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = annulus_points(1, r_min=0.05, r_max=0.95, rng=rng)[0]
            r = np.linalg.norm(x)
            h = min(1e-4, r / 8)
            res = strong_divergence_residual(params15, x, h)
            bound = 1e-5 * fro_norm(flux_sing(params15, x)) / r
            assert np.linalg.norm(res) <= bound

    def test_refinement_decreases_residual(self, params15):
        for x in ([0.5, 0.3], [-0.4, 0.2], [0.1, -0.6], [0.8, 0.05]):
            x = np.array(x)
            h = 1e-3
            r1 = np.linalg.norm(strong_divergence_residual(params15, x, h))
            r2 = np.linalg.norm(strong_divergence_residual(params15, x, h / 2))
            assert r2 <= r1

    def test_stencil_preconditions(self, params15):
        with pytest.raises(ValueError):
            strong_divergence_residual(params15, np.array([0.4, 0.0]), 0.2)
        with pytest.raises(ValueError):
            strong_divergence_residual(params15, np.zeros(2), 1e-4)

    def test_auxiliary_rank_one_identity(self):
        # div(|x|^{-3} x(x)x) = 0; the second-order stencil at h = 1e-5 has a
        # measured truncation floor ~3e-8 near |x| = 0.3, so the bound is 1e-7
        def rank_one(y):
            r = np.linalg.norm(y, axis=-1)
            return np.einsum("...i,...k->...ik", y, y) / r[..., None, None] ** 3

        rng = np.random.default_rng(11)
        pts = annulus_points(100, r_min=0.3, r_max=1.0, rng=rng)
        for x in pts:
            res = div_central(rank_one, x, 1e-5)
            assert np.linalg.norm(res) <= 1e-7

    def test_flux_integrability_scale(self, params15):
        # |flux| <= c |x|^{1-p}: bounded constant on graded rings
        x = annulus_points(5000, r_min=1e-4, r_max=1.0)
        r = np.linalg.norm(x, axis=-1)
        scale = fro_norm(flux_sing(params15, x)) * r ** (params15.p - 1)
        assert scale.max() < 10.0
        # ring-wise integrals of |flux| stay summable toward the origin
        rule = build_rule(200, 32, 4.0)
        rr = np.linalg.norm(rule.nodes, axis=-1)
        total = np.sum(rule.weights * fro_norm(flux_sing(params15, rule.nodes)))
        assert np.isfinite(total)
        inner = np.sum(
            (rule.weights * fro_norm(flux_sing(params15, rule.nodes)))[rr < 0.01]
        )
        assert inner < 0.01 * total + 1.0


class TestSeminorm:
    def test_exact_value(self):
        assert w1p_seminorm_sing(1.5) == pytest.approx(4 * np.pi, rel=1e-15)

    def test_monotone_blowup(self):
        vals = [w1p_seminorm_sing(p) for p in (1.2, 1.5, 1.8, 1.95, 1.999)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_rejects_p_out_of_range(self):
        for p in (2.0, 2.5, 1.0):
            with pytest.raises(ValueError):
                w1p_seminorm_sing(p)

    def test_quadrature_cross_check(self):
        p = 1.5
        rule = build_rule(400, 16, 4.0)
        r = np.linalg.norm(rule.nodes, axis=-1)
        got = np.sum(rule.weights * r**-p)
        assert abs(got - w1p_seminorm_sing(p)) <= 1e-6 * w1p_seminorm_sing(p)


class TestPHarmonic:
    def test_zero_test_function(self):
        rule = build_rule(50, 16, 3.0)
        zero = TestFunction(
            name="zero",
            kind="radial-bump",
            covers_origin=False,
            profile=lambda r: np.zeros_like(r),
            dprofile=lambda r: np.zeros_like(r),
        )
        assert p_harmonic_residual(1.5, zero, rule) == 0.0

    def test_radial_bump_identity(self):
        psi, dpsi = annulus_bump_profile(0.2, 0.8)
        phi = TestFunction(
            name="bump",
            kind="radial-bump",
            covers_origin=False,
            profile=psi,
            dprofile=dpsi,
        )
        rule = build_rule(400, 64, 3.0)
        res = p_harmonic_residual(1.5, phi, rule)
        assert abs(res) <= 1e-6

    def test_family_identity(self):
        rule = build_rule(400, 64, 4.0)
        x, w = rule.nodes, rule.weights
        r = np.linalg.norm(x, axis=-1)
        for phi in default_test_family()[::3]:  # 24 representatives
            lhs = float(
                np.sum(
                    w
                    * r**0.5
                    * np.einsum("nik,nik->n", du_sing(x), phi.dphi(x))
                )
            )
            rhs = float(np.sum(w * r**-1.5 * np.sum(u_sing(x) * phi.phi(x), -1)))
            res = p_harmonic_residual(1.5, phi, rule)
            assert abs(res) <= 1e-6 * (abs(lhs) + abs(rhs) + 1)
