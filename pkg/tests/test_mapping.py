"""Forward/inverse map, the system oracle, and domain bounds."""

import numpy as np
import pytest

from preftrans.cost import CostParams, xi_star2
from preftrans.errors import (
    BeyondP1,
    GammaOutOfRange,
    NegativeDiscriminant,
    NoConvergence,
    OutsideOmega,
    YPHatZero,
)
from preftrans.mapping import (
    Xi1,
    Xi2,
    aux_coeffs,
    build_d_gamma,
    discriminant,
    domain_bounds,
    forward_batch,
    forward_explicit,
    forward_newton,
    inverse_batch,
    inverse_map,
    jacobian_xi1,
    p1_local,
    residual_H,
    reach_dots,
    solve_xi1,
)
from preftrans.sphere import (
    TangentVector,
    angular_gap,
    geodesic_distance,
    random_tangent,
    random_unit,
    tangent_basis,
)


def random_state(params, rng, scale):
    x = random_unit(rng)
    p = random_tangent(x, rng, scale=scale)
    return x, p


# ---------------------------------------------------------------- residual_H

def test_residual_trivial_branch(params_half):
    xe = 0.37
    xi1 = Xi1(s=1.0, yp=0.0, yq=0.0, ye=xe)
    xi2 = Xi2(pn=0.0, xe=xe, ep=0.5, eq=-0.2)
    np.testing.assert_allclose(residual_H(xi1, xi2, params_half), 0.0, atol=1e-15)


def test_residual_self_consistency(params_half, rng):
    for _ in range(100):
        xe, ep, eq = rng.uniform(-0.9, 0.9, size=3)
        xi2 = Xi2(pn=rng.uniform(0.0, 0.15), xe=xe, ep=ep, eq=eq)
        xi1 = solve_xi1(params_half, xi2)
        assert np.abs(residual_H(xi1, xi2, params_half)).max() < 1e-9


def test_residual_quadratic_row(params_half):
    xi2 = Xi2(pn=0.08, xe=0.2, ep=0.3, eq=-0.4)
    xi1 = solve_xi1(params_half, xi2)
    bumped = Xi1(s=xi1.s + 0.01, yp=xi1.yp, yq=xi1.yq, ye=xi1.ye)
    r3 = residual_H(bumped, xi2, params_half)[2]
    assert r3 == pytest.approx(2.0 * xi1.s * 0.01, rel=0.02)


def test_residual_outside_omega(params_half):
    xi1 = Xi1(s=0.1, yp=0.5, yq=0.0, ye=0.0)
    xi2 = Xi2(pn=0.1, xe=0.0, ep=1.0, eq=0.0)
    with pytest.raises(OutsideOmega):
        residual_H(xi1, xi2, params_half)


# ------------------------------------------------------------------- forward

def test_forward_zero_p(params_half, rng):
    x = random_unit(rng)
    y = forward_explicit(x, np.zeros(3), params_half)
    np.testing.assert_allclose(y, x)


def test_forward_antipodal_closed_form(params_half, rng):
    # at x = -e_hat: x.y = (1 - rho^2)/(1 + rho^2), rho = ||p|| (1+a)/(1-a)
    a = params_half.a
    x = -params_half.e_hat
    for _ in range(20):
        p = random_tangent(x, rng, scale=0.12)
        y = forward_explicit(x, p, params_half)
        rho = np.linalg.norm(p) * (1 + a) / (1 - a)
        assert x @ y == pytest.approx((1 - rho**2) / (1 + rho**2), abs=1e-13)


def test_forward_unit_norm_and_residual(params_half, bounds_half, rng):
    for _ in range(200):
        x, p = random_state(params_half, rng, 0.9 * bounds_half.p_star)
        y = forward_explicit(x, p, params_half)
        assert abs(np.linalg.norm(y) - 1.0) < 1e-12


def test_forward_isotropy_at_a0(params_iso, rng):
    # s depends only on ||p|| when a = 0
    x = random_unit(rng)
    t1, t2 = tangent_basis(x)
    pn = 0.37
    values = []
    for ang in np.linspace(0, 2 * np.pi, 11):
        p = pn * (np.cos(ang) * t1 + np.sin(ang) * t2)
        values.append(x @ forward_explicit(x, p, params_iso))
    assert np.ptp(values) < 1e-12
    assert values[0] == pytest.approx((1 - pn**2) / (1 + pn**2), abs=1e-14)


def test_forward_beyond_p1(params_half, rng):
    x = random_unit(rng)
    t1, _ = tangent_basis(x)
    lim = float(p1_local(params_half, x @ params_half.e_hat))
    with pytest.raises(BeyondP1):
        forward_explicit(x, 1.01 * lim * t1, params_half)


def test_negative_discriminant_cube_cell(params_half):
    # cells at the coefficient-blowup rim of the hypothesis cube go negative
    xe, ep, eq = -1.0, 1.0, -0.9047619047619048
    pn = 0.4999999995 * 1.0000000001
    d = discriminant(params_half, pn, xe, ep, eq)
    assert d < 0
    with pytest.raises(NegativeDiscriminant):
        solve_xi1(params_half, Xi2(pn=pn, xe=xe, ep=ep, eq=eq))


def test_aux_coeffs_denominator_guard(params_half):
    with pytest.raises(BeyondP1):
        aux_coeffs(params_half, Xi2(pn=0.51, xe=-1.0, ep=1.0, eq=0.0))


# -------------------------------------------------------------------- newton

def test_newton_zero_iterations_at_origin(params_half, rng):
    x = random_unit(rng)
    y = forward_newton(x, np.zeros(3), params_half)
    np.testing.assert_allclose(y, x)


def test_newton_matches_explicit(params_half, bounds_half, rng):
    worst = 0.0
    for _ in range(300):
        x, p = random_state(params_half, rng, 0.9 * bounds_half.p_star)
        y1 = forward_explicit(x, p, params_half)
        y2 = forward_newton(x, p, params_half)
        worst = max(worst, angular_gap(y1, y2))
    assert worst < 1e-9


def test_newton_beyond_domain(params_half, rng):
    # past p1 the explicit coefficients blow up; the system itself may or
    # may not remain solvable, so Newton either fails or returns a state
    # that genuinely solves it
    hit_error = 0
    for _ in range(10):
        x = random_unit(rng)
        t1, _ = tangent_basis(x)
        lim = float(p1_local(params_half, x @ params_half.e_hat))
        try:
            y = forward_newton(x, 1.05 * lim * t1, params_half)
        except (NoConvergence, NegativeDiscriminant, BeyondP1, OutsideOmega):
            hit_error += 1
        else:
            assert abs(np.linalg.norm(y) - 1.0) < 1e-12
    assert hit_error > 0


def test_jacobian_matches_fd(params_half):
    xi2 = Xi2(pn=0.09, xe=0.25, ep=-0.33, eq=0.41)
    xi1 = solve_xi1(params_half, xi2)
    J = jacobian_xi1(xi1, xi2, params_half)
    h = 1e-7
    v0 = xi1.as_array()
    for k in range(4):
        dv = np.zeros(4)
        dv[k] = h
        rp = residual_H(Xi1(*(v0 + dv)), xi2, params_half)
        rm = residual_H(Xi1(*(v0 - dv)), xi2, params_half)
        np.testing.assert_allclose((rp - rm) / (2 * h), J[:, k], atol=1e-6)


# ------------------------------------------------------------------- inverse

def test_inverse_identity(params_half, rng):
    x = random_unit(rng)
    p = inverse_map(x, x, params_half)
    assert p.norm == 0.0


def test_roundtrip(params_half, bounds_half, rng):
    worst = 0.0
    for _ in range(500):
        x, p = random_state(params_half, rng, 0.9 * bounds_half.p_star)
        y = forward_explicit(x, p, params_half)
        p_back = inverse_map(x, y, params_half)
        worst = max(worst, np.linalg.norm(p_back.vec - p))
    assert worst < 1e-9


def test_inverse_antipodal_closed_form(params_half):
    # invert s(||p||) at x = -e_hat and confirm by the forward map
    a = params_half.a
    x = -params_half.e_hat
    t1, _ = tangent_basis(x)
    p_true = 0.1 * t1
    y = forward_explicit(x, p_true, params_half)
    s = float(x @ y)
    pn_closed = ((1 - a) / (1 + a)) * np.sqrt((1 - s) / (1 + s))
    assert pn_closed == pytest.approx(0.1, abs=1e-13)
    p_rec = inverse_map(x, y, params_half)
    np.testing.assert_allclose(forward_explicit(x, p_rec, params_half), y, atol=1e-12)


def test_inverse_outside_omega(params_half):
    e = params_half.e_hat
    t1, _ = tangent_basis(e)
    # x.y = 0.2 < xi_star2 = 1/3
    x = e
    y = 0.2 * e + np.sqrt(1 - 0.04) * t1
    with pytest.raises(OutsideOmega):
        inverse_map(x, y, params_half)


def test_inverse_rows_of_system(params_half, rng):
    # p = -grad c satisfies the first two system rows by construction
    from preftrans.cost import grad_x_cost
    from preftrans.sphere import tangent_frame

    for _ in range(20):
        x, p = random_state(params_half, rng, 0.12)
        y = forward_explicit(x, p, params_half)
        g = grad_x_cost(params_half, x, y)
        pv = -g.vec
        fr = tangent_frame(x, pv)
        from preftrans.cost import deriv_stack, dots
        s, t, u = dots(params_half, x, y)
        st = deriv_stack(params_half, (s, t, u))
        e = params_half.e_hat
        r1 = np.linalg.norm(pv) + st.F1 * (y @ fr.p_hat) + st.F2 * (e @ fr.p_hat)
        r2 = st.F1 * (y @ fr.q_hat) + st.F2 * (e @ fr.q_hat)
        assert abs(r1) < 1e-12 and abs(r2) < 1e-12


def test_injectivity_in_gamma_ball(params_half, bounds_half, rng):
    x = random_unit(rng)
    gamma = 0.9 * bounds_half.p_star
    P = np.stack([random_tangent(x, rng, scale=gamma) for _ in range(1000)])
    X = np.broadcast_to(x, P.shape)
    Y = forward_batch(params_half, X, P)
    d2 = np.sum((Y[:, None, :] - Y[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(len(Y), k=1)
    assert np.sqrt(d2[iu].min()) > 1e-8


def test_batch_matches_scalar(params_half, rng):
    X = random_unit(rng, 50)
    P = np.stack([random_tangent(x, rng, scale=0.15) for x in X])
    Y = forward_batch(params_half, X, P)
    for k in range(50):
        np.testing.assert_allclose(Y[k], forward_explicit(X[k], P[k], params_half), atol=1e-14)
    Pb = inverse_batch(params_half, X, Y)
    np.testing.assert_allclose(Pb, P, atol=1e-12)


# ------------------------------------------------------------- domain bounds

def test_p1_value(params_half):
    a = params_half.a
    assert p1_local(params_half, -1.0) == pytest.approx((1 - a * a) / (2 * a * (1 + a)))
    assert p1_local(params_half, -1.0) == pytest.approx(0.5)


def test_discriminant_at_zero_p(params_half, rng):
    xe, ep, eq = rng.uniform(-1, 1, size=3)
    assert float(discriminant(params_half, 0.0, xe, ep, eq)) == pytest.approx(1.0, abs=1e-12)


def test_domain_bounds_structure(bounds_half):
    b = bounds_half
    assert b.p1 == pytest.approx(0.5)
    assert b.xi_star2 == pytest.approx(1.0 / 3.0)
    assert b.xi_star == max(b.xi_star1, b.xi_star2)
    assert b.p_star == pytest.approx(min(b.p_tilde1, b.p_tilde2), rel=1e-9)
    assert b.p_star <= b.p_tilde1
    assert 0.15 < b.p_star < 0.25
    assert b.support_ball_radius == pytest.approx(np.arccos(b.xi_star) / 2.0)


def test_domain_bounds_grid_validation(params_half):
    with pytest.raises(ValueError):
        domain_bounds(params_half, grid_n=16)


def test_reachable_s_respects_xi_star(params_half, bounds_half, rng):
    # every forward image with ||p|| <= p_star stays at or above xi_star
    for _ in range(300):
        x, p = random_state(params_half, rng, bounds_half.p_star)
        y = forward_explicit(x, p, params_half)
        assert x @ y >= bounds_half.xi_star - 1e-9


# ----------------------------------------------------------------- d_gamma

def test_d_gamma_radii_shrink_to_zero(params_half, bounds_half):
    tiny = build_d_gamma(params_half, 1e-7, grid_n=32, bounds=bounds_half)
    assert tiny.radius.max() < 1e-5


def test_d_gamma_monotone_in_gamma(params_half, bounds_half):
    gammas = np.linspace(0.1, 0.9, 5) * bounds_half.p_star
    prev = None
    for g in gammas:
        table = build_d_gamma(params_half, float(g), grid_n=32, bounds=bounds_half)
        if prev is not None:
            assert np.all(table.radius >= prev - 1e-12)
        prev = table.radius


def test_d_gamma_out_of_range(params_half, bounds_half):
    with pytest.raises(GammaOutOfRange):
        build_d_gamma(params_half, bounds_half.p_star, grid_n=32, bounds=bounds_half)
    with pytest.raises(GammaOutOfRange):
        build_d_gamma(params_half, 0.0, grid_n=32, bounds=bounds_half)


def test_reach_dots_matches_forward(params_half, rng):
    e = params_half.e_hat
    t1e, _ = tangent_basis(e)
    th, ps, gamma = 2.1, 0.8, 0.05
    x = np.cos(th) * e + np.sin(th) * t1e
    tb1, tb2 = tangent_basis(x)
    # build p_hat at angle psi from the "toward e" tangent direction
    e_t = e - (e @ x) * x
    e_t /= np.linalg.norm(e_t)
    w = np.cross(x, e_t)
    d = np.cos(ps) * e_t + np.sin(ps) * w
    y = forward_explicit(x, gamma * d, params_half)
    assert float(reach_dots(params_half, gamma, th, ps)) == pytest.approx(float(x @ y), abs=1e-12)
