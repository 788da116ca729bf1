"""Closed-form linear machinery, validated against independent oracles.

The oracles live at the top of this file and are deliberately dumb: the
textbook integrals for the periodically forced scalar model, evaluated by
fixed-grid Simpson quadrature with every exponential written out by hand.
`transition_U`, `evolution_measure`, and `ou_apply_G` are checked against
them -- and against the Monte Carlo path engine, which shares no code with
the quadrature -- before anything else in the package leans on them.
"""

import math

import numpy as np
import pytest
from scipy.integrate import simpson

from kolmolab import functions, sde
from kolmolab.errors import DomainError, NoEvolutionMeasureError, StiffnessError
from kolmolab.ou import (
    GaussianMeasure,
    OUModel,
    estimate_omega0,
    evolution_measure,
    forward_transition,
    gauss_hermite_rule,
    ou_apply_G,
    ou_apply_grad_G,
    solve_lyapunov_limit,
    sqrtm_psd,
    transition_U,
)

# ----------------------------------------------------------------------
# Oracles for the scalar model  dX = -(2 + sin t) X dt + sqrt(2) dW.
#
#   U(t, s)        = exp(2 (t-s) - cos t + cos s)         (expanding family)
#   M = U(s, t)    = exp(-2 (t-s) + cos t - cos s)        (kernel contraction)
#   C_{t,s}        = int_s^t U(s, xi)^2 * 2 dxi           (kernel covariance)
#   Q_t            = int_t^inf U(t, xi)^2 * 2 dxi         (measure covariance)
#
# The integrals are done on fixed Simpson grids; the infinite tail is cut
# at t + 30, where the integrand is below exp(-110).
# ----------------------------------------------------------------------


def periodic_U_oracle(t, s):
    return math.exp(2.0 * (t - s) - math.cos(t) + math.cos(s))


def periodic_kernel_cov_oracle(t, s, n=16385):
    xi = np.linspace(s, t, n)
    y = 2.0 * np.exp(2.0 * (-2.0 * (xi - s) + np.cos(xi) - math.cos(s)))
    return float(simpson(y, x=xi))


def periodic_future_cov_oracle(t, horizon=30.0, n=65537):
    xi = np.linspace(t, t + horizon, n)
    y = 2.0 * np.exp(2.0 * (-2.0 * (xi - t) + np.cos(xi) - math.cos(t)))
    return float(simpson(y, x=xi))


def make_noncommuting_model():
    """2-d upper-triangular A(t) whose values at different times do not commute."""

    def A(t):
        return np.array([[-2.0 - math.sin(t), 1.0], [0.0, -1.0 - 0.5 * math.cos(t)]])

    def B(t):
        return math.sqrt(2.0) * np.eye(2)

    return OUModel(dim=2, A=A, B=B, name="triangular")


# ----------------------------------------------------------------------
# transition_U
# ----------------------------------------------------------------------


def test_transition_constant_rate(ou_const_bundle):
    model = ou_const_bundle.model
    for (t, s) in [(1.0, 0.0), (2.5, 1.0), (0.3, -1.2)]:
        U = transition_U(model, t, s)
        assert U.shape == (1, 1)
        assert abs(U[0, 0] - math.exp(t - s)) <= 1e-9 * math.exp(t - s)
    assert np.allclose(transition_U(model, 0.7, 0.7), np.eye(1), atol=1e-13)


def test_transition_periodic_closed_form(ou_periodic_bundle):
    model = ou_periodic_bundle.model
    for (t, s) in [(1.0, 0.0), (2.5, 0.3), (7.1, 2.4), (0.3, 2.5)]:
        got = transition_U(model, t, s)[0, 0]
        want = periodic_U_oracle(t, s)
        assert abs(got - want) <= 1e-8 * abs(want)
    # frozen literals, so a regression cannot hide behind the oracle
    assert transition_U(model, 1.0, 0.0)[0, 0] == pytest.approx(
        11.701273641557519, rel=1e-9
    )
    assert transition_U(model, 0.0, 1.0)[0, 0] == pytest.approx(
        0.08546078235863674, rel=1e-9
    )


def test_transition_cocycle_random_triples(ou_periodic_bundle, rng):
    models = [ou_periodic_bundle.model, make_noncommuting_model()]
    for model in models:
        for _ in range(10):
            s, r, t = np.sort(rng.uniform(-10.0, 10.0, size=3))
            U_ts = transition_U(model, t, s)
            U_tr = transition_U(model, t, r)
            U_rs = transition_U(model, r, s)
            defect = np.linalg.norm(U_tr @ U_rs - U_ts)
            assert defect <= 1e-8 * max(1.0, np.linalg.norm(U_ts))


def test_forward_transition_inverts_U(ou_periodic_bundle):
    model = ou_periodic_bundle.model
    U = transition_U(model, 2.0, 0.5)
    Phi = forward_transition(model, 2.0, 0.5)
    assert np.allclose(U @ Phi, np.eye(1), atol=1e-9)


def test_noncommutativity_is_real():
    # sanity: the 2-d model's A(t) genuinely fails to commute across times,
    # so the cocycle test above is not vacuous
    model = make_noncommuting_model()
    A0, A1 = model.A_mat(0.0), model.A_mat(2.0)
    assert np.linalg.norm(A0 @ A1 - A1 @ A0) > 0.1


# ----------------------------------------------------------------------
# long-time contraction fits
# ----------------------------------------------------------------------


def test_omega_estimate_constant_rate(ou_const_bundle):
    fit = estimate_omega0(ou_const_bundle.model)
    assert abs(fit.omega - (-1.0)) <= 0.01
    assert 1.0 <= fit.M <= 1.1
    assert fit.residual <= 1e-6


def test_omega_estimate_periodic(ou_periodic_bundle):
    fit = estimate_omega0(ou_periodic_bundle.model)
    assert abs(fit.omega - (-2.0)) <= 0.05


def test_omega_estimate_flags_growth():
    model = OUModel(
        dim=1,
        A=lambda t: np.array([[1.0]]),
        B=lambda t: np.array([[math.sqrt(2.0)]]),
        name="expanding",
    )
    fit = estimate_omega0(model)
    assert fit.omega > 0.5
    with pytest.raises(NoEvolutionMeasureError):
        evolution_measure(model, 0.0)


def test_omega_estimate_rejects_short_horizon(ou_const_bundle):
    with pytest.raises(DomainError):
        estimate_omega0(ou_const_bundle.model, horizon=0.5)


# ----------------------------------------------------------------------
# evolution measures
# ----------------------------------------------------------------------


def test_evolution_measure_constant_rate(ou_const_bundle):
    for t in (0.0, 1.7):
        mu = evolution_measure(ou_const_bundle.model, t)
        assert abs(mu.cov[0, 0] - 1.0) <= 1e-8
        assert abs(mu.mean[0]) <= 1e-8
        assert mu.t == t


def test_evolution_measure_with_load():
    from kolmolab import catalog

    mu = catalog.get("ou_const", load=1.0)
    measure = evolution_measure(mu.model, 0.9)
    assert abs(measure.mean[0] - 1.0) <= 1e-8
    assert abs(measure.cov[0, 0] - 1.0) <= 1e-8


def test_evolution_measure_periodic_vs_simpson(ou_periodic_bundle):
    model = ou_periodic_bundle.model
    tol = 1e-8
    for t in (0.0, 0.7, 1.5, 3.9):
        mu = evolution_measure(model, t, tol=tol)
        want = periodic_future_cov_oracle(t)
        assert abs(mu.cov[0, 0] - want) <= 2.0 * tol
        assert abs(mu.mean[0]) <= tol


def test_evolution_measure_periodic_in_time(ou_periodic_bundle):
    model = ou_periodic_bundle.model
    a = evolution_measure(model, 0.5)
    b = evolution_measure(model, 0.5 + 2.0 * math.pi)
    assert abs(a.cov[0, 0] - b.cov[0, 0]) <= 5e-8


# ----------------------------------------------------------------------
# the evolution operator on Gaussians (kernel orientation regressions)
# ----------------------------------------------------------------------


def test_kernel_matrix_is_swapped_transition(ou_periodic_bundle):
    # grad_x G(t,s) applied to the coordinate functions recovers the rows of
    # the kernel matrix M, which must equal U(s, t) -- not U(t, s)
    model = ou_periodic_bundle.model
    s, t = 0.4, 1.7
    g = ou_apply_grad_G(model, t, s, functions.coordinate(0, dim=1), np.array([0.3]))
    want = transition_U(model, s, t)[0, 0]
    assert abs(g[0] - want) <= 1e-9

    model2 = make_noncommuting_model()
    rows = [
        ou_apply_grad_G(model2, t, s, functions.coordinate(i, dim=2), np.zeros(2))
        for i in range(2)
    ]
    M = np.vstack(rows)
    assert np.allclose(M, transition_U(model2, s, t), atol=1e-9)


def test_kernel_moments_close_the_measure_cocycle(ou_periodic_bundle):
    # E[(G(t,s) x^2)](0) = m^2 + C and (G(t,s) x)(0) = m expose the kernel
    # moments; with M from the gradient they must satisfy
    # M Q_t M^T + C = Q_s exactly (this is what makes {mu_t} an evolution
    # system rather than just a family of Gaussians)
    model = ou_periodic_bundle.model
    s, t = 0.4, 1.7
    x2 = functions.quadratic(np.array([[1.0]]))
    m = ou_apply_G(model, t, s, functions.coordinate(0, dim=1), np.array([0.0]))
    C = ou_apply_G(model, t, s, x2, np.array([0.0])) - m**2
    M = ou_apply_grad_G(model, t, s, functions.coordinate(0, dim=1), np.array([0.0]))[0]

    assert abs(C - periodic_kernel_cov_oracle(t, s)) <= 1e-8
    Q_t = evolution_measure(model, t).cov[0, 0]
    Q_s = evolution_measure(model, s).cov[0, 0]
    assert abs(M * Q_t * M + C - Q_s) <= 1e-8


def test_pushforward_identity_quadratics(ou_periodic_bundle):
    # int G(t,s) f dmu_t = int f dmu_s for polynomials of degree <= 2
    model = ou_periodic_bundle.model
    s, t = 0.25, 1.75
    mu_s = evolution_measure(model, s)
    mu_t = evolution_measure(model, t)
    fns = [
        functions.constant(3.0, dim=1),
        functions.affine(np.array([2.0]), c=-1.0),
        functions.quadratic(np.array([[1.0]]), u=np.array([0.5]), c=0.2),
    ]
    for f in fns:
        lhs = mu_t.expectation(lambda xb: ou_apply_G(model, t, s, f, xb))
        rhs = mu_s.expectation(f.value)
        assert abs(lhs - rhs) <= 1e-6


def test_pushforward_identity_with_load():
    from kolmolab import catalog

    bundle = catalog.get("ou_const", load=1.0)
    model = bundle.model
    s, t = 0.0, 1.3
    mu_s = evolution_measure(model, s)
    mu_t = evolution_measure(model, t)
    f = functions.quadratic(np.array([[1.0]]))
    lhs = mu_t.expectation(lambda xb: ou_apply_G(model, t, s, f, xb))
    rhs = mu_s.expectation(f.value)
    assert abs(lhs - rhs) <= 1e-6
    assert abs(mu_s.mean[0] - 1.0) <= 1e-8


def test_apply_G_identities(ou_const_bundle):
    model = ou_const_bundle.model
    f = functions.tanh_ridge(np.array([1.0]), 0.3)
    x = np.array([0.7])
    assert ou_apply_G(model, 1.0, 1.0, f, x) == pytest.approx(float(f(x)), abs=0.0)
    with pytest.raises(DomainError):
        ou_apply_G(model, 0.5, 1.0, f, x)

    one = functions.constant(1.0, dim=1)
    assert abs(ou_apply_G(model, 2.0, 0.5, one, x) - 1.0) <= 1e-12

    # first moment of the constant-rate model decays at the exact rate
    ident = functions.coordinate(0, dim=1)
    for span in (0.5, 1.0, 3.0):
        got = ou_apply_G(model, span, 0.0, ident, np.array([1.4]))
        assert abs(got - 1.4 * math.exp(-span)) <= 1e-10


def test_apply_G_batch_matches_single(ou_periodic_bundle):
    model = ou_periodic_bundle.model
    f = functions.gaussian_bump(np.zeros(1), 1.3)
    xs = np.array([[-1.0], [0.0], [0.8]])
    batch = ou_apply_G(model, 1.2, 0.1, f, xs)
    singles = [ou_apply_G(model, 1.2, 0.1, f, xs[i]) for i in range(3)]
    assert np.allclose(batch, singles, atol=1e-13)


# ----------------------------------------------------------------------
# quadrature vs the path engine: the two evaluators of G(t,s) must agree
# ----------------------------------------------------------------------


def test_mehler_vs_monte_carlo(ou_const_bundle, ou_periodic_bundle):
    from kolmolab import catalog
    from kolmolab.model import reflect_time

    loaded = catalog.get("ou_const", load=1.0)
    battery = [
        functions.tanh_ridge(np.array([1.0]), 0.0),
        functions.gaussian_bump(np.zeros(1), 1.2),
        functions.affine(np.array([1.0])),
    ]
    cfg = sde.SimConfig(dt=1e-3, n_paths=16000, seed=5)
    s, t = 0.3, 1.1
    worst = 0.0
    for bundle in (ou_const_bundle, ou_periodic_bundle, loaded):
        spec = bundle.spec
        model = bundle.model
        for x0 in (0.0, 1.2):
            x = np.array([x0])
            paths = sde.simulate(
                reflect_time(spec, s + t), s, t, x, cfg, with_jacobians=False
            )
            for f in battery:
                mc, se = sde.evaluate_G(spec, s, t, f, x, bundle=paths)
                exact = ou_apply_G(model, t, s, f, x)
                z = abs(mc - exact) / max(se, 1e-12)
                worst = max(worst, z)
    assert worst <= 3.0, f"worst z-score {worst:.2f}"


# ----------------------------------------------------------------------
# limit problem
# ----------------------------------------------------------------------


def test_solve_lyapunov_limit_identity():
    mu = solve_lyapunov_limit(-np.eye(2), math.sqrt(2.0) * np.eye(2))
    assert np.allclose(mu.cov, np.eye(2), atol=1e-12)
    assert np.allclose(mu.mean, 0.0, atol=1e-12)


def test_solve_lyapunov_limit_scalar():
    mu = solve_lyapunov_limit(np.array([[-2.0]]), np.array([[math.sqrt(2.0)]]))
    assert mu.cov[0, 0] == pytest.approx(0.5, abs=1e-12)

    loaded = solve_lyapunov_limit(
        np.array([[-1.0]]), np.array([[math.sqrt(2.0)]]), g_inf=np.array([1.0])
    )
    assert loaded.mean[0] == pytest.approx(1.0, abs=1e-12)


def test_solve_lyapunov_limit_rejects_non_hurwitz():
    with pytest.raises(NoEvolutionMeasureError):
        solve_lyapunov_limit(np.array([[1.0]]), np.array([[1.0]]))
    with pytest.raises(NoEvolutionMeasureError):
        # purely rotational: spectrum on the imaginary axis
        solve_lyapunov_limit(
            np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2)
        )


# ----------------------------------------------------------------------
# Gaussian measure plumbing
# ----------------------------------------------------------------------


def test_gaussian_measure_rejects_bad_cov():
    with pytest.raises(DomainError):
        GaussianMeasure(mean=np.zeros(1), cov=np.array([[-0.5]]))
    with pytest.raises(DomainError):
        GaussianMeasure(mean=np.zeros(2), cov=np.eye(3))


def test_gaussian_density_integrates_to_one():
    mu1 = GaussianMeasure(mean=np.array([0.3]), cov=np.array([[1.4]]))
    xs = np.linspace(-14.0, 14.0, 4001)
    mass = simpson(mu1.pdf(xs[:, None]), x=xs)
    assert abs(mass - 1.0) <= 1e-9

    mu2 = GaussianMeasure(
        mean=np.array([0.1, -0.2]), cov=np.array([[1.0, 0.3], [0.3, 0.8]])
    )
    grid = np.linspace(-9.0, 9.0, 361)
    X, Y = np.meshgrid(grid, grid, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    vals = mu2.pdf(pts).reshape(X.shape)
    mass2 = simpson(simpson(vals, x=grid, axis=1), x=grid)
    assert abs(mass2 - 1.0) <= 1e-6


def test_gaussian_expectation_and_sampling(rng):
    mu = GaussianMeasure(mean=np.array([1.0]), cov=np.array([[1.0]]))
    one = functions.constant(1.0, dim=1)
    assert mu.expectation(one.value) == pytest.approx(1.0, abs=1e-13)
    ident = functions.coordinate(0, dim=1)
    assert mu.expectation(ident.value) == pytest.approx(1.0, abs=1e-12)

    xs = mu.sample(40000, seed=3)
    assert abs(xs.mean() - 1.0) <= 3.0 / math.sqrt(40000) * 1.1
    assert abs(xs.var(ddof=1) - 1.0) <= 3.0 * math.sqrt(2.0 / 40000) * 1.1
    # same seed, same draw
    assert np.array_equal(xs, mu.sample(40000, seed=3))


def test_gauss_hermite_rule_moments():
    for dim, order in [(1, 32), (2, 16)]:
        z, w = gauss_hermite_rule(dim, order)
        assert abs(w.sum() - 1.0) <= 1e-12
        pts = math.sqrt(2.0) * z
        assert abs(w @ pts[:, 0]) <= 1e-12
        assert abs(w @ pts[:, 0] ** 2 - 1.0) <= 1e-12
        assert abs(w @ pts[:, 0] ** 4 - 3.0) <= 1e-11
        if dim == 2:
            assert abs(w @ (pts[:, 0] ** 2 * pts[:, 1] ** 2) - 1.0) <= 1e-11


def test_sqrtm_psd_roundtrip(rng):
    R = rng.normal(size=(3, 3))
    A = R @ R.T + 0.1 * np.eye(3)
    S = sqrtm_psd(A)
    assert np.allclose(S, S.T, atol=1e-12)
    assert np.allclose(S @ S, A, atol=1e-10)
