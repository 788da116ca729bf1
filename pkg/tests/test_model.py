"""Operator coefficients, hypothesis audits, and Lyapunov certificates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kolmolab import functions
from kolmolab.errors import (
    CertificateUnavailableError,
    DomainError,
    EvaluationError,
)
from kolmolab.model import (
    MARGIN_TOL,
    ProblemSpec,
    apply_generator,
    audit_hypotheses,
    build_lyapunov_gaussian,
    build_lyapunov_power,
    check_gradients,
    check_monotonicity,
    default_audit_grid,
    reflect_time,
)


def scalar_spec(b, jac_b, r0, Q=None, interval_start=-math.inf, name="test"):
    if Q is None:
        Q = lambda t: np.array([[1.0]])
    return ProblemSpec(
        dim=1,
        interval_start=interval_start,
        Q=Q,
        b=b,
        jac_b=jac_b,
        eta0=1.0,
        Lambda=1.0,
        r0=r0,
        name=name,
    )


def linear_scalar_spec(rate=1.0, r0=None):
    return scalar_spec(
        b=lambda t, x: -rate * x,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -rate),
        r0=-rate if r0 is None else r0,
    )


# ----------------------------------------------------------------------
# generator
# ----------------------------------------------------------------------


def test_apply_generator_quadratic():
    spec = linear_scalar_spec()
    f = functions.quadratic(np.array([[1.0]]))
    # tr(Q D^2 f) + <b, grad f> = 2 - 2 x^2
    assert apply_generator(spec, 0.0, f, np.array([0.0])) == pytest.approx(2.0)
    assert apply_generator(spec, 0.0, f, np.array([1.0])) == pytest.approx(0.0)


def test_apply_generator_2d():
    spec = ProblemSpec(
        dim=2,
        interval_start=-math.inf,
        Q=lambda t: np.eye(2),
        b=lambda t, x: -x,
        jac_b=lambda t, x: np.broadcast_to(-np.eye(2), (x.shape[0], 2, 2)),
        eta0=1.0,
        Lambda=1.0,
        r0=-1.0,
    )
    f = functions.quadratic(np.eye(2))
    x = np.array([1.0, 1.0])  # tr(2 I) - 2 |x|^2 = 4 - 4
    assert apply_generator(spec, 0.0, f, x) == pytest.approx(0.0, abs=1e-12)


def test_apply_generator_batch_shape():
    spec = linear_scalar_spec()
    f = functions.quadratic(np.array([[1.0]]))
    out = apply_generator(spec, 0.5, f, np.array([[0.0], [1.0], [2.0]]))
    assert out.shape == (3,)
    assert np.allclose(out, [2.0, 0.0, -6.0])


def test_apply_generator_needs_hessian():
    spec = linear_scalar_spec()
    no_hess = functions.TestFunction(
        dim=1,
        value=lambda x: np.zeros(x.shape[0]),
        gradient=lambda x: np.zeros_like(x),
        hessian=None,
        meta=functions.FunctionMeta(bounded=True),
    )
    with pytest.raises(DomainError):
        apply_generator(spec, 0.0, no_hess, np.array([0.0]))


def test_generator_respects_time_interval():
    spec = ProblemSpec(
        dim=1,
        interval_start=0.0,
        Q=lambda t: np.array([[1.0]]),
        b=lambda t, x: -x,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
        eta0=1.0,
        Lambda=1.0,
        r0=-1.0,
    )
    f = functions.quadratic(np.array([[1.0]]))
    with pytest.raises(DomainError):
        apply_generator(spec, -1.0, f, np.array([0.0]))


@settings(max_examples=25, deadline=None)
@given(
    a=st.floats(-3.0, 3.0, allow_nan=False),
    b=st.floats(-3.0, 3.0, allow_nan=False),
    x=st.floats(-2.0, 2.0, allow_nan=False),
)
def test_generator_is_linear(a, b, x):
    spec = linear_scalar_spec()
    f1 = functions.quadratic(np.array([[1.0]]))
    f2 = functions.sin_ridge(np.array([1.0]), 0.2)
    combo = functions.combine([a, b], [f1, f2])
    pt = np.array([x])
    direct = apply_generator(spec, 0.0, combo, pt)
    parts = a * apply_generator(spec, 0.0, f1, pt) + b * apply_generator(
        spec, 0.0, f2, pt
    )
    assert abs(direct - parts) <= 1e-12 * (1.0 + abs(direct))


def test_nan_drift_reports_location():
    def bad_drift(t, x):
        v = -x.copy()
        v[np.abs(x[:, 0]) > 5.0] = np.nan
        return v

    spec = scalar_spec(
        b=bad_drift,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
        r0=-1.0,
    )
    with pytest.raises(EvaluationError):
        spec.drift(0.0, np.array([[1.0], [6.0]]))


# ----------------------------------------------------------------------
# hypothesis audit
# ----------------------------------------------------------------------


def test_audit_passes_linear_model(ou_const_bundle):
    report = audit_hypotheses(ou_const_bundle.spec)
    assert report.passed
    # the dissipativity margin of dX = -X dt is exactly zero
    assert abs(report.margins["dissipativity"]) <= 1e-12
    assert report.margins["symmetry"] == 0.0
    assert abs(report.margins["ellipticity_low"]) <= 1e-12
    assert abs(report.margins["ellipticity_high"]) <= 1e-12


def test_audit_fails_overclaimed_rate():
    spec = linear_scalar_spec(rate=1.0, r0=-2.0)
    report = audit_hypotheses(spec)
    assert not report.passed
    assert report.margins["dissipativity"] == pytest.approx(-1.0, abs=1e-12)
    t_w, x_w = report.witnesses["dissipativity"]
    assert np.isfinite(t_w) and x_w.shape == (1,)


def test_audit_cubic_margin_zero(cubic_bundle):
    report = audit_hypotheses(cubic_bundle.spec)
    assert report.passed
    # jac b = -1 - 3 x^2 touches r0 = -1 only at x = 0
    assert abs(report.margins["dissipativity"]) <= 1e-12


def test_audit_flags_asymmetric_diffusion():
    spec = scalar_spec(
        b=lambda t, x: -x,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
        r0=-1.0,
    )
    spec2 = ProblemSpec(
        dim=2,
        interval_start=-math.inf,
        Q=lambda t: np.array([[1.0, 0.3], [0.0, 1.0]]),
        b=lambda t, x: -x,
        jac_b=lambda t, x: np.broadcast_to(-np.eye(2), (x.shape[0], 2, 2)),
        eta0=0.5,
        Lambda=2.0,
        r0=-1.0,
    )
    assert audit_hypotheses(spec).passed
    report = audit_hypotheses(spec2)
    assert not report.passed
    assert report.margins["symmetry"] == pytest.approx(-0.3)


def test_spec_validates_constants():
    with pytest.raises(DomainError):
        linear_scalar_spec().__class__(
            dim=0,
            interval_start=-math.inf,
            Q=lambda t: np.array([[1.0]]),
            b=lambda t, x: -x,
            jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
            eta0=1.0,
            Lambda=1.0,
            r0=-1.0,
        )
    with pytest.raises(DomainError):
        scalar_spec(
            b=lambda t, x: -x,
            jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
            r0=-1.0,
            Q=lambda t: np.array([[1.0]]),
        ).__class__(
            dim=1,
            interval_start=-math.inf,
            Q=lambda t: np.array([[1.0]]),
            b=lambda t, x: -x,
            jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
            eta0=2.0,
            Lambda=1.0,
            r0=-1.0,
        )


# ----------------------------------------------------------------------
# monotonicity
# ----------------------------------------------------------------------


def test_monotonicity_linear_slack_zero():
    report = check_monotonicity(linear_scalar_spec(rate=1.0))
    assert report.passed
    assert abs(report.max_excess) <= 1e-12

    report2 = check_monotonicity(linear_scalar_spec(rate=2.0, r0=-1.0))
    assert report2.passed
    assert report2.max_excess == pytest.approx(-1.0, abs=1e-12)


def test_monotonicity_cubic(cubic_bundle):
    report = check_monotonicity(cubic_bundle.spec)
    assert report.passed
    assert report.max_excess <= MARGIN_TOL


def test_monotonicity_skips_coincident_pairs():
    spec = linear_scalar_spec()
    pairs = np.array([[[1.0], [1.0]], [[2.0], [0.5]]])
    with pytest.warns(UserWarning, match="coincident"):
        report = check_monotonicity(spec, pairs=pairs)
    assert report.passed


def test_monotonicity_catches_violation():
    # drift -x + 2 sin x has slope up to +1 > r0 = -0.5
    spec = scalar_spec(
        b=lambda t, x: -x + 2.0 * np.sin(x),
        jac_b=lambda t, x: (-1.0 + 2.0 * np.cos(x))[..., None],
        r0=-0.5,
    )
    report = check_monotonicity(spec)
    assert not report.passed
    assert report.max_excess > 1.0
    assert report.witness is not None


# ----------------------------------------------------------------------
# Lyapunov certificates
# ----------------------------------------------------------------------


def test_power_certificate_abs_drift():
    # <b(t,x), x> = -|x|^3 gives beta = 3, K1 = 1: delta = 1/6
    spec = scalar_spec(
        b=lambda t, x: -np.abs(x) * x,
        jac_b=lambda t, x: (-2.0 * np.abs(x))[..., None],
        r0=-0.0 - 1e-9,  # not used by the builder
    )
    cert = build_lyapunov_power(spec, beta=3.0, K1=1.0)
    assert cert.delta == pytest.approx(1.0 / 6.0)
    assert cert.kind == "power"
    assert cert.c > 0.0 and cert.a >= 0.0


def test_power_certificate_cubic(cubic_bundle):
    cert = build_lyapunov_power(cubic_bundle.spec, beta=4.0, K1=1.0)
    assert cert.delta == pytest.approx(1.0 / 8.0)
    # certificate inequality A(t) phi <= a - c phi holds wherever phi is
    # representable (exp(|x|^4 / 8) overflows past |x| ~ 8.6)
    spec = cubic_bundle.spec
    grid = default_audit_grid(spec, box_radius=8.0)
    for t in grid.ts[::8]:
        lhs = apply_generator(spec, t, cert.phi, grid.xs)
        rhs = cert.a - cert.c * cert.phi(grid.xs)
        assert np.all(np.isfinite(lhs))
        assert np.all(lhs <= rhs + 1e-9 * np.maximum(1.0, np.abs(rhs)))


def test_power_certificate_rejects_bad_args(cubic_bundle):
    with pytest.raises(DomainError):
        build_lyapunov_power(cubic_bundle.spec, beta=1.5, K1=1.0)
    with pytest.raises(DomainError):
        build_lyapunov_power(cubic_bundle.spec, beta=3.0, K1=0.0)


def test_power_certificate_rejects_expanding_drift():
    spec = scalar_spec(
        b=lambda t, x: x,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), 1.0),
        r0=-1.0,
    )
    with pytest.raises(CertificateUnavailableError) as err:
        build_lyapunov_power(spec, beta=3.0, K1=1.0)
    assert err.value.witness is not None


def test_gaussian_certificate_linear(ou_const_bundle):
    cert = build_lyapunov_gaussian(ou_const_bundle.spec, ybar=np.zeros(1), K2=0.0)
    assert cert.delta == pytest.approx(0.25)
    assert cert.kind == "gaussian"
    spec = ou_const_bundle.spec
    grid = default_audit_grid(spec)
    for t in grid.ts[::8]:
        lhs = apply_generator(spec, t, cert.phi, grid.xs)
        rhs = cert.a - cert.c * cert.phi(grid.xs)
        assert np.all(lhs <= rhs + 1e-9 * np.maximum(1.0, np.abs(rhs)))


def test_gaussian_certificate_periodic_forcing():
    spec = scalar_spec(
        b=lambda t, x: -x + math.sin(t),
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
        r0=-1.0,
    )
    cert = build_lyapunov_gaussian(spec, ybar=np.zeros(1), K2=1.0)
    assert cert.delta == pytest.approx(0.25)


def test_gaussian_certificate_rejects_wrong_K2():
    spec = scalar_spec(
        b=lambda t, x: -x + 1.0,
        jac_b=lambda t, x: np.full((x.shape[0], 1, 1), -1.0),
        r0=-1.0,
    )
    with pytest.raises(CertificateUnavailableError):
        build_lyapunov_gaussian(spec, ybar=np.zeros(1), K2=0.0)


def test_certificate_requires_valid_shape():
    from kolmolab.model import LyapunovCertificate

    phi = functions.constant(1.0, dim=1)
    with pytest.raises(DomainError):
        LyapunovCertificate(phi=phi, a=-1.0, c=1.0, delta=0.1, kind="power")
    with pytest.raises(DomainError):
        LyapunovCertificate(phi=phi, a=0.0, c=0.0, delta=0.1, kind="power")


# ----------------------------------------------------------------------
# time reflection and derivative checks
# ----------------------------------------------------------------------


def test_reflect_time_mirrors_coefficients(ou_periodic_bundle):
    spec = ou_periodic_bundle.spec
    mirrored = reflect_time(spec, 3.0)
    x = np.array([[0.7]])
    for tau in (0.2, 1.1, 2.9):
        assert np.allclose(mirrored.b(tau, x), spec.b(3.0 - tau, x))
        assert np.allclose(mirrored.Q(tau), spec.Q(3.0 - tau))
        assert np.allclose(mirrored.jac_b(tau, x), spec.jac_b(3.0 - tau, x))
    assert mirrored.interval_start == -math.inf


def test_reflect_time_fixes_autonomous_drift(cubic_bundle):
    spec = cubic_bundle.spec
    mirrored = reflect_time(spec, 5.0)
    x = np.array([[1.3], [-0.4]])
    assert np.allclose(mirrored.b(0.3, x), spec.b(0.3, x))


def test_check_gradients_on_library():
    fns = functions.bounded_test_family(dim=1)
    xs = np.linspace(-3.0, 3.0, 41)[:, None]
    for f in fns:
        assert check_gradients(f, xs) <= 1e-5

    fns2 = functions.bounded_test_family(dim=2)
    rng = np.random.default_rng(4)
    xs2 = rng.uniform(-3.0, 3.0, size=(50, 2))
    for f in fns2:
        assert check_gradients(f, xs2) <= 1e-5


def test_check_gradients_flags_wrong_gradient():
    bad = functions.TestFunction(
        dim=1,
        value=lambda x: np.tanh(x[:, 0]),
        gradient=lambda x: 2.0 / np.cosh(x) ** 2,  # off by a factor of 2
        hessian=None,
        meta=functions.FunctionMeta(bounded=True),
    )
    xs = np.linspace(-2.0, 2.0, 21)[:, None]
    assert check_gradients(bad, xs) > 0.1
