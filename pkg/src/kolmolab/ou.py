"""Linear-drift (Ornstein-Uhlenbeck type) models with exact machinery.

An OU model is the operator family

    (A(t) zeta)(x) = (1/2) Tr(B(t) B(t)^T D^2 zeta) + <A(t) x + g(t), grad zeta>,

so the diffusion of the general convention is Q(t) = B(t) B(t)^T / 2.

Everything is driven by one two-parameter family ``U``:

* ``transition_U(model, t, s)`` solves, in the FIRST argument,

      d/dt U(t, s) = -A(t) U(t, s),   U(s, s) = I.

  Its decay (rate ``omega0 < 0``) builds the evolution system of measures

      Q_t = int_t^inf U(t, xi) B(xi) B(xi)^T U(t, xi)^T dxi,
      g_t = int_t^inf U(t, xi) g(xi) dxi,          mu_t = N(g_t, Q_t),

  and the SAME family, read with swapped arguments, is the kernel matrix of
  the evolution operator:

      (G(t, s) f)(x) = E[ f(U(s,t) x + m_{t,s} + Z) ],   Z ~ N(0, C_{t,s}),
      m_{t,s} = int_s^t U(s,xi) g(xi) dxi,
      C_{t,s} = int_s^t U(s,xi) B(xi) B(xi)^T U(s,xi)^T dxi.

  U(s, t) solves d/dt Y = Y A(t), Y(s) = I: every kernel moment is anchored
  at s.  With these moments the pushforward of mu_t through the kernel is

      U(s,t) Q_t U(s,t)^T + C_{t,s} = Q_s        (cocycle U(s,t)U(t,xi)
                                                  = U(s,xi), exactly),

  so the invariance identity int G(t,s)f dmu_t = int f dmu_s holds by
  construction, not approximately.

* ``forward_transition(model, t, s)`` is the state transition Phi of the
  sample paths dx/dt = A(t) x (d/dt Phi = A(t) Phi, Phi(s,s) = I).  It
  governs the simulator's flow, NOT the kernel of G: the characteristics of
  the forward equation sweep the coefficient clock from t down to s, so the
  path representation of G(t, s) simulates the mirrored-clock problem (see
  :mod:`kolmolab.sde`).  For commuting families A(t) -- in particular every
  diagonal catalog entry -- Phi(t, s) and U(s, t) coincide; a regression
  test pins the general identity between ``transition_U`` and the kernel
  matrix instead.

Gaussian expectations use tensorized Gauss-Hermite quadrature (default order
64 per dimension, desk scale d <= 3).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate

from .errors import (
    DomainError,
    NoEvolutionMeasureError,
    StiffnessError,
)
from .model import ProblemSpec, as_batch

__all__ = [
    "GaussianMeasure",
    "OUModel",
    "OmegaEstimate",
    "transition_U",
    "forward_transition",
    "estimate_omega0",
    "evolution_measure",
    "ou_apply_G",
    "ou_apply_grad_G",
    "solve_lyapunov_limit",
    "sqrtm_psd",
    "gauss_hermite_rule",
]

_ODE_METHOD = "DOP853"


def sqrtm_psd(M):
    """Symmetric PSD square root via an eigendecomposition."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


@lru_cache(maxsize=32)
def gauss_hermite_rule(dim, order):
    """Tensorized Gauss-Hermite rule normalized for standard normals.

    Returns (z, w) with z of shape (order**dim, dim) and weights summing to
    one, so that E[h(N(0, I))] ~= sum_k w_k h(sqrt(2) z_k).
    """
    nodes, weights = np.polynomial.hermite.hermgauss(order)
    weights = weights / math.sqrt(math.pi)
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(z.shape[0])
    wg = np.meshgrid(*([weights] * dim), indexing="ij")
    for g in wg:
        w = w * g.ravel()
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@dataclass(frozen=True)
class GaussianMeasure:
    """N(mean, cov), optionally tagged with the time it belongs to."""

    mean: np.ndarray
    cov: np.ndarray
    t: Optional[float] = None

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise DomainError(
                f"covariance shape {cov.shape} does not match mean {mean.shape}"
            )
        w = np.linalg.eigvalsh(self.cov)
        if w[0] <= 0.0:
            raise DomainError(
                f"covariance must be positive definite (min eigenvalue {w[0]:.3e})"
            )

    @property
    def dim(self):
        return self.mean.shape[0]

    def _sqrt_cov(self):
        return sqrtm_psd(self.cov)

    def quad_points(self, order=64):
        z, w = gauss_hermite_rule(self.dim, order)
        pts = self.mean + math.sqrt(2.0) * (z @ self._sqrt_cov().T)
        return pts, w

    def expectation(self, f, order=64):
        """E[f] by Gauss-Hermite; ``f`` is a TestFunction or a batch callable."""
        pts, w = self.quad_points(order)
        vals = np.asarray(f(pts), dtype=float)
        return float(w @ vals)

    def sample(self, n, seed=0):
        rng = np.random.Generator(np.random.Philox(key=int(seed)))
        z = rng.standard_normal((int(n), self.dim))
        return self.mean + z @ self._sqrt_cov().T

    def pdf(self, x):
        xb, single = as_batch(x, self.dim)
        dev = xb - self.mean
        prec = np.linalg.inv(self.cov)
        quad = np.einsum("ni,ij,nj->n", dev, prec, dev)
        norm = (2.0 * math.pi) ** (-self.dim / 2.0) / math.sqrt(
            np.linalg.det(self.cov)
        )
        out = norm * np.exp(-0.5 * quad)
        return out[0] if single else out

    def as_dict(self):
        return {
            "mean": self.mean.tolist(),
            "covariance": self.cov.tolist(),
            "t": self.t,
        }


@dataclass(frozen=True)
class OUModel:
    """Time-dependent linear drift A(t) x + g(t), additive noise B(t)."""

    dim: int
    A: Callable[[float], np.ndarray]
    B: Callable[[float], np.ndarray]
    g: Optional[Callable[[float], np.ndarray]] = None
    interval_start: float = -math.inf
    name: str = ""

    def A_mat(self, t):
        M = np.asarray(self.A(t), dtype=float).reshape(self.dim, self.dim)
        return M

    def B_mat(self, t):
        M = np.asarray(self.B(t), dtype=float).reshape(self.dim, self.dim)
        return M

    def g_vec(self, t):
        if self.g is None:
            return np.zeros(self.dim)
        return np.asarray(self.g(t), dtype=float).reshape(self.dim)

    def base_time(self):
        return 0.0 if not np.isfinite(self.interval_start) else self.interval_start + 0.1

    def ellipticity(self, ts=None):
        """(eta0, Lambda) measured from Q(t) = B B^T / 2 over a time grid."""
        if ts is None:
            ts = self.base_time() + np.linspace(0.0, 20.0, 64)
        lo, hi = math.inf, -math.inf
        for t in ts:
            Bm = self.B_mat(t)
            w = np.linalg.eigvalsh(0.5 * (Bm @ Bm.T))
            lo = min(lo, float(w[0]))
            hi = max(hi, float(w[-1]))
        return lo, hi

    def dissipativity_rate(self, ts=None):
        """sup_t lambda_max(sym A(t)) -- the declared r0 must dominate this."""
        if ts is None:
            ts = self.base_time() + np.linspace(0.0, 20.0, 64)
        worst = -math.inf
        for t in ts:
            Am = self.A_mat(t)
            w = np.linalg.eigvalsh(0.5 * (Am + Am.T))
            worst = max(worst, float(w[-1]))
        return worst

    def as_problem_spec(self, eta0=None, Lambda=None, r0=None, name=None):
        lo, hi = self.ellipticity()
        rate = self.dissipativity_rate()
        model = self

        def b(t, x):
            return x @ model.A_mat(t).T + model.g_vec(t)

        def jac_b(t, x):
            return np.broadcast_to(
                model.A_mat(t), (x.shape[0], model.dim, model.dim)
            ).copy()

        return ProblemSpec(
            dim=self.dim,
            interval_start=self.interval_start,
            Q=lambda t: 0.5 * model.B_mat(t) @ model.B_mat(t).T,
            b=b,
            jac_b=jac_b,
            eta0=eta0 if eta0 is not None else lo,
            Lambda=Lambda if Lambda is not None else hi,
            r0=r0 if r0 is not None else rate,
            name=name if name is not None else (self.name or "ou"),
        )


def _solve_matrix_ode(rhs, y0, t0, t1, rtol=1e-10, atol=1e-13, dense=False):
    sol = integrate.solve_ivp(
        rhs,
        (t0, t1),
        y0,
        method=_ODE_METHOD,
        rtol=rtol,
        atol=atol,
        dense_output=dense,
    )
    if not sol.success:
        raise StiffnessError(
            f"transition integration failed over [{t0}, {t1}]: {sol.message}; "
            "try a smaller span"
        )
    return sol


def transition_U(model, t, s, rtol=1e-10):
    """U(t, s) solving d/dt U = -A(t) U, U(s, s) = I (integrated in t)."""
    d = model.dim
    if t == s:
        return np.eye(d)

    def rhs(tau, y):
        return (-model.A_mat(tau) @ y.reshape(d, d)).ravel()

    sol = _solve_matrix_ode(rhs, np.eye(d).ravel(), s, t, rtol=rtol)
    return sol.y[:, -1].reshape(d, d)


def forward_transition(model, t, s, rtol=1e-10):
    """Phi(t, s) solving d/dt Phi = A(t) Phi, Phi(s, s) = I.

    This is the state transition of the sample paths (it gives the closed
    forms the simulator is checked against), not the kernel matrix of the
    evolution operator; that matrix is U(s, t) -- see the module docstring.
    """
    d = model.dim
    if t == s:
        return np.eye(d)

    def rhs(tau, y):
        return (model.A_mat(tau) @ y.reshape(d, d)).ravel()

    sol = _solve_matrix_ode(rhs, np.eye(d).ravel(), s, t, rtol=rtol)
    return sol.y[:, -1].reshape(d, d)


class OmegaEstimate(NamedTuple):
    omega: float
    M: float
    residual: float


def estimate_omega0(model, horizon=12.0, samples=96, n_bases=4, t0=None):
    """Least-squares estimate of the decay exponent of U.

    Samples log ||U(t, t + gap)|| for gaps in [1, horizon] from ``n_bases``
    base times and fits log M + omega * gap.  Returns the fitted
    (omega, M >= 1) together with the maximal absolute fit residual; callers
    decide what to do with a nonnegative omega (no decay).
    """
    if horizon <= 1.0:
        raise DomainError("horizon must exceed the minimal fitted gap 1.0")
    base0 = t0 if t0 is not None else model.base_time()
    bases = base0 + np.linspace(0.0, 2.0 * math.pi, n_bases)
    gaps = np.geomspace(1.0, horizon, max(4, samples // n_bases))
    d = model.dim
    xs, ys = [], []
    for base in bases:
        def rhs(xi, y):
            return (y.reshape(d, d) @ model.A_mat(xi)).ravel()

        sol = _solve_matrix_ode(
            rhs, np.eye(d).ravel(), base, base + horizon, rtol=1e-10, dense=True
        )
        for gap in gaps:
            V = sol.sol(base + gap).reshape(d, d)
            nrm = np.linalg.norm(V, 2)
            if nrm <= 0.0 or not np.isfinite(nrm):
                raise StiffnessError("transition norm under/overflowed in fit window")
            xs.append(gap)
            ys.append(math.log(nrm))
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    Adesign = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(Adesign, ys, rcond=None)
    omega, intercept = float(coef[0]), float(coef[1])
    residual = float(np.max(np.abs(Adesign @ coef - ys)))
    return OmegaEstimate(omega=omega, M=max(1.0, math.exp(intercept)), residual=residual)


def _sup_norms(model, t, span):
    ts = t + np.linspace(0.0, span, 81)
    bb = max(np.linalg.norm(model.B_mat(x) @ model.B_mat(x).T, 2) for x in ts)
    gg = max(np.linalg.norm(model.g_vec(x)) for x in ts)
    return float(bb), float(gg)


def evolution_measure(model, t, tol=1e-8, omega_fit=None, order_hint=None):
    """The time-t member mu_t = N(g_t, Q_t) of the evolution system.

    Q_t and g_t are the improper integrals in the module docstring, computed
    by adaptive (Gauss-Kronrod style) quadrature on [t, T_tail] where T_tail
    is chosen from the fitted decay (omega, M) -- with a factor-2 safety
    margin on M -- so the discarded tail is below ``tol``.
    """
    if omega_fit is None:
        omega_fit = estimate_omega0(model)
    omega, M = omega_fit.omega, omega_fit.M
    if omega >= 0.0:
        raise NoEvolutionMeasureError(
            f"transition family does not decay (fitted omega = {omega:.4g}); "
            "no evolution system of measures exists for this model"
        )
    Msafe = 2.0 * M
    bb, gg = _sup_norms(model, t, 40.0)
    if bb <= 0.0:
        raise DomainError("B(t) B(t)^T vanished on the sampled window")
    # Tail bounds: the Q integrand decays like Msafe^2 bb e^{2 omega (xi - t)},
    # the g integrand like Msafe gg e^{omega (xi - t)}.
    span_q = math.log(2.0 * abs(omega) * tol / (Msafe**2 * bb)) / (2.0 * omega)
    span = max(1.0, span_q)
    if gg > 0.0:
        span_g = math.log(abs(omega) * tol / (Msafe * gg)) / omega
        span = max(span, span_g)
    if span > 40.0:
        bb, gg = _sup_norms(model, t, span)
    T_tail = t + span

    d = model.dim

    def rhs(xi, y):
        return (y.reshape(d, d) @ model.A_mat(xi)).ravel()

    sol = _solve_matrix_ode(
        rhs, np.eye(d).ravel(), t, T_tail, rtol=1e-12, atol=1e-14, dense=True
    )

    def integrand(xi):
        V = sol.sol(xi).reshape(d, d)
        Bm = model.B_mat(xi)
        VB = V @ Bm
        return np.concatenate([(VB @ VB.T).ravel(), V @ model.g_vec(xi)])

    vec, err = integrate.quad_vec(integrand, t, T_tail, epsabs=tol / 2.0, epsrel=0.0)
    Q_t = vec[: d * d].reshape(d, d)
    g_t = vec[d * d :]
    return GaussianMeasure(mean=g_t, cov=Q_t, t=float(t))


def _mehler_moments(model, t, s, rtol=1e-10):
    """(M, m_{t,s}, C_{t,s}) of the G(t, s) kernel, with M = U(s, t).

    One joint ODE pass on [s, t] of the s-anchored system

        M' = M A(tau),   m' = M g(tau),   C' = (M B(tau)) (M B(tau))^T,

    from M(s) = I, m(s) = 0, C(s) = 0.
    """
    d = model.dim
    nM, nm = d * d, d

    def rhs(tau, y):
        M = y[:nM].reshape(d, d)
        Bm = model.B_mat(tau)
        MB = M @ Bm
        dM = M @ model.A_mat(tau)
        dm = M @ model.g_vec(tau)
        dC = MB @ MB.T
        return np.concatenate([dM.ravel(), dm, dC.ravel()])

    y0 = np.concatenate([np.eye(d).ravel(), np.zeros(d), np.zeros(d * d)])
    sol = _solve_matrix_ode(rhs, y0, s, t, rtol=rtol, atol=1e-14)
    y = sol.y[:, -1]
    M = y[:nM].reshape(d, d)
    m = y[nM : nM + nm]
    C = y[nM + nm :].reshape(d, d)
    return M, m, 0.5 * (C + C.T)


def ou_apply_G(model, t, s, f, x, order=64, node_chunk=4096):
    """(G(t, s) f)(x) through the Gaussian kernel representation.

    ``x`` may be a point (d,) or a batch (n, d).  Requires t >= s;
    ``t == s`` returns f(x) exactly.
    """
    if t < s:
        raise DomainError(f"need t >= s, got t={t} < s={s}")
    xb, single = as_batch(x, model.dim)
    if t == s:
        vals = np.asarray(f.value(xb), dtype=float).reshape(xb.shape[0])
        return vals[0] if single else vals
    M, m, C = _mehler_moments(model, t, s)
    L = sqrtm_psd(C)
    z, w = gauss_hermite_rule(model.dim, order)
    centers = xb @ M.T + m  # (n, d)
    out = np.zeros(xb.shape[0])
    for k0 in range(0, z.shape[0], node_chunk):
        zc = z[k0 : k0 + node_chunk]
        wc = w[k0 : k0 + node_chunk]
        pts = centers[:, None, :] + math.sqrt(2.0) * (zc @ L.T)[None, :, :]
        vals = np.asarray(
            f.value(pts.reshape(-1, model.dim)), dtype=float
        ).reshape(xb.shape[0], zc.shape[0])
        out += vals @ wc
    return out[0] if single else out


def ou_apply_grad_G(model, t, s, f, x, order=64, node_chunk=4096):
    """grad_x (G(t, s) f)(x) = M^T E[grad f(M x + m + Z)], M = U(s, t)."""
    if t < s:
        raise DomainError(f"need t >= s, got t={t} < s={s}")
    xb, single = as_batch(x, model.dim)
    if t == s:
        g = np.asarray(f.gradient(xb), dtype=float).reshape(xb.shape)
        return g[0] if single else g
    M, m, C = _mehler_moments(model, t, s)
    L = sqrtm_psd(C)
    z, w = gauss_hermite_rule(model.dim, order)
    centers = xb @ M.T + m
    acc = np.zeros_like(xb)
    for k0 in range(0, z.shape[0], node_chunk):
        zc = z[k0 : k0 + node_chunk]
        wc = w[k0 : k0 + node_chunk]
        pts = centers[:, None, :] + math.sqrt(2.0) * (zc @ L.T)[None, :, :]
        grads = np.asarray(
            f.gradient(pts.reshape(-1, model.dim)), dtype=float
        ).reshape(xb.shape[0], zc.shape[0], model.dim)
        acc += np.einsum("nkd,k->nd", grads, wc)
    out = acc @ M
    return out[0] if single else out


def solve_lyapunov_limit(A_inf, B_inf, g_inf=None, residual_tol=1e-10):
    """Invariant Gaussian of the limit operator with drift A_inf x + g_inf.

    Solves A Q + Q A^T = -B B^T by Kronecker vectorization and returns
    N(-A^{-1} g_inf, Q).  Raises when A_inf is not Hurwitz (no limit measure)
    or the residual exceeds ``residual_tol``.
    """
    A = np.atleast_2d(np.asarray(A_inf, dtype=float))
    B = np.atleast_2d(np.asarray(B_inf, dtype=float))
    d = A.shape[0]
    eig = np.linalg.eigvals(A)
    if np.max(eig.real) >= 0.0:
        raise NoEvolutionMeasureError(
            f"A_inf is not Hurwitz (max Re eig = {np.max(eig.real):.4g}); "
            "the limit operator has no invariant measure"
        )
    BB = B @ B.T
    eye = np.eye(d)
    K = np.kron(eye, A) + np.kron(A, eye)
    q = np.linalg.solve(K, -BB.ravel())
    Q = q.reshape(d, d)
    Q = 0.5 * (Q + Q.T)
    res = np.linalg.norm(A @ Q + Q @ A.T + BB, 2)
    if res > residual_tol:
        raise StiffnessError(f"Lyapunov residual {res:.3e} exceeds {residual_tol:g}")
    g = np.zeros(d) if g_inf is None else np.asarray(g_inf, dtype=float).reshape(d)
    mean = np.linalg.solve(A, -g)
    return GaussianMeasure(mean=mean, cov=Q, t=None)
