"""Path simulation with variational (Jacobian) co-integration.

``simulate`` integrates the flow

    dX = b(t, X) dt + sigma(t) dW,     sigma(t) = sqrt(2 Q(t)),

by explicit Euler-Maruyama or a linearly-implicit drift variant.  Alongside
each path the variational equation dJ = jac_b(t, X) J dt is integrated from
J(s) = I, so that E[J^T grad f(X(t))] estimates grad_x E[f(X(t))] pathwise
and every J carries the per-path contraction certificate
||J(t)|| <= exp((r0 + eps_dt)(t - s)).

The kernel of the evolution operator G(t, s) is realized by the
MIRRORED-clock flow: its characteristics sweep the coefficients from t back
down to s, so ``evaluate_G``/``evaluate_grad_G`` run the paths of
``reflect_time(spec, s + t)`` (see :mod:`kolmolab.model`).  For autonomous
coefficients the mirrored flow is the plain flow; for time-dependent ones
the distinction is exactly what makes the evaluated operator satisfy the
invariance identity against the evolution system of measures.

Randomness: paths are partitioned into fixed blocks of ``BLOCK`` paths, each
block drawing from its own counter-based Philox stream keyed (seed, block
index), and full blocks are always generated.  A path's noise is therefore a
pure function of (seed, path index, step) -- independent of n_paths,
chunking, or any parallel scheduling -- and reruns are bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BlowUpError, DomainError, EvaluationError
from .model import as_batch, default_audit_grid, reflect_time
from .ou import sqrtm_psd

__all__ = [
    "BLOCK",
    "SimConfig",
    "PathBundle",
    "GradEstimate",
    "simulate",
    "evaluate_G",
    "evaluate_grad_G",
    "jacobian_norms",
    "jacobian_bound_violations",
    "grid_lipschitz",
    "eps_dt",
]

BLOCK = 16384
_SCHEMES = ("euler", "semi_implicit_drift")


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    n_paths: int = 100_000
    seed: int = 0
    scheme: str = "euler"

    def __post_init__(self):
        if not (self.dt > 0.0):
            raise DomainError("dt must be positive")
        if self.n_paths < 1:
            raise DomainError("n_paths must be at least 1")
        if self.seed < 0:
            raise DomainError("seed must be a nonnegative integer")
        if self.scheme not in _SCHEMES:
            raise DomainError(f"scheme must be one of {_SCHEMES}, got {self.scheme!r}")

    def check_against(self, spec):
        if spec.r0 < 0.0 and self.dt * abs(spec.r0) >= 0.5:
            raise DomainError(
                f"dt * |r0| = {self.dt * abs(spec.r0):.3g} >= 0.5; "
                "refusing an unstable step size"
            )


@dataclass(frozen=True)
class PathBundle:
    """Terminal states and Jacobians of one simulated ensemble."""

    states: np.ndarray      # (n, d)
    jacobians: Optional[np.ndarray]  # (n, d, d) or None when skipped
    stream_ids: np.ndarray  # (n,) uint64 path indices within the seed
    s: float
    t: float
    cfg: SimConfig
    x0: np.ndarray = field(repr=False, default=None)

    @property
    def n_paths(self):
        return self.states.shape[0]


def _time_grid(s, t, dt):
    """Uniform steps of size dt plus one final shorter step to land on t."""
    n_full = int(math.floor((t - s) / dt + 1e-12))
    times = s + dt * np.arange(n_full + 1)
    if times[-1] < t - 1e-12 * max(1.0, abs(t)):
        times = np.append(times, t)
    else:
        times[-1] = t
    return times


def simulate(spec, s, t, x, cfg=None, with_jacobians=True):
    """Run cfg.n_paths paths of the flow from x at time s to time t.

    ``x`` is a single starting point (d,) shared by all paths, or an
    (n_paths, d) array of per-path starting points.
    """
    cfg = cfg or SimConfig()
    spec.require_time(s)
    spec.require_time(t)
    if not (s < t):
        raise DomainError(f"need s < t, got s={s}, t={t}")
    cfg.check_against(spec)

    d = spec.dim
    n = cfg.n_paths
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape != (d,):
            raise DomainError(f"x must have shape ({d},), got {x.shape}")
        starts = np.broadcast_to(x, (n, d))
    elif x.shape == (n, d):
        starts = x
    else:
        raise DomainError(
            f"x must have shape ({d},) or ({n}, {d}), got {x.shape}"
        )
    if not np.all(np.isfinite(starts)):
        raise DomainError("non-finite starting point")

    times = _time_grid(s, t, cfg.dt)
    hs = np.diff(times)
    # sigma(t) = sqrt(2 Q(t)) is state-independent: precompute per step.
    sig = np.stack([sqrtm_psd(2.0 * spec.diffusion(tk)) for tk in times[:-1]])
    sqrt_h = np.sqrt(hs)
    semi = cfg.scheme == "semi_implicit_drift"
    eye = np.eye(d)

    out_states = np.empty((n, d))
    out_jac = np.empty((n, d, d)) if with_jacobians else None
    ids = np.arange(n, dtype=np.uint64)

    n_blocks = (n + BLOCK - 1) // BLOCK
    noise_chunk = 256
    for blk in range(n_blocks):
        lo, hi = blk * BLOCK, min((blk + 1) * BLOCK, n)
        m = hi - lo
        rng = np.random.Generator(np.random.Philox(key=[int(cfg.seed), blk]))
        X = np.array(starts[lo:hi], dtype=float)
        J = np.broadcast_to(eye, (m, d, d)).copy() if with_jacobians else None
        k = 0
        n_steps = len(hs)
        while k < n_steps:
            kc = min(noise_chunk, n_steps - k)
            # Always draw the full block so path noise is n_paths-independent.
            Z = rng.standard_normal((kc, BLOCK, d))[:, :m, :]
            for j in range(kc):
                tk = times[k + j]
                h = hs[k + j]
                try:
                    drift = spec.drift(tk, X)
                except EvaluationError as exc:
                    # mid-integration overflow of the coefficients is the
                    # numerical signature of an exploding trajectory
                    raise BlowUpError(
                        f"drift became non-finite by step {k + j} "
                        f"(t ~ {tk:.4g}); reduce dt or check the drift",
                        step=k + j,
                    ) from exc
                noise = (Z[j] @ sig[k + j].T) * sqrt_h[k + j]
                if semi:
                    L = spec.drift_jacobian(tk, X)
                    A_step = eye[None, :, :] - h * L
                    incr = np.linalg.solve(A_step, (h * drift + noise)[..., None])[
                        ..., 0
                    ]
                    X = X + incr
                    if with_jacobians:
                        J = np.linalg.solve(A_step, J)
                else:
                    if with_jacobians:
                        L = spec.drift_jacobian(tk, X)
                        J = J + h * np.einsum("nij,njk->nik", L, J)
                    X = X + h * drift + noise
            if not np.all(np.isfinite(X)):
                bad_step = k + kc
                raise BlowUpError(
                    f"path state became non-finite by step {bad_step} "
                    f"(t ~ {times[min(bad_step, len(times) - 1)]:.4g}); "
                    "reduce dt or check the drift",
                    step=bad_step,
                )
            k += kc
        out_states[lo:hi] = X
        if with_jacobians:
            out_jac[lo:hi] = J

    return PathBundle(
        states=out_states,
        jacobians=out_jac,
        stream_ids=ids,
        s=float(s),
        t=float(t),
        cfg=cfg,
        x0=np.array(x, dtype=float),
    )


def evaluate_G(spec, s, t, f, x, cfg=None, bundle=None):
    """Monte Carlo (mean, stderr) of (G(t,s) f)(x).

    The ensemble runs the mirrored-clock flow (module docstring), which is
    the path picture of the evolution operator.  Reuses ``bundle`` when
    given; it must match (s, t, x) and come from the same mirrored run."""
    if bundle is None:
        bundle = simulate(
            reflect_time(spec, s + t), s, t, x, cfg, with_jacobians=False
        )
    vals = np.asarray(f.value(bundle.states), dtype=float)
    mean = float(np.mean(vals))
    n = vals.shape[0]
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, stderr


@dataclass(frozen=True)
class GradEstimate:
    """Pathwise gradient estimate with its contraction certificate.

    ``bound`` is exp(r0 (t-s)) * E[|grad f(X(t))|] (+stderr), which the
    euclidean norm of ``grad`` must respect up to sampling error.
    """

    grad: np.ndarray
    stderr: np.ndarray
    bound: float
    bound_stderr: float


def evaluate_grad_G(spec, s, t, f, x, cfg=None, bundle=None):
    """Pathwise estimate E[J(t)^T grad f(X(t))] of grad_x (G(t,s) f)(x).

    Like :func:`evaluate_G`, the ensemble runs the mirrored-clock flow."""
    if bundle is None:
        bundle = simulate(
            reflect_time(spec, s + t), s, t, x, cfg, with_jacobians=True
        )
    if bundle.jacobians is None:
        raise DomainError("bundle was simulated without Jacobians")
    g = np.asarray(f.gradient(bundle.states), dtype=float)
    per_path = np.einsum("nij,ni->nj", bundle.jacobians, g)
    n = per_path.shape[0]
    grad = per_path.mean(axis=0)
    stderr = per_path.std(axis=0, ddof=1) / math.sqrt(n)
    norms = np.linalg.norm(g, axis=1)
    factor = math.exp(spec.r0 * (t - s))
    bound = factor * float(norms.mean())
    bound_stderr = factor * float(norms.std(ddof=1) / math.sqrt(n))
    return GradEstimate(grad=grad, stderr=stderr, bound=bound, bound_stderr=bound_stderr)


def jacobian_norms(bundle):
    """Spectral norm of each terminal Jacobian."""
    J = bundle.jacobians
    if J is None:
        raise DomainError("bundle carries no Jacobians")
    if J.shape[1] == 1:
        return np.abs(J[:, 0, 0])
    return np.linalg.svd(J, compute_uv=False)[:, 0]


def grid_lipschitz(spec, grid=None):
    """max ||jac_b(t, x)||_2 over the audit grid (curvature proxy)."""
    if grid is None:
        grid = default_audit_grid(spec)
    worst = 0.0
    for tk in grid.ts:
        J = spec.drift_jacobian(tk, grid.xs)
        if J.shape[1] == 1:
            worst = max(worst, float(np.max(np.abs(J))))
        else:
            worst = max(worst, float(np.max(np.linalg.svd(J, compute_uv=False))))
    return worst


def eps_dt(spec, dt, L_grid=None):
    """Discretization allowance for the pathwise Jacobian bound."""
    if L_grid is None:
        L_grid = grid_lipschitz(spec)
    return 10.0 * dt * L_grid


def jacobian_bound_violations(spec, bundle, L_grid=None):
    """Count paths violating ||J|| <= exp((r0 + eps_dt)(t-s)).

    Returns (violations, bound, worst_norm)."""
    eps = eps_dt(spec, bundle.cfg.dt, L_grid)
    span = bundle.t - bundle.s
    bound = math.exp((spec.r0 + eps) * span)
    norms = jacobian_norms(bundle)
    return int(np.sum(norms > bound)), bound, float(np.max(norms))
