"""Moment estimator: residuals, estimating equation, root solvers.

The estimator solves ``J_Psi(theta)' (c_hat - Psi(theta)) = 0`` over the
parameter space. Newton uses a finite-difference Jacobian of the full
estimating equation; Broyden maintains a rank-one secant approximation.
Every iterate is projected back onto the parameter space, intermediate
failures abandon the start, and a multi-start driver picks the converged
root with the smallest residual norm.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, StructuralError
from .model import ThetaVector, canonicalize, spectral_radius, theta_to_model
from .moments import (
    default_lag_count,
    empirical_autocov_vector,
    psi_and_jacobian,
    psi_vector,
)

__all__ = [
    "SolverOptions",
    "EstimationResult",
    "moment_residual",
    "estimating_equation",
    "project_to_theta_space",
    "newton_solve",
    "broyden_solve",
    "solve_root",
    "estimate",
]

START_BOX_A = (-0.95, 0.95)
START_BOX_P = (0.05, 0.95)
START_BOX_F = (0.1, 2.0)


@dataclass
class SolverOptions:
    """Tuning knobs for the root solvers.

    ``mask`` holds (coordinate index, fixed value) pairs; masked
    coordinates are frozen at their values and removed from the solver's
    unknowns.
    """

    method: str = "broyden"
    tol: float = 1e-8
    max_iter: int = 200
    fd_step: float = 1e-6
    n_starts: int = 8
    projection_margin: float = 1e-4
    mask: list[tuple[int, float]] = field(default_factory=list)
    gauss_newton: bool = False
    max_step: float = 1.0
    warmstart_iter: int = 40

    def __post_init__(self):
        if self.method not in ("newton", "broyden"):
            raise DomainError(f"unknown solver method {self.method!r}")
        if self.tol <= 0:
            raise DomainError("tol must be positive")
        if not (0.0 < self.projection_margin < 0.1):
            raise DomainError("projection margin must lie in (0, 0.1)")

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "tol": self.tol,
            "max_iter": self.max_iter,
            "fd_step": self.fd_step,
            "n_starts": self.n_starts,
            "projection_margin": self.projection_margin,
            "mask": [[int(i), float(v)] for i, v in self.mask],
            "gauss_newton": self.gauss_newton,
            "max_step": self.max_step,
            "warmstart_iter": self.warmstart_iter,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SolverOptions":
        kwargs = dict(obj)
        if "mask" in kwargs:
            kwargs["mask"] = [(int(i), float(v)) for i, v in kwargs["mask"]]
        return cls(**kwargs)


@dataclass
class EstimationResult:
    """Root-finding outcome; ``theta_hat`` is canonicalized."""

    theta_hat: ThetaVector
    converged: bool
    iterations: int
    residual_norm: float
    start_index: int = 0
    trace: list[float] | None = None
    final_b: np.ndarray | None = None
    canon_permutation: tuple[int, ...] | None = None
    canon_signs: tuple[float, ...] | None = None
    secant_max_violation: float | None = None
    n_lags: int | None = None
    sample_size: int | None = None
    moment_residual_norm: float | None = None

    def to_json_dict(self) -> dict:
        out = {
            "theta_hat": self.theta_hat.to_json_dict(),
            "model": theta_to_model(self.theta_hat).to_json_dict(),
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norm": float(self.residual_norm),
            "start_index": self.start_index,
        }
        if self.trace is not None:
            out["trace"] = [float(v) for v in self.trace]
        if self.moment_residual_norm is not None:
            out["moment_residual_norm"] = float(self.moment_residual_norm)
        if self.canon_permutation is not None:
            out["canon_permutation"] = list(self.canon_permutation)
            out["canon_signs"] = list(self.canon_signs)
        if self.n_lags is not None:
            out["n_lags"] = self.n_lags
        if self.sample_size is not None:
            out["sample_size"] = self.sample_size
        return out


def moment_residual(theta: ThetaVector, c_hat) -> np.ndarray:
    """Vector of empirical-minus-theoretical autocovariances at lags 1..N."""
    c_hat = np.asarray(c_hat, dtype=float).reshape(-1)
    return c_hat - psi_vector(theta, c_hat.size)


def estimating_equation(theta: ThetaVector, c_hat) -> np.ndarray:
    """Normal-equations form ``J_Psi(theta)' (c_hat - Psi(theta))``."""
    c_hat = np.asarray(c_hat, dtype=float).reshape(-1)
    psi, jac = psi_and_jacobian(theta, c_hat.size)
    return jac.T @ (c_hat - psi)


def project_to_theta_space(
    theta: ThetaVector, margin: float = 1e-4, mask=None
) -> ThetaVector:
    """Total projection onto (an interior margin of) the parameter space.

    Free transition entries are clamped to [margin, 1-margin] and rows
    rescaled until the derived column also lands there; amplitudes are
    pushed away from zero; the AR vector is contracted until
    rho(A^2 P') < 1. Masked coordinates are restored verbatim at the end.
    """
    k = theta.k
    vals = theta.values.copy()
    # Non-finite entries get neutral fallbacks so the function stays total.
    bad = ~np.isfinite(vals)
    if bad.any():
        fallback = np.concatenate(
            [np.zeros(k), np.full(k * (k - 1), 1.0 / k), np.ones(k)]
        )
        vals[bad] = fallback[bad]

    a = vals[:k]
    free = vals[k : k * k].reshape(k, k - 1)
    f = vals[k * k :]

    lo, hi = margin, 1.0 - margin
    for i in range(k):
        row = np.clip(free[i], lo, hi)
        for _ in range(10):
            s = row.sum()
            if lo <= 1.0 - s <= hi:
                break
            target = np.clip(s, lo, hi)
            row = np.clip(row * (target / s), lo, hi)
        else:
            row = np.full(k - 1, 1.0 / k)
        free[i] = row

    small = np.abs(f) < margin
    f[small] = np.where(f[small] < 0.0, -margin, margin)

    p = np.empty((k, k))
    p[:, : k - 1] = free
    p[:, k - 1] = 1.0 - free.sum(axis=1) if k > 1 else 1.0
    for _ in range(20):
        rho = spectral_radius(np.diag(a**2) @ p.T)
        if rho < 1.0:
            break
        a *= 0.98 / np.sqrt(rho)

    vals[:k] = a
    vals[k : k * k] = free.reshape(-1)
    vals[k * k :] = f
    if mask:
        for idx, fixed in mask:
            vals[int(idx)] = fixed
    return ThetaVector(vals, k)


class _MaskedSystem:
    """Estimating equation restricted to unmasked coordinates.

    The reduced system's components are exactly the unmasked coordinates
    of the full estimating equation: dropping columns of the moment
    Jacobian commutes with the transpose product.
    """

    def __init__(self, c_hat, k, mask, margin):
        self.c_hat = np.asarray(c_hat, dtype=float).reshape(-1)
        self.k = k
        self.dim = k * k + k
        self.mask = list(mask or [])
        self.margin = margin
        self.masked_idx = np.array([i for i, _ in self.mask], dtype=int)
        self.free_idx = np.array(
            [i for i in range(self.dim) if i not in set(self.masked_idx.tolist())],
            dtype=int,
        )
        if self.free_idx.size == 0:
            raise DomainError("mask fixes every coordinate; nothing to estimate")

    def embed(self, free_vals) -> ThetaVector:
        vals = np.empty(self.dim)
        vals[self.free_idx] = free_vals
        for i, v in self.mask:
            vals[int(i)] = v
        return ThetaVector(vals, self.k)

    def extract(self, theta: ThetaVector) -> np.ndarray:
        return theta.values[self.free_idx]

    def project(self, free_vals) -> np.ndarray:
        theta = project_to_theta_space(self.embed(free_vals), self.margin, self.mask)
        return self.extract(theta)

    def pieces(self, free_vals):
        """(moment residual F, reduced Jacobian of Psi) at a point."""
        theta = self.embed(free_vals)
        psi, jac = psi_and_jacobian(theta, self.c_hat.size)
        return self.c_hat - psi, jac[:, self.free_idx]

    def func(self, free_vals) -> np.ndarray:
        resid, jac = self.pieces(free_vals)
        return jac.T @ resid

    def fd_jacobian(self, free_vals, step) -> np.ndarray:
        n = free_vals.size
        jac = np.empty((n, n))
        for j in range(n):
            up = free_vals.copy()
            dn = free_vals.copy()
            up[j] += step
            dn[j] -= step
            jac[:, j] = (self.func(up) - self.func(dn)) / (2.0 * step)
        return jac

    def gn_jacobian(self, free_vals) -> np.ndarray:
        _, jac = self.pieces(free_vals)
        return -(jac.T @ jac)

    def warmstart(self, free_vals, n_iter):
        """Damped Gauss-Newton descent on the squared moment residual.

        Cheap globalization stage: pulls an arbitrary start into the
        basin of a genuine root before the root solver takes over.
        """
        x = free_vals
        resid, jac = self.pieces(x)
        loss = float(resid @ resid)
        lam = 1e-3
        for _ in range(n_iter):
            grad = jac.T @ resid
            hess = jac.T @ jac
            step, ok = _solve_step(hess + lam * np.eye(hess.shape[0]), grad)
            if not ok:
                lam *= 10.0
                continue
            cand = self.project(x + step)
            try:
                resid_c, jac_c = self.pieces(cand)
            except (DomainError, StructuralError):
                lam *= 10.0
                continue
            loss_c = float(resid_c @ resid_c)
            if loss_c < loss:
                x, resid, jac, loss = cand, resid_c, jac_c, loss_c
                lam = max(lam * 0.3, 1e-10)
                if loss < 1e-24:
                    break
            else:
                lam *= 10.0
                if lam > 1e8:
                    break
        return x


def _finish(system, free_vals, converged, iterations, trace, start_index, **extra):
    theta = system.embed(free_vals)
    resid, jac = system.pieces(free_vals)
    res = float(np.linalg.norm(jac.T @ resid))
    return EstimationResult(
        theta_hat=theta,
        converged=converged,
        iterations=iterations,
        residual_norm=res,
        start_index=start_index,
        trace=trace,
        n_lags=system.c_hat.size,
        moment_residual_norm=float(np.linalg.norm(resid)),
        **extra,
    )


def _solve_step(mat, rhs):
    try:
        step = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return None, False
    if not np.isfinite(step).all():
        return None, False
    return step, True


def _clamp(step, max_step):
    norm = float(np.linalg.norm(step))
    if max_step > 0 and norm > max_step:
        return step * (max_step / norm)
    return step


def newton_solve(
    c_hat, theta_init: ThetaVector, opts: SolverOptions | None = None, start_index: int = 0
) -> EstimationResult:
    """Newton iteration on the estimating equation.

    The Jacobian of the full estimating equation is computed by central
    finite differences (optionally the Gauss-Newton surrogate -J'J); a
    singular system is retried once with a small ridge, then the start
    is abandoned.
    """
    opts = opts or SolverOptions(method="newton")
    system = _MaskedSystem(c_hat, theta_init.k, opts.mask, opts.projection_margin)
    x = system.project(system.extract(theta_init))
    fx = system.func(x)
    trace = [float(np.linalg.norm(fx))]
    if trace[-1] < opts.tol:
        return _finish(system, x, True, 0, trace, start_index)
    for it in range(1, opts.max_iter + 1):
        if opts.gauss_newton:
            jac = system.gn_jacobian(x)
        else:
            jac = system.fd_jacobian(x, opts.fd_step)
        step, ok = _solve_step(jac, -fx)
        if not ok:
            ridge = jac + 1e-8 * np.eye(jac.shape[0])
            step, ok = _solve_step(ridge, -fx)
            if not ok:
                return _finish(system, x, False, it, trace, start_index)
        x = system.project(x + _clamp(step, opts.max_step))
        fx = system.func(x)
        trace.append(float(np.linalg.norm(fx)))
        if not np.isfinite(trace[-1]):
            return _finish(system, x, False, it, trace, start_index)
        if trace[-1] < opts.tol:
            return _finish(system, x, True, it, trace, start_index)
    return _finish(system, x, False, opts.max_iter, trace, start_index)


def broyden_solve(
    c_hat,
    theta_init0: ThetaVector,
    theta_init1: ThetaVector | None = None,
    b0: np.ndarray | None = None,
    opts: SolverOptions | None = None,
    start_index: int = 0,
    check_secant: bool = False,
) -> EstimationResult:
    """Broyden iteration with rank-one secant updates.

    ``B`` is updated so that ``B delta = F(theta_k) - F(theta_{k-1})``
    after every step; the next iterate is ``theta_k - B^{-1} F(theta_k)``
    projected onto the parameter space. A singular B is rebuilt once from
    finite differences before the start is abandoned.
    """
    opts = opts or SolverOptions(method="broyden")
    system = _MaskedSystem(c_hat, theta_init0.k, opts.mask, opts.projection_margin)
    x_prev = system.project(system.extract(theta_init0))
    if theta_init1 is None:
        bump = np.full_like(x_prev, 10.0 * opts.projection_margin)
        x = system.project(x_prev + bump)
    else:
        x = system.project(system.extract(theta_init1))
    if np.allclose(x, x_prev):
        x = system.project(x_prev + 10.0 * opts.projection_margin)
    f_prev = system.func(x_prev)
    fx = system.func(x)
    trace = [float(np.linalg.norm(f_prev)), float(np.linalg.norm(fx))]
    if trace[-1] < opts.tol:
        return _finish(system, x, True, 0, trace, start_index)
    b = system.fd_jacobian(x, opts.fd_step) if b0 is None else np.array(b0, dtype=float)
    reset_used = False
    secant_worst = 0.0
    for it in range(1, opts.max_iter + 1):
        delta = x - x_prev
        dnorm2 = float(delta @ delta)
        df = fx - f_prev
        if dnorm2 > 0.0:
            b = b + np.outer(df - b @ delta, delta) / dnorm2
            if check_secant:
                secant_worst = max(
                    secant_worst, float(np.linalg.norm(b @ delta - df))
                )
        step, ok = _solve_step(b, -fx)
        if not ok:
            if reset_used:
                return _finish(
                    system, x, False, it, trace, start_index,
                    secant_max_violation=secant_worst if check_secant else None,
                )
            b = system.fd_jacobian(x, opts.fd_step)
            reset_used = True
            step, ok = _solve_step(b, -fx)
            if not ok:
                return _finish(
                    system, x, False, it, trace, start_index,
                    secant_max_violation=secant_worst if check_secant else None,
                )
        x_prev, f_prev = x, fx
        x = system.project(x + _clamp(step, opts.max_step))
        fx = system.func(x)
        trace.append(float(np.linalg.norm(fx)))
        if not np.isfinite(trace[-1]):
            return _finish(
                system, x, False, it, trace, start_index,
                final_b=b, secant_max_violation=secant_worst if check_secant else None,
            )
        if trace[-1] < opts.tol or np.linalg.norm(x - x_prev) < opts.tol:
            converged = trace[-1] < opts.tol or float(
                np.linalg.norm(system.func(x))
            ) < opts.tol
            return _finish(
                system, x, converged, it, trace, start_index,
                final_b=b, secant_max_violation=secant_worst if check_secant else None,
            )
    return _finish(
        system, x, False, opts.max_iter, trace, start_index,
        final_b=b, secant_max_violation=secant_worst if check_secant else None,
    )


def _latin_hypercube_starts(k, n_starts, rng, mask):
    """Stratified draws over the start box, one permutation per coordinate."""
    dim = k * k + k
    lows = np.concatenate(
        [
            np.full(k, START_BOX_A[0]),
            np.full(k * (k - 1), START_BOX_P[0]),
            np.full(k, START_BOX_F[0]),
        ]
    )
    highs = np.concatenate(
        [
            np.full(k, START_BOX_A[1]),
            np.full(k * (k - 1), START_BOX_P[1]),
            np.full(k, START_BOX_F[1]),
        ]
    )
    unit = (rng.permuted(np.tile(np.arange(n_starts), (dim, 1)), axis=1).T
            + rng.random((n_starts, dim))) / n_starts
    starts = lows + unit * (highs - lows)
    out = []
    for row in starts:
        vals = row.copy()
        for i, v in mask:
            vals[int(i)] = v
        out.append(ThetaVector(vals, k))
    return out


def solve_root(
    c_hat,
    k: int,
    opts: SolverOptions | None = None,
    rng=None,
    inits=None,
    sample_size: int | None = None,
) -> EstimationResult:
    """Multi-start driver around the configured solver.

    Each start is first pulled toward a genuine root by a damped
    Gauss-Newton descent on the squared moment residual, then handed to
    the configured root solver. Among converged results the one with the
    smallest moment-residual norm wins (all converged roots drive the
    estimating equation below tol; the moment residual discriminates
    genuine roots from degenerate stationary points), ties broken by
    start index.
    """
    opts = opts or SolverOptions()
    c_hat = np.asarray(c_hat, dtype=float).reshape(-1)
    if np.max(np.abs(c_hat)) == 0.0:
        raise DomainError("all empirical moments are zero; series is degenerate")
    if rng is None:
        rng = np.random.default_rng(0)
    elif not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    starts: list[ThetaVector] = list(inits or [])
    starts += _latin_hypercube_starts(k, opts.n_starts, rng, opts.mask)
    system = _MaskedSystem(c_hat, k, opts.mask, opts.projection_margin)
    best = None
    best_attempt = None
    for idx, start in enumerate(starts):
        x0 = system.project(system.extract(start))
        if opts.warmstart_iter > 0:
            x0 = system.warmstart(x0, opts.warmstart_iter)
        refined = system.embed(x0)
        if opts.method == "newton":
            result = newton_solve(c_hat, refined, opts, start_index=idx)
        else:
            result = broyden_solve(c_hat, refined, opts=opts, start_index=idx)
        if result.converged:
            if best is None or result.moment_residual_norm < best.moment_residual_norm:
                best = result
        elif (
            best_attempt is None
            or result.residual_norm < best_attempt.residual_norm
        ):
            best_attempt = result
    chosen = best if best is not None else best_attempt
    mask_idx = [i for i, _ in opts.mask]
    theta_c, perm, signs = canonicalize(chosen.theta_hat, mask=mask_idx or None)
    chosen.theta_hat = theta_c
    chosen.canon_permutation = perm
    chosen.canon_signs = signs
    chosen.sample_size = sample_size
    return chosen


def estimate(
    x,
    k: int,
    n_lags: int | None = None,
    opts: SolverOptions | None = None,
    rng=None,
    inits=None,
) -> EstimationResult:
    """Fit a K-regime model to a series by autocovariance matching."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if n_lags is None:
        n_lags = default_lag_count(k)
    if n_lags < k * k + k:
        raise StructuralError(
            f"need at least K^2+K = {k * k + k} lags, got {n_lags}"
        )
    if x.size <= n_lags:
        raise StructuralError(
            f"series of length {x.size} too short for {n_lags} lags"
        )
    c_hat = empirical_autocov_vector(x, n_lags)
    return solve_root(c_hat, k, opts=opts, rng=rng, inits=inits, sample_size=x.size)
