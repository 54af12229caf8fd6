"""Theoretical moment machinery.

The lag-k autocovariance of the switching AR(1) process has the closed
form  ``c_k = 1' (A P')^k (I - A^2 P')^{-1} V pi``  with ``A = diag(a)``,
``V = diag(f^2)`` and ``pi`` the stationary distribution. More general
stationary-chain expectations of products ``prod_tau a(D_tau)^{p_tau}
f(D_tau)^{q_tau}`` are evaluated by chaining K x K transfer matrices
``Q_g`` with entries ``Q_g[i, j] = g(i) p[j, i]``, newest time first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError, StructuralError
from .model import (
    RegimeModel,
    ThetaVector,
    spectral_radius,
    stationary_distribution,
    theta_to_model,
    validate,
)

__all__ = [
    "ExponentProfile",
    "MomentSet",
    "chain_product_expectation",
    "theoretical_autocov",
    "psi_vector",
    "empirical_autocov",
    "empirical_autocov_vector",
    "jacobian_psi",
    "jacobian_psi_fd",
    "numerical_rank",
    "default_lag_count",
]


def default_lag_count(k: int) -> int:
    """Default number of matched lags: twice the parameter dimension."""
    return 2 * (k * k + k)


@dataclass
class ExponentProfile:
    """Exponents of a and f at consecutive, descending chain times.

    ``window`` is a list of ``(time, a_exp, f_exp)`` with times strictly
    decreasing by one. ``from_sparse`` accepts arbitrary distinct times
    and fills interior gaps with (0, 0) entries.
    """

    window: list[tuple[int, int, int]]

    def __post_init__(self):
        if not self.window:
            raise StructuralError("exponent profile must be nonempty")
        times = [t for t, _, _ in self.window]
        for prev, cur in zip(times, times[1:]):
            if cur != prev - 1:
                raise StructuralError(
                    "profile times must decrease by exactly 1; use from_sparse for gaps"
                )

    @classmethod
    def from_sparse(cls, entries) -> "ExponentProfile":
        by_time: dict[int, tuple[int, int]] = {}
        for t, a_exp, f_exp in entries:
            t = int(t)
            pa, pf = by_time.get(t, (0, 0))
            by_time[t] = (pa + int(a_exp), pf + int(f_exp))
        hi, lo = max(by_time), min(by_time)
        window = [(t, *by_time.get(t, (0, 0))) for t in range(hi, lo - 1, -1)]
        return cls(window)


def chain_product_expectation(model: RegimeModel, profile: ExponentProfile) -> float:
    """E[ prod_tau a(D_tau)^{a_exp} f(D_tau)^{f_exp} ] for the stationary chain.

    Computed as ``1' Q_{g_1} ... Q_{g_m} pi_{g_{m+1}}`` where g_tau(x) =
    a(x)^{a_exp} f(x)^{f_exp}, factors ordered most-recent time first and
    the oldest time folded into the weighted stationary vector.
    """
    pt = model.p.T
    pi = stationary_distribution(model.p)
    row = np.ones(model.k)
    for _, a_exp, f_exp in profile.window[:-1]:
        g = model.a**a_exp * model.f**f_exp
        row = (row * g) @ pt
    _, a_exp, f_exp = profile.window[-1]
    g_last = model.a**a_exp * model.f**f_exp
    return float(row @ (g_last * pi))


def _autocov_pieces(model: RegimeModel):
    """(G, resolvent, weighted stationary vector) shared by the moment ops."""
    pt = model.p.T
    g = model.a[:, None] * pt
    h = (model.a**2)[:, None] * pt
    if spectral_radius(h) >= 1.0:
        raise DomainError(
            "rho(A^2 P') >= 1: second-moment series diverges",
            {"rho": spectral_radius(h)},
        )
    try:
        resolvent = np.linalg.inv(np.eye(model.k) - h)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular resolvent: {exc}") from exc
    pi = stationary_distribution(model.p)
    v_pi = model.f**2 * pi
    return g, resolvent, v_pi


def theoretical_autocov(theta: ThetaVector, k: int) -> float:
    """Lag-k autocovariance c_k implied by the model parameters."""
    if k < 0:
        raise StructuralError(f"lag must be >= 0, got {k}")
    model = theta_to_model(theta)
    g, resolvent, v_pi = _autocov_pieces(model)
    w = resolvent @ v_pi
    row = np.ones(model.k)
    for _ in range(k):
        row = row @ g
    return float(row @ w)


def psi_vector(theta: ThetaVector, n_lags: int) -> np.ndarray:
    """Stack c_1 .. c_N as a function of theta."""
    if n_lags < 1:
        raise StructuralError(f"need at least one lag, got {n_lags}")
    model = theta_to_model(theta)
    g, resolvent, v_pi = _autocov_pieces(model)
    w = resolvent @ v_pi
    out = np.empty(n_lags)
    row = np.ones(model.k)
    for k in range(1, n_lags + 1):
        row = row @ g
        out[k - 1] = row @ w
    return out


def empirical_autocov(x, k: int) -> float:
    """Sample autocovariance (n-k)^{-1} sum_t X_{t+k} X_t (mean not removed)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    if k < 0:
        raise StructuralError(f"lag must be >= 0, got {k}")
    if k >= n:
        raise StructuralError(f"lag {k} needs a series longer than {n}")
    if k == 0:
        return float(np.dot(x, x) / n)
    return float(np.dot(x[k:], x[:-k]) / (n - k))


def empirical_autocov_vector(x, n_lags: int) -> np.ndarray:
    return np.array([empirical_autocov(x, k) for k in range(1, n_lags + 1)])


def _stationary_system(model: RegimeModel):
    """Matrix B and rhs v of the stationary-distribution linear system."""
    k = model.k
    b = np.vstack([(model.p.T - np.eye(k))[: k - 1, :], np.ones((1, k))])
    v = np.zeros(k)
    v[-1] = 1.0
    return b, v


def psi_and_jacobian(theta: ThetaVector, n_lags: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked autocovariances and their analytic Jacobian in one pass.

    Jacobian columns follow the flat layout (a, free transition entries,
    f). The three blocks use the product rule over powers of A P', the
    resolvent sensitivity, and the stationary-distribution sensitivity
    ``d pi = -B^{-1} (dB) pi`` for the transition entries.
    """
    model = theta_to_model(theta)
    k_reg = model.k
    dim = k_reg * k_reg + k_reg
    pt = model.p.T
    a, f = model.a, model.f
    g, resolvent, _ = _autocov_pieces(model)
    pi = stationary_distribution(model.p)
    v_pi = f**2 * pi
    w = resolvent @ v_pi  # (I - A^2 P')^{-1} V pi

    b_mat, _ = _stationary_system(model)
    try:
        b_inv = np.linalg.inv(b_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular stationary system B: {exc}") from exc

    # Shared power caches, stacked over the exponent axis.
    g_pows = [np.eye(k_reg)]
    for _ in range(n_lags):
        g_pows.append(g_pows[-1] @ g)
    ell = np.stack([np.ones(k_reg) @ g_pows[r] for r in range(n_lags)])  # 1' G^r
    m_vec = np.stack([g_pows[j] @ w for j in range(n_lags)])  # G^j w
    q_vec = m_vec @ pt.T  # row j holds P' G^j w
    s_row = np.stack(
        [np.ones(k_reg) @ g_pows[k] @ resolvent for k in range(n_lags + 1)]
    )
    u_vec = pt @ w
    psi = np.array([np.ones(k_reg) @ (g_pows[k] @ w) for k in range(1, n_lags + 1)])

    # Stationary-distribution sensitivity contribution per transition entry,
    # contracted against (1' G^k R) V; shape (n_lags+1, K, K-1).
    dpi_term = np.zeros((n_lags + 1, k_reg, max(k_reg - 1, 1)))
    left = s_row * f**2  # rows 1' G^k R V
    for i in range(k_reg):
        for j in range(k_reg - 1):
            dp = np.zeros((k_reg, k_reg))
            dp[i, j] = 1.0
            dp[i, k_reg - 1] = -1.0
            db = np.vstack([dp.T[: k_reg - 1, :], np.zeros((1, k_reg))])
            dpi = -b_inv @ (db @ pi)
            dpi_term[:, i, j] = left @ dpi

    ell_a = ell * a  # row r holds (1' G^r) A
    jac = np.empty((n_lags, dim))
    for lag in range(1, n_lags + 1):
        srow = s_row[lag]
        jac[lag - 1, :k_reg] = (
            np.einsum("ri,ri->i", ell[:lag], q_vec[lag - 1 :: -1])
            + 2.0 * a * srow * u_vec
        )
        if k_reg > 1:
            # coef[j] = sum_r (1'G^r A)_j m_{lag-1-r}; shape (K, K) over (j, i)
            coef = ell_a[:lag].T @ m_vec[lag - 1 :: -1]
            t1 = coef[: k_reg - 1] - coef[k_reg - 1]
            t2 = np.outer(
                srow[: k_reg - 1] * a[: k_reg - 1] ** 2
                - srow[k_reg - 1] * a[k_reg - 1] ** 2,
                w,
            )
            # block[i, j] = d psi / d pbar_ij
            block = t1.T + t2.T + dpi_term[lag]
            jac[lag - 1, k_reg : k_reg * k_reg] = block.reshape(-1)
        jac[lag - 1, k_reg * k_reg :] = 2.0 * f * srow[:k_reg] * pi
    return psi, jac


def jacobian_psi(theta: ThetaVector, n_lags: int) -> np.ndarray:
    """Analytic N x (K^2+K) Jacobian of the stacked autocovariances."""
    return psi_and_jacobian(theta, n_lags)[1]


def jacobian_psi_fd(
    theta: ThetaVector,
    n_lags: int,
    step: float = 1e-6,
    return_flags: bool = False,
):
    """Finite-difference Jacobian of the stacked autocovariances.

    Central differences coordinate by coordinate; when a perturbed point
    leaves the parameter space the coordinate falls back to a one-sided
    difference and is flagged.
    """
    base = theta.values
    dim = base.size
    jac = np.empty((n_lags, dim))
    one_sided = np.zeros(dim, dtype=bool)

    def shifted(j, h):
        vals = base.copy()
        vals[j] += h
        return ThetaVector(vals, theta.k)

    def psi_or_none(tv):
        if not validate(tv).in_theta:
            return None
        return psi_vector(tv, n_lags)

    psi0 = None
    for j in range(dim):
        up = psi_or_none(shifted(j, step))
        down = psi_or_none(shifted(j, -step))
        if up is not None and down is not None:
            jac[:, j] = (up - down) / (2.0 * step)
        elif up is not None or down is not None:
            if psi0 is None:
                psi0 = psi_vector(theta, n_lags)
            one_sided[j] = True
            if up is not None:
                jac[:, j] = (up - psi0) / step
            else:
                jac[:, j] = (psi0 - down) / step
        else:
            raise DomainError(
                f"coordinate {j}: both perturbed points leave the parameter space"
            )
    if return_flags:
        return jac, one_sided
    return jac


def numerical_rank(m, rel_tol: float = 1e-8) -> int:
    """Count singular values above rel_tol times the largest one."""
    m = np.asarray(m, dtype=float)
    if not np.isfinite(m).all():
        raise DomainError("matrix has non-finite entries")
    if m.size == 0:
        return 0
    sv = np.linalg.svd(m, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > rel_tol * sv[0]))


@dataclass
class MomentSet:
    """Theoretical and empirical autocovariances side by side."""

    n_lags: int
    theoretical: np.ndarray
    empirical: np.ndarray
    sample_size: int

    @classmethod
    def from_series(cls, theta: ThetaVector, x, n_lags: int) -> "MomentSet":
        x = np.asarray(x, dtype=float).reshape(-1)
        return cls(
            n_lags=n_lags,
            theoretical=psi_vector(theta, n_lags),
            empirical=empirical_autocov_vector(x, n_lags),
            sample_size=x.size,
        )
