"""Parameter space, structured model views and validity checks.

A K-regime switching AR(1) model is parameterized by a flat vector of
length K^2 + K laid out as

* positions ``0 .. K-1``       -- AR coefficient ``a(s)`` per regime,
* positions ``K .. K^2-1``     -- free transition probabilities, row by
  row, each row contributing its first ``K-1`` entries (the last column
  of every row is derived as one minus the row sum),
* positions ``K^2 .. K^2+K-1`` -- noise amplitude ``f(s)`` per regime.

Membership in the parameter space requires an irreducible transition
matrix with all entries in (0, 1), a nonzero amplitude vector and a
spectral radius of ``diag(a)^2 P'`` strictly below one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .errors import DomainError, NumericalError, StructuralError

__all__ = [
    "ThetaVector",
    "RegimeModel",
    "ValidationReport",
    "theta_to_model",
    "model_to_theta",
    "stationary_distribution",
    "spectral_radius",
    "validate",
    "canonicalize",
    "permute_sign",
    "coordinate_names",
    "regime_count_for_length",
    "model_from_json_dict",
]

FloatArray = NDArray[np.float64]


def regime_count_for_length(length: int) -> int:
    """Invert ``length = K^2 + K``; raises if no integer K matches."""
    k = int(round((-1.0 + math.sqrt(1.0 + 4.0 * length)) / 2.0))
    if k < 1 or k * k + k != length:
        raise StructuralError(
            f"vector length {length} is not of the form K^2+K",
            {"length": length},
        )
    return k


@dataclass
class ThetaVector:
    """Flat parameter vector together with its regime count.

    Attributes
    ----------
    values : ndarray
        Parameter vector of length ``k**2 + k``.
    k : int
        Number of regimes.
    """

    values: FloatArray
    k: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        if self.k < 1:
            raise StructuralError(f"regime count must be >= 1, got {self.k}")
        expected = self.k * self.k + self.k
        if self.values.size != expected:
            raise StructuralError(
                f"theta has length {self.values.size}, expected {expected} for K={self.k}",
                {"length": int(self.values.size), "k": self.k},
            )

    @classmethod
    def from_values(cls, values) -> "ThetaVector":
        """Build a ThetaVector inferring K from the vector length."""
        arr = np.asarray(values, dtype=float).reshape(-1)
        return cls(arr, regime_count_for_length(arr.size))

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def a(self) -> FloatArray:
        return self.values[: self.k]

    @property
    def p_free(self) -> FloatArray:
        return self.values[self.k : self.k * self.k]

    @property
    def f(self) -> FloatArray:
        return self.values[self.k * self.k :]

    def copy(self) -> "ThetaVector":
        return ThetaVector(self.values.copy(), self.k)

    def to_json_dict(self) -> dict:
        return {"k": self.k, "theta": [float(v) for v in self.values]}


@dataclass
class RegimeModel:
    """Structured view of a parameter vector.

    Attributes
    ----------
    k : int
        Number of regimes.
    a : ndarray, shape (k,)
        AR coefficient per regime.
    p : ndarray, shape (k, k)
        Row-stochastic transition matrix; ``p[i, j]`` is the probability
        of moving from state i to state j.
    f : ndarray, shape (k,)
        Noise amplitude per regime.
    """

    k: int
    a: FloatArray
    p: FloatArray
    f: FloatArray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float).reshape(-1)
        self.p = np.asarray(self.p, dtype=float)
        self.f = np.asarray(self.f, dtype=float).reshape(-1)
        if self.a.size != self.k or self.f.size != self.k:
            raise StructuralError("a and f must have length K")
        if self.p.shape != (self.k, self.k):
            raise StructuralError(f"P must be {self.k}x{self.k}, got {self.p.shape}")

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "a": [float(v) for v in self.a],
            "p": [[float(v) for v in row] for row in self.p],
            "f": [float(v) for v in self.f],
        }


@dataclass
class ValidationReport:
    """Outcome of the membership and stationarity checks.

    ``in_theta`` is true when the vector maps to a valid model, the
    transition matrix is irreducible and ``rho(A^2 P') < 1``.
    ``lyapunov_sufficient`` carries ``sum_i pi(i) log|a(i)|`` when every
    AR coefficient is nonzero (None otherwise); a negative value is a
    sufficient condition for strict stationarity, even when some regime
    is explosive (``|a(i)| > 1``).
    """

    in_theta: bool
    spectral_radii: dict[float, float]
    lyapunov_sufficient: float | None
    irreducible: bool
    messages: list[str] = field(default_factory=list)

    @property
    def stationary_sufficient(self) -> bool:
        return self.lyapunov_sufficient is not None and self.lyapunov_sufficient < 0.0


def theta_to_model(theta: ThetaVector) -> RegimeModel:
    """Expand a flat parameter vector into (a, P, f).

    The last column of each transition row is derived as one minus the
    sum of the row's free entries and must land in (0, 1); for K=1 the
    single transition probability is forced to one.
    """
    k = theta.k
    a = theta.a.copy()
    f = theta.f.copy()
    p = np.empty((k, k), dtype=float)
    free = theta.p_free.reshape(k, k - 1) if k > 1 else np.empty((k, 0))
    for i in range(k):
        row_free = free[i]
        last = 1.0 - row_free.sum()
        if k > 1:
            bad = (row_free <= 0.0) | (row_free >= 1.0)
            if bad.any() or not (0.0 < last < 1.0):
                raise DomainError(
                    f"transition row {i + 1} is not a valid probability row",
                    {"row": i + 1, "free": row_free.tolist(), "derived": float(last)},
                )
        p[i, :-1] = row_free
        p[i, -1] = last if k > 1 else 1.0
    return RegimeModel(k=k, a=a, p=p, f=f)


def model_to_theta(model: RegimeModel) -> ThetaVector:
    """Flatten (a, P, f) back into the canonical layout."""
    k = model.k
    parts = [model.a, model.p[:, : k - 1].reshape(-1), model.f]
    return ThetaVector(np.concatenate(parts), k)


def _is_irreducible(p: FloatArray, tol: float = 1e-12) -> bool:
    """Strong connectivity of the directed graph with edges p[i, j] > tol."""
    k = p.shape[0]
    adj = p > tol

    def reachable(adj_mat):
        seen = np.zeros(k, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            i = stack.pop()
            for j in np.nonzero(adj_mat[i])[0]:
                if not seen[j]:
                    seen[j] = True
                    stack.append(int(j))
        return seen.all()

    return reachable(adj) and reachable(adj.T)


def stationary_distribution(p, check_irreducible: bool = True) -> FloatArray:
    """Stationary distribution pi of a row-stochastic matrix P.

    Solves the K x K linear system whose first K-1 rows are ``P' - I``
    and whose last row is all ones, with right-hand side (0, ..., 0, 1).
    Row sums are allowed a small slack (1e-2) so that published, rounded
    transition matrices can be used directly.
    """
    p = np.asarray(p, dtype=float)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise StructuralError(f"P must be square, got shape {p.shape}")
    k = p.shape[0]
    if not np.isfinite(p).all() or (p < 0).any():
        raise DomainError("P must have finite nonnegative entries")
    row_sums = p.sum(axis=1)
    if np.abs(row_sums - 1.0).max() > 1e-2:
        raise DomainError(
            "rows of P must sum to 1", {"row_sums": row_sums.tolist()}
        )
    if check_irreducible and not _is_irreducible(p):
        raise DomainError("P is reducible; stationary distribution not unique")
    b = np.vstack([(p.T - np.eye(k))[: k - 1, :], np.ones((1, k))])
    v = np.zeros(k)
    v[-1] = 1.0
    try:
        pi = np.linalg.solve(b, v)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular stationary-distribution system: {exc}") from exc
    if (pi <= 0).any():
        raise NumericalError(
            "stationary distribution has nonpositive entries", {"pi": pi.tolist()}
        )
    return pi


def spectral_radius(m) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    m = np.asarray(m, dtype=float)
    if not np.isfinite(m).all():
        raise DomainError("matrix has non-finite entries")
    if m.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(m)).max())


def validate(theta: ThetaVector, beta_list=(2.0, 4.0, 8.0)) -> ValidationReport:
    """Run all membership and stationarity checks without raising.

    Reports ``rho(|A|^beta P')`` for each requested exponent (absolute
    values keep non-even exponents well defined; for even exponents this
    coincides with ``rho(A^beta P')``), graph irreducibility and the
    log-moment stationarity value.
    """
    messages: list[str] = []
    try:
        model = theta_to_model(theta)
    except (DomainError, StructuralError) as exc:
        return ValidationReport(
            in_theta=False,
            spectral_radii={},
            lyapunov_sufficient=None,
            irreducible=False,
            messages=[str(exc)],
        )
    pt = model.p.T
    radii: dict[float, float] = {}
    for beta in beta_list:
        radii[float(beta)] = spectral_radius(np.diag(np.abs(model.a) ** beta) @ pt)
    irreducible = _is_irreducible(model.p)
    if not irreducible:
        messages.append("transition matrix is reducible")
    lyap = None
    if np.all(model.a != 0.0) and irreducible:
        pi = stationary_distribution(model.p)
        lyap = float(np.dot(pi, np.log(np.abs(model.a))))
    elif np.any(model.a == 0.0):
        messages.append("lyapunov value unavailable: some a(i) = 0")
    rho2 = radii.get(2.0)
    if rho2 is None:
        rho2 = spectral_radius(np.diag(model.a**2) @ pt)
        radii[2.0] = rho2
    stable = rho2 < 1.0
    if not stable:
        messages.append(f"rho(A^2 P') = {rho2:.6g} >= 1")
    f_ok = bool(np.any(model.f != 0.0))
    if not f_ok:
        messages.append("amplitude vector f is identically zero")
    return ValidationReport(
        in_theta=bool(stable and irreducible and f_ok),
        spectral_radii=radii,
        lyapunov_sufficient=lyap,
        irreducible=irreducible,
        messages=messages,
    )


def permute_sign(theta: ThetaVector, perm, signs=None) -> ThetaVector:
    """Relabel regimes by ``perm`` and flip amplitude signs by ``signs``.

    ``perm`` maps new index -> old index. Moment functions are invariant
    under any such transform, which is the identifiability gap the
    canonical form resolves.
    """
    perm = np.asarray(perm, dtype=int)
    model = theta_to_model(theta)
    a = model.a[perm]
    f = model.f[perm]
    p = model.p[np.ix_(perm, perm)]
    if signs is not None:
        f = f * np.asarray(signs, dtype=float)
    return model_to_theta(RegimeModel(k=theta.k, a=a, p=p, f=f))


def canonicalize(theta: ThetaVector, mask=None):
    """Canonical representative: regimes sorted by ``a`` ascending (ties
    broken by ``f^2`` ascending) and nonnegative amplitudes.

    When ``mask`` (an iterable of fixed coordinate indices) is given, the
    permutation step is skipped so fixed coordinates keep their meaning,
    and only unmasked amplitude entries are sign-normalized.

    Returns
    -------
    (theta, perm, signs)
        The canonical vector plus the permutation (new -> old) and sign
        vector that were applied.
    """
    model = theta_to_model(theta)
    k = theta.k
    masked = set(int(i) for i in mask) if mask is not None else set()
    if masked:
        perm = np.arange(k)
    else:
        perm = np.lexsort((model.f**2, model.a))
    a = model.a[perm]
    f = model.f[perm]
    p = model.p[np.ix_(perm, perm)]
    signs = np.ones(k)
    for i in range(k):
        coord = k * k + i
        if f[i] < 0.0 and coord not in masked:
            signs[i] = -1.0
    f = f * signs
    out = model_to_theta(RegimeModel(k=k, a=a, p=p, f=f))
    return out, tuple(int(i) for i in perm), tuple(float(s) for s in signs)


def coordinate_names(k: int) -> list[str]:
    """Human-readable coordinate labels: a1..aK, pij (j < K), f1..fK."""
    names = [f"a{i + 1}" for i in range(k)]
    for i in range(k):
        for j in range(k - 1):
            names.append(f"p{i + 1}{j + 1}")
    names += [f"f{i + 1}" for i in range(k)]
    return names


def model_from_json_dict(obj: dict) -> ThetaVector:
    """Accept either ``{"k", "theta"}`` or ``{"k", "a", "p", "f"}``."""
    if not isinstance(obj, dict) or "k" not in obj:
        raise StructuralError("model JSON must be an object with a 'k' field")
    k = int(obj["k"])
    if "theta" in obj:
        return ThetaVector(np.asarray(obj["theta"], dtype=float), k)
    for key in ("a", "p", "f"):
        if key not in obj:
            raise StructuralError(f"model JSON missing field '{key}'")
    model = RegimeModel(
        k=k,
        a=np.asarray(obj["a"], dtype=float),
        p=np.asarray(obj["p"], dtype=float),
        f=np.asarray(obj["f"], dtype=float),
    )
    return model_to_theta(model)
