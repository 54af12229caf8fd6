"""Path simulation: hidden chains, five innovation families, AR recursion.

All generators are deterministic given a seed. A master seed spawns
independent substreams keyed by integers (replication index, purpose) so
Monte Carlo runs reproduce exactly regardless of execution order or
worker count.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, NumericalError, StructuralError
from .model import RegimeModel, ThetaVector, stationary_distribution, theta_to_model, validate

__all__ = [
    "NoiseSpec",
    "SimulatedPath",
    "NOISE_KINDS",
    "substream",
    "simulate_chain",
    "generate_noise",
    "simulate_arhmc",
    "preprocess_series",
    "read_series_csv",
    "write_series_csv",
]

NOISE_KINDS = ("strong", "weak1", "weak2", "weak3", "garch")

GARCH_BURNIN = 500
DEFAULT_BURNIN = 1000


@dataclass(frozen=True)
class NoiseSpec:
    """One of the five innovation generators.

    kind
        'strong'  : eta_t = u_t (i.i.d. standard normal)
        'weak1'   : eta_t = u_t * u_{t-1}
        'weak2'   : eta_t = u_t^2 * u_{t-1}          (variance 3, kept as is)
        'weak3'   : eta_t = u_t / (|u_{t-1}| + 1)
        'garch'   : eta_t = sqrt(h_t) u_t with
                    h_t = omega0 + a0 eta_{t-1}^2 + beta0 h_{t-1}
    garch_params
        (omega0, a0, beta0); required iff kind == 'garch', with omega0 > 0
        and a0 + beta0 < 1 so the unconditional variance is finite.
    """

    kind: str
    garch_params: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise DomainError(f"unknown noise kind {self.kind!r}", {"kinds": NOISE_KINDS})
        if self.kind == "garch":
            if self.garch_params is None:
                raise DomainError("garch noise requires garch_params (omega0, a0, beta0)")
            w, a, b = self.garch_params
            if w <= 0 or a < 0 or b < 0:
                raise DomainError("garch requires omega0 > 0 and a0, beta0 >= 0")
            if a + b >= 1.0:
                raise DomainError(
                    "garch requires a0 + beta0 < 1", {"a0": a, "beta0": b}
                )
        elif self.garch_params is not None:
            raise DomainError(f"garch_params only valid for kind='garch', not {self.kind!r}")

    def to_json_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.garch_params is not None:
            out["garch_params"] = [float(v) for v in self.garch_params]
        return out

    @classmethod
    def from_json_dict(cls, obj: dict) -> "NoiseSpec":
        params = obj.get("garch_params")
        return cls(obj["kind"], tuple(params) if params is not None else None)


@dataclass
class SimulatedPath:
    """A simulated series with optional latent chain and innovations."""

    x: np.ndarray
    states: np.ndarray | None = None
    eta: np.ndarray | None = None
    seed: int | None = None
    burnin: int = DEFAULT_BURNIN

    def __post_init__(self):
        n = len(self.x)
        for name, arr in (("states", self.states), ("eta", self.eta)):
            if arr is not None and len(arr) != n:
                raise StructuralError(f"{name} length {len(arr)} != x length {n}")


def substream(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic, independent substream of a master seed.

    The key is an integer path (e.g. replication index, purpose code);
    different keys give statistically independent streams.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def _coerce_rng(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    seed = int(rng)
    return np.random.default_rng(seed), seed


def simulate_chain(p, n: int, rng) -> np.ndarray:
    """Simulate a stationary Markov chain; returns states in 1..K.

    The first state is drawn from the stationary distribution and each
    following state from the row of its predecessor.
    """
    p = np.asarray(p, dtype=float)
    pi = stationary_distribution(p)  # raises on reducible input
    rng, _ = _coerce_rng(rng)
    k = p.shape[0]
    if n <= 0:
        raise StructuralError(f"chain length must be positive, got {n}")
    if k == 1:
        return np.ones(n, dtype=np.int64)
    cum_rows = np.cumsum(p, axis=1)
    cum_rows[:, -1] = 1.0
    u = rng.random(n)
    states = np.empty(n, dtype=np.int64)
    s = int(np.searchsorted(np.cumsum(pi), u[0], side="right"))
    states[0] = s + 1
    for t in range(1, n):
        s = int(np.searchsorted(cum_rows[s], u[t], side="right"))
        states[t] = s + 1
    return states


def generate_noise(spec: NoiseSpec, n: int, rng) -> np.ndarray:
    """Generate n innovations per the requested family.

    Lagged forms draw one extra pre-sample u_0; the GARCH recursion is
    initialized at its unconditional variance and warmed up over 500
    discarded steps.
    """
    if n <= 0:
        raise StructuralError(f"noise length must be positive, got {n}")
    rng, _ = _coerce_rng(rng)
    kind = spec.kind
    if kind == "strong":
        return rng.standard_normal(n)
    if kind in ("weak1", "weak2", "weak3"):
        u = rng.standard_normal(n + 1)
        cur, prev = u[1:], u[:-1]
        if kind == "weak1":
            return cur * prev
        if kind == "weak2":
            return cur**2 * prev
        return cur / (np.abs(prev) + 1.0)
    # garch
    w, a, b = spec.garch_params
    total = n + GARCH_BURNIN
    u = rng.standard_normal(total)
    eta = np.empty(total)
    h = w / (1.0 - a - b)
    for t in range(total):
        eta[t] = np.sqrt(h) * u[t]
        h = w + a * eta[t] ** 2 + b * h
    return eta[GARCH_BURNIN:]


def simulate_arhmc(
    model: RegimeModel | ThetaVector,
    spec: NoiseSpec,
    n: int,
    burnin: int = DEFAULT_BURNIN,
    rng=None,
    include_states: bool = False,
    include_eta: bool = False,
) -> SimulatedPath:
    """Simulate X_t = a(D_t) X_{t-1} + f(D_t) eta_t from X = 0 at -burnin.

    The first ``burnin`` values are discarded. The provided stream is
    split into independent chain and innovation substreams.
    """
    if isinstance(model, ThetaVector):
        report = validate(model)
        if not report.in_theta:
            raise DomainError(
                "model is outside the parameter space: " + "; ".join(report.messages)
            )
        model = theta_to_model(model)
    if burnin < 0:
        raise StructuralError(f"burnin must be >= 0, got {burnin}")
    if rng is None:
        rng = np.random.default_rng()
    rng, seed = _coerce_rng(rng)
    chain_rng, noise_rng = rng.spawn(2)
    total = n + burnin
    states = simulate_chain(model.p, total, chain_rng)
    eta = generate_noise(spec, total, noise_rng)
    a_t = model.a[states - 1]
    f_eta = model.f[states - 1] * eta
    x = np.empty(total)
    prev = 0.0
    for t in range(total):
        prev = a_t[t] * prev + f_eta[t]
        x[t] = prev
    if not np.isfinite(x).all():
        raise NumericalError("non-finite path produced; configuration is explosive")
    return SimulatedPath(
        x=x[burnin:],
        states=states[burnin:] if include_states else None,
        eta=eta[burnin:] if include_eta else None,
        seed=seed,
        burnin=burnin,
    )


def preprocess_series(raw, difference: bool = False, demean: bool = False) -> np.ndarray:
    """Optionally difference the series, then subtract the sample mean."""
    x = np.asarray(raw, dtype=float).reshape(-1)
    if x.size == 0:
        raise StructuralError("empty series")
    if difference:
        if x.size < 2:
            raise StructuralError("differencing needs at least two observations")
        x = np.diff(x)
    if demean:
        x = x - x.mean()
    return x


def read_series_csv(path) -> np.ndarray:
    """Read a one-value-per-line CSV, auto-skipping a single header line."""
    lines = [ln.strip() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise StructuralError(f"empty series file: {path}")
    start = 0
    try:
        float(lines[0])
    except ValueError:
        start = 1
    try:
        return np.array([float(ln) for ln in lines[start:]], dtype=float)
    except ValueError as exc:
        raise StructuralError(f"non-numeric value in series file {path}: {exc}") from exc


def write_series_csv(path, x) -> None:
    Path(path).write_text("\n".join(repr(float(v)) for v in np.asarray(x)) + "\n")
