"""Core data model: event sequences, component parameters, sampler state.

Conventions used throughout the package:

* event types are 0-based integers internally; the JSON-lines interchange
  format uses 1-based ``d`` (converted on read/write),
* every sequence lives on its own bounded horizon ``(0, T]``,
* a mixture component splits into the per-type base rates ``mu`` (the
  quantity the repulsive prior acts on) and the nonnegative triggering
  coefficients ``w``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ConfigError",
    "NumericalError",
    "DegenerateModelError",
    "EventSequence",
    "Dataset",
    "BasisConfig",
    "HawkesParams",
    "SgldSchedule",
    "DppConfig",
    "PriorBundle",
    "Component",
    "MixtureState",
    "validate_dataset",
    "read_jsonl",
    "write_jsonl",
]


class ConfigError(ValueError):
    """Invalid user-facing configuration or malformed input data."""


class NumericalError(RuntimeError):
    """Numerical failure (runaway intensity, singular kernel matrix, ...)."""


class DegenerateModelError(NumericalError):
    """Every component assigns probability zero to some observation."""


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class EventSequence:
    """A single event sequence observed on ``(0, horizon]``.

    times : (I,) float64, strictly increasing, 0 < t <= horizon
    types : (I,) int64, 0-based event-type marks
    """

    times: np.ndarray
    types: np.ndarray
    horizon: float
    id: str = ""
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=np.float64))
        object.__setattr__(self, "types", np.asarray(self.types, dtype=np.int64))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def violations(self, n_types: int | None = None) -> list[str]:
        """Human-readable list of contract violations (empty when valid)."""
        out = []
        sid = self.id or "<unnamed>"
        if not (self.horizon > 0):
            out.append(f"{sid}: horizon must be positive, got {self.horizon}")
        if self.times.shape != self.types.shape:
            out.append(f"{sid}: times/types length mismatch")
            return out
        if self.n_events:
            if np.any(np.diff(self.times) <= 0):
                out.append(f"{sid}: timestamps not strictly increasing")
            if self.times[0] <= 0 or self.times[-1] > self.horizon:
                out.append(f"{sid}: event times outside (0, {self.horizon}]")
            if self.types.min() < 0:
                out.append(f"{sid}: negative event type")
            if n_types is not None and self.types.size and self.types.max() >= n_types:
                out.append(
                    f"{sid}: event type {int(self.types.max()) + 1} exceeds "
                    f"declared type count {n_types}"
                )
        return out


@dataclass
class Dataset:
    """A collection of sequences sharing one event-type alphabet."""

    sequences: list[EventSequence]
    n_types: int
    metadata: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.sequences)

    @property
    def n_events(self) -> int:
        return sum(s.n_events for s in self.sequences)

    @property
    def total_time(self) -> float:
        return float(sum(s.horizon for s in self.sequences))

    def mean_rate_per_type(self) -> float:
        """Average events per unit time per type, pooled over the dataset."""
        tt = self.total_time
        if tt <= 0:
            raise ConfigError("dataset has no observation time")
        return self.n_events / (tt * self.n_types)

    def mean_gap(self) -> float:
        """Pooled mean inter-event time (total time / total events)."""
        n = self.n_events
        if n == 0:
            raise ConfigError("dataset has no events")
        return self.total_time / n

    def labels(self) -> np.ndarray | None:
        labs = [s.label for s in self.sequences]
        if any(l is None for l in labs):
            return None
        return np.asarray(labs, dtype=np.int64)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset([self.sequences[i] for i in idx], self.n_types, dict(self.metadata))


def validate_dataset(data: Dataset) -> list[str]:
    """Collect all contract violations of a dataset.

    Returns an empty list when the dataset is well formed.  Checks: at least
    one sequence, positive horizons, strictly increasing timestamps inside
    (0, T], and event types within the declared alphabet.
    """
    out = []
    if data.n_types < 1:
        out.append(f"n_types must be >= 1, got {data.n_types}")
    if len(data.sequences) == 0:
        out.append("dataset contains no sequences")
    for seq in data.sequences:
        out.extend(seq.violations(data.n_types))
    return out


# ---------------------------------------------------------------------------
# component parameters


@dataclass(frozen=True)
class BasisConfig:
    """Shared triggering-kernel basis: truncated Gaussian bumps on [0, tau_max].

    centers : (n_basis,) bump locations, inside [0, tau_max]
    sigma   : common bump width
    tau_max : hard truncation lag; contributions beyond it are exactly zero
    """

    centers: np.ndarray
    sigma: float
    tau_max: float

    def __post_init__(self):
        object.__setattr__(
            self, "centers", np.atleast_1d(np.asarray(self.centers, dtype=np.float64))
        )
        if self.sigma <= 0:
            raise ConfigError(f"basis sigma must be positive, got {self.sigma}")
        if self.tau_max <= 0:
            raise ConfigError(f"basis tau_max must be positive, got {self.tau_max}")
        if np.any(self.centers < 0) or np.any(self.centers > self.tau_max):
            raise ConfigError("basis centers must lie inside [0, tau_max]")

    @property
    def n_basis(self) -> int:
        return int(self.centers.size)

    @staticmethod
    def for_data(data: Dataset, n_basis: int = 3, tau_max: float | None = None,
                 sigma: float | None = None) -> "BasisConfig":
        """Data-driven default: tau_max = 3x the pooled mean inter-event gap,
        centers equally spaced on [0, tau_max], sigma = center spacing."""
        if n_basis < 1:
            raise ConfigError("n_basis must be >= 1")
        if tau_max is None:
            tau_max = 3.0 * data.mean_gap()
        if n_basis == 1:
            centers = np.array([0.0])
            default_sigma = tau_max
        else:
            centers = np.linspace(0.0, tau_max, n_basis)
            default_sigma = centers[1] - centers[0]
        return BasisConfig(centers, sigma if sigma is not None else default_sigma, tau_max)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "sigma": self.sigma, "tau_max": self.tau_max}

    @staticmethod
    def from_dict(d: dict) -> "BasisConfig":
        return BasisConfig(np.asarray(d["centers"]), float(d["sigma"]), float(d["tau_max"]))


@dataclass
class HawkesParams:
    """Self/cross-exciting intensity parameters for one component.

    mu : (D,) per-type base rates, > 0
    a  : (D, D, n_basis) triggering coefficients, >= 0;
         a[d, d', j] scales the influence of past type-d' events on type d
    """

    mu: np.ndarray
    a: np.ndarray
    basis: BasisConfig

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        D = self.mu.size
        if self.a.shape != (D, D, self.basis.n_basis):
            raise ConfigError(
                f"a must have shape {(D, D, self.basis.n_basis)}, got {self.a.shape}"
            )

    @property
    def n_types(self) -> int:
        return int(self.mu.size)

    def violations(self) -> list[str]:
        out = []
        if np.any(self.mu <= 0):
            out.append("base rates must be strictly positive")
        if np.any(self.a < 0):
            out.append("triggering coefficients must be nonnegative")
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.a))):
            out.append("parameters must be finite")
        return out

    def to_dict(self) -> dict:
        return {"mu": self.mu.tolist(), "a": self.a.tolist(), "basis": self.basis.to_dict()}

    @staticmethod
    def from_dict(d: dict) -> "HawkesParams":
        basis = BasisConfig.from_dict(d["basis"])
        return HawkesParams(np.asarray(d["mu"]), np.asarray(d["a"]), basis)


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class SgldSchedule:
    """Step-size schedule eps_j = eps0 * (offset + j)^(-decay) for the
    stochastic-gradient Langevin updates of triggering coefficients."""

    eps0: float = 1e-4
    decay: float = 0.51
    offset: float = 100.0
    minibatch: int = 16

    def __post_init__(self):
        if self.eps0 <= 0:
            raise ConfigError("sgld eps0 must be positive")
        if not (0.5 < self.decay <= 1.0):
            raise ConfigError(f"sgld decay must lie in (0.5, 1], got {self.decay}")
        if self.offset < 0:
            raise ConfigError("sgld offset must be nonnegative")
        if self.minibatch < 1:
            raise ConfigError("sgld minibatch must be >= 1")

    def step_size(self, j: int) -> float:
        return self.eps0 * (self.offset + j) ** (-self.decay)


@dataclass(frozen=True)
class DppConfig:
    """Spectral repulsive-prior configuration.

    The prior lives on a per-type base-rate box.  Unless explicit bounds are
    given, the box is derived from the data as
    ``[mean_rate / lo_factor, mean_rate * hi_factor]`` in every coordinate,
    where ``mean_rate`` is the pooled per-type event rate.
    """

    rho: float | None = None      # expected point count on the unit cube; None -> #initial clusters
    alpha: float = 0.1            # repulsion length scale in unit-cube coordinates
    lattice_radius: int = 2       # frequencies -L..L per dimension
    box_lo: tuple | None = None   # explicit per-coordinate bounds (override)
    box_hi: tuple | None = None
    lo_factor: float = 4.0
    hi_factor: float = 2.0

    def __post_init__(self):
        if self.rho is not None and self.rho <= 0:
            raise ConfigError("dpp rho must be positive")
        if self.alpha <= 0:
            raise ConfigError("dpp alpha must be positive")
        if self.lattice_radius < 0:
            raise ConfigError("dpp lattice_radius must be >= 0")
        if self.lo_factor <= 1 or self.hi_factor < 1:
            raise ConfigError("dpp box factors must satisfy lo_factor > 1, hi_factor >= 1")
        if (self.box_lo is None) != (self.box_hi is None):
            raise ConfigError("dpp box_lo and box_hi must be given together")


@dataclass(frozen=True)
class PriorBundle:
    """All prior hyper-parameters shared across modules.

    beta_w : rate of the iid exponential prior on triggering coefficients
    dpp    : repulsive prior over component base-rate vectors
    sgld   : Langevin step-size schedule for the triggering updates
    """

    beta_w: float = 10.0
    dpp: DppConfig = field(default_factory=DppConfig)
    sgld: SgldSchedule = field(default_factory=SgldSchedule)

    def __post_init__(self):
        if self.beta_w <= 0:
            raise ConfigError("beta_w must be positive")

    def w_log_prior(self, w: np.ndarray) -> float:
        """Log density of the iid Exp(beta_w) prior over one coefficient tensor."""
        if np.any(w < 0):
            return -math.inf
        return w.size * math.log(self.beta_w) - self.beta_w * float(w.sum())

    def w_sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        return rng.exponential(1.0 / self.beta_w, size=shape)


# ---------------------------------------------------------------------------
# mixture state


@dataclass
class Component:
    """One mixture component: base rates, triggering coefficients, weight seed.

    mu : (D,) base rates; w : (D, D, n_basis) coefficients; r : gamma weight
    seed (mixture weight = r / sum of all r).  ``loglik_col`` caches the
    per-sequence log likelihood under this component and is dropped whenever
    mu or w changes.
    """

    mu: np.ndarray
    w: np.ndarray
    r: float
    loglik_col: np.ndarray | None = None

    def params(self, basis: BasisConfig) -> HawkesParams:
        return HawkesParams(self.mu, self.w, basis)

    def copy(self) -> "Component":
        col = None if self.loglik_col is None else self.loglik_col.copy()
        return Component(self.mu.copy(), self.w.copy(), self.r, col)


@dataclass
class MixtureState:
    """Working state of the posterior sampler.

    allocated     : components with at least one assigned sequence
    non_allocated : empty components kept for dimension moves
    c             : (N,) assignment of each sequence to an allocated component
    u             : auxiliary positive scalar tied to the weight normalisation
    basis         : shared triggering basis (fixed during sampling)
    """

    allocated: list[Component]
    non_allocated: list[Component]
    c: np.ndarray
    u: float
    basis: BasisConfig

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.int64)

    @property
    def k(self) -> int:
        return len(self.allocated)

    @property
    def l(self) -> int:
        return len(self.non_allocated)

    @property
    def m_total(self) -> int:
        return self.k + self.l

    def counts(self) -> np.ndarray:
        return np.bincount(self.c, minlength=self.k)

    def t_total(self) -> float:
        return float(
            sum(comp.r for comp in self.allocated)
            + sum(comp.r for comp in self.non_allocated)
        )

    def all_mu(self) -> np.ndarray:
        """Stack of every component's base-rate vector, allocated first; (M, D)."""
        comps = self.allocated + self.non_allocated
        if not comps:
            return np.zeros((0, 0))
        return np.stack([comp.mu for comp in comps])

    def copy(self) -> "MixtureState":
        return MixtureState(
            [comp.copy() for comp in self.allocated],
            [comp.copy() for comp in self.non_allocated],
            self.c.copy(),
            self.u,
            self.basis,
        )

    def violations(self, n_sequences: int | None = None) -> list[str]:
        out = []
        if self.k < 1:
            out.append("state must keep at least one allocated component")
        if n_sequences is not None and self.c.size != n_sequences:
            out.append(f"c has length {self.c.size}, expected {n_sequences}")
        if self.c.size and self.k and (self.c.min() < 0 or self.c.max() >= self.k):
            out.append("assignments reference missing components")
        cnt = self.counts()
        if self.k and np.any(cnt == 0):
            out.append("allocated component without assigned sequences")
        for comp in self.allocated + self.non_allocated:
            if comp.r <= 0 or not np.isfinite(comp.r):
                out.append("component weight seed r must be positive and finite")
            if np.any(comp.mu <= 0):
                out.append("component base rates must be positive")
            if np.any(comp.w < 0):
                out.append("triggering coefficients must be nonnegative")
        if not (self.u > 0 and np.isfinite(self.u)):
            out.append("auxiliary u must be positive and finite")
        return out


# ---------------------------------------------------------------------------
# JSON-lines interchange

_JSON_KW = dict(ensure_ascii=False, separators=(",", ":"))


def write_jsonl(data: Dataset, path) -> None:
    """Write a dataset in the one-sequence-per-line JSON format.

    Each line carries ``{"id", "T", "label"?, "events": [{"t", "d"}, ...]}``
    with 1-based event types.  Reading the file back and writing it again
    reproduces the bytes exactly.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for seq in data.sequences:
            rec: dict = {"id": seq.id, "T": seq.horizon}
            if seq.label is not None:
                rec["label"] = int(seq.label)
            rec["events"] = [
                {"t": float(t), "d": int(d) + 1}
                for t, d in zip(seq.times, seq.types)
            ]
            fh.write(json.dumps(rec, **_JSON_KW) + "\n")


def read_jsonl(path, n_types: int | None = None) -> Dataset:
    """Read a JSON-lines dataset.

    When ``n_types`` is omitted the alphabet size is inferred as the largest
    observed mark (a sidecar metadata file, when present, is the more robust
    source and is handled by the CLI layer).
    """
    path = Path(path)
    sequences = []
    max_d = 0
    with path.open("r", encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{ln}: malformed JSON ({exc})") from None
            try:
                events = rec.get("events", [])
                times = np.array([ev["t"] for ev in events], dtype=np.float64)
                types = np.array([int(ev["d"]) - 1 for ev in events], dtype=np.int64)
                seq = EventSequence(
                    times,
                    types,
                    float(rec["T"]),
                    id=str(rec.get("id", f"line-{ln}")),
                    label=rec.get("label"),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"{path}:{ln}: bad record ({exc})") from None
            if types.size:
                max_d = max(max_d, int(types.max()) + 1)
            sequences.append(seq)
    return Dataset(sequences, n_types if n_types is not None else max(max_d, 1))
