"""Intensity backbone: truncated-Gaussian triggering kernels, exact
log-likelihoods and gradients, and the simulation-only intensity models.

The conditional intensity of a component for type ``d`` is

    lambda_d(t) = mu_d + sum_{t_i < t} sum_j a[d, d_i, j] * g_j(t - t_i)

with ``g_j`` a Gaussian bump of width ``sigma`` centred at ``c_j`` and hard
truncated outside ``[0, tau_max]``.  Because the intensity is linear in
``(mu, a)`` given the basis, each sequence reduces to two fixed summaries:
the event-by-event excitation features and the integrated (compensator)
features.  Everything downstream (likelihood columns, gradients, proposals)
is assembled from those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import BasisConfig, Dataset, EventSequence, HawkesParams, NumericalError

__all__ = [
    "basis_values",
    "basis_integrals",
    "hawkes_intensity",
    "hawkes_compensator",
    "hawkes_loglik",
    "hawkes_loglik_grad",
    "SequenceFeatures",
    "sequence_features",
    "FeatureSet",
    "HomogeneousPoisson",
    "SinusoidPoisson",
    "SelfCorrecting",
    "HawkesModel",
    "sim_intensity",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def basis_values(basis: BasisConfig, dt) -> np.ndarray:
    """Evaluate every bump at the lags ``dt``; shape (..., n_basis).

    Zero outside the support (0, tau_max]; the left end is open because only
    strictly earlier events excite.
    """
    dt = np.asarray(dt, dtype=np.float64)[..., None]
    z = (dt - basis.centers) / basis.sigma
    vals = (_INV_SQRT_2PI / basis.sigma) * np.exp(-0.5 * z * z)
    keep = (dt > 0) & (dt <= basis.tau_max)
    return np.where(keep, vals, 0.0)


def basis_integrals(basis: BasisConfig, s) -> np.ndarray:
    """Exact integral of each bump over [0, min(s, tau_max)]; shape (..., n_basis)."""
    s = np.asarray(s, dtype=np.float64)[..., None]
    upper = np.minimum(np.maximum(s, 0.0), basis.tau_max)
    hi = ndtr((upper - basis.centers) / basis.sigma)
    lo = ndtr((0.0 - basis.centers) / basis.sigma)
    return hi - lo


def hawkes_intensity(params: HawkesParams, times, types, t: float, d: int | None = None):
    """Conditional intensity at time ``t`` given the history strictly before it.

    Returns the (D,) per-type vector, or a scalar when ``d`` is given.
    """
    times = np.asarray(times, dtype=np.float64)
    types = np.asarray(types, dtype=np.int64)
    past = times < t
    lam = params.mu.copy()
    if np.any(past):
        dts = t - times[past]
        keep = dts <= params.basis.tau_max
        if np.any(keep):
            g = basis_values(params.basis, dts[keep])  # (n_past, n_basis)
            src = types[past][keep]
            # sum_j a[:, src, j] * g[., j] for each past event
            lam = lam + np.einsum("dpj,pj->d", params.a[:, src, :], g)
    return lam if d is None else float(lam[d])


def hawkes_compensator(params: HawkesParams, seq: EventSequence) -> float:
    """Closed-form integral of the total intensity over (0, horizon]."""
    total = seq.horizon * float(params.mu.sum())
    if seq.n_events:
        G = basis_integrals(params.basis, seq.horizon - seq.times)  # (I, n_basis)
        col = params.a.sum(axis=0)  # (D, n_basis): influence of a source type on all targets
        total += float(np.einsum("ij,ij->", col[seq.types], G))
    return total


# ---------------------------------------------------------------------------
# per-sequence feature summaries


@dataclass
class SequenceFeatures:
    """Fixed likelihood summaries of one sequence under a given basis.

    excite : (I, D, n_basis) accumulated bump values at each event from
             strictly earlier events, split by source type
    comp   : (D, n_basis) integrated bump mass per source type up to the horizon
    """

    types: np.ndarray
    excite: np.ndarray
    comp: np.ndarray
    horizon: float

    @property
    def n_events(self) -> int:
        return int(self.types.size)


_PAIRWISE_LIMIT = 1024  # above this, build features with the windowed loop


def sequence_features(seq: EventSequence, basis: BasisConfig, n_types: int) -> SequenceFeatures:
    times, types = seq.times, seq.types
    I = times.size
    nb = basis.n_basis
    excite = np.zeros((I, n_types, nb))
    if I and I <= _PAIRWISE_LIMIT:
        dt = times[:, None] - times[None, :]  # dt[i, l] = t_i - t_l
        g = basis_values(basis, dt)  # (I, I, nb); zero outside (0, tau_max]
        onehot = np.zeros((I, n_types))
        onehot[np.arange(I), types] = 1.0
        excite = np.einsum("ilj,ld->idj", g, onehot)
    elif I:
        for i in range(I):
            lo = np.searchsorted(times, times[i] - basis.tau_max, side="left")
            if lo == i:
                continue
            g = basis_values(basis, times[i] - times[lo:i])
            np.add.at(excite[i], types[lo:i], g)
    comp = np.zeros((n_types, nb))
    if I:
        G = basis_integrals(basis, seq.horizon - times)
        np.add.at(comp, types, G)
    return SequenceFeatures(types.copy(), excite, comp, seq.horizon)


def _loglik_from_features(mu: np.ndarray, a: np.ndarray, f: SequenceFeatures) -> float:
    lam = mu[f.types] + np.einsum("idj,idj->i", a[f.types], f.excite)
    if np.any(lam <= 0):
        return -math.inf
    comp = f.horizon * float(mu.sum()) + float(np.einsum("dj,dj->", a.sum(axis=0), f.comp))
    return float(np.log(lam).sum()) - comp


def hawkes_loglik(params: HawkesParams, seq: EventSequence) -> float:
    """Exact log likelihood of one sequence: sum of event log-intensities
    minus the compensator.  Returns -inf when some event has zero intensity."""
    f = sequence_features(seq, params.basis, params.n_types)
    return _loglik_from_features(params.mu, params.a, f)


def hawkes_loglik_grad(params: HawkesParams, seq: EventSequence):
    """Gradient of :func:`hawkes_loglik` in ``(mu, a)``; shapes (D,), (D, D, n_basis)."""
    D = params.n_types
    f = sequence_features(seq, params.basis, D)
    lam = params.mu[f.types] + np.einsum("idj,idj->i", params.a[f.types], f.excite)
    if np.any(lam <= 0):
        raise NumericalError("zero intensity at an observed event")
    inv = 1.0 / lam
    dmu = np.bincount(f.types, weights=inv, minlength=D) - f.horizon
    da = np.zeros_like(params.a)
    np.add.at(da, f.types, inv[:, None, None] * f.excite)
    da -= f.comp[None, :, :]
    return dmu, da


class FeatureSet:
    """Padded, batched feature summaries of a whole dataset.

    All heavy sampler arithmetic — likelihood columns over every sequence,
    minibatch gradients, base-rate proposal deltas — runs on these arrays.
    """

    def __init__(self, data: Dataset, basis: BasisConfig):
        self.basis = basis
        self.n_types = data.n_types
        feats = [sequence_features(s, basis, data.n_types) for s in data.sequences]
        n = len(feats)
        imax = max((f.n_events for f in feats), default=0)
        imax = max(imax, 1)
        D, nb = data.n_types, basis.n_basis
        self.n = n
        self.types = np.zeros((n, imax), dtype=np.int64)
        self.mask = np.zeros((n, imax), dtype=bool)
        self.excite = np.zeros((n, imax, D, nb))
        self.comp = np.zeros((n, D, nb))
        self.horizons = np.zeros(n)
        for i, f in enumerate(feats):
            m = f.n_events
            self.types[i, :m] = f.types
            self.mask[i, :m] = True
            self.excite[i, :m] = f.excite
            self.comp[i] = f.comp
            self.horizons[i] = f.horizon
        self.onehot = np.zeros((n, imax, D))
        ii, jj = np.nonzero(self.mask)
        self.onehot[ii, jj, self.types[ii, jj]] = 1.0
        self.n_events = self.mask.sum(axis=1)

    # -- likelihood columns -------------------------------------------------

    def _event_rates(self, mu: np.ndarray, a: np.ndarray, idx=None):
        ex = self.excite if idx is None else self.excite[idx]
        ty = self.types if idx is None else self.types[idx]
        return mu[ty] + np.einsum("nidj,nidj->ni", a[ty], ex)

    def loglik_all(self, mu: np.ndarray, a: np.ndarray, idx=None) -> np.ndarray:
        """Per-sequence log likelihood under (mu, a); shape (N,) or (len(idx),)."""
        mask = self.mask if idx is None else self.mask[idx]
        comp = self.comp if idx is None else self.comp[idx]
        horiz = self.horizons if idx is None else self.horizons[idx]
        lam = self._event_rates(mu, a, idx)
        bad = (lam <= 0) & mask
        lam_safe = np.where(lam > 0, lam, 1.0)
        ev = np.where(mask, np.log(lam_safe), 0.0).sum(axis=1)
        out = ev - horiz * mu.sum() - np.einsum("dj,ndj->n", a.sum(axis=0), comp)
        out[bad.any(axis=1)] = -np.inf
        return out

    def loglik_sum(self, mu: np.ndarray, a: np.ndarray, idx=None) -> float:
        return float(self.loglik_all(mu, a, idx).sum())

    # -- base-rate move helpers ---------------------------------------------

    def excitation(self, a: np.ndarray, idx) -> np.ndarray:
        """Event-wise excitation sum_{d',j} a[d_i, d', j] * excite; (B, I_max)."""
        return np.einsum("nidj,nidj->ni", a[self.types[idx]], self.excite[idx])

    def event_term(self, mu: np.ndarray, excitation: np.ndarray, idx) -> float:
        """Sum over the chosen sequences of event log-intensities for a given
        base-rate vector, reusing a precomputed excitation block."""
        lam = mu[self.types[idx]] + excitation
        mask = self.mask[idx]
        if np.any((lam <= 0) & mask):
            return -math.inf
        lam_safe = np.where(lam > 0, lam, 1.0)
        return float(np.where(mask, np.log(lam_safe), 0.0).sum())

    # -- triggering-coefficient gradient ------------------------------------

    def grad_a(self, mu: np.ndarray, a: np.ndarray, idx) -> np.ndarray | None:
        """Summed gradient of the log likelihood in ``a`` over sequences ``idx``.

        Returns None when some event rate is nonpositive (invalid point).
        """
        lam = self._event_rates(mu, a, idx)
        mask = self.mask[idx]
        if np.any((lam <= 0) & mask):
            return None
        inv = np.where(mask, 1.0 / np.where(lam > 0, lam, 1.0), 0.0)
        grad = np.einsum("nid,ni,nixj->dxj", self.onehot[idx], inv, self.excite[idx])
        grad -= self.comp[idx].sum(axis=0)[None, :, :]
        return grad


# ---------------------------------------------------------------------------
# simulation-only intensity models
#
# Each model exposes per-type rates, a dominating constant valid on a lookahead
# window given the frozen history, and the window length itself.


class HomogeneousPoisson:
    """Constant per-type rates."""

    def __init__(self, rates):
        self.rates = np.atleast_1d(np.asarray(rates, dtype=np.float64))
        if np.any(self.rates < 0):
            raise NumericalError("Poisson rates must be nonnegative")
        self.n_types = self.rates.size

    def evaluate(self, t, times, types) -> np.ndarray:
        return self.rates

    def upper_bound(self, t, times, types, until) -> float:
        return float(self.rates.sum())

    def lookahead(self) -> float:
        return math.inf

    def describe(self) -> dict:
        return {"model": "homogeneous_poisson", "rates": self.rates.tolist()}


class SinusoidPoisson:
    """Inhomogeneous Poisson with rate base + amp * sin(2 pi t / period) per type."""

    def __init__(self, base, amp, period: float):
        self.base = np.atleast_1d(np.asarray(base, dtype=np.float64))
        self.amp = np.atleast_1d(np.asarray(amp, dtype=np.float64))
        self.period = float(period)
        if np.any(self.amp < 0) or np.any(self.base < self.amp):
            raise NumericalError("sinusoid rates need base >= amp >= 0")
        if self.period <= 0:
            raise NumericalError("sinusoid period must be positive")
        self.n_types = self.base.size

    def evaluate(self, t, times, types) -> np.ndarray:
        return self.base + self.amp * math.sin(2.0 * math.pi * t / self.period)

    def upper_bound(self, t, times, types, until) -> float:
        return float((self.base + self.amp).sum())

    def lookahead(self) -> float:
        return math.inf

    def describe(self) -> dict:
        return {
            "model": "sinusoid_poisson",
            "base": self.base.tolist(),
            "amp": self.amp.tolist(),
            "period": self.period,
        }


class SelfCorrecting:
    """Total rate exp(eta * t - gamma * N(t-)), split evenly across types."""

    def __init__(self, eta: float, gamma: float, n_types: int = 1):
        self.eta = float(eta)
        self.gamma = float(gamma)
        self.n_types = int(n_types)
        if self.eta <= 0 or self.gamma < 0:
            raise NumericalError("self-correcting model needs eta > 0, gamma >= 0")

    def _total(self, t, n_seen: int) -> float:
        return math.exp(self.eta * t - self.gamma * n_seen)

    def evaluate(self, t, times, types) -> np.ndarray:
        n_seen = int(np.searchsorted(np.asarray(times, dtype=np.float64), t, side="left"))
        tot = self._total(t, n_seen)
        return np.full(self.n_types, tot / self.n_types)

    def upper_bound(self, t, times, types, until) -> float:
        # events only lower the rate, so the window end with the current count dominates
        n_seen = len(times)
        return self._total(until, n_seen)

    def lookahead(self) -> float:
        return 1.0 / self.eta

    def describe(self) -> dict:
        return {
            "model": "self_correcting",
            "eta": self.eta,
            "gamma": self.gamma,
            "n_types": self.n_types,
        }


class HawkesModel:
    """Adapter exposing :class:`HawkesParams` through the simulation interface."""

    def __init__(self, params: HawkesParams):
        self.params = params
        self.n_types = params.n_types
        # peak bump value; every centre sits inside the support
        self._gmax = _INV_SQRT_2PI / params.basis.sigma
        self._colsum = params.a.sum(axis=(0, 2))  # (D,) total outgoing weight per source type

    def evaluate(self, t, times, types) -> np.ndarray:
        return hawkes_intensity(self.params, times, types, t)

    def upper_bound(self, t, times, types, until) -> float:
        times = np.asarray(times, dtype=np.float64)
        types = np.asarray(types, dtype=np.int64)
        lo = np.searchsorted(times, t - self.params.basis.tau_max, side="right")
        active = types[lo:]
        return float(self.params.mu.sum() + self._gmax * self._colsum[active].sum())

    def lookahead(self) -> float:
        return math.inf

    def describe(self) -> dict:
        return {"model": "hawkes", **self.params.to_dict()}


def sim_intensity(model, t: float, times=(), types=()) -> float:
    """Total event rate of a simulation model at ``t`` given a frozen history."""
    lam = model.evaluate(t, np.asarray(times, dtype=np.float64), np.asarray(types, dtype=np.int64))
    total = float(np.sum(lam))
    if not np.isfinite(total) or total < 0:
        raise NumericalError(f"invalid intensity {total} at t={t}")
    return total
