"""Repulsive prior over component base-rate vectors.

The prior is a stationary determinantal point process on a base-rate box,
approximated through a truncated Fourier expansion of a Gaussian spectral
density.  On the box rescaled to the unit cube the kernel is

    K(x, y) = sum_z phi_tilde(z) * cos(2 pi z . (x - y)),

with lattice frequencies z in {-L..L}^q,
phi(z) = rho * (sqrt(pi) * alpha)^q * exp(-pi^2 alpha^2 |z|^2) and
phi_tilde = phi / (1 - phi).  The log density of a point configuration is

    log p(X) = |R| - D_app + log det K(X)   with  |R| = 1 on the unit cube,

where D_app = sum_z log(1 + phi_tilde(z)).  Larger ``alpha`` repels over
longer distances; ``rho`` controls the expected number of points.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import ConfigError, Dataset, DppConfig

__all__ = [
    "DppSpectralModel",
    "build_spectral_model",
    "model_for_data",
    "dpp_log_density",
    "dpp_log_ratio",
]

log = logging.getLogger(__name__)

_PHI_CLIP = 1.0 - 1e-6


@dataclass(frozen=True)
class DppSpectralModel:
    """Frozen spectral approximation of the repulsive prior on a box."""

    lattice: np.ndarray    # (n_z, q) integer frequencies
    phi_tilde: np.ndarray  # (n_z,) positive spectral weights
    d_app: float           # normalising constant sum log(1 + phi_tilde)
    box_lo: np.ndarray     # (q,) raw-coordinate bounds
    box_hi: np.ndarray
    rho: float
    alpha: float
    clipped: bool          # True when the spectral density hit the stability cap

    @property
    def q(self) -> int:
        return int(self.lattice.shape[1])

    def rescale(self, points: np.ndarray) -> np.ndarray:
        return (points - self.box_lo) / (self.box_hi - self.box_lo)

    def in_box(self, point: np.ndarray) -> bool:
        return bool(np.all(point >= self.box_lo) and np.all(point <= self.box_hi))

    def kernel(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gram block K(x_i, y_j) in unit-cube coordinates; shape (len(x), len(y)).

        Assembled with cosines only: the lattice is symmetric, so the
        imaginary parts of the complex expansion cancel exactly.
        """
        px = x @ self.lattice.T  # (mx, n_z)
        py = y @ self.lattice.T
        ang = 2.0 * math.pi * (px[:, None, :] - py[None, :, :])
        return np.einsum("mnz,z->mn", np.cos(ang), self.phi_tilde)

    def describe(self) -> dict:
        return {
            "rho": self.rho,
            "alpha": self.alpha,
            "n_lattice": int(self.lattice.shape[0]),
            "d_app": self.d_app,
            "box_lo": self.box_lo.tolist(),
            "box_hi": self.box_hi.tolist(),
            "clipped": self.clipped,
        }


def build_spectral_model(q: int, lattice_radius: int, rho: float, alpha: float,
                         box_lo, box_hi) -> DppSpectralModel:
    """Construct the truncated spectral model on the given box.

    The existence condition for the Gaussian spectral density is
    ``rho * (sqrt(pi) * alpha)^q < 1``; when violated the density is clipped
    just below one (with a warning) which flattens repulsion toward a
    near-independent prior rather than failing.
    """
    box_lo = np.atleast_1d(np.asarray(box_lo, dtype=np.float64))
    box_hi = np.atleast_1d(np.asarray(box_hi, dtype=np.float64))
    if box_lo.size != q or box_hi.size != q:
        raise ConfigError("box bounds must match the base-rate dimension")
    if np.any(box_lo <= 0) or np.any(box_hi <= box_lo):
        raise ConfigError("base-rate box must satisfy 0 < lo < hi per coordinate")
    if rho <= 0 or alpha <= 0:
        raise ConfigError("rho and alpha must be positive")
    lattice = np.array(list(product(range(-lattice_radius, lattice_radius + 1), repeat=q)),
                       dtype=np.int64)
    sq = (lattice ** 2).sum(axis=1)
    phi = rho * (math.sqrt(math.pi) * alpha) ** q * np.exp(-(math.pi * alpha) ** 2 * sq)
    clipped = bool(np.any(phi >= _PHI_CLIP))
    if clipped:
        log.warning(
            "spectral density reaches %.3g >= 1; clipping (rho=%.3g alpha=%.3g q=%d). "
            "Repulsion is weakened; consider lowering rho or alpha.",
            float(phi.max()), rho, alpha, q,
        )
        phi = np.minimum(phi, _PHI_CLIP)
    phi_tilde = phi / (1.0 - phi)
    d_app = float(np.log1p(phi_tilde).sum())
    return DppSpectralModel(lattice, phi_tilde, d_app, box_lo, box_hi, rho, alpha, clipped)


def model_for_data(data: Dataset, cfg: DppConfig, default_rho: float) -> DppSpectralModel:
    """Resolve the box and intensity from the dataset and build the model.

    The default box is ``[mean_rate / lo_factor, mean_rate * hi_factor]`` in
    every coordinate, with ``mean_rate`` the pooled per-type event rate.
    """
    q = data.n_types
    if cfg.box_lo is not None:
        lo = np.asarray(cfg.box_lo, dtype=np.float64)
        hi = np.asarray(cfg.box_hi, dtype=np.float64)
    else:
        lam = data.mean_rate_per_type()
        lo = np.full(q, lam / cfg.lo_factor)
        hi = np.full(q, lam * cfg.hi_factor)
    rho = cfg.rho if cfg.rho is not None else max(float(default_rho), 1.0)
    return build_spectral_model(q, cfg.lattice_radius, rho, cfg.alpha, lo, hi)


def dpp_log_density(model: DppSpectralModel, points: np.ndarray) -> float:
    """Log density of a configuration of base-rate vectors (raw coordinates).

    Empty configurations are allowed (density exp(1 - D_app)); configurations
    with a point outside the box or with a singular Gram matrix (for example
    duplicated points) have density zero.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return 1.0 - model.d_app
    if points.ndim == 1:
        points = points[None, :]
    if np.any(points < model.box_lo) or np.any(points > model.box_hi):
        return -math.inf
    x = model.rescale(points)
    gram = model.kernel(x, x)
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0 or not np.isfinite(logdet):
        return -math.inf
    return 1.0 - model.d_app + float(logdet)


def _schur_gain(model: DppSpectralModel, base: np.ndarray, point: np.ndarray) -> float:
    """log det K(base + point) - log det K(base), via the Schur complement."""
    y = model.rescale(point[None, :])
    diag = float(model.kernel(y, y)[0, 0])
    if base.shape[0] == 0:
        return math.log(diag) if diag > 0 else -math.inf
    x = model.rescale(base)
    gram = model.kernel(x, x)
    b = model.kernel(x, y)[:, 0]
    try:
        cho = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError:
        return math.nan  # caller falls back to the full recomputation
    s = diag - float(b @ cho_solve(cho, b))
    if not np.isfinite(s) or s <= 0:
        return -math.inf
    return math.log(s)


def dpp_log_ratio(model: DppSpectralModel, points: np.ndarray,
                  add: np.ndarray | None = None,
                  remove: np.ndarray | None = None) -> float:
    """Log-density change of adding and/or removing one point.

    ``remove`` is matched against ``points`` by exact coordinates.  The value
    always equals ``dpp_log_density(after) - dpp_log_density(before)``; the
    incremental Schur path is used when well conditioned, with a full
    recomputation fallback otherwise.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        points = np.zeros((0, model.q))
    elif points.ndim == 1:
        points = points[None, :]
    base = points
    total = 0.0
    if remove is not None:
        remove = np.asarray(remove, dtype=np.float64)
        match = np.flatnonzero(np.all(base == remove, axis=1))
        if match.size == 0:
            raise ConfigError("point to remove is not part of the configuration")
        rest = np.delete(base, match[0], axis=0)
        gain = _schur_gain(model, rest, remove)
        if math.isnan(gain):
            return _full_ratio(model, points, add, remove)
        total -= gain
        base = rest
    if add is not None:
        add = np.asarray(add, dtype=np.float64)
        if not model.in_box(add):
            return -math.inf
        gain = _schur_gain(model, base, add)
        if math.isnan(gain):
            return _full_ratio(model, points, add, remove)
        total += gain
    return total


def _full_ratio(model, points, add, remove) -> float:
    after = points
    if remove is not None:
        match = np.flatnonzero(np.all(after == remove, axis=1))
        after = np.delete(after, match[0], axis=0)
    if add is not None:
        after = np.vstack([after, add[None, :]]) if after.size else add[None, :]
    return dpp_log_density(model, after) - dpp_log_density(model, points)
