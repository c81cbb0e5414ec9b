"""Unnormalised log joint density of a full mixture state.

This is the single reference target every sampler move is measured against.
It recomputes everything from scratch — repulsive-prior density over all
component base rates, coefficient and weight-seed priors, allocation mass,
per-sequence likelihoods, and the auxiliary-variable factor:

    log p = log dpp(all mu)
          + sum_alloc [ log p(w_m) + log p(r_m) + n_m log r_m + sum_members log L ]
          + sum_non_alloc [ log p(w_m) + log p(r_m) ]
          + (N - 1) log u - u * t - log (N-1)!        with t = sum of all r.

Invalid states (nonpositive rates, duplicated base-rate vectors, points
outside the prior box, ...) get -inf rather than raising, so Metropolis
ratios can treat them as auto-rejects.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .backbone import FeatureSet, hawkes_loglik
from .core import Dataset, MixtureState, PriorBundle
from .dpp import DppSpectralModel, dpp_log_density

__all__ = ["state_log_joint"]


def state_log_joint(state: MixtureState, data: Dataset, prior: PriorBundle,
                    dpp_model: DppSpectralModel, features: FeatureSet | None = None) -> float:
    """Log joint of ``state`` given ``data`` (up to one state-independent constant).

    When ``features`` is given the likelihood part is evaluated on the batched
    fast path; otherwise each sequence is scored independently.
    """
    n = len(data.sequences)
    if state.c.size != n:
        raise ValueError(f"state covers {state.c.size} sequences, dataset has {n}")
    total = dpp_log_density(dpp_model, state.all_mu())
    if not np.isfinite(total):
        return -math.inf
    if not (state.u > 0 and np.isfinite(state.u)):
        return -math.inf

    counts = state.counts()
    for m, comp in enumerate(state.allocated):
        if comp.r <= 0:
            return -math.inf
        total += prior.w_log_prior(comp.w) - comp.r + counts[m] * math.log(comp.r)
        if features is not None:
            total += features.loglik_sum(comp.mu, comp.w, np.flatnonzero(state.c == m))
        else:
            params = comp.params(state.basis)
            for i in np.flatnonzero(state.c == m):
                total += hawkes_loglik(params, data.sequences[i])
        if not np.isfinite(total):
            return -math.inf
    for comp in state.non_allocated:
        if comp.r <= 0:
            return -math.inf
        total += prior.w_log_prior(comp.w) - comp.r
        if not np.isfinite(total):
            return -math.inf

    t = state.t_total()
    total += (n - 1) * math.log(state.u) - state.u * t - float(gammaln(n))
    return float(total) if np.isfinite(total) else -math.inf
