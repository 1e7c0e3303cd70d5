"""Log-space special functions, conjugate marginals and random streams.

Everything here works on the natural-log scale. The collapsed marginals are
the building blocks of every sampler in the package: Beta-Bernoulli for
binary columns, Dirichlet-multinomial for categorical columns and the
Normal-Inverse-Gamma marginal for Fisher-z correlation blocks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .exceptions import DomainError

LOG_2PI = math.log(2.0 * math.pi)


def log_beta(a: float, b: float) -> float:
    """Return ``ln B(a, b)`` for positive ``a`` and ``b``."""
    if not (a > 0 and b > 0):
        raise DomainError(f"log_beta requires positive arguments, got ({a}, {b})")
    return float(special.gammaln(a) + special.gammaln(b) - special.gammaln(a + b))


def log_multibeta(x: Sequence[float]) -> float:
    """Return ``ln B(x_1, ..., x_L) = sum ln Gamma(x_l) - ln Gamma(sum x_l)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("log_multibeta needs a vector of length >= 2")
    if not np.all(x > 0):
        raise DomainError("log_multibeta requires strictly positive entries")
    return float(special.gammaln(x).sum() - special.gammaln(x.sum()))


def beta_bernoulli_logmarg(n1: int, n0: int, a: float, b: float) -> float:
    """Log marginal probability of a particular 0/1 sequence with ``n1`` ones
    and ``n0`` zeros under a ``Beta(a, b)`` prior on the success rate."""
    if n1 < 0 or n0 < 0:
        raise DomainError("counts must be nonnegative")
    return log_beta(a + n1, b + n0) - log_beta(a, b)


def dirichlet_multinomial_logmarg(counts: Sequence[float], gamma: Sequence[float]) -> float:
    """Log marginal of a categorical sequence with category ``counts``
    under a ``Dirichlet(gamma)`` prior (sequence, not multiset, probability)."""
    counts = np.asarray(counts, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if counts.shape != gamma.shape:
        raise DomainError(f"counts {counts.shape} and gamma {gamma.shape} differ in length")
    if np.any(counts < 0):
        raise DomainError("counts must be nonnegative")
    return log_multibeta(counts + gamma) - log_multibeta(gamma)


@dataclass(frozen=True)
class NIGParams:
    """Normal-Inverse-Gamma prior: ``theta ~ N(mu, sigma^2 / kappa)``,
    ``sigma^2 ~ InvGamma(alpha, beta)``."""

    mu: float = 0.0
    kappa: float = 1.0
    alpha: float = 2.0
    beta: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.alpha > 0 and self.beta > 0):
            raise DomainError(f"invalid NIG prior {self}")


def nig_logmarg(sum_y: float, sum_ysq: float, m: int, prior: NIGParams) -> float:
    """Log marginal density of ``m`` normal observations with sufficient
    statistics ``(sum_y, sum_ysq)`` after integrating mean and variance
    against a Normal-Inverse-Gamma prior."""
    if m < 0:
        raise DomainError("m must be nonnegative")
    if m == 0:
        return 0.0
    if sum_ysq < sum_y * sum_y / m - 1e-9 * max(1.0, abs(sum_ysq)):
        raise DomainError("sum_ysq is smaller than sum_y**2 / m")
    mu, kappa, alpha, beta = prior.mu, prior.kappa, prior.alpha, prior.beta
    half = 0.5 * m
    scale = beta + 0.5 * (sum_ysq + kappa * mu * mu
                          - (kappa * mu + sum_y) ** 2 / (kappa + m))
    return float(
        alpha * math.log(beta)
        - half * LOG_2PI
        - 0.5 * math.log1p(m / kappa)
        + special.gammaln(alpha + half) - special.gammaln(alpha)
        - (alpha + half) * math.log(scale)
    )


def normal_logpdf_sum(sum_y, sum_ysq, m, mean, var):
    """Sum of ``ln N(y; mean, var)`` over ``m`` points given their first two
    raw moments. Vectorised over array arguments."""
    return (-0.5 * m * (LOG_2PI + np.log(var))
            - (sum_ysq - 2.0 * mean * sum_y + m * mean * mean) / (2.0 * var))


def log_sum_exp(values: Sequence[float]) -> float:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    if np.all(values == -np.inf):
        return -np.inf
    return float(special.logsumexp(values))


def categorical_draw(rng: np.random.Generator, logits: Sequence[float]) -> int:
    """Draw an index with probability proportional to ``exp(logits)``."""
    logits = np.asarray(logits, dtype=float)
    if logits.size == 0:
        raise DomainError("categorical_draw needs at least one logit")
    top = logits.max()
    if top == -np.inf:
        raise DomainError("all logits are -inf")
    w = np.exp(logits - top)
    cdf = np.cumsum(w)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, logits.size - 1)


def rng_stream(seed: int, *stream: int) -> np.random.Generator:
    """PCG64 generator addressed by ``(seed, stream...)``.

    Identical addresses give identical draw sequences; distinct stream ids
    are independent children of the same seed sequence.
    """
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def nig_logmarg_array(sum_y, sum_ysq, m, prior: NIGParams):
    """Vectorised :func:`nig_logmarg`; entries with ``m == 0`` give 0."""
    sum_y, sum_ysq, m = np.broadcast_arrays(np.asarray(sum_y, float),
                                            np.asarray(sum_ysq, float),
                                            np.asarray(m, float))
    mu, kappa, alpha, beta = prior.mu, prior.kappa, prior.alpha, prior.beta
    half = 0.5 * m
    scale = beta + 0.5 * (sum_ysq + kappa * mu * mu
                          - (kappa * mu + sum_y) ** 2 / (kappa + m))
    scale = np.maximum(scale, 1e-300)
    out = (alpha * math.log(beta) - half * LOG_2PI - 0.5 * np.log1p(m / kappa)
           + special.gammaln(alpha + half) - special.gammaln(alpha)
           - (alpha + half) * np.log(scale))
    return np.where(m > 0, out, 0.0)
