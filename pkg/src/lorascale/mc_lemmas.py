"""Monte Carlo checks of the closed-form moments behind the scale analysis.

Each estimator returns its sample mean, standard error, and the exact
target computed at call time from the closed form.  Targets are never
hard-coded numbers.

The moments:

  * E[sign(Z) G] = rho * sqrt(2/pi) for standard Gaussians with
    correlation rho, and rho * sigma_g * sqrt(2/pi) once G is scaled.
  * E[q_k^2 / sum_j q_j^2] = 1/n for a standard Gaussian vector q, by
    symmetry of the normalized chi-square coordinates.
  * E[X_k^2] = beta^2 (r + (2/pi) r (r-1) / n) for
    X_k = sum_a B_ka sign(sum_j B_ja h_j) with B i.i.d. N(0, beta^2)
    and h an independent Gaussian vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RankError
from .randkit import Seed, derive, generator, standard_normal

ROOT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class McEstimate:
    """Sample mean with its standard error and the analytic target."""

    mean: float
    std_error: float
    n_samples: int
    target: float

    @property
    def z_score(self) -> float:
        if self.std_error == 0.0:
            return 0.0 if self.mean == self.target else math.inf
        return (self.mean - self.target) / self.std_error


def _estimate(samples: np.ndarray, target: float) -> McEstimate:
    n = samples.size
    mean = float(samples.mean())
    std_error = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return McEstimate(mean=mean, std_error=std_error, n_samples=n, target=target)


def _check_samples(n_samples: int) -> None:
    if n_samples < 2:
        raise DomainError(f"need at least 2 samples, got {n_samples}")


def stein_sign_product(rho: float, n_samples: int, seed: Seed) -> McEstimate:
    """Estimate E[sign(Z) G] for standard Gaussians with correlation rho.

    The pair is built as G = rho Z + sqrt(1 - rho^2) Z', which gives the
    closed form rho * sqrt(2/pi).
    """
    if abs(rho) > 1.0:
        raise DomainError(f"correlation must lie in [-1, 1], got {rho}")
    _check_samples(n_samples)
    gen = generator(derive(seed, "stein"))
    z = standard_normal(gen, n_samples)
    z_prime = standard_normal(gen, n_samples)
    g = rho * z + math.sqrt(1.0 - rho * rho) * z_prime
    return _estimate(np.sign(z) * g, target=rho * ROOT_2_OVER_PI)


def general_sign_product(
    sigma_z: float, sigma_g: float, rho: float, n_samples: int, seed: Seed
) -> McEstimate:
    """Estimate E[sign(Z) G] for centered Gaussians with general scales.

    Z has standard deviation sigma_z and G has sigma_g; the sign ignores
    sigma_z, so the closed form is rho * sigma_g * sqrt(2/pi).
    """
    if sigma_z <= 0 or sigma_g <= 0:
        raise DomainError(f"scales must be positive, got {sigma_z}, {sigma_g}")
    if abs(rho) > 1.0:
        raise DomainError(f"correlation must lie in [-1, 1], got {rho}")
    _check_samples(n_samples)
    gen = generator(derive(seed, "general"))
    z = standard_normal(gen, n_samples)
    z_prime = standard_normal(gen, n_samples)
    g = sigma_g * (rho * z + math.sqrt(1.0 - rho * rho) * z_prime)
    return _estimate(np.sign(sigma_z * z) * g, target=rho * sigma_g * ROOT_2_OVER_PI)


def rho_sq_expectation(n: int, n_samples: int, seed: Seed) -> McEstimate:
    """Estimate E[q_1^2 / ||q||^2] for q a standard Gaussian n-vector.

    Exchangeability of the n coordinates forces the value 1/n.  With
    n = 1 every sample is exactly 1.
    """
    if n < 1:
        raise DomainError(f"dimension must be positive, got {n}")
    _check_samples(n_samples)
    gen = generator(derive(seed, "rho_sq"))
    samples = np.empty(n_samples)
    done = 0
    batch = max(1, min(n_samples, 4_000_000 // n))
    while done < n_samples:
        m = min(batch, n_samples - done)
        q = standard_normal(gen, (m, n))
        sq = q * q
        samples[done : done + m] = sq[:, 0] / sq.sum(axis=1)
        done += m
    return _estimate(samples, target=1.0 / n)


def rho_sq_symmetry_gap(n: int, n_samples: int, seed: Seed) -> float:
    """Max over samples of |sum_k q_k^2 / S - 1| with S = sum_k q_k^2.

    Summing the coordinates before the single division realizes the
    identity exactly in floating point; the gap is 0.0.
    """
    if n < 1:
        raise DomainError(f"dimension must be positive, got {n}")
    gen = generator(derive(seed, "rho_sq"))
    q = standard_normal(gen, (n_samples, n))
    sq = q * q
    s = sq.sum(axis=1)
    return float(np.max(np.abs(sq.sum(axis=1) / s - 1.0)))


def delta1_second_moment(
    n: int, r: int, beta: float, n_samples: int, seed: Seed
) -> McEstimate:
    """Estimate E[X_1^2] for X_1 = sum_a B_1a sign((B^T h)_a).

    B is n x r with i.i.d. N(0, beta^2) entries and h is an independent
    standard Gaussian n-vector.  Closed form:
    beta^2 (r + (2/pi) r (r-1) / n).  For r = 1 it reduces to beta^2,
    since X_1^2 = B_11^2 sign(...)^2 = B_11^2 almost surely.
    """
    if r > n:
        raise RankError(f"rank must satisfy r <= n, got r={r}, n={n}")
    if r < 1 or n < 1:
        raise DomainError(f"need n >= r >= 1, got n={n}, r={r}")
    if beta <= 0:
        raise DomainError(f"beta must be positive, got {beta}")
    _check_samples(n_samples)
    gen = generator(derive(seed, "delta1"))
    samples = np.empty(n_samples)
    done = 0
    batch = max(1, min(n_samples, 12_000_000 // (n * r)))
    while done < n_samples:
        m = min(batch, n_samples - done)
        b = beta * standard_normal(gen, (m, n, r))
        h = standard_normal(gen, (m, n))
        u = np.einsum("snr,sn->sr", b, h)
        x = np.einsum("sr,sr->s", b[:, 0, :], np.sign(u))
        samples[done : done + m] = x * x
        done += m
    target = beta * beta * (r + (2.0 / math.pi) * r * (r - 1) / n)
    return _estimate(samples, target=target)
