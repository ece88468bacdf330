"""Learning-rate transfer between widths, ranks, and full finetuning.

Once a learning rate has been tuned at one (width, rank), the
maximal-update scaling rules pin down how it must move when either
dimension changes: within a regime the unknown constant cancels in the
ratio eta_ref * (n/n_ref)^a_n * (r/r_ref)^a_r, so only the exponents
matter.  The one rule with a regime boundary (initB, gamma=1, kinked at
r = sqrt(n)) transfers through the absolute formula min(r/n, 1/sqrt(n))
with a constant calibrated from the reference point; inside either
regime that reduces to the same ratio form.

The exponents are a scaling law, not an absolute prediction: every
prescription assumes the tuned multiplicative constant carries over
from the reference run.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError, RankError
from .lora import INIT_A, INIT_B
from .scaling import R_LARGE, R_SMALL
from .signsgd import FFT


@dataclass(frozen=True)
class Prescription:
    """A transferred learning rate and the rule that produced it."""

    eta: float
    rule: str                           # e.g. "mua:initB:gamma=1:r_small"
    exponents_used: tuple[float, float]  # (a_n, a_r) at the target point
    regime: str | None = None           # r_small / r_large when the rule is kinked

    def __post_init__(self) -> None:
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise DomainError(f"prescribed eta must be positive, got {self.eta}")
        if self.regime not in (None, R_SMALL, R_LARGE):
            raise DomainError(f"unknown regime {self.regime!r}")


def _check_point(scheme: str, gamma: float, n: int, r: int) -> None:
    if scheme not in (INIT_A, INIT_B, FFT):
        raise DomainError(f"unknown scheme {scheme!r}")
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    if n < 1 or r < 1:
        raise DomainError(f"width and rank must be positive, got n={n}, r={r}")
    if r > n:
        raise RankError(f"rank {r} exceeds width {n}")
    if scheme == INIT_B and gamma not in (0.0, 1.0):
        raise DomainError(f"no transfer rule for initB with gamma={gamma}")


def rule_name(scheme: str, gamma: float, regime: str | None = None) -> str:
    """Identifier of the scaling rule applied, for reports and manifests."""
    name = f"mua:{scheme}"
    if scheme != FFT:
        name += f":gamma={gamma:g}"
    if regime is not None:
        name += f":{regime}"
    return name


def exponents_for(scheme: str, gamma: float, n: int, r: int) -> tuple[float, float, str | None]:
    """Learning-rate exponents (a_n, a_r) at a point, with eta ~ n^a_n * r^a_r.

    initA holds one smooth rule for any gamma in [0, 1]; initB supports
    gamma 0 (width-only) and gamma 1, whose exponents switch at
    r = sqrt(n); full finetuning scales with width only.
    """
    _check_point(scheme, gamma, n, r)
    if scheme == INIT_A:
        return -0.5, -(1.0 - gamma) / 2.0, None
    if scheme == FFT:
        return -1.0, 0.0, None
    if gamma == 0.0:
        return -1.0, 0.0, None
    if r * r <= n:  # exact integer form of r <= sqrt(n)
        return -1.0, 1.0, R_SMALL
    return -0.5, 0.0, R_LARGE


def _kinked_formula(n: int, r: int) -> float:
    """The absolute initB gamma=1 shape min(r/n, n^-1/2), constant-free."""
    return min(r / n, n ** -0.5)


def transfer_lr(
    eta_ref: float,
    n_ref: int,
    r_ref: int,
    n: int,
    r: int,
    scheme: str,
    gamma: float,
) -> Prescription:
    """Move a tuned learning rate from (n_ref, r_ref) to (n, r).

    Within a regime the constant cancels and the pure ratio form is
    used; the kinked initB gamma=1 rule instead calibrates
    c = eta_ref / min(r_ref/n_ref, n_ref^-1/2) and evaluates the
    absolute formula at the target, which agrees with the ratio form
    whenever both points share a regime.
    """
    if not (math.isfinite(eta_ref) and eta_ref > 0):
        raise DomainError(f"reference eta must be positive, got {eta_ref}")
    _check_point(scheme, gamma, n_ref, r_ref)
    a_n, a_r, regime = exponents_for(scheme, gamma, n, r)
    if scheme == INIT_B and gamma == 1.0:
        c = eta_ref / _kinked_formula(n_ref, r_ref)
        eta = c * _kinked_formula(n, r)
    else:
        eta = eta_ref * (n / n_ref) ** a_n * (r / r_ref) ** a_r
    return Prescription(
        eta=eta,
        rule=rule_name(scheme, gamma, regime),
        exponents_used=(a_n, a_r),
        regime=regime,
    )


def transfer_to_fft(
    eta_ref: float,
    n_ref: int,
    n: int,
    scheme: str,
    gamma: float,
) -> Prescription:
    """Move a tuned adapter learning rate to full finetuning at width n.

    Only the width-only rules share full finetuning's eta ~ 1/n law, so
    the reference must be initB with gamma=0 (or full finetuning
    itself); other configurations have no constant-preserving bridge.
    """
    if not (math.isfinite(eta_ref) and eta_ref > 0):
        raise DomainError(f"reference eta must be positive, got {eta_ref}")
    if scheme not in (INIT_A, INIT_B, FFT):
        raise DomainError(f"unknown scheme {scheme!r}")
    if n_ref < 1 or n < 1:
        raise DomainError(f"widths must be positive, got n_ref={n_ref}, n={n}")
    if not (scheme == FFT or (scheme == INIT_B and gamma == 0.0)):
        raise DomainError(
            f"no shared rule bridges {scheme} gamma={gamma:g} to full finetuning; "
            "only initB with gamma=0 transfers"
        )
    eta = eta_ref * (n / n_ref) ** -1.0
    return Prescription(eta=eta, rule=rule_name(FFT, 0.0), exponents_used=(-1.0, 0.0))
