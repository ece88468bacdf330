"""Feature-scale measurements across width n and rank r.

A cell runs T SignSGD steps on a fresh layer with synthetic Gaussian
input and backprop signal, and records root-mean-square sizes of the
adapter features and of the three parts of each feature increment.
Fitted log2-log2 slopes of those RMS values against n or r are then
compared with the predicted exponents of the maximal-update scaling
rules ("mua"), under which every feature increment stays order one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DomainError, InsufficientDataError
from .lora import INIT_A, INIT_B, Multiplier, make_layer
from .randkit import Seed, derive, gaussian_matrix, generator, standard_normal
from .signsgd import FFT, FftLayer, step_fft, step_lora

QUANTITIES = ("z_a", "z_b", "delta_zb", "delta1", "delta2", "delta3")
FFT_QUANTITY = "delta_w_zin"

R_SMALL = "r_small"  # r <= sqrt(n)
R_LARGE = "r_large"  # r >  sqrt(n)


@dataclass(frozen=True)
class EtaRule:
    """Learning rate rule: a fixed eta0, or the mua prescription times c."""

    kind: str          # "fixed" or "mua"
    value: float = 1.0  # eta0 when fixed, the constant c when mua

    def __post_init__(self) -> None:
        if self.kind not in ("fixed", "mua"):
            raise DomainError(f"eta rule must be 'fixed' or 'mua', got {self.kind!r}")
        if not self.value > 0:
            raise DomainError(f"eta rule constant must be positive, got {self.value}")

    def resolve(self, scheme: str, gamma: float, n: int, r: int) -> float:
        """The step size this rule assigns to a (scheme, gamma, n, r) cell."""
        if self.kind == "fixed":
            return self.value
        c = self.value
        if scheme == INIT_A:
            return c * n ** -0.5 * float(r) ** (-(1.0 - gamma) / 2.0)
        if scheme == INIT_B:
            if gamma == 0.0:
                return c / n
            if gamma == 1.0:
                return c * min(r / n, n ** -0.5)
            raise DomainError(f"no mua rule for initB with gamma={gamma}")
        if scheme == FFT:
            return c / n
        raise DomainError(f"unknown scheme {scheme!r}")

    def label(self) -> str:
        return f"{self.kind}:{self.value:g}"


@dataclass(frozen=True)
class ScalingConfig:
    """What to run in every cell of a scan."""

    scheme: str                 # initA, initB, or fft
    gamma: float
    eta_rule: EtaRule
    steps: int = 5
    d_zbar_mode: str = "fixed"  # fixed: one draw reused; resampled: fresh per step
    w_star_std: float = 0.0     # adapter dynamics never read w_star, default skips it

    def __post_init__(self) -> None:
        if self.scheme not in (INIT_A, INIT_B, FFT):
            raise DomainError(f"unknown scheme {self.scheme!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if self.d_zbar_mode not in ("fixed", "resampled"):
            raise DomainError(f"d_zbar_mode must be fixed or resampled, got {self.d_zbar_mode!r}")


@dataclass(frozen=True)
class CellResult:
    """Seed-averaged RMS per quantity and step for one (n, r) cell.

    rms maps quantity name to a dict {step: value}; z_a and z_b include
    step 0, the increment quantities start at step 1.
    """

    n: int
    r: int
    eta: float
    n_seeds: int
    rms: Mapping[str, Mapping[int, float]]


def _rms(v: np.ndarray) -> float:
    return float(np.linalg.norm(v) / math.sqrt(v.size))


def _run_lora_replicate(
    config: ScalingConfig, n: int, r: int, eta: float, seed: Seed
) -> dict[str, dict[int, float]]:
    mult = Multiplier(gamma=config.gamma, base=1.0)
    layer = make_layer(n, r, config.scheme, mult, derive(seed, "layer"),
                       w_star_std=config.w_star_std)
    z_in = standard_normal(generator(derive(seed, "z_in")), n)
    dz_gen = generator(derive(seed, "d_z_bar"))
    d_z_bar = standard_normal(dz_gen, n)

    out: dict[str, dict[int, float]] = {q: {} for q in QUANTITIES}
    alpha = mult.alpha(r)
    z_a = layer.a @ z_in
    out["z_a"][0] = _rms(z_a)
    out["z_b"][0] = _rms(alpha * (layer.b @ z_a))
    for t in range(1, config.steps + 1):
        if config.d_zbar_mode == "resampled" and t > 1:
            d_z_bar = standard_normal(dz_gen, n)
        rec = step_lora(layer, z_in, d_z_bar, eta)
        layer = rec.layer_next
        out["z_a"][t] = _rms(rec.z_a_next)
        out["z_b"][t] = _rms(alpha * (layer.b @ rec.z_a_next))
        out["delta_zb"][t] = _rms(rec.delta_zb)
        out["delta1"][t] = _rms(rec.delta1)
        out["delta2"][t] = _rms(rec.delta2)
        out["delta3"][t] = _rms(rec.delta3)
    return out


def _run_fft_replicate(
    config: ScalingConfig, n: int, eta: float, seed: Seed
) -> dict[str, dict[int, float]]:
    std = config.w_star_std
    if std == 0.0:
        w = np.zeros((n, n))
    else:
        w = gaussian_matrix(n, n, std, derive(seed, "w_star"))
    layer = FftLayer(w=w)
    z_in = standard_normal(generator(derive(seed, "z_in")), n)
    dz_gen = generator(derive(seed, "d_z_bar"))
    d_z_bar = standard_normal(dz_gen, n)

    out: dict[str, dict[int, float]] = {FFT_QUANTITY: {}}
    for t in range(1, config.steps + 1):
        if config.d_zbar_mode == "resampled" and t > 1:
            d_z_bar = standard_normal(dz_gen, n)
        layer, delta_w_zin = step_fft(layer, z_in, d_z_bar, eta)
        out[FFT_QUANTITY][t] = _rms(delta_w_zin)
    return out


def run_cell(config: ScalingConfig, n: int, r: int, n_seeds: int, seed: Seed) -> CellResult:
    """Average RMS traces over n_seeds independent replicates.

    For the fft scheme, r is carried through for bookkeeping only and
    the single measured quantity is the feature increment (delta W) z_in.
    """
    if n_seeds < 1:
        raise DomainError(f"n_seeds must be >= 1, got {n_seeds}")
    eta = config.eta_rule.resolve(config.scheme, config.gamma, n, r)
    acc: dict[str, dict[int, float]] = {}
    for i in range(n_seeds):
        rep_seed = derive(seed, f"rep:{i}")
        if config.scheme == FFT:
            rep = _run_fft_replicate(config, n, eta, rep_seed)
        else:
            rep = _run_lora_replicate(config, n, r, eta, rep_seed)
        for q, per_step in rep.items():
            bucket = acc.setdefault(q, {t: 0.0 for t in per_step})
            for t, v in per_step.items():
                bucket[t] += v
    rms = {q: {t: v / n_seeds for t, v in per_step.items()} for q, per_step in acc.items()}
    return CellResult(n=n, r=r, eta=eta, n_seeds=n_seeds, rms=rms)


def run_grid(
    config: ScalingConfig,
    n_values: Sequence[int],
    r_values: Sequence[int],
    n_seeds: int,
    seed: Seed,
) -> list[CellResult]:
    """Run every (n, r) pair of the two lists, sorted by (n, r).

    Each cell draws from its own derived seed, so the result does not
    depend on evaluation order.
    """
    pairs = sorted({(int(n), int(r)) for n in n_values for r in r_values})
    for n, r in pairs:
        if r > n and config.scheme != FFT:
            raise DomainError(f"cell n={n}, r={r} violates r <= n")
    results = []
    for n, r in pairs:
        cell_seed = derive(seed, f"cell:n={n}:r={r}")
        results.append(run_cell(config, n, r, n_seeds, cell_seed))
    return results


@dataclass(frozen=True)
class ExponentFit:
    """Least-squares power law y = 2^intercept * x^slope in log2 space."""

    slope: float
    intercept: float
    r_squared: float
    n_points: int


def fit_exponent(points: Iterable[tuple[float, float]]) -> ExponentFit:
    """Fit log2 y against log2 x by least squares.

    Needs at least 3 points with strictly positive coordinates.
    """
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise InsufficientDataError(f"need >= 3 points, got {len(pts)}")
    for x, y in pts:
        if x <= 0 or y <= 0:
            raise DomainError(f"points must be strictly positive, got ({x}, {y})")
    lx = np.log2([p[0] for p in pts])
    ly = np.log2([p[1] for p in pts])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return ExponentFit(slope=float(slope), intercept=float(intercept),
                       r_squared=r_squared, n_points=len(pts))


@dataclass(frozen=True)
class AxisExponents:
    """Exponents of a quantity in n and in r: size = const * n^n_exp * r^r_exp."""

    n_exp: float
    r_exp: float


@dataclass(frozen=True)
class TheoryExponents:
    """Predicted exponents under a mua rule, per quantity."""

    eta: AxisExponents
    z_a: AxisExponents
    delta1: AxisExponents
    delta2: AxisExponents
    delta3: AxisExponents
    delta_zb: AxisExponents = field(default=AxisExponents(0.0, 0.0))
    regime: str | None = None

    def for_quantity(self, quantity: str) -> AxisExponents:
        try:
            return getattr(self, quantity)
        except AttributeError:
            raise DomainError(f"no predicted exponents for {quantity!r}") from None


def theory_exponents(scheme: str, gamma: float, regime: str | None = None) -> TheoryExponents:
    """Predicted feature-scale exponents under the mua rule.

    The regime argument is required exactly for (initB, gamma=1), whose
    rule eta = c min(r/n, 1/sqrt(n)) switches branches at r = sqrt(n).
    """
    if not 0.0 <= gamma <= 1.0:
        raise DomainError(f"gamma must lie in [0, 1], got {gamma}")
    if scheme == INIT_A:
        if regime not in (None, "none"):
            raise DomainError("regime applies only to (initB, gamma=1)")
        half = (1.0 - gamma) / 2.0
        return TheoryExponents(
            eta=AxisExponents(-0.5, -half),
            z_a=AxisExponents(0.5, -half),
            delta1=AxisExponents(0.0, -0.5),
            delta2=AxisExponents(0.0, 0.0),
            delta3=AxisExponents(0.0, -0.5),
        )
    if scheme == INIT_B:
        if gamma == 0.0:
            if regime not in (None, "none"):
                raise DomainError("regime applies only to (initB, gamma=1)")
            return TheoryExponents(
                eta=AxisExponents(-1.0, 0.0),
                z_a=AxisExponents(0.0, 0.0),
                delta1=AxisExponents(0.0, 0.0),
                delta2=AxisExponents(-1.0, 1.0),
                delta3=AxisExponents(-1.0, 0.5),
            )
        if gamma == 1.0:
            if regime == R_SMALL:
                return TheoryExponents(
                    eta=AxisExponents(-1.0, 1.0),
                    z_a=AxisExponents(0.0, 1.0),
                    delta1=AxisExponents(0.0, 0.0),
                    delta2=AxisExponents(-1.0, 2.0),
                    delta3=AxisExponents(-1.0, 1.5),
                    regime=R_SMALL,
                )
            if regime == R_LARGE:
                return TheoryExponents(
                    eta=AxisExponents(-0.5, 0.0),
                    z_a=AxisExponents(0.5, 0.0),
                    delta1=AxisExponents(0.5, -1.0),
                    delta2=AxisExponents(0.0, 0.0),
                    delta3=AxisExponents(0.0, -0.5),
                    regime=R_LARGE,
                )
            raise DomainError("(initB, gamma=1) needs regime r_small or r_large")
        raise DomainError(f"no mua exponents for initB with gamma={gamma}")
    if scheme == FFT:
        if regime not in (None, "none"):
            raise DomainError("regime applies only to (initB, gamma=1)")
        return TheoryExponents(
            eta=AxisExponents(-1.0, 0.0),
            z_a=AxisExponents(0.0, 0.0),
            delta1=AxisExponents(0.0, 0.0),
            delta2=AxisExponents(0.0, 0.0),
            delta3=AxisExponents(0.0, 0.0),
        )
    raise DomainError(f"unknown scheme {scheme!r}")


@dataclass(frozen=True)
class Efficiency:
    """Verdict on whether all three increment parts stay order one."""

    efficient: bool
    vanishing: tuple[str, ...]


def classify_efficiency(fits: Mapping[str, Sequence[float] | float], tol: float) -> Efficiency:
    """Which increment parts keep order-one size under the fitted exponents.

    fits maps delta1/delta2/delta3 to one or more fitted exponents (one
    per fitted axis).  A part is order one when every exponent is within
    tol of zero.  Under a rule that keeps the total increment order one,
    any other part is asymptotically subdominant in the joint limit, so
    the remaining parts are reported as vanishing.
    """
    if tol < 0:
        raise DomainError(f"tol must be >= 0, got {tol}")
    vanishing = []
    for part in ("delta1", "delta2", "delta3"):
        if part not in fits:
            raise DomainError(f"missing fitted exponents for {part}")
        exps = fits[part]
        if isinstance(exps, (int, float)):
            exps = (float(exps),)
        if any(abs(e) > tol for e in exps):
            vanishing.append(part)
    return Efficiency(efficient=not vanishing, vanishing=tuple(vanishing))
