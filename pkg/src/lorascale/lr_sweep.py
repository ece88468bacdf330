"""Learning-rate sweeps on a synthetic teacher-student regression task.

The student is a frozen base matrix plus either a LoRA adapter or a
fully finetuned dense matrix.  The teacher is the same base matrix plus
a random Gaussian perturbation, so descent means the adapter is
absorbing that perturbation.  Each training step draws a fresh Gaussian
input, forms the residual, and applies one SignSGD step with the
residual as the backpropagated signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, NoOptimumError, RankError
from .lora import LoraLayer, Multiplier, make_layer
from .randkit import Seed, derive, gaussian_matrix, generator, standard_normal
from .signsgd import FFT, FftLayer, step_fft, step_lora

EMA_SMOOTHING = 0.1        # weight of the newest loss in the running average
DIVERGENCE_FACTOR = 10.0   # ema above this multiple of the initial loss counts as diverged

SweepKey = int | str  # an adapter rank, or the marker "fft"


@dataclass(frozen=True)
class TeacherTask:
    """Teacher weights w_star + P with P an i.i.d. N(0, 1/n) Gaussian gap."""

    w_star: np.ndarray    # (n, n) frozen student base
    w_teacher: np.ndarray  # (n, n)

    @property
    def n(self) -> int:
        return self.w_star.shape[0]


@dataclass(frozen=True)
class LoraAdapter:
    """Adapter choice for a training run."""

    rank: int
    scheme: str
    multiplier: Multiplier


@dataclass(frozen=True)
class RunResult:
    """One training run: per-step losses and the smoothed final loss."""

    loss_trace: np.ndarray
    final_loss_ema: float
    diverged: bool  # some loss was non-finite


def make_task(n: int, seed: Seed) -> TeacherTask:
    """Fresh task at width n; teacher gap P has entries N(0, 1/n).

    The residual at the no-op start is P x, whose coordinates have unit
    variance for unit-Gaussian x, so the initial loss is about 1/2.
    """
    std = n ** -0.5
    w_star = gaussian_matrix(n, n, std, derive(seed, "w_star"))
    gap = gaussian_matrix(n, n, std, derive(seed, "teacher_gap"))
    return TeacherTask(w_star=w_star, w_teacher=w_star + gap)


def ema_of(trace: np.ndarray, smoothing: float = EMA_SMOOTHING) -> float:
    """Exponential moving average of a sequence, seeded at its first value."""
    value = float(trace[0])
    for x in trace[1:]:
        value = smoothing * float(x) + (1.0 - smoothing) * value
    return value


def train_run(
    task: TeacherTask,
    adapter: LoraAdapter | str,
    eta: float,
    steps: int,
    seed: Seed,
) -> RunResult:
    """Train one adapter on the task for a fixed number of SignSGD steps.

    Loss at each step is 0.5 ||e||^2 / n on a fresh unit-Gaussian input,
    recorded before the parameter update, with the raw residual e used
    as the backpropagated signal.  The input stream depends only on the
    seed, so runs with different adapters or step sizes but a common
    seed see identical data.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    n = task.n
    x_gen = generator(derive(seed, "x-stream"))

    lora_layer: LoraLayer | None = None
    fft_layer: FftLayer | None = None
    if adapter == FFT:
        fft_layer = FftLayer(w=task.w_star.copy())
    elif isinstance(adapter, LoraAdapter):
        if not 1 <= adapter.rank <= n:
            raise RankError(f"rank must satisfy 1 <= r <= n, got {adapter.rank}")
        lora_layer = make_layer(
            n, adapter.rank, adapter.scheme, adapter.multiplier, derive(seed, "layer")
        )
        # share the task's base matrix so the adapter starts at w_star exactly
        lora_layer = LoraLayer(
            w_star=task.w_star, a=lora_layer.a, b=lora_layer.b, multiplier=adapter.multiplier
        )
    else:
        raise DomainError(f"adapter must be a LoraAdapter or {FFT!r}, got {adapter!r}")

    losses = np.empty(steps)
    diverged = False
    # overflow to inf in a blown-up run is the divergence signal, not an
    # anomaly worth a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            x = standard_normal(x_gen, n)
            if fft_layer is not None:
                out = fft_layer.w @ x
            else:
                assert lora_layer is not None
                alpha = adapter.multiplier.alpha(adapter.rank)
                out = lora_layer.w_star @ x + alpha * (lora_layer.b @ (lora_layer.a @ x))
            residual = out - task.w_teacher @ x
            loss = 0.5 * float(residual @ residual) / n
            losses[t] = loss
            if not math.isfinite(loss):
                diverged = True
                losses[t:] = loss
                break
            if fft_layer is not None:
                fft_layer, _ = step_fft(fft_layer, x, residual, eta)
            else:
                lora_layer = step_lora(lora_layer, x, residual, eta).layer_next
    return RunResult(loss_trace=losses, final_loss_ema=ema_of(losses), diverged=diverged)


@dataclass(frozen=True)
class SweepEntry:
    """Seed-averaged outcome of one (key, log2_eta) cell."""

    loss_ema: float  # nan when diverged
    diverged: bool


@dataclass(frozen=True)
class SweepTable:
    """Final losses over an integer log2 learning-rate grid.

    entries maps (key, log2_eta) to the seed-averaged outcome; per_seed
    holds one record per replicate for reporting.  Keys are adapter
    ranks plus optionally the marker "fft".
    """

    keys: tuple[SweepKey, ...]
    log2_etas: tuple[int, ...]
    entries: Mapping[tuple[SweepKey, int], SweepEntry]
    per_seed: tuple[dict, ...] = field(default=())

    def __post_init__(self) -> None:
        lg = self.log2_etas
        if list(lg) != list(range(min(lg), max(lg) + 1)):
            raise DomainError("log2 eta grid must be consecutive integers")


def select_best_lr(table: SweepTable, key: SweepKey) -> int:
    """The log2 eta minimizing the final loss for this key.

    Diverged cells are skipped; exact ties resolve to the smaller eta.
    If everything diverged there is no optimum.
    """
    candidates = [
        (entry.loss_ema, lg)
        for (k, lg), entry in table.entries.items()
        if k == key and not entry.diverged
    ]
    if not candidates:
        raise NoOptimumError(f"all learning rates diverged for {key!r}")
    return min(candidates)[1]


def sweep(
    task: TeacherTask,
    scheme: str,
    gamma: float,
    ranks: Sequence[int],
    log2_eta_range: tuple[int, int],
    steps: int,
    n_seeds: int,
    seed: Seed,
    include_fft: bool = False,
    base: float = 1.0,
) -> SweepTable:
    """Sweep a log2 learning-rate grid for each rank (and optionally fft).

    Replicate i of every cell uses the seed derived from label "rep:i",
    so all cells share input streams: comparisons across eta and rank
    use common random numbers.
    """
    lo, hi = log2_eta_range
    if hi < lo:
        raise DomainError(f"bad log2 eta range ({lo}, {hi})")
    if n_seeds < 1:
        raise DomainError(f"n_seeds must be >= 1, got {n_seeds}")
    log2_etas = tuple(range(lo, hi + 1))
    keys: list[SweepKey] = [int(r) for r in ranks]
    if include_fft:
        keys.append(FFT)

    mult = Multiplier(gamma=gamma, base=base)
    entries: dict[tuple[SweepKey, int], SweepEntry] = {}
    per_seed: list[dict] = []
    for key in keys:
        adapter: LoraAdapter | str = key if key == FFT else LoraAdapter(key, scheme, mult)
        for lg in log2_etas:
            eta = 2.0 ** lg
            emas = []
            cell_diverged = False
            for i in range(n_seeds):
                run = train_run(task, adapter, eta, steps, derive(seed, f"rep:{i}"))
                run_div = run.diverged or (
                    run.final_loss_ema > DIVERGENCE_FACTOR * run.loss_trace[0]
                )
                cell_diverged = cell_diverged or run_div
                emas.append(run.final_loss_ema)
                per_seed.append(
                    {
                        "key": key,
                        "log2_eta": lg,
                        "seed_group": i,
                        "final_loss_ema": run.final_loss_ema,
                        "diverged": run_div,
                    }
                )
            mean_ema = float(np.mean(emas)) if not cell_diverged else float("nan")
            entries[(key, lg)] = SweepEntry(loss_ema=mean_ema, diverged=cell_diverged)
    return SweepTable(
        keys=tuple(keys), log2_etas=log2_etas, entries=entries, per_seed=tuple(per_seed)
    )
