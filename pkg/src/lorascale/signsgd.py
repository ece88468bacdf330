"""One SignSGD step on a LoRA layer, with the exact update decomposition.

The feature increment of a step splits into three parts computed from
their defining products (never by subtraction):

    delta1 = alpha * B_prev (A_next - A_prev) z_in      old B, new A
    delta2 = alpha * (B_next - B_prev) A_prev z_in      new B, old A
    delta3 = alpha * (B_next - B_prev) (A_next - A_prev) z_in

Their sum telescopes to the full increment of z_b across the step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, NumericError
from .lora import LoraLayer, effective_alpha, forward, grad_a, grad_b

FFT = "fft"  # marker for the full-finetuning variant


@dataclass(frozen=True)
class StepRecord:
    """Everything one step produced, for telescoping and scale checks."""

    layer_next: LoraLayer
    delta1: np.ndarray
    delta2: np.ndarray
    delta3: np.ndarray
    delta_zb: np.ndarray
    z_a_prev: np.ndarray
    z_a_next: np.ndarray


@dataclass(frozen=True)
class FftLayer:
    """Fully finetuned layer: a single dense trainable matrix."""

    w: np.ndarray  # (n, n)

    @property
    def n(self) -> int:
        return self.w.shape[0]

    def __post_init__(self) -> None:
        n = self.w.shape[0]
        if self.w.ndim != 2 or self.w.shape != (n, n):
            raise DimensionError(f"w must be square, got {self.w.shape}")


def sign_of(m: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) = 0 (negative zero included)."""
    # adding +0.0 turns any -0.0 produced by np.sign into +0.0
    return np.sign(m) + 0.0


def _require_finite(name: str, *arrays: np.ndarray) -> None:
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite values in {name}")


def step_lora(layer: LoraLayer, z_in: np.ndarray, d_z_bar: np.ndarray, eta: float) -> StepRecord:
    """Apply one SignSGD step to both adapter factors.

    Updates A and B simultaneously from gradients at the current point,
    then reports the feature increment through its three-way split.
    """
    if not (np.isfinite(eta) and eta > 0):
        raise NumericError(f"eta must be finite and positive, got {eta}")
    _require_finite("z_in / d_z_bar", np.asarray(z_in), np.asarray(d_z_bar))
    alpha = effective_alpha(layer)

    g_a = sign_of(grad_a(layer, z_in, d_z_bar))
    g_b = sign_of(grad_b(layer, z_in, d_z_bar))
    delta_a = -eta * g_a
    delta_b = -eta * g_b
    a_next = layer.a + delta_a
    b_next = layer.b + delta_b
    layer_next = LoraLayer(w_star=layer.w_star, a=a_next, b=b_next, multiplier=layer.multiplier)

    z_a_prev = layer.a @ z_in
    delta_z_a = delta_a @ z_in
    z_a_next = z_a_prev + delta_z_a

    delta1 = alpha * (layer.b @ delta_z_a)
    delta2 = alpha * (delta_b @ z_a_prev)
    delta3 = alpha * (delta_b @ delta_z_a)
    delta_zb = delta1 + delta2 + delta3

    return StepRecord(
        layer_next=layer_next,
        delta1=delta1,
        delta2=delta2,
        delta3=delta3,
        delta_zb=delta_zb,
        z_a_prev=z_a_prev,
        z_a_next=z_a_next,
    )


def step_fft(
    layer: FftLayer, z_in: np.ndarray, d_z_bar: np.ndarray, eta: float
) -> tuple[FftLayer, np.ndarray]:
    """One SignSGD step on a dense layer.

    Returns the stepped layer and the feature increment (W_next - W) z_in.
    """
    if not (np.isfinite(eta) and eta > 0):
        raise NumericError(f"eta must be finite and positive, got {eta}")
    z_in = np.asarray(z_in, dtype=float)
    d_z_bar = np.asarray(d_z_bar, dtype=float)
    _require_finite("z_in / d_z_bar", z_in, d_z_bar)
    if z_in.shape != (layer.n,) or d_z_bar.shape != (layer.n,):
        raise DimensionError("z_in and d_z_bar must have shape (n,)")
    delta_w = -eta * np.outer(sign_of(d_z_bar), sign_of(z_in))
    return FftLayer(w=layer.w + delta_w), delta_w @ z_in


def telescope_check(
    records: Sequence[StepRecord],
    z_b_final: np.ndarray,
    z_b_initial: np.ndarray | None = None,
    tol: float = 1e-8,
) -> bool:
    """Do the per-step increments sum to the total feature change?

    z_b_initial defaults to zero, the value at a fresh no-op layer.  An
    empty record sequence passes exactly when final equals initial.
    """
    z_b_final = np.asarray(z_b_final, dtype=float)
    if z_b_initial is None:
        z_b_initial = np.zeros_like(z_b_final)
    total = np.asarray(z_b_initial, dtype=float).copy()
    for rec in records:
        total = total + rec.delta_zb
    return bool(np.allclose(total, z_b_final, rtol=tol, atol=tol))


def z_b_of(layer: LoraLayer, z_in: np.ndarray) -> np.ndarray:
    """Adapter feature alpha B A z_in recomputed from the factors."""
    return forward(layer, z_in).z_b
