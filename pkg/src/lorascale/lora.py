"""Single LoRA layer: construction, forward pass, and exact gradients.

The layer computes z_bar = W* z_in + alpha * B A z_in with a frozen
square base matrix W* and trainable factors A (r x n) and B (n x r).
One of the two factors starts at zero, so the adapter is a no-op at
construction under either init scheme.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, RankError
from .randkit import Seed, derive, gaussian_matrix

INIT_A = "initA"  # A ~ N(0, 1/n), B = 0
INIT_B = "initB"  # B ~ N(0, 1/r), A = 0
SCHEMES = (INIT_A, INIT_B)


@dataclass(frozen=True)
class Multiplier:
    """Rank-dependent adapter multiplier alpha = base * r^(-gamma)."""

    gamma: float
    base: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.base > 0.0:
            raise DomainError(f"base must be positive, got {self.base}")

    def alpha(self, rank: int) -> float:
        return self.base * float(rank) ** (-self.gamma)


@dataclass(frozen=True)
class LoraLayer:
    """Frozen base matrix plus low-rank adapter factors.

    Layers are immutable; an optimizer step builds a new layer that
    shares the (never written) w_star array.
    """

    w_star: np.ndarray  # (n, n), frozen
    a: np.ndarray       # (r, n)
    b: np.ndarray       # (n, r)
    multiplier: Multiplier

    @property
    def n(self) -> int:
        return self.w_star.shape[0]

    @property
    def r(self) -> int:
        return self.a.shape[0]

    def __post_init__(self) -> None:
        n = self.w_star.shape[0]
        if self.w_star.ndim != 2 or self.w_star.shape != (n, n):
            raise DimensionError(f"w_star must be square, got {self.w_star.shape}")
        r = self.a.shape[0]
        if self.a.shape != (r, n):
            raise DimensionError(f"a must be (r, n), got {self.a.shape}")
        if self.b.shape != (n, r):
            raise DimensionError(f"b must be (n, r), got {self.b.shape}")
        if not 1 <= r <= n:
            raise RankError(f"rank must satisfy 1 <= r <= n, got r={r}, n={n}")


@dataclass(frozen=True)
class ForwardTrace:
    """Intermediate features of one forward pass."""

    z_in: np.ndarray   # (n,)
    z_a: np.ndarray    # (r,)   A z_in
    z_b: np.ndarray    # (n,)   alpha B z_a
    z_bar: np.ndarray  # (n,)   W* z_in + z_b


def effective_alpha(layer: LoraLayer) -> float:
    """The scalar multiplier alpha = base * r^(-gamma) of this layer."""
    return layer.multiplier.alpha(layer.r)


def make_layer(
    n: int,
    r: int,
    scheme: str,
    multiplier: Multiplier,
    seed: Seed,
    w_star_std: float | None = None,
) -> LoraLayer:
    """Build a fresh layer under the given init scheme.

    w_star_std defaults to 1/sqrt(n).  The adapter path is exactly zero
    at construction: InitA draws A ~ N(0, 1/n) with B = 0, InitB draws
    B ~ N(0, 1/r) with A = 0.
    """
    if r > n or r < 1:
        raise RankError(f"rank must satisfy 1 <= r <= n, got r={r}, n={n}")
    if scheme not in SCHEMES:
        raise DomainError(f"unknown init scheme {scheme!r}")
    if w_star_std is None:
        w_star_std = n ** -0.5
    w_star = gaussian_matrix(n, n, w_star_std, derive(seed, "w_star"))
    if scheme == INIT_A:
        a = gaussian_matrix(r, n, n ** -0.5, derive(seed, "a"))
        b = np.zeros((n, r))
    else:
        a = np.zeros((r, n))
        b = gaussian_matrix(n, r, r ** -0.5, derive(seed, "b"))
    return LoraLayer(w_star=w_star, a=a, b=b, multiplier=multiplier)


def _check_vector(v: np.ndarray, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise DimensionError(f"{name} must have shape ({n},), got {v.shape}")
    return v


def forward(layer: LoraLayer, z_in: np.ndarray) -> ForwardTrace:
    """Forward pass recording the adapter features z_a and z_b."""
    z_in = _check_vector(z_in, layer.n, "z_in")
    z_a = layer.a @ z_in
    z_b = effective_alpha(layer) * (layer.b @ z_a)
    z_bar = layer.w_star @ z_in + z_b
    return ForwardTrace(z_in=z_in, z_a=z_a, z_b=z_b, z_bar=z_bar)


def grad_a(layer: LoraLayer, z_in: np.ndarray, d_z_bar: np.ndarray) -> np.ndarray:
    """Loss gradient with respect to A: alpha * (B^T d_z_bar) outer z_in."""
    z_in = _check_vector(z_in, layer.n, "z_in")
    d_z_bar = _check_vector(d_z_bar, layer.n, "d_z_bar")
    return effective_alpha(layer) * np.outer(layer.b.T @ d_z_bar, z_in)


def grad_b(layer: LoraLayer, z_in: np.ndarray, d_z_bar: np.ndarray) -> np.ndarray:
    """Loss gradient with respect to B: alpha * d_z_bar outer (A z_in)."""
    z_in = _check_vector(z_in, layer.n, "z_in")
    d_z_bar = _check_vector(d_z_bar, layer.n, "d_z_bar")
    return effective_alpha(layer) * np.outer(d_z_bar, layer.a @ z_in)


def save_layer(layer: LoraLayer, path) -> None:
    """Serialize a layer to a flat .npz archive."""
    np.savez(
        path,
        w_star=layer.w_star,
        a=layer.a,
        b=layer.b,
        gamma=layer.multiplier.gamma,
        base=layer.multiplier.base,
    )


def load_layer(path) -> LoraLayer:
    """Read back a layer written by save_layer."""
    with np.load(path) as data:
        mult = Multiplier(gamma=float(data["gamma"]), base=float(data["base"]))
        return LoraLayer(w_star=data["w_star"], a=data["a"], b=data["b"], multiplier=mult)
