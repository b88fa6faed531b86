"""Importance score of a LoRA adapter.

score = mean singular value of ``B @ A`` + smoothed sensitivity x uncertainty,
where sensitivity is the mean absolute gradient-weight product over the
adapter's trainable entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .linalg import singular_values_of_product
from .model import LoraAdapter


@dataclass
class SensitivityState:
    """Exponential moving averages for one (client, layer, slot)."""

    sensitivity: float = 0.0
    uncertainty: float = 0.0
    t: int = 0


@dataclass(frozen=True)
class ImportanceScore:
    singular_mean: float
    phi: float

    @property
    def value(self) -> float:
        return self.singular_mean + self.phi


def gradient_weight_product(params, grads) -> float:
    w = np.asarray(params, dtype=np.float64).ravel()
    g = np.asarray(grads, dtype=np.float64).ravel()
    if w.size != g.size or w.size == 0:
        raise ShapeError(f"params ({w.size}) and grads ({g.size}) must be equal and non-empty")
    return float(np.abs(w * g).sum() / w.size)


def update_sensitivity(state: SensitivityState, sample: float, lam1=0.85, lam2=0.85) -> SensitivityState:
    """One smoothing step. The uncertainty term compares against the updated mean."""
    if not (0.0 < lam1 < 1.0 and 0.0 < lam2 < 1.0):
        raise ParameterError(f"smoothing factors must lie in (0, 1), got {lam1}, {lam2}")
    s = lam1 * state.sensitivity + (1.0 - lam1) * sample
    u = lam2 * state.uncertainty + (1.0 - lam2) * abs(sample - s)
    return SensitivityState(s, u, state.t + 1)


def score(
    adapter: LoraAdapter,
    state: SensitivityState,
    grads: tuple[np.ndarray, np.ndarray],
    lam1=0.85,
    lam2=0.85,
) -> ImportanceScore:
    """Score ``adapter`` given its last ``(dB, dA)`` gradients.

    Advances ``state`` in place by one smoothing step before the
    sensitivity-uncertainty product is taken.
    """
    gb, ga = grads
    if np.shape(gb) != adapter.B.shape or np.shape(ga) != adapter.A.shape:
        raise ShapeError("gradients do not match adapter factors")
    sv = singular_values_of_product(adapter.B, adapter.A)
    flat_g = np.concatenate([np.ravel(gb), np.ravel(ga)])
    sample = gradient_weight_product(adapter.flat_params(), flat_g)
    nxt = update_sensitivity(state, sample, lam1, lam2)
    state.sensitivity, state.uncertainty, state.t = nxt.sensitivity, nxt.uncertainty, nxt.t
    return ImportanceScore(float(sv.sum() / sv.size), state.sensitivity * state.uncertainty)
