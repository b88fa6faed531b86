"""NormalFloat k-bit quantile codebooks and blockwise absmax quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from statistics import NormalDist

import numpy as np

from . import kernels
from .errors import CorruptionError, ParameterError, QuantizationInputError

SUPPORTED_BITS = (1, 2, 3, 4, 8)
DEFAULT_BLOCK_SIZE = 64


@dataclass(frozen=True)
class NfCodebook:
    bits: int
    codes: np.ndarray

    def __post_init__(self):
        self.codes.setflags(write=False)

    def __len__(self):
        return self.codes.size

    def max_gap(self) -> float:
        return float(np.diff(self.codes).max())


def quantile_boundaries(k: int) -> list[float]:
    """Standard-normal quantiles at the clamped levels ``j / (2^k + 1)``, ``j = 1 .. 2^k + 1``."""
    if k not in SUPPORTED_BITS:
        raise ParameterError(f"unsupported codebook width {k}; choose from {SUPPORTED_BITS}")
    n = 2**k
    eps = 1.0 / (2 * (n + 1))
    inv = NormalDist().inv_cdf
    return [inv(min(max(j / (n + 1), eps), 1.0 - eps)) for j in range(1, n + 2)]


@lru_cache(maxsize=None)
def build_codebook(k: int) -> NfCodebook:
    """2^k codes at midpoints of consecutive standard-normal quantiles.

    Quantile levels are ``j / (2^k + 1)`` for ``j = 1 .. 2^k + 1``, clamped
    to ``[eps, 1 - eps]`` with ``eps = 1 / (2 (2^k + 1))`` so the last one
    is finite. The raw midpoints are then made exactly antisymmetric and
    scaled so the outermost codes are +-1.
    """
    q = quantile_boundaries(k)
    n = 2**k
    raw = np.array([0.5 * (q[i] + q[i + 1]) for i in range(n)])
    sym = (raw - raw[::-1]) / 2.0
    codes = sym / np.abs(sym).max()
    return NfCodebook(k, codes)


@dataclass(frozen=True)
class QuantizedTensor:
    shape: tuple[int, ...]
    block_size: int
    scales: np.ndarray
    indices: np.ndarray
    bits: int

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))


def quantize(tensor, codebook: NfCodebook, block_size: int = DEFAULT_BLOCK_SIZE) -> QuantizedTensor:
    """Absmax-scale each run of ``block_size`` consecutive (row-major) elements and
    store the index of the nearest code; ties go to the lower index."""
    if block_size < 1:
        raise ParameterError("block_size must be >= 1")
    x = np.asarray(tensor, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise QuantizationInputError("cannot quantize non-finite values")
    idx, scales = kernels.quantize_blocks(x.ravel(), codebook.codes, block_size)
    dtype = np.uint8 if len(codebook) <= 256 else np.uint16
    return QuantizedTensor(tuple(x.shape), block_size, scales, idx.astype(dtype), codebook.bits)


def dequantize(qt: QuantizedTensor, codebook: NfCodebook) -> np.ndarray:
    idx = qt.indices.astype(np.int64)
    if idx.size != qt.size or (idx.size and (idx.min() < 0 or idx.max() >= len(codebook))):
        raise CorruptionError("code index out of range for this codebook")
    per_elem = np.repeat(qt.scales, qt.block_size)[: idx.size]
    return (per_elem * codebook.codes[idx]).reshape(qt.shape)


def footprint_bytes(param_count: int, bits: int, block_size: int = DEFAULT_BLOCK_SIZE) -> int:
    """Packed codes plus one float32 scale per block."""
    return math.ceil(param_count * bits / 8) + math.ceil(param_count / block_size) * 4


def round_trip(x, bits: int, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Value of ``x`` as stored at ``bits`` precision.

    32 bits is the full working precision and returns ``x`` unchanged, 16
    bits is an IEEE half float, and narrower widths use the NormalFloat
    codebook with blockwise absmax scales.
    """
    x = np.asarray(x, dtype=np.float64)
    if bits == 32:
        return x.copy()
    if bits == 16:
        return x.astype(np.float16).astype(np.float64)
    cb = build_codebook(bits)
    return dequantize(quantize(x, cb, block_size), cb)


def round_trip_bound(x, bits: int, block_size: int = DEFAULT_BLOCK_SIZE) -> np.ndarray:
    """Elementwise worst-case error of :func:`round_trip` for ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if bits == 32:
        return np.zeros_like(x)
    if bits == 16:
        return np.maximum(np.abs(x) * 2.0**-11, 2.0**-25)
    cb = build_codebook(bits)
    flat = np.abs(x.ravel())
    n_blocks = -(-flat.size // block_size)
    padded = np.concatenate([flat, np.zeros(n_blocks * block_size - flat.size)])
    scales = padded.reshape(n_blocks, block_size).max(axis=1)
    per_elem = np.repeat(scales, block_size)[: flat.size]
    return (per_elem * cb.max_gap() / 2.0).reshape(x.shape)
