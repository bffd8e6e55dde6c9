"""Arbitrary-length FFT kernels.

Power-of-two lengths use a recursive Cooley-Tukey four-step split
(N = n1*n2, transform rows, twiddle, transform columns) with direct
small-DFT matrix products at the leaves; the split keeps each
sub-transform cache-resident and the leaf products run through BLAS.
Every other length goes through Bluestein's chirp-z reformulation,
which only needs power-of-two transforms internally. The forward
transform is the unnormalized DFT; ``ifft`` applies the 1/N factor.
"""

from __future__ import annotations

import numpy as np


def _next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


_LEAF = 64  # largest length handled by a direct DFT matrix product

_DFT_CACHE: dict = {}
_TW_CACHE: dict = {}


def _dft_matrix(n: int) -> np.ndarray:
    mat = _DFT_CACHE.get(n)
    if mat is None:
        k = np.arange(n)
        mat = _DFT_CACHE[n] = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return mat  # symmetric: mat.T == mat


def _twiddle_grid(n: int, n1: int, n2: int) -> np.ndarray:
    tw = _TW_CACHE.get(n)
    if tw is None:
        grid = np.outer(np.arange(n1), np.arange(n2))
        tw = _TW_CACHE[n] = np.exp(-2j * np.pi * grid / n)
    return tw


def _fft_pow2(x: np.ndarray) -> np.ndarray:
    """FFT along the last axis; length must be a power of two."""
    n = x.shape[-1]
    if n <= _LEAF:
        return x @ _dft_matrix(n)
    n1 = 1 << ((n.bit_length() - 1) // 2)
    n2 = n // n1
    a = x.reshape(x.shape[:-1] + (n1, n2))
    if n1 <= _LEAF:
        b = _dft_matrix(n1) @ a  # length-n1 transforms down the columns
    else:
        b = _fft_pow2(a.swapaxes(-1, -2)).swapaxes(-1, -2)
    c = b * _twiddle_grid(n, n1, n2)
    d = _fft_pow2(c)  # length-n2 transforms along the rows
    # output index k = k2*n1 + k1 lives at d[..., k1, k2]
    return d.swapaxes(-1, -2).reshape(x.shape)


def _ifft_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_fft_pow2(np.conj(x))) / x.shape[-1]


def _fft_bluestein(x: np.ndarray) -> np.ndarray:
    """Chirp-z DFT along the last axis for arbitrary length."""
    n = x.shape[-1]
    ks = np.arange(n)
    # k^2 reduced mod 2n keeps the chirp phase argument small: exp(-i*pi*k^2/n)
    # is periodic in k^2 with period 2n.
    expo = (ks * ks) % (2 * n)
    chirp = np.exp(-1j * np.pi * expo / n)
    m = _next_pow2(2 * n - 1)
    a = np.zeros(x.shape[:-1] + (m,), dtype=np.complex128)
    a[..., :n] = x * chirp
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    conv = _ifft_pow2(_fft_pow2(a) * _fft_pow2(b))
    return conv[..., :n] * chirp


_CHUNK_ELEMS = 1 << 16  # ~1 MB of complex128 per batch chunk, stays cache-resident


def fft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unnormalized forward DFT along ``axis`` for any length >= 1."""
    x = np.asarray(x, dtype=np.complex128)
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    transform = _fft_pow2 if n & (n - 1) == 0 else _fft_bluestein
    batch = int(np.prod(x.shape[:-1], dtype=np.int64))
    if batch > 1 and batch * n > _CHUNK_ELEMS:
        rows = max(1, _CHUNK_ELEMS // n)
        flat = np.ascontiguousarray(x).reshape(batch, n)
        out = np.empty_like(flat)
        for i in range(0, batch, rows):
            out[i:i + rows] = transform(flat[i:i + rows])
        out = out.reshape(x.shape)
    else:
        out = transform(np.ascontiguousarray(x))
    return np.moveaxis(out, -1, axis)


def ifft(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse DFT along ``axis``; satisfies ifft(fft(x)) == x."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[axis]
    return np.conj(fft(np.conj(x), axis=axis)) / n
