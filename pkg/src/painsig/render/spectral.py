"""Iterative radix-2 FFT and a Hann-windowed STFT built on it."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import SignalTooShort


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_pow2(a: np.ndarray) -> np.ndarray:
    """Decimation-in-time butterflies over the last axis (length a power of two)."""
    n = a.shape[-1]
    a = a[..., _bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / m)
        blocks = a.reshape(a.shape[:-1] + (n // m, m))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape)
        m *= 2
    return a


def fft(x) -> np.ndarray:
    """DFT over the last axis; lengths that are not powers of two are zero-padded."""
    a = np.asarray(x, dtype=np.complex128)
    if a.shape[-1] < 1:
        raise ValueError("fft needs at least one sample")
    n = next_pow2(a.shape[-1])
    if n != a.shape[-1]:
        pad = [(0, 0)] * (a.ndim - 1) + [(0, n - a.shape[-1])]
        a = np.pad(a, pad)
    return _fft_pow2(a)


def ifft(X, n: int | None = None) -> np.ndarray:
    """Inverse of :func:`fft`; ``n`` slices the result back to an original length."""
    X = np.asarray(X, dtype=np.complex128)
    N = X.shape[-1]
    if N != next_pow2(N):
        raise ValueError("ifft expects a power-of-two length spectrum")
    x = np.conj(_fft_pow2(np.conj(X))) / N
    return x if n is None else x[..., :n]


@dataclass(frozen=True)
class ComplexSpectrum:
    bins: np.ndarray
    fs: float
    n_input: int  # length before zero padding

    @property
    def n(self) -> int:
        return len(self.bins)

    def frequencies(self) -> np.ndarray:
        return np.arange(self.n) * self.fs / self.n


def spectrum(x, fs: float = 1.0) -> ComplexSpectrum:
    x = np.asarray(x)
    return ComplexSpectrum(fft(x), fs, x.shape[-1])


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class Stft:
    frames: np.ndarray  # (time, freq) complex, bins 0..n_fft/2
    window_len: int
    hop: int
    fs: float
    window: np.ndarray
    n_fft: int

    def frequencies(self) -> np.ndarray:
        return np.arange(self.frames.shape[1]) * self.fs / self.n_fft


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("PAINSIG_THREADS", "1")))
    except ValueError:
        return 1


def stft(x, fs: float, window_len: int = 64, hop: int = 16, threads: int | None = None) -> Stft:
    """Hann-windowed short-time transform keeping bins from 0 to fs/2."""
    x = np.asarray(x, dtype=np.float64)
    if window_len < 8:
        raise ValueError("window_len must be at least 8")
    if hop < 1:
        raise ValueError("hop must be at least 1")
    if len(x) < window_len:
        raise SignalTooShort(f"signal of {len(x)} samples is shorter than the {window_len}-sample window")
    n_frames = (len(x) - window_len) // hop + 1
    win = hann(window_len)
    idx = np.arange(window_len)[None, :] + hop * np.arange(n_frames)[:, None]
    framed = x[idx] * win
    n_fft = next_pow2(window_len)
    keep = n_fft // 2 + 1
    threads = default_threads() if threads is None else max(1, threads)
    if threads == 1 or n_frames < 2 * threads:
        spec = fft(framed)[:, :keep]
    else:
        chunks = np.array_split(np.arange(n_frames), threads)
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda c: fft(framed[c])[:, :keep], chunks))
        spec = np.concatenate(parts, axis=0)
    return Stft(spec, window_len, hop, fs, win, n_fft)
