"""224x224 RGB renderings of 1-D signals.

Everything after quantization is integer arithmetic, so a given input,
kind and parameter set always yields the same bytes.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import SignalTooShort
from ._viridis import VIRIDIS
from .spectral import stft

SIZE = 224
PSD_FLOOR_DB = -120.0
PSD_EPS = 1e-12
BAND = (0.05, 0.95)


class ImageKind(enum.Enum):
    Waveform = "waveform"
    SpecAngle = "spec-angle"
    SpecPhase = "spec-phase"
    SpecPsd = "spec-psd"

    @classmethod
    def parse(cls, value) -> "ImageKind":
        if isinstance(value, cls):
            return value
        return cls(str(value).strip().lower())


@dataclass(frozen=True)
class SignalImage:
    pixels: np.ndarray  # (224, 224, 3) uint8
    kind: ImageKind

    def to_png(self) -> bytes:
        return encode_png(self.pixels)

    def to_ppm(self) -> bytes:
        h, w, _ = self.pixels.shape
        return f"P6\n{w} {h}\n255\n".encode() + self.pixels.tobytes()


def _chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


def encode_png(pixels: np.ndarray) -> bytes:
    """8-bit RGB PNG, filter type 0 on every row."""
    h, w, _ = pixels.shape
    raw = b"".join(b"\x00" + pixels[r].tobytes() for r in range(h))
    return (b"\x89PNG\r\n\x1a\n"
            + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + _chunk(b"IDAT", zlib.compress(raw, 9))
            + _chunk(b"IEND", b""))


def quantize(v: np.ndarray) -> np.ndarray:
    """Map [0, 1] onto colormap indices 0..255."""
    return np.clip(np.floor(np.asarray(v) * 255.0 + 0.5), 0, 255).astype(np.int64)


def _minmax(m: np.ndarray) -> np.ndarray:
    lo, hi = float(m.min()), float(m.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


def _bresenham(canvas, x0, y0, x1, y1):
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        canvas[y0, x0] = 0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def waveform_rows(x) -> np.ndarray:
    """Pixel row of each of the 224 columns (row 0 is the top)."""
    x = np.asarray(x, dtype=np.float64)
    cols = np.interp(np.linspace(0, len(x) - 1, SIZE), np.arange(len(x)), x)
    v = _minmax(cols)
    top, bottom = BAND[0] * (SIZE - 1), BAND[1] * (SIZE - 1)
    return np.floor(bottom - v * (bottom - top) + 0.5).astype(np.int64)


def render_waveform(x) -> np.ndarray:
    rows = waveform_rows(x)
    canvas = np.full((SIZE, SIZE), 255, dtype=np.uint8)
    if len(rows) == 1:
        canvas[rows[0], 0] = 0
    for c in range(SIZE - 1):
        _bresenham(canvas, c, int(rows[c]), c + 1, int(rows[c + 1]))
    return np.repeat(canvas[:, :, None], 3, axis=2)


def spectrogram_matrix(x, fs: float, kind, window_len: int = 64, hop: int = 16,
                       threads: int | None = None) -> np.ndarray:
    """Pre-colormap value matrix, shape (freq, time), low frequency first.

    For ``SpecPsd`` the values are dB; for the phase kinds, radians.
    """
    kind = ImageKind.parse(kind)
    S = stft(x, fs, window_len, hop, threads)
    frames = S.frames.T  # (freq, time)
    if kind is ImageKind.SpecAngle:
        return np.arctan2(frames.imag, frames.real)
    if kind is ImageKind.SpecPhase:
        return np.unwrap(np.arctan2(frames.imag, frames.real), axis=1)
    if kind is ImageKind.SpecPsd:
        psd = np.abs(frames) ** 2 / (fs * np.sum(S.window ** 2))
        return np.clip(10.0 * np.log10(psd + PSD_EPS), PSD_FLOOR_DB, 0.0)
    raise ValueError(f"{kind} is not a spectrogram kind")


def normalized_matrix(m: np.ndarray, kind) -> np.ndarray:
    kind = ImageKind.parse(kind)
    if kind is ImageKind.SpecAngle:
        return (m + np.pi) / (2 * np.pi)
    if kind is ImageKind.SpecPhase:
        return _minmax(m)
    return (m - PSD_FLOOR_DB) / -PSD_FLOOR_DB


def scale_rows_cols(n_rows: int, n_cols: int):
    """Nearest-neighbour source row/column for each output pixel."""
    return (np.arange(SIZE) * n_rows) // SIZE, (np.arange(SIZE) * n_cols) // SIZE


def render_spectrogram(x, fs, kind, window_len=64, hop=16, threads=None) -> np.ndarray:
    m = spectrogram_matrix(x, fs, kind, window_len, hop, threads)
    idx = quantize(normalized_matrix(m, kind))[::-1]  # high frequencies at the top
    r, c = scale_rows_cols(*idx.shape)
    return VIRIDIS[idx[r][:, c]]


def render(x, fs: float, kind, window_len: int = 64, hop: int = 16,
           threads: int | None = None) -> SignalImage:
    """Render a 1-D series as a 224x224 waveform or spectrogram image."""
    kind = ImageKind.parse(kind)
    x = np.asarray(x, dtype=np.float64)
    if kind is ImageKind.Waveform:
        if len(x) < 2:
            raise SignalTooShort("waveform needs at least 2 samples")
        pixels = render_waveform(x)
    else:
        if len(x) < window_len:
            raise SignalTooShort(f"spectrogram needs at least {window_len} samples, got {len(x)}")
        pixels = render_spectrogram(x, fs, kind, window_len, hop, threads)
    return SignalImage(np.ascontiguousarray(pixels, dtype=np.uint8), kind)
