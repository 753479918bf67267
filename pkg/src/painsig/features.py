"""Inter-beat-interval features, per-second heart rate and demographic augmentation.

IBIs stay in *sample* units throughout, so ``hr = 60 * fs / mu`` holds as
written; ``mu``, ``rmssd`` and ``sdnn`` are therefore in samples as well.
"""

from __future__ import annotations

import enum
import math
from dataclasses import astuple, dataclass

import numpy as np

from .dataio import EcgSegment, SubjectMeta
from .errors import InsufficientIbis, NoComputableWindow, SegmentTooShort
from .qrs import detect_peaks_array

FEATURE_NAMES = ("mu", "rmssd", "sdnn", "slope", "sr", "hr")
RMSSD_FLOOR = 1e-12
HR_CONTEXT_S = 0.5


@dataclass(frozen=True)
class IbiFeatures:
    mu: float
    rmssd: float
    sdnn: float
    slope: float
    sr: float
    hr: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=np.float64)


class AugmentMode(enum.Enum):
    NONE = "none"
    G = "g"
    A = "a"
    GA = "ga"

    @classmethod
    def parse(cls, value) -> "AugmentMode":
        if isinstance(value, cls):
            return value
        if value is None:
            return cls.NONE
        return cls(str(value).strip().lower())


@dataclass(frozen=True)
class AugmentedFeatures:
    base: IbiFeatures
    extras: tuple = ()

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.base.as_array(), np.asarray(self.extras, dtype=np.float64)])

    def __len__(self):
        return len(FEATURE_NAMES) + len(self.extras)


def compute_ibi_features(ibis, fs: float) -> IbiFeatures:
    """The six IBI features of a series of at least two intervals."""
    b = np.asarray(ibis, dtype=np.float64)
    n = len(b)
    if n < 2:
        raise InsufficientIbis(f"need at least 2 IBIs, got {n}")
    mu = float(b.mean())
    rmssd = math.sqrt(float(np.mean(np.diff(b) ** 2)))
    sdnn = math.sqrt(float(np.sum((b - mu) ** 2)) / (n - 1))
    # A = [t, 1]; the normal equations A^T A x = A^T b have the closed form below
    t = np.arange(n, dtype=np.float64)
    tc = t - t.mean()
    slope = float(np.dot(tc, b - mu) / np.dot(tc, tc))
    sr = sdnn / rmssd if rmssd >= RMSSD_FLOOR else 0.0
    hr = 60.0 * fs / mu
    return IbiFeatures(mu, rmssd, sdnn, slope, sr, hr)


@dataclass(frozen=True)
class HeartRateSeries:
    values: np.ndarray
    computed: np.ndarray  # True where the window had >= 2 beats of its own

    def __len__(self):
        return len(self.values)


def _window_hr(x: np.ndarray, fs: float, w: int) -> float | None:
    start, stop = int(round(w * fs)), int(round((w + 1) * fs))
    ctx = int(round(HR_CONTEXT_S * fs))
    lo, hi = max(0, start - ctx), min(len(x), stop + ctx)
    peaks = detect_peaks_array(x[lo:hi], fs) + lo
    landed = peaks[(peaks >= start) & (peaks < stop)]
    if len(landed) < 2:
        return None
    return 60.0 * fs / float(np.mean(np.diff(landed)))


def heart_rate_series(segment: EcgSegment) -> HeartRateSeries:
    """Heart rate for every whole second of the segment.

    A window needs two beats inside it; otherwise it takes the mean of the
    nearest computable windows before and after it (or the single one that
    exists at the edges).
    """
    x, fs = segment.samples, segment.fs
    if segment.duration < 2.0:
        raise SegmentTooShort(f"heart-rate series needs at least 2 s, got {segment.duration:.3f} s")
    n_windows = int(math.floor(segment.duration + 1e-9))
    raw = [_window_hr(x, fs, w) for w in range(n_windows)]
    known = [i for i, v in enumerate(raw) if v is not None]
    if not known:
        raise NoComputableWindow(f"no 1-s window of {segment.segment_id!r} holds two beats")
    values = np.empty(n_windows)
    for i, v in enumerate(raw):
        if v is not None:
            values[i] = v
            continue
        before = [j for j in known if j < i]
        after = [j for j in known if j > i]
        nb = [raw[before[-1]]] if before else []
        na = [raw[after[0]]] if after else []
        values[i] = float(np.mean(nb + na))
    return HeartRateSeries(values, np.array([v is not None for v in raw]))


def augment_features(base: IbiFeatures, meta: SubjectMeta, mode="none") -> AugmentedFeatures:
    """Append demographic extras in the fixed order (gender, age)."""
    mode = AugmentMode.parse(mode)
    extras = []
    if mode in (AugmentMode.G, AugmentMode.GA):
        extras.append(meta.gender.code)
    if mode in (AugmentMode.A, AugmentMode.GA):
        extras.append(meta.age)
    return AugmentedFeatures(base, tuple(extras))


def extra_names(mode) -> tuple:
    mode = AugmentMode.parse(mode)
    return {AugmentMode.NONE: (), AugmentMode.G: ("gender",), AugmentMode.A: ("age",),
            AugmentMode.GA: ("gender", "age")}[mode]
