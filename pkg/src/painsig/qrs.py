"""Pan-Tompkins QRS detection.

All windows are expressed in seconds so the detector runs unchanged at any
sampling rate: 150 ms integration, 200 ms refractory period, 360 ms T-wave
discrimination window and a 75 ms refinement radius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dataio import EcgSegment
from .errors import InsufficientPeaks, NoQrsFound, SegmentTooShort

BAND_HZ = (5.0, 15.0)
FILTER_ORDER = 2
INTEGRATION_S = 0.150
REFRACTORY_S = 0.200
T_WAVE_S = 0.360
REFINE_S = 0.075
INIT_S = 2.0
SEARCHBACK_RR_FACTOR = 1.66
RR_HISTORY = 8


@dataclass(frozen=True)
class PreprocessedStages:
    bandpassed: np.ndarray
    derivative: np.ndarray
    squared: np.ndarray
    integrated: np.ndarray
    fs: float


@dataclass(frozen=True)
class RPeakList:
    indices: np.ndarray
    fs: float

    def __len__(self):
        return len(self.indices)


def _samples(seconds: float, fs: float) -> int:
    return max(1, int(round(seconds * fs)))


def bandpass(x: np.ndarray, fs: float) -> np.ndarray:
    """Zero-phase Butterworth 5-15 Hz band-pass with reflection padding."""
    b, a = signal.butter(FILTER_ORDER, BAND_HZ, btype="bandpass", fs=fs)
    # one effective impulse-response length (~1/f_low) of mirrored signal on each side
    padlen = min(len(x) - 1, int(round(fs / BAND_HZ[0])))
    return signal.filtfilt(b, a, x, padtype="even", padlen=padlen)


def five_point_derivative(x: np.ndarray, fs: float) -> np.ndarray:
    """y[n] = fs/8 * (-x[n-2] - 2x[n-1] + 2x[n+1] + x[n+2]), edges held constant."""
    xp = np.pad(x, 2, mode="edge")
    return fs / 8.0 * (-xp[:-4] - 2 * xp[1:-3] + 2 * xp[3:-1] + xp[4:])


def moving_integration(x: np.ndarray, fs: float) -> np.ndarray:
    w = _samples(INTEGRATION_S, fs)
    return np.convolve(x, np.full(w, 1.0 / w), mode="same")


def _stages(x: np.ndarray, fs: float) -> PreprocessedStages:
    bp = bandpass(x, fs)
    d = five_point_derivative(bp, fs)
    sq = d * d
    return PreprocessedStages(bp, d, sq, moving_integration(sq, fs), fs)


def preprocess(segment: EcgSegment) -> PreprocessedStages:
    """Band-pass, differentiate, square and integrate a segment."""
    x, fs = segment.samples, segment.fs
    if len(x) < _samples(INTEGRATION_S, fs):
        raise SegmentTooShort(f"need at least {INTEGRATION_S * 1000:.0f} ms of signal")
    return _stages(x, fs)


def _candidates(integrated: np.ndarray) -> np.ndarray:
    peaks, _ = signal.find_peaks(integrated)
    return peaks


def detect_peaks_array(x: np.ndarray, fs: float) -> np.ndarray:
    """Decision stage over a raw sample array; returns refined R indices.

    No minimum-duration check is made here; :func:`detect_r_peaks` is the
    public entry point that enforces one.
    """
    x = np.asarray(x, dtype=np.float64)
    if len(x) < max(_samples(INTEGRATION_S, fs), 16):
        return np.zeros(0, dtype=np.int64)
    st = _stages(x, fs)
    mwi, bp = st.integrated, st.bandpassed
    slope = np.abs(np.diff(bp, prepend=bp[0]))

    refractory = _samples(REFRACTORY_S, fs)
    t_window = _samples(T_WAVE_S, fs)
    half_qrs = _samples(REFINE_S, fs)

    init = mwi[: _samples(INIT_S, fs)]
    spk = float(init.max())
    npk = float(init.mean())
    if not spk > 0:
        return np.zeros(0, dtype=np.int64)

    def thresholds():
        t1 = npk + 0.25 * (spk - npk)
        return t1, 0.5 * t1

    def local_slope(p):
        return float(slope[max(0, p - half_qrs): p + half_qrs + 1].max())

    qrs: list[int] = []
    qrs_slopes: list[float] = []
    rr: list[int] = []
    pending: list[int] = []  # noise-classified candidates since the last QRS

    def accept(p, value, factor):
        nonlocal spk
        spk = factor * value + (1 - factor) * spk
        if qrs:
            rr.append(p - qrs[-1])
            del rr[:-RR_HISTORY]
        qrs.append(p)
        qrs_slopes.append(local_slope(p))
        pending.clear()

    def search_back(now):
        # look for a missed beat once the gap outgrows the running RR average
        if not rr or not qrs:
            return
        if now - qrs[-1] <= SEARCHBACK_RR_FACTOR * np.mean(rr):
            return
        _, t2 = thresholds()
        eligible = [c for c in pending if c - qrs[-1] >= refractory and mwi[c] > t2]
        if eligible:
            best = max(eligible, key=lambda c: (mwi[c], -c))
            accept(best, float(mwi[best]), 0.25)
            pending[:] = [c for c in pending if c > best]

    for p in _candidates(mwi):
        search_back(p)
        value = float(mwi[p])
        t1, _ = thresholds()
        if qrs and p - qrs[-1] < refractory:
            continue
        is_qrs = value > t1
        if is_qrs and qrs and p - qrs[-1] < t_window:
            if local_slope(p) < 0.5 * qrs_slopes[-1]:
                is_qrs = False  # T wave
        if is_qrs:
            accept(p, value, 0.125)
        else:
            npk = 0.125 * value + 0.875 * npk
            pending.append(p)
    search_back(len(x) - 1)

    refined: list[int] = []
    for p in qrs:
        lo, hi = max(0, p - half_qrs), min(len(bp), p + half_qrs + 1)
        r = lo + int(np.argmax(bp[lo:hi]))
        if refined and r - refined[-1] < refractory:
            continue
        refined.append(r)
    return np.asarray(refined, dtype=np.int64)


def detect_r_peaks(segment: EcgSegment) -> RPeakList:
    """Detect R peaks with adaptive thresholds, search-back and T-wave rejection."""
    if segment.duration < INIT_S:
        raise SegmentTooShort(f"detection needs at least {INIT_S:g} s, got {segment.duration:.3f} s")
    idx = detect_peaks_array(segment.samples, segment.fs)
    if len(idx) == 0:
        raise NoQrsFound(f"no QRS complex found in segment {segment.segment_id!r}")
    return RPeakList(idx, segment.fs)


def peaks_to_ibis(peaks) -> np.ndarray:
    """Inter-beat intervals in samples."""
    idx = np.asarray(getattr(peaks, "indices", peaks))
    if len(idx) < 2:
        raise InsufficientPeaks(f"need at least 2 peaks, got {len(idx)}")
    return np.diff(idx).astype(np.float64)
