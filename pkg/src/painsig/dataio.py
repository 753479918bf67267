"""Dataset ingestion, synthetic ECG generation and demographic partitions.

A dataset is described by a CSV manifest with the header::

    segment_id,subject_id,gender,age,label,fs,format,path

``gender`` is ``M`` or ``F``, ``label`` one of ``NP, P1, P2, P3, P4`` and
``format`` either ``text`` (one decimal value per line) or ``f32le`` (raw
little-endian float32). Paths are resolved relative to the manifest.
"""

from __future__ import annotations

import csv
import enum
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AgeOutOfSchemeRange,
    DuplicateSegmentId,
    InvalidBpm,
    InvalidFs,
    MalformedRow,
    MissingFile,
    NonPositiveFs,
)

MANIFEST_COLUMNS = ("segment_id", "subject_id", "gender", "age", "label", "fs", "format", "path")
SIGNAL_FORMATS = ("text", "f32le")
AGE_BUCKETS = ((20, 35), (36, 50), (51, 65))


class Gender(enum.Enum):
    Male = "M"
    Female = "F"

    @property
    def code(self) -> int:
        return 0 if self is Gender.Male else 1

    @property
    def plural(self) -> str:
        return "Males" if self is Gender.Male else "Females"


class PainLabel(enum.IntEnum):
    NP = 0
    P1 = 1
    P2 = 2
    P3 = 3
    P4 = 4

    @classmethod
    def parse(cls, text: str) -> "PainLabel":
        return cls[text.strip().upper()]


class Scheme(enum.Enum):
    Basic = "Basic"
    Gender = "Gender"
    Age = "Age"
    GenderAge = "GenderAge"

    @classmethod
    def parse(cls, text: str) -> "Scheme":
        key = text.replace("-", "").replace("_", "").lower()
        for s in cls:
            if s.value.lower() == key:
                return s
        raise ValueError(f"unknown scheme {text!r}")


@dataclass(frozen=True)
class SubjectMeta:
    subject_id: str
    gender: Gender
    age: int

    def __post_init__(self):
        if self.age < 0:
            raise ValueError(f"negative age for subject {self.subject_id!r}")


@dataclass(frozen=True)
class EcgSegment:
    """One labeled ECG window. ``samples`` are millivolts and read-only."""

    samples: np.ndarray = field(repr=False)
    fs: float
    label: PainLabel
    subject: SubjectMeta
    segment_id: str

    def __post_init__(self):
        arr = np.array(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")
        if not self.fs > 0:
            raise NonPositiveFs(f"fs must be positive, got {self.fs}")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs


class Dataset(tuple):
    """Immutable sequence of :class:`EcgSegment`."""

    def subjects(self) -> dict[str, SubjectMeta]:
        """Subject metadata keyed by id, sorted by id."""
        out = {}
        for seg in self:
            out.setdefault(seg.subject.subject_id, seg.subject)
        return dict(sorted(out.items()))

    def for_subjects(self, subject_ids) -> "Dataset":
        keep = set(subject_ids)
        return Dataset(s for s in self if s.subject.subject_id in keep)


@dataclass(frozen=True)
class SchemeGroup:
    scheme: Scheme
    group_key: str
    members: frozenset

    def __len__(self):
        return len(self.members)


def read_signal(path: Path, fmt: str) -> np.ndarray:
    if fmt == "text":
        return np.loadtxt(path, dtype=np.float64, ndmin=1)
    return np.fromfile(path, dtype="<f4").astype(np.float64)


def write_signal(path: Path, samples: np.ndarray, fmt: str) -> None:
    if fmt == "text":
        Path(path).write_text("".join(f"{float(v)!r}\n" for v in samples))
    elif fmt == "f32le":
        np.asarray(samples, dtype="<f4").tofile(path)
    else:
        raise ValueError(f"unknown signal format {fmt!r}")


def _parse_row(row: dict, line_no: int, base: Path) -> EcgSegment:
    try:
        gender = Gender(row["gender"].strip().upper())
    except ValueError:
        raise MalformedRow(line_no, f"gender must be M or F, got {row['gender']!r}") from None
    try:
        age = int(row["age"])
    except ValueError:
        raise MalformedRow(line_no, f"age is not an integer: {row['age']!r}") from None
    if age < 0:
        raise MalformedRow(line_no, "age must be >= 0")
    try:
        label = PainLabel.parse(row["label"])
    except KeyError:
        raise MalformedRow(line_no, f"unknown label {row['label']!r}") from None
    try:
        fs = float(row["fs"])
    except ValueError:
        raise MalformedRow(line_no, f"fs is not a number: {row['fs']!r}") from None
    if not fs > 0 or not math.isfinite(fs):
        raise NonPositiveFs(f"line {line_no}: fs must be positive, got {row['fs']!r}")
    fmt = row["format"].strip()
    if fmt not in SIGNAL_FORMATS:
        raise MalformedRow(line_no, f"format must be one of {SIGNAL_FORMATS}, got {fmt!r}")
    path = base / row["path"].strip()
    if not path.is_file():
        raise MissingFile(f"line {line_no}: signal file not found: {path}")
    try:
        samples = read_signal(path, fmt)
    except ValueError as exc:
        raise MalformedRow(line_no, f"unreadable signal file {path}: {exc}") from None
    if samples.size == 0:
        raise MalformedRow(line_no, f"signal file {path} is empty")
    subject = SubjectMeta(row["subject_id"].strip(), gender, age)
    return EcgSegment(samples, fs, label, subject, row["segment_id"].strip())


def load_dataset(manifest_path) -> Dataset:
    """Load every segment listed in a manifest CSV."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise MissingFile(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    segments = []
    seen = set()
    subjects: dict[str, SubjectMeta] = {}
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MalformedRow(1, "missing header")
        header = [h.strip() for h in header]
        if sorted(header) != sorted(MANIFEST_COLUMNS):
            raise MalformedRow(1, f"header must contain exactly {','.join(MANIFEST_COLUMNS)}")
        for line_no, values in enumerate(reader, start=2):
            if not values or all(not v.strip() for v in values):
                continue
            if len(values) != len(header):
                raise MalformedRow(line_no, f"expected {len(header)} fields, got {len(values)}")
            row = dict(zip(header, values))
            seg = _parse_row(row, line_no, base)
            if seg.segment_id in seen:
                raise DuplicateSegmentId(f"line {line_no}: duplicate segment_id {seg.segment_id!r}")
            prev = subjects.setdefault(seg.subject.subject_id, seg.subject)
            if prev != seg.subject:
                raise MalformedRow(line_no, f"conflicting demographics for subject {prev.subject_id!r}")
            seen.add(seg.segment_id)
            segments.append(seg)
    return Dataset(segments)


def save_dataset(dataset, out_dir, fmt: str = "f32le", manifest_name: str = "manifest.csv") -> Path:
    """Write signal files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = ".txt" if fmt == "text" else ".f32"
    rows = []
    for seg in dataset:
        name = f"{seg.segment_id}{ext}"
        write_signal(out_dir / name, seg.samples, fmt)
        rows.append(manifest_row(seg, fmt, name))
    manifest = out_dir / manifest_name
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    return manifest


def manifest_row(seg: EcgSegment, fmt: str, path: str) -> list:
    return [seg.segment_id, seg.subject.subject_id, seg.subject.gender.value,
            seg.subject.age, seg.label.name, repr(float(seg.fs)), fmt, path]


# Synthetic PQRST template: (offset s, width s, amplitude mV)
PQRST_TEMPLATE = (
    (-0.200, 0.025, 0.10),   # P
    (-0.035, 0.010, -0.15),  # Q
    (0.000, 0.010, 1.00),    # R
    (0.035, 0.010, -0.25),   # S
    (0.280, 0.040, 0.30),    # T
)


def beat_positions(bpm: float, duration_s: float, fs: float) -> np.ndarray:
    """Apex sample indices: first beat at half an interval, then every 60*fs/bpm samples."""
    n = int(round(duration_s * fs))
    interval = 60.0 * fs / bpm
    k = np.arange(int(n / interval) + 2)
    pos = np.floor(interval / 2 + k * interval + 0.5).astype(np.int64)
    return pos[pos <= n - 1]


def synth_ecg(bpm, duration_s, fs=512.0, noise_std=0.0, seed=0, *,
              label=PainLabel.NP, subject=None, segment_id="synth"):
    """Synthesize a stereotyped ECG and return ``(segment, true_peaks)``.

    Beats are a fixed sum-of-Gaussians PQRST complex whose R apex sits exactly
    on an integer sample, repeated every ``60*fs/bpm`` samples. White Gaussian
    noise of ``noise_std`` mV is added from ``numpy.random.default_rng(seed)``.
    """
    if not 30 <= bpm <= 220:
        raise InvalidBpm(f"bpm must be in [30, 220], got {bpm}")
    if not fs >= 128:
        raise InvalidFs(f"fs must be >= 128 Hz, got {fs}")
    if not duration_s > 0:
        raise ValueError("duration_s must be positive")
    n = int(round(duration_s * fs))
    peaks = beat_positions(bpm, duration_s, fs)
    x = np.zeros(n)
    for offset, width, amp in PQRST_TEMPLATE:
        # each wave is evaluated over +-6 widths; the tail beyond is < 2e-8 of its amplitude
        lo = int(np.floor((offset - 6 * width) * fs))
        hi = int(np.ceil((offset + 6 * width) * fs))
        rel = np.arange(lo, hi + 1)
        wave = amp * np.exp(-0.5 * ((rel / fs - offset) / width) ** 2)
        for p in peaks:
            idx = p + rel
            keep = (idx >= 0) & (idx < n)
            x[idx[keep]] += wave[keep]
    if noise_std > 0:
        x += np.random.default_rng(seed).normal(0.0, noise_std, n)
    if subject is None:
        subject = SubjectMeta("S000", Gender.Male, 30)
    return EcgSegment(x, fs, PainLabel(label), subject, segment_id), peaks


DEFAULT_BPM_BY_LABEL = {PainLabel.NP: 60.0, PainLabel.P1: 70.0, PainLabel.P2: 80.0,
                        PainLabel.P3: 90.0, PainLabel.P4: 100.0}


def make_subjects(n_subjects: int, seed: int = 0) -> list[SubjectMeta]:
    """Deterministic cohort spread over 20-65 years, genders alternating."""
    rng = np.random.default_rng(seed)
    ages = rng.integers(20, 66, size=n_subjects)
    return [SubjectMeta(f"S{i:03d}", Gender.Male if i % 2 == 0 else Gender.Female, int(ages[i]))
            for i in range(n_subjects)]


def make_synthetic_dataset(n_subjects=10, labels=tuple(PainLabel), segments_per_label=2,
                           duration_s=5.5, fs=512.0, noise_std=0.02, bpm_jitter=1.0,
                           bpm_by_label=None, seed=0) -> Dataset:
    """Synthetic cohort where heart rate encodes the pain level.

    Each segment's rate is ``bpm_by_label[label]`` plus uniform jitter in
    ``[-bpm_jitter, bpm_jitter]``, so well-separated rates give a fixture
    whose Bayes accuracy is close to 1.
    """
    bpm_by_label = dict(DEFAULT_BPM_BY_LABEL if bpm_by_label is None else bpm_by_label)
    rng = np.random.default_rng(seed)
    segments = []
    for subj in make_subjects(n_subjects, seed):
        for label in labels:
            label = PainLabel(label)
            for j in range(segments_per_label):
                bpm = bpm_by_label[label] + rng.uniform(-bpm_jitter, bpm_jitter)
                seg_id = f"{subj.subject_id}_{label.name}_{j:02d}"
                seg, _ = synth_ecg(bpm, duration_s, fs, noise_std, int(rng.integers(2**31)),
                                   label=label, subject=subj, segment_id=seg_id)
                segments.append(seg)
    return Dataset(segments)


def _age_bucket(age: int) -> str | None:
    for lo, hi in AGE_BUCKETS:
        if lo <= age <= hi:
            return f"{lo}-{hi}"
    return None


def scheme_group_keys(scheme: Scheme) -> list[str]:
    ages = [f"{lo}-{hi}" for lo, hi in AGE_BUCKETS]
    if scheme is Scheme.Basic:
        return ["All"]
    if scheme is Scheme.Gender:
        return ["Males", "Females"]
    if scheme is Scheme.Age:
        return ages
    return [f"{g} {a}" for a in ages for g in ("Males", "Females")]


def build_scheme_partitions(dataset, scheme) -> list[SchemeGroup]:
    """Partition the dataset's subjects into the groups of a demographic scheme.

    Empty groups are kept (size 0) so result tables keep a stable shape.
    """
    return partition_subjects(Dataset(dataset).subjects().values(), scheme)


def partition_subjects(subjects, scheme) -> list[SchemeGroup]:
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    members: dict[str, set] = {k: set() for k in scheme_group_keys(scheme)}
    for meta in subjects:
        sid = meta.subject_id
        bucket = _age_bucket(meta.age)
        if scheme in (Scheme.Age, Scheme.GenderAge) and bucket is None:
            raise AgeOutOfSchemeRange(sid, meta.age)
        if scheme is Scheme.Basic:
            key = "All"
        elif scheme is Scheme.Gender:
            key = meta.gender.plural
        elif scheme is Scheme.Age:
            key = bucket
        else:
            key = f"{meta.gender.plural} {bucket}"
        members[key].add(sid)
    return [SchemeGroup(scheme, k, frozenset(v)) for k, v in members.items()]


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)
