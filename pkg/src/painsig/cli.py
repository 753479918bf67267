"""Command-line front end: ``painsig {synth,detect,features,eval,render}``.

Exit codes: 0 success, 1 usage/config/IO error, 2 per-segment analysis
failures (partial output written), 3 evaluation with skipped groups.
Every output file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataio import (
    EcgSegment,
    Gender,
    PainLabel,
    Scheme,
    SubjectMeta,
    atomic_write_bytes,
    load_dataset,
    manifest_row,
    synth_ecg,
    write_signal,
)
from .errors import PainsigError
from .evaluation import (
    ModelKind,
    TaskSpec,
    extract_features,
    reference_table,
    results_csv,
    results_table,
    run_experiment,
)
from .features import FEATURE_NAMES, AugmentMode, IbiFeatures, augment_features, extra_names
from .qrs import detect_r_peaks
from .render import ImageKind, render
from .render.spectral import default_threads

log = logging.getLogger("painsig")

EXIT_OK, EXIT_USAGE, EXIT_ITEMS, EXIT_PARTIAL = 0, 1, 2, 3
CONFIG_SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _map(fn, items):
    threads = default_threads()
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _sorted_segments(dataset):
    return sorted(dataset, key=lambda s: s.segment_id)


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    subject = SubjectMeta(args.subject_id, Gender(args.gender), args.age)
    prefix = Path(args.out)
    seg_id = args.segment_id or prefix.name
    seg, peaks = synth_ecg(args.bpm, args.duration, args.fs, args.noise, args.seed,
                           label=PainLabel.parse(args.label), subject=subject, segment_id=seg_id)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    ext = ".txt" if args.format == "text" else ".f32"
    sig_path = prefix.with_name(prefix.name + ext)
    tmp = sig_path.with_name(f".{sig_path.name}.tmp")
    write_signal(tmp, seg.samples, args.format)
    tmp.replace(sig_path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "peak_index"])
    w.writerows([seg_id, int(p)] for p in peaks)
    _write_text(prefix.with_name(prefix.name + "_peaks.csv"), buf.getvalue())
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(manifest_row(seg, args.format, sig_path.name))
    _write_text(prefix.with_name(prefix.name + "_manifest.csv"), buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# detect / features
# ---------------------------------------------------------------------------

def _try(fn, seg):
    try:
        return fn(seg), None
    except PainsigError as exc:
        return None, f"{seg.segment_id}: {type(exc).__name__}: {exc}"


def cmd_detect(args) -> int:
    dataset = load_dataset(args.input)
    segs = _sorted_segments(dataset)
    results = _map(lambda s: _try(detect_r_peaks, s), segs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "peak_index"])
    failures = []
    for seg, (peaks, err) in zip(segs, results):
        if err:
            failures.append(err)
            continue
        w.writerows([seg.segment_id, int(p)] for p in peaks.indices)
    _write_text(args.out, buf.getvalue())
    for f in failures:
        print(f, file=sys.stderr)
    return EXIT_ITEMS if failures else EXIT_OK


def _segment_features(seg: EcgSegment) -> IbiFeatures:
    from .evaluation import segment_features

    return segment_features(seg)


def cmd_features(args) -> int:
    mode = AugmentMode.parse(args.augment)
    dataset = load_dataset(args.input)
    segs = _sorted_segments(dataset)
    results = _map(lambda s: _try(_segment_features, s), segs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", *FEATURE_NAMES, *extra_names(mode), "label"])
    failures = []
    for seg, (feats, err) in zip(segs, results):
        if err:
            failures.append(err)
            continue
        aug = augment_features(feats, seg.subject, mode)
        w.writerow([seg.segment_id, *(repr(float(v)) for v in aug.base.as_array()),
                    *(int(v) for v in aug.extras), seg.label.name])
    _write_text(args.out, buf.getvalue())
    for f in failures:
        print(f, file=sys.stderr)
    return EXIT_ITEMS if failures else EXIT_OK


def read_features_csv(path) -> dict:
    """Base features keyed by segment_id from a ``features`` export."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["segment_id"]] = IbiFeatures(*(float(row[n]) for n in FEATURE_NAMES))
    return out


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class RunConfig:
    """Evaluation run description; the JSON file mirrors these fields."""

    manifest: str
    scheme: str = "Basic"
    task: list = field(default_factory=lambda: ["MC"])
    model_kind: list = field(default_factory=lambda: ["LDA"])
    augment: str = "none"
    seed: int = 0
    model_params: dict = field(default_factory=dict)
    out_dir: str = "results"
    features: str | None = None
    dataset: str = "manifest"
    schema_version: int = CONFIG_SCHEMA_VERSION

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        if not isinstance(doc, dict):
            raise ValueError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        if "manifest" not in doc:
            raise ValueError("config needs a 'manifest' entry")
        if doc.get("schema_version", CONFIG_SCHEMA_VERSION) != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {doc['schema_version']!r}")
        cfg = cls(**doc)
        cfg.task = _as_list(cfg.task)
        cfg.model_kind = _as_list(cfg.model_kind)
        cfg.validate()
        return cfg

    def validate(self):
        Scheme.parse(self.scheme)
        for t in self.task:
            TaskSpec.parse(t)
        for m in self.model_kind:
            ModelKind.parse(m)
        AugmentMode.parse(self.augment)
        if self.dataset not in ("manifest", "biovid"):
            raise ValueError(f"dataset must be 'manifest' or 'biovid', got {self.dataset!r}")
        if not isinstance(self.seed, int):
            raise ValueError("seed must be an integer")
        unknown = set(self.model_params) - {"C", "sigma", "tol", "max_passes", "lda_mode", "standardize", "nn"}
        if unknown:
            raise ValueError(f"unknown model_params key(s): {', '.join(sorted(unknown))}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def params_with_seed(self) -> dict:
        p = json.loads(json.dumps(self.model_params))
        p.setdefault("nn", {}).setdefault("seed", self.seed)
        return p


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        cfg = RunConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{path}: {exc}") from None
    base = path.parent
    cfg.manifest = str(base / cfg.manifest)
    if cfg.features:
        cfg.features = str(base / cfg.features)
    cfg.out_dir = str(base / cfg.out_dir)
    return cfg


BIOVID_SUBJECTS, BIOVID_SEGMENTS = 87, 100


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    if args.dataset:
        cfg.dataset = args.dataset
    dataset = load_dataset(cfg.manifest)
    if cfg.dataset == "biovid":
        n_sub = len(dataset.subjects())
        if n_sub != BIOVID_SUBJECTS or len(dataset) != BIOVID_SUBJECTS * BIOVID_SEGMENTS:
            raise UsageError(f"BioVid Part A has {BIOVID_SUBJECTS} subjects x {BIOVID_SEGMENTS} segments; "
                             f"manifest has {n_sub} subjects and {len(dataset)} segments")
    pre = read_features_csv(cfg.features) if cfg.features else None
    table = extract_features(dataset, cfg.augment, pre)
    for seg_id, why in sorted(table.failures.items()):
        print(f"{seg_id}: {why}", file=sys.stderr)
    params = cfg.params_with_seed()
    results = []
    for task in cfg.task:
        for model in cfg.model_kind:
            results.extend(run_experiment(table, cfg.scheme, task, model, params))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "results.csv", results_csv(results))
    _write_text(out / "results_fold_mean.csv", results_csv(results, fold_mean=True))
    table_text = results_table(results)
    if cfg.dataset == "biovid":
        table_text += "\n" + reference_table()
    _write_text(out / "results.txt", table_text)
    sys.stdout.write(table_text)
    skipped = [r for r in results if r.skipped]
    for r in skipped:
        print(f"skipped {r.scheme}/{r.group}/{r.task}/{r.model}: {r.skipped}", file=sys.stderr)
    return EXIT_PARTIAL if skipped else EXIT_OK


# ---------------------------------------------------------------------------
# render
# ---------------------------------------------------------------------------

def read_series(path) -> np.ndarray:
    """One value per line; a non-numeric first line is taken as a header."""
    values = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cell = line.split(",")[-1]
            try:
                values.append(float(cell))
            except ValueError:
                if i == 0 and not values:
                    continue
                raise UsageError(f"{path}:{i + 1}: not a number: {cell!r}") from None
    return np.array(values)


def cmd_render(args) -> int:
    x = read_series(args.input)
    img = render(x, args.fs, ImageKind.parse(args.kind), args.window_len, args.hop)
    data = img.to_ppm() if str(args.out).lower().endswith(".ppm") else img.to_png()
    atomic_write_bytes(args.out, data)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="painsig", description="ECG pain-assessment toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic ECG, its true peaks and a manifest row")
    s.add_argument("--bpm", type=float, required=True)
    s.add_argument("--duration", type=float, required=True, help="seconds")
    s.add_argument("--fs", type=float, default=512.0)
    s.add_argument("--noise", type=float, default=0.0, help="noise std in mV")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--format", choices=["text", "f32le"], default="f32le")
    s.add_argument("--label", choices=[l.name for l in PainLabel], default="NP")
    s.add_argument("--subject-id", default="S000")
    s.add_argument("--gender", choices=["M", "F"], default="M")
    s.add_argument("--age", type=int, default=30)
    s.add_argument("--segment-id", default=None, help="defaults to the prefix's file name")
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("detect", help="R-peak indices for every segment of a manifest")
    d.add_argument("--input", required=True, help="manifest CSV")
    d.add_argument("--out", required=True, help="peaks CSV")
    d.set_defaults(func=cmd_detect)

    f = sub.add_parser("features", help="IBI features for every segment of a manifest")
    f.add_argument("--input", required=True, help="manifest CSV")
    f.add_argument("--augment", choices=["none", "g", "a", "ga"], default="none")
    f.add_argument("--out", required=True, help="features CSV")
    f.set_defaults(func=cmd_features)

    e = sub.add_parser("eval", help="LOSO evaluation driven by a JSON run config")
    e.add_argument("--config", required=True, help="run config JSON")
    e.add_argument("--dataset", choices=["manifest", "biovid"], default=None,
                   help="'biovid' checks the 87x100 layout and prints the published reference rows")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render a 1-D series as a 224x224 image")
    r.add_argument("--input", required=True, help="text file, one value per line")
    r.add_argument("--fs", type=float, required=True)
    r.add_argument("--kind", choices=[k.value for k in ImageKind], required=True)
    r.add_argument("--out", required=True, help=".png (default) or .ppm")
    r.add_argument("--window-len", type=int, default=64)
    r.add_argument("--hop", type=int, default=16)
    r.set_defaults(func=cmd_render)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (PainsigError, OSError, ValueError) as exc:
        print(f"painsig {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
