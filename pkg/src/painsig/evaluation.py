"""Leave-one-subject-out evaluation over demographic schemes, tasks and models."""

from __future__ import annotations

import csv
import io
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classic_ml import LdaClassifier, SvmClassifier
from .dataio import Dataset, Gender, PainLabel, Scheme, SchemeGroup, SubjectMeta, partition_subjects
from .errors import EmptyConfusion, GroupTooSmall, PainsigError
from .features import AugmentMode, augment_features, compute_ibi_features
from .mtl_nn import NeuralClassifier, TrainConfig
from .qrs import detect_r_peaks, peaks_to_ibis
from .render.spectral import default_threads

log = logging.getLogger(__name__)

RESULT_COLUMNS = ("scheme", "group", "task", "model", "acc", "prec", "rec", "f1", "n_folds")

# Published accuracies (%) on BioVid Part A, LOSO; not reproducible without the dataset.
BIOVID_REFERENCE = {
    ("Basic", "All", "MC"): {"LDA": 23.72, "SVM_LIN": 23.79, "SVM_RBF": 22.77},
    ("Basic", "All", "NPvsP1"): {"LDA": 50.97, "SVM_LIN": 52.38, "SVM_RBF": 49.97},
    ("Basic", "All", "NPvsP2"): {"LDA": 52.55, "SVM_LIN": 52.78, "SVM_RBF": 52.70},
    ("Basic", "All", "NPvsP3"): {"LDA": 55.20, "SVM_LIN": 55.37, "SVM_RBF": 53.87},
    ("Basic", "All", "NPvsP4"): {"LDA": 58.62, "SVM_LIN": 58.39, "SVM_RBF": 57.41},
}
BIOVID_REFERENCE_MTNN_GA = {"NPvsP1": 62.82, "NPvsP2": 63.68, "NPvsP3": 66.12, "NPvsP4": 69.40, "MC": 30.24}


@dataclass(frozen=True)
class TaskSpec:
    """``MC`` (all five levels) or ``NP`` versus one pain level."""

    level: PainLabel | None = None

    @classmethod
    def parse(cls, text) -> "TaskSpec":
        if isinstance(text, cls):
            return text
        key = re.sub(r"[\s_\-.]", "", str(text)).upper()
        if key == "MC":
            return cls(None)
        m = re.fullmatch(r"NPVSP([1-4])", key)
        if not m:
            raise ValueError(f"unknown task {text!r}; use MC or NPvsP1..NPvsP4")
        return cls(PainLabel(int(m.group(1))))

    @property
    def name(self) -> str:
        return "MC" if self.level is None else f"NPvs{self.level.name}"

    @property
    def labels(self) -> tuple:
        return tuple(PainLabel) if self.level is None else (PainLabel.NP, self.level)

    @property
    def n_classes(self) -> int:
        return len(self.labels)


@dataclass
class FeatureTable:
    """Per-segment features and metadata; rows whose detection failed are dropped."""

    X: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    genders: np.ndarray
    ages: np.ndarray
    segment_ids: np.ndarray
    failures: dict = field(default_factory=dict)

    def rows_for(self, subject_ids, task: TaskSpec) -> np.ndarray:
        mask = np.isin(self.subjects, list(subject_ids)) & np.isin(self.labels, [int(l) for l in task.labels])
        return np.flatnonzero(mask)


def segment_features(seg):
    peaks = detect_r_peaks(seg)
    return compute_ibi_features(peaks_to_ibis(peaks), seg.fs)


def extract_features(dataset, augment="none", precomputed: dict | None = None) -> FeatureTable:
    """Feature matrix for a dataset; ``precomputed`` maps segment_id to base features."""
    mode = AugmentMode.parse(augment)
    rows, keep, failures = [], [], {}
    for seg in dataset:
        try:
            base = precomputed[seg.segment_id] if precomputed is not None else segment_features(seg)
        except (PainsigError, KeyError) as exc:
            failures[seg.segment_id] = f"{type(exc).__name__}: {exc}"
            continue
        rows.append(augment_features(base, seg.subject, mode).as_array())
        keep.append(seg)
    if failures:
        log.warning("feature extraction failed for %d segment(s)", len(failures))
    d = 6 + {AugmentMode.NONE: 0, AugmentMode.G: 1, AugmentMode.A: 1, AugmentMode.GA: 2}[mode]
    return FeatureTable(
        X=np.array(rows, dtype=np.float64).reshape(len(rows), d),
        labels=np.array([int(s.label) for s in keep], dtype=np.int64),
        subjects=np.array([s.subject.subject_id for s in keep], dtype=object),
        genders=np.array([s.subject.gender.code for s in keep], dtype=np.int64),
        ages=np.array([s.subject.age for s in keep], dtype=np.int64),
        segment_ids=np.array([s.segment_id for s in keep], dtype=object),
        failures=failures,
    )


def loso_split(group: SchemeGroup, data) -> list[tuple[frozenset, str]]:
    """One fold per group member that has data, ordered by subject id."""
    if isinstance(data, FeatureTable):
        present = set(data.subjects.tolist())
    else:
        present = set(Dataset(data).subjects())
    members = sorted(m for m in group.members if m in present)
    if len(members) < 2:
        raise GroupTooSmall(f"group {group.group_key!r} has {len(members)} subject(s) with data")
    return [(frozenset(members[:i] + members[i + 1:]), s) for i, s in enumerate(members)]


@dataclass(frozen=True)
class Metrics:
    accuracy_micro: float
    precision_macro: float
    recall_macro: float
    f1_macro: float


def compute_metrics(confusion) -> Metrics:
    """Micro accuracy and macro precision/recall/F1; 0/0 counts as 0."""
    C = np.asarray(confusion, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("confusion matrix must be square")
    total = C.sum()
    if total <= 0:
        raise EmptyConfusion("confusion matrix is empty")
    tp = np.diag(C)
    col, row = C.sum(axis=0), C.sum(axis=1)
    prec = np.divide(tp, col, out=np.zeros_like(tp), where=col > 0)
    rec = np.divide(tp, row, out=np.zeros_like(tp), where=row > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros_like(tp), where=denom > 0)
    return Metrics(float(tp.sum() / total), float(prec.mean()), float(rec.mean()), float(f1.mean()))


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    C = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(C, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return C


@dataclass(frozen=True)
class ModelKind:
    name: str          # LDA, SVM_LIN, SVM_RBF, ST_NN, MT_NN
    aux: str = ""      # G, A or GA for MT_NN

    @classmethod
    def parse(cls, text) -> "ModelKind":
        if isinstance(text, cls):
            return text
        m = re.fullmatch(r"\s*([A-Za-z_]+)\s*(?:\(\s*([GAga]{1,2})\s*\))?\s*", str(text))
        if not m:
            raise ValueError(f"unknown model kind {text!r}")
        name, aux = m.group(1).upper(), (m.group(2) or "").upper()
        if name not in ("LDA", "SVM_LIN", "SVM_RBF", "ST_NN", "MT_NN"):
            raise ValueError(f"unknown model kind {text!r}")
        if name == "MT_NN":
            aux = aux or "GA"
            if aux not in ("G", "A", "GA"):
                raise ValueError(f"MT_NN auxiliary tasks must be G, A or GA, got {aux!r}")
        elif aux:
            raise ValueError(f"{name} takes no auxiliary tasks")
        return cls(name, aux)

    @property
    def label(self) -> str:
        return f"MT_NN({self.aux})" if self.name == "MT_NN" else self.name


def make_classifier(kind: ModelKind, params: dict | None = None):
    p = dict(params or {})
    standardize = p.get("standardize", True)
    if kind.name == "LDA":
        return LdaClassifier(p.get("lda_mode", "pooled"), standardize)
    if kind.name in ("SVM_LIN", "SVM_RBF"):
        return SvmClassifier("linear" if kind.name == "SVM_LIN" else "rbf", p.get("C", 1.0),
                             p.get("sigma"), p.get("tol", 1e-3), p.get("max_passes", 100), standardize)
    nn = dict(p.get("nn", {}))
    widths = tuple(nn.pop("encoder_widths", (256, 512, 1024, 1024)))
    head_width = nn.pop("head_width", 1024)
    return NeuralClassifier(kind.aux or None, widths, head_width, TrainConfig(**nn))


@dataclass
class FoldResult:
    test_subject: str
    train_subjects: frozenset
    confusion: np.ndarray
    error: str | None = None


@dataclass
class RunResult:
    scheme: str
    group: str
    task: str
    model: str
    folds: list = field(default_factory=list)
    confusion: np.ndarray | None = None
    metrics: Metrics | None = None
    fold_mean_metrics: Metrics | None = None
    skipped: str | None = None

    @property
    def n_folds(self) -> int:
        return len(self.folds)


def _fit_predict(clf, table: FeatureTable, tr, te, y_tr):
    if hasattr(clf, "aux") and getattr(clf, "aux", ""):
        clf.fit(table.X[tr], y_tr, table.genders[tr], table.ages[tr])
    else:
        clf.fit(table.X[tr], y_tr)
    return clf.predict(table.X[te])


def run_fold(table: FeatureTable, task: TaskSpec, train_subjects, test_subject, factory) -> FoldResult:
    if test_subject in train_subjects:
        raise AssertionError(f"subject {test_subject!r} in both train and test")
    tr = table.rows_for(train_subjects, task)
    te = table.rows_for([test_subject], task)
    assert not set(table.subjects[tr]) & set(table.subjects[te])
    lut = {int(l): i for i, l in enumerate(task.labels)}
    y_tr = np.array([lut[v] for v in table.labels[tr]], dtype=np.int64)
    y_te = np.array([lut[v] for v in table.labels[te]], dtype=np.int64)
    try:
        pred = _fit_predict(factory(), table, tr, te, y_tr)
    except PainsigError as exc:
        return FoldResult(test_subject, frozenset(train_subjects),
                          np.zeros((task.n_classes,) * 2, dtype=np.int64), f"{type(exc).__name__}: {exc}")
    return FoldResult(test_subject, frozenset(train_subjects), confusion_matrix(y_te, pred, task.n_classes))


def run_group(table: FeatureTable, group: SchemeGroup, task, model_kind, model_params=None,
              threads: int | None = None, factory=None) -> RunResult:
    task = TaskSpec.parse(task)
    label = factory.__name__ if factory is not None and not isinstance(model_kind, (str, ModelKind)) \
        else ModelKind.parse(model_kind).label
    if factory is None:
        kind = ModelKind.parse(model_kind)
        factory = lambda: make_classifier(kind, model_params)  # noqa: E731
    res = RunResult(group.scheme.value, group.group_key, task.name, label)
    task_table_subjects = set(table.subjects[table.rows_for(group.members, task)].tolist())
    sub = SchemeGroup(group.scheme, group.group_key, frozenset(task_table_subjects))
    try:
        folds = loso_split(sub, table)
    except GroupTooSmall as exc:
        res.skipped = str(exc)
        return res
    threads = default_threads() if threads is None else max(1, threads)
    jobs = [(tr, te) for tr, te in folds]
    if threads == 1:
        res.folds = [run_fold(table, task, tr, te, factory) for tr, te in jobs]
    else:
        with ThreadPoolExecutor(threads) as pool:
            res.folds = list(pool.map(lambda j: run_fold(table, task, j[0], j[1], factory), jobs))
    res.confusion = sum((f.confusion for f in res.folds), np.zeros((task.n_classes,) * 2, dtype=np.int64))
    try:
        res.metrics = compute_metrics(res.confusion)
    except EmptyConfusion:
        res.skipped = "no test predictions"
        return res
    per_fold = [compute_metrics(f.confusion) for f in res.folds if f.confusion.sum() > 0]
    res.fold_mean_metrics = Metrics(*np.mean([[m.accuracy_micro, m.precision_macro, m.recall_macro, m.f1_macro]
                                              for m in per_fold], axis=0).tolist())
    errors = [f.error for f in res.folds if f.error]
    if errors:
        log.warning("%s/%s/%s: %d fold(s) failed, first: %s", group.group_key, task.name, label,
                    len(errors), errors[0])
    return res


def run_experiment(data, scheme, task, model_kind, model_params=None, augment="none",
                   threads: int | None = None, factory=None) -> list[RunResult]:
    """LOSO results for every group of a scheme.

    ``data`` is either a :class:`Dataset` (features are extracted here) or a
    ready :class:`FeatureTable`. A ``factory`` callable overrides
    ``model_kind`` and must return an object with ``fit``/``predict``.
    """
    table = data if isinstance(data, FeatureTable) else extract_features(data, augment)
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else scheme
    groups = partition_subjects(table_subjects(table), scheme)
    return [run_group(table, g, task, model_kind, model_params, threads, factory) for g in groups]


def table_subjects(table: FeatureTable) -> list[SubjectMeta]:
    seen = {}
    for sid, g, a in zip(table.subjects, table.genders, table.ages):
        seen.setdefault(sid, SubjectMeta(sid, Gender.Male if g == 0 else Gender.Female, int(a)))
    return [seen[k] for k in sorted(seen)]


def results_csv(results, fold_mean: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for r in results:
        m = r.fold_mean_metrics if fold_mean else r.metrics
        if m is None:
            w.writerow([r.scheme, r.group, r.task, r.model, "", "", "", "", r.n_folds])
        else:
            w.writerow([r.scheme, r.group, r.task, r.model, f"{m.accuracy_micro:.6f}",
                        f"{m.precision_macro:.6f}", f"{m.recall_macro:.6f}", f"{m.f1_macro:.6f}", r.n_folds])
    return buf.getvalue()


def results_table(results) -> str:
    """Aligned text table: one row per group and task, one accuracy (%) column per model."""
    models = list(dict.fromkeys(r.model for r in results))
    rows = list(dict.fromkeys((r.scheme, r.group, r.task) for r in results))
    cell = {(r.scheme, r.group, r.task, r.model): r for r in results}
    header = ["Scheme", "Group", "Task"] + models
    body = []
    for key in rows:
        line = list(key)
        for m in models:
            r = cell.get(key + (m,))
            line.append("-" if r is None or r.metrics is None else f"{100 * r.metrics.accuracy_micro:.2f}")
        body.append(line)
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    fmt = lambda row: "  ".join(str(x).ljust(w) for x, w in zip(row, widths)).rstrip()  # noqa: E731
    sep = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(r) for r in body]) + "\n"


def reference_table() -> str:
    lines = ["Published BioVid Part A accuracies (%), LOSO, not reproduced here:"]
    for (scheme, group, task), vals in BIOVID_REFERENCE.items():
        cells = "  ".join(f"{k}={v:.2f}" for k, v in vals.items())
        lines.append(f"  {scheme:<6} {group:<4} {task:<7} {cells}")
    cells = "  ".join(f"{k}={v:.2f}" for k, v in BIOVID_REFERENCE_MTNN_GA.items())
    lines.append(f"  MT-NN with gender+age heads: {cells}")
    return "\n".join(lines) + "\n"
