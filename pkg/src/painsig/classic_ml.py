"""LDA and SVM classifiers written from scratch.

The SVM is trained one-vs-rest with an SMO solver that picks, at each step,
the maximal-violating pair refined by a second-order gain estimate, and
stops when the KKT violation drops below ``tol``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateClass, DimensionMismatch, NotConverged, SingularCovariance

SCHEMA_VERSION = 1
STD_FLOOR = 1e-12
LDA_RIDGE = 1e-6
TAU = 1e-12


@dataclass
class StandardScaler:
    means: np.ndarray | None = None
    stds: np.ndarray | None = None

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        self.means = X.mean(axis=0)
        self.stds = np.maximum(X.std(axis=0), STD_FLOOR)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != len(self.means):
            raise DimensionMismatch(f"expected {len(self.means)} features, got {X.shape[-1]}")
        return (X - self.means) / self.stds

    def fit_transform(self, X):
        return self.fit(X).transform(X)


def _classes(y):
    classes, counts = np.unique(np.asarray(y), return_counts=True)
    if len(classes) < 2:
        raise DegenerateClass(f"need at least 2 classes, got {len(classes)}")
    return classes, counts


def _check_dim(x, d):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != d:
        raise DimensionMismatch(f"expected {d} features, got {x.shape[-1]}")
    return x


# ---------------------------------------------------------------------------
# LDA
# ---------------------------------------------------------------------------

@dataclass
class LdaModel:
    classes: np.ndarray
    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # (K, d, d); identical slices in pooled mode
    mode: str = "pooled"
    _chol: list = field(default_factory=list, repr=False)
    _logdet: np.ndarray | None = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def __post_init__(self):
        self._chol = []
        logdet = []
        for cov in self.covariances:
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise SingularCovariance("covariance is not positive definite after regularization") from None
            self._chol.append(L)
            logdet.append(2.0 * np.sum(np.log(np.diag(L))))
        self._logdet = np.array(logdet)

    def log_scores(self, X) -> np.ndarray:
        """``log prior + log Gaussian density`` for each class, shape (n, K)."""
        X = np.atleast_2d(_check_dim(X, self.d))
        out = np.empty((len(X), len(self.classes)))
        for k, L in enumerate(self._chol):
            z = np.linalg.solve(L, (X - self.means[k]).T)
            maha = np.sum(z * z, axis=0)
            out[:, k] = (np.log(self.priors[k]) - 0.5 * maha
                         - 0.5 * self.d * np.log(2 * np.pi) - 0.5 * self._logdet[k])
        return out

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.log_scores(X), axis=1)]


def _regularize(cov):
    d = cov.shape[0]
    lam = LDA_RIDGE * np.trace(cov) / d
    return cov + lam * np.eye(d)


def lda_fit(X, y, mode: str = "pooled") -> LdaModel:
    """Gaussian class-conditional model with a shared (pooled) or per-class covariance."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise DimensionMismatch("X must be a 2-D matrix with at least one column")
    y = np.asarray(y)
    classes, counts = _classes(y)
    if np.any(counts < 2):
        raise DegenerateClass(f"every class needs at least 2 samples, got {dict(zip(classes.tolist(), counts.tolist()))}")
    if mode not in ("pooled", "per_class"):
        raise ValueError(f"unknown LDA mode {mode!r}")
    n, d = X.shape
    K = len(classes)
    means = np.stack([X[y == c].mean(axis=0) for c in classes])
    scatters = [(X[y == c] - means[k]).T @ (X[y == c] - means[k]) for k, c in enumerate(classes)]
    if mode == "pooled":
        if n - K < 1:
            raise DegenerateClass("pooled covariance needs n > K")
        pooled = _regularize(sum(scatters) / (n - K))
        covs = np.repeat(pooled[None], K, axis=0)
    else:
        covs = np.stack([_regularize(s / (cnt - 1)) for s, cnt in zip(scatters, counts)])
    return LdaModel(classes, counts / n, means, covs, mode)


def lda_predict(model: LdaModel, x):
    """Class of a single vector plus its per-class log-scores; ties go to the lowest class."""
    x = _check_dim(x, model.d)
    if x.ndim != 1:
        raise DimensionMismatch("lda_predict takes a single vector")
    scores = model.log_scores(x)[0]
    return model.classes[int(np.argmax(scores))], scores


# ---------------------------------------------------------------------------
# SVM
# ---------------------------------------------------------------------------

def linear_kernel(A, B) -> np.ndarray:
    return np.atleast_2d(A) @ np.atleast_2d(B).T


def sq_distances(A, B) -> np.ndarray:
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    out = np.empty((len(A), len(B)))
    step = max(1, 2_000_000 // max(1, len(B) * A.shape[1]))
    for s in range(0, len(A), step):
        diff = A[s:s + step, None, :] - B[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def rbf_kernel(A, B, sigma: float) -> np.ndarray:
    return np.exp(-sq_distances(A, B) / (2.0 * sigma * sigma))


def median_heuristic(X) -> float:
    X = np.asarray(X, dtype=np.float64)
    iu = np.triu_indices(len(X), k=1)
    dist = np.sqrt(sq_distances(X, X)[iu])
    med = float(np.median(dist)) if dist.size else 0.0
    return med if med > 0 else 1.0


@dataclass
class BinarySvm:
    alpha: np.ndarray        # dual coefficients of the support vectors
    y: np.ndarray            # their +-1 labels
    support: np.ndarray      # support vectors
    b: float
    converged: bool = True
    n_iter: int = 0


@dataclass
class SvmModel:
    kernel: str
    sigma: float | None
    C: float
    classes: np.ndarray
    machines: list           # one BinarySvm per class; a single one when K == 2
    n_features: int
    strategy: str = "ovr"

    @property
    def d(self) -> int:
        return self.n_features

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.machines)

    def gram(self, A, B):
        if self.kernel == "linear":
            return linear_kernel(A, B)
        return rbf_kernel(A, B, self.sigma)

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(_check_dim(X, self.d))
        vals = []
        for m in self.machines:
            if len(m.alpha):
                vals.append(self.gram(X, m.support) @ (m.alpha * m.y) + m.b)
            else:
                vals.append(np.full(len(X), m.b))
        vals = np.stack(vals, axis=1)
        if len(self.classes) == 2:
            # the two one-vs-rest problems are mirror images of each other
            vals = np.concatenate([-vals, vals], axis=1)
        return vals

    def predict(self, X) -> np.ndarray:
        return self.classes[np.argmax(self.decision_function(X), axis=1)]


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000):
    """Solve the binary soft-margin dual for a precomputed Gram matrix.

    Returns ``(alpha, b, converged, n_iter)``.
    """
    n = len(y)
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    F = np.zeros(n)  # sum_j alpha_j y_j K_tj
    diag = np.diag(K).copy()
    converged = False
    it = 0
    while it < max_iter:
        viol = y - F
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(viol[up])])
        m_up = viol[i]
        m_low = viol[low].min()
        if m_up - m_low < tol:
            converged = True
            break
        cand = low & (viol < m_up)
        gap = m_up - viol[cand]
        curv = diag[i] + diag[cand] - 2.0 * K[i, cand]
        curv = np.where(curv > 0, curv, TAU)
        j = int(np.flatnonzero(cand)[np.argmax(gap * gap / curv)])

        eta = max(diag[i] + diag[j] - 2.0 * K[i, j], TAU)
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            lo, hi = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            lo, hi = max(0.0, ai + aj - C), min(C, ai + aj)
        Ei, Ej = F[i] - y[i], F[j] - y[j]
        aj_new = min(max(aj + y[j] * (Ei - Ej) / eta, lo), hi)
        ai_new = ai + y[i] * y[j] * (aj - aj_new)
        # snap round-off residue onto the bounds so saturated indices leave the working sets
        snap = 1e-12 * C
        ai_new = 0.0 if ai_new < snap else C if ai_new > C - snap else ai_new
        aj_new = 0.0 if aj_new < snap else C if aj_new > C - snap else aj_new
        alpha[i], alpha[j] = ai_new, aj_new
        F += (ai_new - ai) * y[i] * K[i] + (aj_new - aj) * y[j] * K[j]
        it += 1

    viol = y - F
    eps = 1e-8 * C
    free = (alpha > eps) & (alpha < C - eps)
    if free.any():
        b = float(viol[free].mean())
    else:
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        hi_b = viol[up].max() if up.any() else viol.min()
        lo_b = viol[low].min() if low.any() else viol.max()
        b = float(0.5 * (hi_b + lo_b))
    return alpha, b, converged, it


def svm_fit(X, y, kernel: str = "linear", C: float = 1.0, tol: float = 1e-3,
            max_passes: int = 100, sigma: float | None = None) -> SvmModel:
    """One-vs-rest SVM; ``max_passes`` caps SMO at ``max_passes * n`` pair updates.

    For RBF without ``sigma`` the median pairwise training distance is used.
    A subproblem that hits the cap is flagged and a :class:`NotConverged`
    warning is emitted; the model is still returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if not C > 0:
        raise ValueError("C must be positive")
    classes, _ = _classes(y)
    if kernel not in ("linear", "rbf"):
        raise ValueError(f"unknown kernel {kernel!r}")
    if kernel == "rbf" and sigma is None:
        sigma = median_heuristic(X)
    model = SvmModel(kernel, sigma, float(C), classes, [], X.shape[1])
    K = model.gram(X, X)
    targets = classes[1:] if len(classes) == 2 else classes
    for c in targets:
        yy = np.where(y == c, 1.0, -1.0)
        alpha, b, ok, it = smo(K, yy, C, tol, max_passes * max(len(y), 1))
        if not ok:
            warnings.warn(NotConverged(f"SMO for class {c!r} stopped after {it} updates"))
        sv = alpha > 0
        model.machines.append(BinarySvm(alpha[sv], yy[sv], X[sv], b, ok, it))
    return model


def svm_predict(model: SvmModel, x):
    """Class of a single vector; ties go to the lowest class."""
    x = _check_dim(x, model.d)
    if x.ndim != 1:
        raise DimensionMismatch("svm_predict takes a single vector")
    return model.predict(x[None])[0]


# ---------------------------------------------------------------------------
# estimator wrappers used by the evaluation harness
# ---------------------------------------------------------------------------

class LdaClassifier:
    def __init__(self, mode="pooled", standardize=True):
        self.mode = mode
        self.standardize = standardize

    def fit(self, X, y):
        self.scaler_ = StandardScaler().fit(X) if self.standardize else None
        Z = self.scaler_.transform(X) if self.scaler_ else X
        self.model_ = lda_fit(Z, y, self.mode)
        return self

    def predict(self, X):
        Z = self.scaler_.transform(X) if self.scaler_ else X
        return self.model_.predict(Z)


class SvmClassifier:
    def __init__(self, kernel="linear", C=1.0, sigma=None, tol=1e-3, max_passes=100, standardize=True):
        self.kernel = kernel
        self.C = C
        self.sigma = sigma
        self.tol = tol
        self.max_passes = max_passes
        self.standardize = standardize

    def fit(self, X, y):
        self.scaler_ = StandardScaler().fit(X) if self.standardize else None
        Z = self.scaler_.transform(X) if self.scaler_ else X
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NotConverged)
            self.model_ = svm_fit(Z, y, self.kernel, self.C, self.tol, self.max_passes, self.sigma)
        return self

    def predict(self, X):
        Z = self.scaler_.transform(X) if self.scaler_ else X
        return self.model_.predict(Z)


# ---------------------------------------------------------------------------
# JSON persistence
# ---------------------------------------------------------------------------

def _arr(a):
    return np.asarray(a).tolist()


def model_to_json(model) -> str:
    if isinstance(model, LdaModel):
        doc = {"schema_version": SCHEMA_VERSION, "type": "lda", "mode": model.mode,
               "classes": _arr(model.classes), "priors": _arr(model.priors),
               "means": _arr(model.means), "covariances": _arr(model.covariances)}
    elif isinstance(model, SvmModel):
        doc = {"schema_version": SCHEMA_VERSION, "type": "svm", "kernel": model.kernel,
               "sigma": model.sigma, "C": model.C, "strategy": model.strategy,
               "n_features": model.n_features,
               "classes": _arr(model.classes),
               "machines": [{"alpha": _arr(m.alpha), "y": _arr(m.y), "support": _arr(m.support),
                             "b": m.b, "converged": m.converged, "n_iter": m.n_iter}
                            for m in model.machines]}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return json.dumps(doc, indent=1)


def model_from_json(text: str):
    doc = json.loads(text)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported schema_version {doc.get('schema_version')!r}")
    classes = np.asarray(doc["classes"])
    if doc["type"] == "lda":
        return LdaModel(classes, np.asarray(doc["priors"], float), np.asarray(doc["means"], float),
                        np.asarray(doc["covariances"], float), doc["mode"])
    if doc["type"] == "svm":
        machines = []
        for m in doc["machines"]:
            sup = np.asarray(m["support"], float).reshape(-1, doc["n_features"])
            machines.append(BinarySvm(np.asarray(m["alpha"], float), np.asarray(m["y"], float),
                                      sup, float(m["b"]), bool(m["converged"]), int(m["n_iter"])))
        return SvmModel(doc["kernel"], doc["sigma"], float(doc["C"]), classes, machines,
                        int(doc["n_features"]), doc["strategy"])
    raise ValueError(f"unknown model type {doc['type']!r}")
