"""Kernels, Gram matrices and a soft-margin SVM dual solver.

The dual is solved in minimisation form

    min_a  f(a) = 1/2 a^T Q a - 1^T a,   Q_ij = y_i y_j K_ij
    s.t.   y^T a = 0,  0 <= a_i <= C

by sequential minimal optimisation: each step moves one pair of
multipliers along the equality constraint, chosen by the maximal-violating
pair rule with second-order selection of the partner.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonConvergence, SingleClassInput

RBF = "rbf"
LINEAR = "linear"
POLY = "poly"
FAMILIES = (RBF, LINEAR, POLY)

_TAU = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and parameters.

    ``gamma=None`` means "resolve from training data" as
    ``1 / (dim * var(X))`` (see :meth:`resolve`).
    """

    family: str = RBF
    gamma: float | None = None
    offset: float = 1.0
    degree: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if self.gamma is not None and not (self.gamma > 0 and np.isfinite(self.gamma)):
            raise ConfigError("gamma must be positive and finite")
        if self.offset < 0:
            raise ConfigError("offset must be >= 0")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigError("degree must be an integer >= 1")

    def resolve(self, X) -> "KernelSpec":
        if self.family != RBF or self.gamma is not None:
            return self
        X = np.asarray(X, dtype=np.float64)
        var = X.var()
        gamma = 1.0 / (X.shape[1] * var) if var > 0 else 1.0
        return replace(self, gamma=float(gamma))


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    values: np.ndarray
    spec: KernelSpec
    view: str = ""

    @property
    def n(self) -> int:
        return self.values.shape[0]


def kernel(X, Y, spec: KernelSpec) -> np.ndarray:
    """Cross-kernel matrix ``k(X_i, Y_j)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatch(f"feature lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    dot = X @ Y.T
    if spec.family == LINEAR:
        return dot + spec.offset
    if spec.family == POLY:
        return (dot + spec.offset) ** int(spec.degree)
    if spec.gamma is None:
        raise ConfigError("RBF gamma unresolved; call KernelSpec.resolve(train) first")
    sq = (X**2).sum(1)[:, None] + (Y**2).sum(1)[None, :] - 2 * dot
    return np.exp(-spec.gamma * np.clip(sq, 0.0, None))


def gram(X, spec: KernelSpec, view: str = "") -> KernelMatrix:
    X = np.asarray(X, dtype=np.float64) if not isinstance(X, list) else _stack(X)
    K = kernel(X, X, spec)
    K = 0.5 * (K + K.T)
    if spec.family == RBF:
        np.fill_diagonal(K, 1.0)
    return KernelMatrix(K, spec, view)


def _stack(vectors: Sequence) -> np.ndarray:
    vecs = [np.asarray(getattr(v, "vector", v), dtype=np.float64) for v in vectors]
    if len({v.size for v in vecs}) > 1:
        raise DimensionMismatch("vectors differ in length")
    return np.vstack(vecs)


def is_psd(K, rel_tol: float = 1e-8) -> bool:
    K = np.asarray(K, dtype=np.float64)
    S = 0.5 * (K + K.T)
    n = S.shape[0]
    return bool(np.linalg.eigvalsh(S).min() >= -rel_tol * max(np.trace(S), 0.0) / n)


@dataclass(eq=False)
class SvmModel:
    """Binary soft-margin SVM in dual form (labels +/-1)."""

    alpha: np.ndarray
    bias: float
    y: np.ndarray
    C: float
    spec: KernelSpec | None = None
    kkt_violation: float = 0.0
    gap: float = 0.0
    iterations: int = 0
    objective_trace: list = field(default_factory=list)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.alpha > 0)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))

    @property
    def coef(self) -> np.ndarray:
        return self.alpha * self.y

    def decision(self, K_rows) -> np.ndarray:
        """``f(x) = sum_i a_i y_i k(x_i, x) + b`` for rows ``K_rows[t, i] = k(x_t, x_i)``."""
        K_rows = np.asarray(K_rows, dtype=np.float64)
        if K_rows.shape[-1] != self.alpha.size:
            raise DimensionMismatch(f"kernel row length {K_rows.shape[-1]} != training size {self.alpha.size}")
        return K_rows @ self.coef + self.bias

    def dual_objective(self, K) -> float:
        c = self.coef
        return float(self.alpha.sum() - 0.5 * c @ np.asarray(K) @ c)

    def to_dict(self, support_vectors=None) -> dict:
        d = {
            "alpha": self.alpha.tolist(),
            "bias": self.bias,
            "y": self.y.astype(int).tolist(),
            "C": self.C,
            "spec": asdict(self.spec) if self.spec else None,
            "kkt_violation": self.kkt_violation,
            "gap": self.gap,
            "iterations": self.iterations,
        }
        if support_vectors is not None:
            d["support_vectors"] = np.asarray(support_vectors).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        spec = KernelSpec(**d["spec"]) if d.get("spec") else None
        return cls(
            np.asarray(d["alpha"], dtype=np.float64),
            float(d["bias"]),
            np.asarray(d["y"], dtype=np.float64),
            float(d["C"]),
            spec,
            d.get("kkt_violation", 0.0),
            d.get("gap", 0.0),
            d.get("iterations", 0),
        )

    def to_json(self, support_vectors=None) -> str:
        return json.dumps(self.to_dict(support_vectors))


def _check_labels(y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ConfigError("binary labels must be +1/-1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("both classes must be present")
    return y


def _violation(alpha, grad, y, C):
    """Return (m, M, up mask, low mask, -y*grad); the KKT violation is m - M."""
    mvals = -y * grad
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    m = mvals[up].max() if up.any() else -np.inf
    M = mvals[low].min() if low.any() else np.inf
    return m, M, up, low, mvals


def _bias(alpha, grad, y, C) -> float:
    mvals = -y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(mvals[free].mean())
    m, M, *_ = _violation(alpha, grad, y, C)
    return float(0.5 * (m + M))


def _gap(alpha, grad, y, C, b) -> tuple[float, float]:
    """Absolute primal-dual gap and primal objective."""
    qa = grad + 1.0
    aqa = float(alpha @ qa)
    xi = np.clip(-grad - y * b, 0.0, None)
    primal = 0.5 * aqa + C * float(xi.sum())
    dual = float(alpha.sum()) - 0.5 * aqa
    return primal - dual, primal


def solve_svm_dual(
    K,
    y,
    C: float = 1.0,
    tol: float = 1e-6,
    gap_tol: float = 1e-6,
    max_iter: int = 10_000_000,
    alpha0=None,
    trace: bool = False,
) -> SvmModel:
    """Soft-margin SVM dual by SMO.

    Stops when the maximal KKT violation is below ``tol`` and the relative
    duality gap below ``gap_tol``; if the gap test fails, ``tol`` is tightened
    tenfold and iteration resumes. ``alpha0`` warm-starts from a feasible
    point. With ``trace=True`` the dual objective is recorded per step.
    """
    K = np.asarray(getattr(K, "values", K), dtype=np.float64)
    y = _check_labels(y)
    n = y.size
    if K.shape != (n, n):
        raise DimensionMismatch(f"kernel shape {K.shape} does not match {n} labels")
    if not C > 0:
        raise ConfigError("C must be positive")
    Q = K * np.outer(y, y)
    diag = np.diag(Q).copy()
    if alpha0 is None:
        alpha = np.zeros(n)
        grad = -np.ones(n)
    else:
        alpha = np.clip(np.asarray(alpha0, dtype=np.float64), 0.0, C)
        grad = Q @ alpha - 1.0

    objective_trace = []
    it = 0
    cur_tol = tol
    while True:
        m, M, up, low, mvals = _violation(alpha, grad, y, C)
        if m - M < cur_tol:
            b = _bias(alpha, grad, y, C)
            gap, primal = _gap(alpha, grad, y, C, b)
            if gap <= gap_tol * max(abs(primal), 1.0) or cur_tol < 1e-14:
                break
            cur_tol *= 0.1
            continue
        if it >= max_iter:
            b = _bias(alpha, grad, y, C)
            gap, primal = _gap(alpha, grad, y, C, b)
            raise NonConvergence(
                f"SMO hit {max_iter} updates (KKT violation {m - M:.3g}, gap {gap:.3g})",
                objective=float(alpha.sum() - 0.5 * alpha @ (grad + 1.0)),
                gap=gap,
            )
        i = int(np.flatnonzero(up)[np.argmax(mvals[up])])
        # second-order partner choice among violating low-set indices
        cand = low & (mvals < m)
        bdiff = m - mvals[cand]
        quad = diag[i] + diag[cand] - 2.0 * y[i] * y[cand] * Q[i, cand]
        quad = np.where(quad > 0, quad, _TAU)
        j = int(np.flatnonzero(cand)[np.argmax(bdiff**2 / quad)])
        _pair_update(i, j, alpha, grad, Q, y, C)
        it += 1
        if trace:
            objective_trace.append(float(alpha.sum() - 0.5 * alpha @ (grad + 1.0)))

    return SvmModel(alpha, b, y, float(C), None, float(max(m - M, 0.0)), float(gap), it, objective_trace)


def _pair_update(i, j, alpha, grad, Q, y, C) -> None:
    """Analytic two-variable step along y_i a_i + y_j a_j = const, clipped to the box."""
    Qi, Qj = Q[i], Q[j]
    ai, aj = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = Qi[i] + Qj[j] + 2.0 * Qi[j]
        quad = quad if quad > 0 else _TAU
        delta = (-grad[i] - grad[j]) / quad
        diff = ai - aj
        ni, nj = ai + delta, aj + delta
        if diff > 0:
            if nj < 0:
                nj, ni = 0.0, diff
        else:
            if ni < 0:
                ni, nj = 0.0, -diff
        if diff > 0:
            if ni > C:
                ni, nj = C, C - diff
        else:
            if nj > C:
                nj, ni = C, C + diff
    else:
        quad = Qi[i] + Qj[j] - 2.0 * Qi[j]
        quad = quad if quad > 0 else _TAU
        delta = (grad[i] - grad[j]) / quad
        s = ai + aj
        ni, nj = ai - delta, aj + delta
        if s > C:
            if ni > C:
                ni, nj = C, s - C
        else:
            if nj < 0:
                nj, ni = 0.0, s
        if s > C:
            if nj > C:
                nj, ni = C, s - C
        else:
            if ni < 0:
                ni, nj = 0.0, s
    di, dj = ni - ai, nj - aj
    alpha[i], alpha[j] = ni, nj
    grad += Qi * di + Qj * dj


# ---------------------------------------------------------------------------
# multiclass


@dataclass(eq=False)
class OneVsRestSvm:
    """One binary SVM per class; two classes share a single model."""

    classes: tuple
    models: list
    spec: KernelSpec
    train_X: np.ndarray

    def decision_values(self, X) -> np.ndarray:
        return self.decision_from_rows(kernel(X, self.train_X, self.spec))

    def decision_from_rows(self, K_rows) -> np.ndarray:
        return ovr_scores(self.models, K_rows, len(self.classes))

    def predict(self, X) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[argmax_lowest(self.decision_values(X))]


def ovr_scores(models, K_rows, n_classes) -> np.ndarray:
    if n_classes == 2:
        f = models[0].decision(K_rows)
        return np.stack([f, -f], axis=-1)
    return np.stack([m.decision(K_rows) for m in models], axis=-1)


def argmax_lowest(scores) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    return np.argmax(np.asarray(scores), axis=-1)


def binary_targets(labels, classes) -> list[np.ndarray]:
    labels = np.asarray(labels, dtype=object)
    if len(classes) < 2:
        raise SingleClassInput("need at least two classes")
    targets = [np.where(labels == c, 1.0, -1.0) for c in classes]
    for c, t in zip(classes, targets):
        if np.count_nonzero(t > 0) < 2:
            raise SingleClassInput(f"class {c!r} has fewer than 2 samples")
    return targets[:1] if len(classes) == 2 else targets


def train_multiclass(
    X, labels, spec: KernelSpec = KernelSpec(), C: float = 1.0, classes=None, **solver_kw
) -> OneVsRestSvm:
    X = np.asarray(X, dtype=np.float64)
    classes = tuple(classes) if classes is not None else tuple(sorted(set(labels)))
    spec = spec.resolve(X)
    K = gram(X, spec).values
    models = []
    for t in binary_targets(labels, classes):
        m = solve_svm_dual(K, t, C, **solver_kw)
        m.spec = spec
        models.append(m)
    return OneVsRestSvm(classes, models, spec, X)
