"""l_p-norm multiple kernel learning.

Block-norm primal

    min  1/2 ||w||_{2,p}^2 + C sum_i xi_i
    s.t. y_i (sum_m <w_m, phi_m(x_i)> + b) >= 1 - xi_i,  xi_i >= 0

solved through its kernel-weight form: the SVM dual on K_d = sum_m d_m K_m
with d on the ball sum_m d_m^r <= 1, r = p / (2 - p). Training alternates

1. fix d, solve the SVM dual on K_d (warm-started SMO);
2. fix alpha, set ||w_m||^2 = d_m^2 a^T Y K_m Y a and update d in closed form

       d_m = ||w_m||^(2-p) / (sum_k ||w_k||^p)^((2-p)/p),

   the minimiser of sum_m ||w_m||^2 / d_m on the ball (p in [1, 2)).

At p = 2 this gives d = 1 (plain sum of kernels). For p > 2 the weight
problem flips to a joint maximisation and step 2 becomes the exact best
response d_m = s_m^(1/(r-1)) / (sum_k s_k^(r/(r-1)))^(1/r),
s_m = a^T Y K_m Y a, which has the same fixed points.

Convergence is certified by the primal-dual gap, with the dual

    D(a) = 1^T a - 1/2 ||(s_m)_m||_{p*/2},   p* = p / (p - 1).
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BankMismatch,
    ConfigError,
    DegenerateKernel,
    NonConvergence,
    SingleClassInput,
    SizeMismatch,
)
from .kernel_svm import (
    RBF,
    KernelSpec,
    SvmModel,
    argmax_lowest,
    binary_targets,
    is_psd,
    solve_svm_dual,
)

_FLOOR = 1e-12


@dataclass(frozen=True)
class MklConfig:
    p: float = 1.8
    C: float = 1.0
    bank: tuple = (("left", KernelSpec(RBF)), ("right", KernelSpec(RBF)))
    tol: float = 1e-6
    gap_tol: float = 1e-5
    max_iter: int = 500
    inner_tol: float = 1e-8

    def __post_init__(self):
        bank = tuple((str(v), s if isinstance(s, KernelSpec) else KernelSpec(**s)) for v, s in self.bank)
        object.__setattr__(self, "bank", bank)
        if not self.p >= 1:
            raise ConfigError("p must be >= 1")
        if not self.C > 0:
            raise ConfigError("C must be positive")
        if len(self.bank) < 1:
            raise ConfigError("kernel bank is empty")

    @property
    def weight_norm(self) -> float:
        """Exponent r of the kernel-weight constraint sum d_m^r <= 1."""
        if self.p == 2:
            return np.inf
        return self.p / (2.0 - self.p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bank"] = [[v, asdict(s)] for v, s in self.bank]
        return d


def weight_constraint(d, p: float) -> float:
    """``sum_m d_m^(p/(2-p))``; for p = 2 returns ``max d``."""
    d = np.asarray(d, dtype=np.float64)
    if p == 2:
        return float(d.max())
    r = p / (2.0 - p)
    nz = d[d > 0]
    return float(np.sum(nz**r))


def initial_weights(M: int, p: float) -> np.ndarray:
    """Uniform weights on the constraint boundary."""
    return np.full(M, float(M) ** (-(2.0 - p) / p))


def combine_kernels(bank: Sequence, d) -> np.ndarray:
    """``K_d = sum_m d_m K_m``."""
    mats = [np.asarray(getattr(K, "values", K), dtype=np.float64) for K in bank]
    d = np.asarray(d, dtype=np.float64)
    if len(mats) != d.size:
        raise SizeMismatch(f"{len(mats)} kernels but {d.size} weights")
    shape = mats[0].shape
    if any(K.shape != shape for K in mats):
        raise SizeMismatch("kernel matrices differ in size")
    if np.any(d < 0):
        raise ConfigError("kernel weights must be non-negative")
    out = np.zeros(shape)
    for w, K in zip(d, mats):
        if w != 0:
            out += w * K
    return out


def _pnorm(x, q) -> float:
    x = np.asarray(x, dtype=np.float64)
    if np.isinf(q):
        return float(x.max())
    return float(np.sum(x**q) ** (1.0 / q))


def update_weights(s, d, p: float, active) -> np.ndarray:
    """Closed-form weight step from per-kernel quadratic terms ``s_m``."""
    s = np.clip(np.asarray(s, dtype=np.float64), 0.0, None)
    out = np.zeros_like(s)
    a = np.asarray(active, dtype=bool)
    if not a.any():
        return out
    if p == 2:
        out[a] = 1.0
        return out
    if p < 2:
        wn = np.sqrt(np.maximum(d[a] ** 2 * s[a], _FLOOR))
        num = wn ** (2.0 - p)
        den = np.sum(wn**p) ** ((2.0 - p) / p)
        out[a] = num / den
        return out
    r = p / (2.0 - p)
    sa = np.maximum(s[a], _FLOOR)
    num = sa ** (1.0 / (r - 1.0))
    den = np.sum(sa ** (r / (r - 1.0))) ** (1.0 / r)
    out[a] = num / den
    return out


@dataclass(eq=False)
class MklModel:
    d: np.ndarray
    svm: SvmModel
    config: MklConfig
    trace: list = field(default_factory=list)
    gap: float = 0.0
    iterations: int = 0

    def decision(self, rows: Sequence) -> np.ndarray:
        """``f(x) = sum_i a_i y_i sum_m d_m k_m(x_i, x) + b`` from per-kernel rows."""
        if len(rows) != self.d.size:
            raise BankMismatch(f"{len(rows)} kernel row blocks for a bank of {self.d.size}")
        n = self.svm.alpha.size
        acc = None
        for w, R in zip(self.d, rows):
            R = np.asarray(R, dtype=np.float64)
            if R.shape[-1] != n:
                raise BankMismatch(f"kernel rows of length {R.shape[-1]} for {n} training samples")
            if w != 0:
                acc = w * R if acc is None else acc + w * R
        if acc is None:
            acc = np.zeros(np.asarray(rows[0]).shape)
        return self.svm.decision(acc)

    def to_dict(self) -> dict:
        return {
            "d": self.d.tolist(),
            "svm": self.svm.to_dict(),
            "config": self.config.to_dict(),
            "gap": self.gap,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MklModel":
        cfg = dict(data["config"])
        cfg["bank"] = tuple((v, KernelSpec(**s)) for v, s in cfg["bank"])
        return cls(
            np.asarray(data["d"], dtype=np.float64),
            SvmModel.from_dict(data["svm"]),
            MklConfig(**cfg),
            gap=data.get("gap", 0.0),
            iterations=data.get("iterations", 0),
        )

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "gap"] + [f"d{m}" for m in range(self.d.size)])
            for row in self.trace:
                w.writerow([row["iteration"], repr(row["objective"]), repr(row["gap"])] + [repr(x) for x in row["d"]])


def mkl_objectives(mats, d, svm: SvmModel, p: float) -> tuple[float, float, float, np.ndarray]:
    """Return (joint objective at (d, a), primal, dual, s) for the current iterate."""
    c = svm.coef
    s = np.array([c @ K @ c for K in mats])
    s = np.clip(s, 0.0, None)
    a_sum = float(svm.alpha.sum())
    joint = a_sum - 0.5 * float(np.dot(d, s))
    f = sum(w * (K @ c) for w, K in zip(d, mats) if w != 0) + svm.bias
    xi = np.clip(1.0 - svm.y * f, 0.0, None)
    w2 = d**2 * s
    primal = 0.5 * _pnorm(np.sqrt(w2), p) ** 2 + svm.C * float(xi.sum())
    pstar_half = np.inf if p == 1 else p / (2.0 * (p - 1.0))
    dual = a_sum - 0.5 * _pnorm(s, pstar_half)
    return joint, primal, dual, s


def train_mkl(bank: Sequence, y, config: MklConfig = MklConfig(), check_psd: bool = True) -> MklModel:
    """Alternating optimisation of kernel weights and SVM duals (binary)."""
    mats = [np.asarray(getattr(K, "values", K), dtype=np.float64) for K in bank]
    M = len(mats)
    y = np.asarray(y, dtype=np.float64)
    if M < 1:
        raise BankMismatch("empty kernel bank")
    n = y.size
    if any(K.shape != (n, n) for K in mats):
        raise SizeMismatch("kernel matrices must be n x n for n labels")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise SingleClassInput("both classes must be present")
    if check_psd:
        for m, K in enumerate(mats):
            if not is_psd(K):
                raise DegenerateKernel(f"kernel {m} is not positive semidefinite")
    p = float(config.p)
    active = np.array([np.abs(K).max() > _FLOOR for K in mats])
    if not active.any():
        raise DegenerateKernel("all kernels are numerically zero")
    d = np.where(active, initial_weights(int(active.sum()), p), 0.0)

    svm = solve_svm_dual(combine_kernels(mats, d), y, config.C, tol=config.inner_tol, gap_tol=1e-10)
    joint, primal, dual, s = mkl_objectives(mats, d, svm, p)
    trace = [_trace_row(0, joint, primal, dual, d)]
    gap = (primal - dual) / max(abs(primal), 1.0)
    it = 0
    while True:
        converged = len(trace) > 1 and abs(trace[-1]["objective"] - trace[-2]["objective"]) <= config.tol * max(
            abs(joint), 1.0
        )
        if p == 2 or (converged and gap <= config.gap_tol):
            break
        if it >= config.max_iter:
            raise NonConvergence(
                f"MKL hit {config.max_iter} iterations (objective {joint:.6g}, gap {gap:.3g})",
                objective=joint,
                gap=gap,
            )
        d = update_weights(s, d, p, active)
        svm = solve_svm_dual(
            combine_kernels(mats, d), y, config.C, tol=config.inner_tol, gap_tol=1e-10, alpha0=svm.alpha
        )
        it += 1
        joint, primal, dual, s = mkl_objectives(mats, d, svm, p)
        gap = (primal - dual) / max(abs(primal), 1.0)
        trace.append(_trace_row(it, joint, primal, dual, d))
    return MklModel(d, svm, config, trace, float(gap), it)


def _trace_row(it, joint, primal, dual, d) -> dict:
    return {"iteration": it, "objective": joint, "primal": primal, "dual": dual, "gap": primal - dual, "d": d.tolist()}


@dataclass(eq=False)
class OneVsRestMkl:
    classes: tuple
    models: list

    def decision_values(self, rows: Sequence) -> np.ndarray:
        if len(self.classes) == 2:
            f = self.models[0].decision(rows)
            return np.stack([f, -f], axis=-1)
        return np.stack([m.decision(rows) for m in self.models], axis=-1)

    def predict(self, rows: Sequence) -> np.ndarray:
        return np.asarray(self.classes, dtype=object)[argmax_lowest(self.decision_values(rows))]


def predict_mkl(model, rows: Sequence):
    """Class labels for an ensemble, or +/-1 for a binary model."""
    if isinstance(model, OneVsRestMkl):
        return model.predict(rows)
    return np.where(model.decision(rows) >= 0, 1, -1)


def train_mkl_multiclass(bank: Sequence, labels, config: MklConfig = MklConfig(), classes=None) -> OneVsRestMkl:
    """One-vs-rest ensemble; every binary problem learns its own weights."""
    classes = tuple(classes) if classes is not None else tuple(sorted(set(labels)))
    mats = [np.asarray(getattr(K, "values", K), dtype=np.float64) for K in bank]
    for m, K in enumerate(mats):
        if not is_psd(K):
            raise DegenerateKernel(f"kernel {m} is not positive semidefinite")
    models = [train_mkl(mats, t, config, check_psd=False) for t in binary_targets(labels, classes)]
    return OneVsRestMkl(classes, models)


__all__ = [
    "MklConfig",
    "MklModel",
    "OneVsRestMkl",
    "combine_kernels",
    "initial_weights",
    "mkl_objectives",
    "predict_mkl",
    "train_mkl",
    "train_mkl_multiclass",
    "update_weights",
    "weight_constraint",
]
