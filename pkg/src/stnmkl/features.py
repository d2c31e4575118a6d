"""Spectrogram -> feature vector: anti-alias filtering, decimation, PCA."""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as sps

from .errors import DegenerateData, DimensionMismatch, InvalidCutoff, UpsampleRequested
from .spectrogram import Spectrogram

ANTIALIAS_ORDER = 10
CUTOFF_FRACTION = 0.45


@dataclass(frozen=True, eq=False)
class ButterworthLowPass:
    order: int
    cutoff: float
    rate: float
    sos: np.ndarray

    def response(self, freqs) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        _, h = sps.sosfreqz(self.sos, worN=np.atleast_1d(np.asarray(freqs, dtype=np.float64)), fs=self.rate)
        return h

    def gain_db(self, freqs) -> np.ndarray:
        return 20 * np.log10(np.abs(self.response(freqs)))

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sos])


def design_butterworth(cutoff: float, rate: float, order: int = ANTIALIAS_ORDER) -> ButterworthLowPass:
    """Digital Butterworth low-pass (bilinear transform, pre-warped) as SOS."""
    if not 0 < cutoff < rate / 2:
        raise InvalidCutoff(f"cutoff {cutoff} Hz not in (0, {rate / 2}) Hz")
    if order < 1:
        raise InvalidCutoff("order must be >= 1")
    sos = sps.butter(order, cutoff, btype="lowpass", fs=rate, output="sos")
    return ButterworthLowPass(int(order), float(cutoff), float(rate), sos)


def zero_phase(filt: ButterworthLowPass, x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Forward-backward filtering, averaged over both pass orders.

    Plain forward-backward filtering is only approximately time-reversal
    symmetric when the filter transient outlives the signal; averaging the
    result with the time-reversed filtering of the reversed input makes the
    operator commute with reversal exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    padlen = n - 1
    fwd = sps.sosfiltfilt(filt.sos, x, axis=axis, padtype="odd", padlen=padlen)
    rev = np.flip(sps.sosfiltfilt(filt.sos, np.flip(x, axis=axis), axis=axis, padtype="odd", padlen=padlen), axis=axis)
    return 0.5 * (fwd + rev)


def target_instants(n: int, time_rate: float, target_rate: float) -> np.ndarray:
    """Fractional sample positions of the decimated grid, centred in the window."""
    m = int(np.floor(n * target_rate / time_rate + 1e-9))
    step = time_rate / target_rate
    return (n - 1) / 2.0 + (np.arange(m) - (m - 1) / 2.0) * step


def decimate_spectrogram(spec: Spectrogram, target_rate: float) -> Spectrogram:
    """Low-pass each row at 0.45 * target_rate (zero-phase), then resample.

    Resampling is linear interpolation at ``floor(T * target / rate)``
    instants spaced ``rate / target`` samples apart and centred in the window,
    so non-integer factors are allowed.
    """
    rate = spec.time_rate
    if target_rate > rate:
        raise UpsampleRequested(f"target {target_rate} Hz above current rate {rate} Hz")
    if not target_rate > 0:
        raise UpsampleRequested("target rate must be positive")
    if target_rate == rate:
        return Spectrogram(np.array(spec.values, copy=True), rate, spec.freqs, spec.channels)
    values = np.asarray(spec.values, dtype=np.float64)
    n = values.shape[1]
    pos = target_instants(n, rate, target_rate)
    if pos.size == 0:
        raise UpsampleRequested(f"window of {n} samples yields no samples at {target_rate} Hz")
    filt = design_butterworth(CUTOFF_FRACTION * target_rate, rate)
    smooth = zero_phase(filt, values, axis=1)
    lo = np.clip(np.floor(pos).astype(int), 0, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    w = pos - lo
    out = smooth[:, lo] * (1 - w) + smooth[:, hi] * w
    return Spectrogram(out, float(target_rate), spec.freqs, spec.channels)


@dataclass(frozen=True, eq=False)
class FeatureView:
    vector: np.ndarray
    label: str
    hemisphere: str
    rate: float
    basis_id: str | None = None


def flatten(spec: Spectrogram, label: str, hemisphere: str) -> FeatureView:
    """Row-major flattening: all time samples of row 0, then row 1, ..."""
    vec = np.asarray(spec.values, dtype=np.float64).reshape(-1).copy()
    return FeatureView(vec, label, hemisphere, spec.time_rate)


def unflatten(view: FeatureView, n_rows: int) -> np.ndarray:
    return view.vector.reshape(n_rows, -1)


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Mean, principal directions (rows, orthonormal) and their variances.

    Variances use the unbiased (n - 1) normalisation.
    """

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float
    basis_id: str

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def retained_fraction(self) -> float:
        return float(self.eigenvalues.sum() / self.total_variance)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.shape[-1] != self.dim:
            raise DimensionMismatch(f"vector length {X.shape[-1]} != basis dimension {self.dim}")
        return _centered_matmul(X, self.mean, self.components.T)

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z) @ self.components + self.mean


_CHUNK = 1 << 15


def _centered_matmul(X, mean, B) -> np.ndarray:
    """(X - mean) @ B, column-chunked so a centred copy of X is never held."""
    X2 = np.atleast_2d(X)
    out = np.zeros((X2.shape[0], B.shape[1]))
    for s in range(0, X2.shape[1], _CHUNK):
        xc = X2[:, s : s + _CHUNK].astype(np.float64) - mean[s : s + _CHUNK]
        out += xc @ B[s : s + _CHUNK]
    return out if np.ndim(X) == 2 else out[0]


def _as_matrix(train) -> np.ndarray:
    if isinstance(train, np.ndarray):
        return train
    vecs = [v.vector if isinstance(v, FeatureView) else np.asarray(v) for v in train]
    if len({v.size for v in vecs}) > 1:
        raise DimensionMismatch("training vectors differ in length")
    return np.vstack(vecs)


def fit_pca(train, retain: float = 0.95) -> PcaBasis:
    """Smallest set of leading directions holding ``retain`` of the variance.

    ``train`` is a list of FeatureViews or an (n, dim) array. When ``dim``
    exceeds ``n`` the eigenproblem is solved on the n x n Gram matrix of the
    centred data and the directions are mapped back.
    """
    X = _as_matrix(train)
    if X.ndim != 2 or X.shape[0] < 2:
        raise DegenerateData("need at least 2 training vectors")
    if not 0 < retain <= 1:
        raise ValueError("retain must be in (0, 1]")
    n, dim = X.shape
    mean = X.mean(axis=0, dtype=np.float64)
    if dim <= n:
        xc = X.astype(np.float64) - mean
        evals, evecs = np.linalg.eigh(xc.T @ xc / (n - 1))
        evals, evecs = evals[::-1], evecs[:, ::-1]
        dirs = None
    else:
        G = np.zeros((n, n))
        for s in range(0, dim, _CHUNK):
            xc = X[:, s : s + _CHUNK].astype(np.float64) - mean[s : s + _CHUNK]
            G += xc @ xc.T
        evals, evecs = np.linalg.eigh(G)
        evals, evecs = evals[::-1] / (n - 1), evecs[:, ::-1]
        dirs = evecs
    evals = np.clip(evals, 0.0, None)
    total = float(evals.sum())
    if not total > 0:
        raise DegenerateData("training data has zero variance")
    frac = np.cumsum(evals) / total
    k = int(np.searchsorted(frac, retain * (1 - 1e-12)) + 1)
    k = min(k, int(np.count_nonzero(evals > evals[0] * 1e-12)) or 1)
    if dirs is None:
        comps = evecs[:, :k].T.copy()
    else:
        # v_j = Xc^T u_j / sqrt((n - 1) lambda_j)
        scale = 1.0 / np.sqrt(evals[:k] * (n - 1))
        comps = np.zeros((k, dim))
        for s in range(0, dim, _CHUNK):
            xc = X[:, s : s + _CHUNK].astype(np.float64) - mean[s : s + _CHUNK]
            comps[:, s : s + _CHUNK] = (xc.T @ dirs[:, :k] * scale).T
        if evals[k - 1] < 1e-6 * evals[0]:
            # ill-conditioned tail: re-orthonormalise to remove round-off drift
            q, r = np.linalg.qr(comps.T)
            comps = (q * np.sign(np.diag(r))).T
    for j in range(k):
        # deterministic sign: largest-magnitude coordinate positive
        if comps[j, np.argmax(np.abs(comps[j]))] < 0:
            comps[j] = -comps[j]
    digest = hashlib.sha1(mean.tobytes() + evals[:k].tobytes() + comps[:, :64].tobytes()).hexdigest()[:12]
    return PcaBasis(mean, comps, evals[:k].copy(), total, digest)


def gram_matrix(X) -> np.ndarray:
    """``X @ X.T`` in float64, column-chunked."""
    X = np.asarray(X)
    G = np.zeros((X.shape[0], X.shape[0]))
    for s in range(0, X.shape[1], _CHUNK):
        xc = X[:, s : s + _CHUNK].astype(np.float64)
        G += xc @ xc.T
    return G


@dataclass(frozen=True)
class GramPca:
    """PCA scores computed from a precomputed linear Gram matrix.

    Equivalent to :func:`fit_pca` on the training rows followed by
    :meth:`PcaBasis.transform`, up to the sign of each component, without
    forming the directions explicitly. Used when vectors are much longer
    than the sample count.
    """

    train_scores: np.ndarray
    test_scores: np.ndarray
    eigenvalues: np.ndarray
    total_variance: float

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    @property
    def retained_fraction(self) -> float:
        return float(self.eigenvalues.sum() / self.total_variance)


def pca_from_gram(G, train, test, retain: float = 0.95) -> GramPca:
    """PCA fitted on ``train`` rows of the Gram matrix, applied to ``test`` rows.

    Only ``G[train][:, train]`` enters the fit; test rows are centred with the
    training mean and projected.
    """
    G = np.asarray(G, dtype=np.float64)
    train = np.flatnonzero(train) if np.asarray(train).dtype == bool else np.asarray(train)
    test = np.flatnonzero(test) if np.asarray(test).dtype == bool else np.asarray(test)
    n = train.size
    if n < 2:
        raise DegenerateData("need at least 2 training vectors")
    Gtt = G[np.ix_(train, train)]
    row_mean = Gtt.mean(axis=0)
    grand = row_mean.mean()
    Gc = Gtt - row_mean[:, None] - row_mean[None, :] + grand
    Gc = 0.5 * (Gc + Gc.T)
    ev, U = np.linalg.eigh(Gc)
    ev, U = np.clip(ev[::-1], 0.0, None), U[:, ::-1]
    evals = ev / (n - 1)
    total = float(evals.sum())
    if not total > 0:
        raise DegenerateData("training data has zero variance")
    frac = np.cumsum(evals) / total
    k = int(np.searchsorted(frac, retain * (1 - 1e-12)) + 1)
    k = min(k, int(np.count_nonzero(ev > ev[0] * 1e-12)) or 1)
    scale = 1.0 / np.sqrt(ev[:k])
    Z_tr = U[:, :k] * np.sqrt(ev[:k])
    Gx = G[np.ix_(test, train)]
    Gx_c = Gx - Gx.mean(axis=1, keepdims=True) - row_mean[None, :] + grand
    Z_te = Gx_c @ U[:, :k] * scale
    return GramPca(Z_tr, Z_te, evals[:k].copy(), total)


def project(view: FeatureView, basis: PcaBasis) -> FeatureView:
    coords = basis.transform(view.vector)
    return FeatureView(coords, view.label, view.hemisphere, view.rate, basis.basis_id)


def write_feature_csv(views: Sequence[FeatureView], path) -> None:
    """One row per view: label, hemisphere, rate, features..."""
    width = max((v.vector.size for v in views), default=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "hemisphere", "rate"] + [f"f{i}" for i in range(width)])
        for v in views:
            w.writerow([v.label, v.hemisphere, repr(float(v.rate))] + [repr(float(x)) for x in v.vector])
