"""Per-bus Gaussian anomaly detectors with adaptive statistics.

The ensemble keeps one local detector per bus grouping.  Each local detector
scores a sample by its squared Mahalanobis distance to a mean and inverse
covariance.  Samples judged normal by every local detector feed back into
the statistics (exponentially weighted rank-1 updates of the inverse) and
into a sliding window of recent distances that sets the threshold
``mean + eta * std``.  Samples judged anomalous change nothing.

All local detectors live in padded batched arrays so a whole stream runs
in one compiled loop; :meth:`CrossLayerEnsemble.step` calls the same loop
on a single row.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

__all__ = [
    "SingularCovarianceError",
    "InsufficientDataError",
    "EnsembleConfig",
    "LocalDetectorState",
    "Detection",
    "DetectionLog",
    "CrossLayerEnsemble",
    "mahalanobis",
    "woodbury_update",
    "adaptive_threshold",
    "run_global_corrdet",
    "ETA_BY_ATTACK",
]

SNAPSHOT_VERSION = 1

ETA_BY_ATTACK = {"mfdi": 11.0, "c_mfdi": 11.0, "mdos": 7.0, "mfdi_mdos": 7.0, "mitm": 7.0}


class SingularCovarianceError(np.linalg.LinAlgError):
    """Training covariance of one bus grouping is rank deficient."""

    def __init__(self, bus: int, rank: int, dim: int):
        super().__init__(f"bus {bus}: training covariance has rank {rank} < {dim}")
        self.bus = bus


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleConfig:
    """Hyper-parameters of the adaptive ensemble.

    ``eps`` is diagonal loading relative to the mean variance of a grouping,
    so it behaves the same for per-unit flows and for delays in seconds.
    ``literal_mean`` switches the mean update to ``(1-a) mu + a (z - mu)``
    for comparison studies; the default is the convex ``(1-a) mu + a z``.
    """

    alpha: float = 8e-5
    beta: int = 90
    eta: float = 11.0
    k_init: int = 1800
    eps: float = 1e-8
    recompute_period: int = 5000
    literal_mean: bool = False
    adapt: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.beta < 2:
            raise ValueError("beta must be >= 2")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k_init < 2:
            raise ValueError("k_init must be >= 2")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.recompute_period < 1:
            raise ValueError("recompute_period must be >= 1")


@dataclass
class LocalDetectorState:
    """Snapshot of one local detector (copies, not views)."""

    bus: int
    feature_indices: np.ndarray
    mean: np.ndarray
    inv_cov: np.ndarray
    cov: np.ndarray
    threshold: float
    window: np.ndarray
    updates: int = 0

    @property
    def window_stats(self) -> tuple[float, float]:
        if len(self.window) == 0:
            return float("nan"), float("nan")
        return float(self.window.mean()), float(self.window.std())


@dataclass
class Detection:
    index: int
    predicted: int
    distances: np.ndarray
    thresholds: np.ndarray
    triggering: frozenset
    rejected: bool = False


@dataclass
class DetectionLog:
    """Detections of a stream, stored column-wise."""

    buses: tuple[int, ...]
    predicted: np.ndarray
    distances: np.ndarray
    thresholds: np.ndarray
    rejected: np.ndarray
    start: int = 0
    singular: bool = False

    def __len__(self) -> int:
        return len(self.predicted)

    def __getitem__(self, k: int) -> Detection:
        trig = self.distances[k] > self.thresholds[k]
        return Detection(
            index=self.start + k,
            predicted=int(self.predicted[k]),
            distances=self.distances[k],
            thresholds=self.thresholds[k],
            triggering=frozenset(b for b, t in zip(self.buses, trig) if t),
            rejected=bool(self.rejected[k]),
        )

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def rejected_count(self) -> int:
        return int(self.rejected.sum())

    def max_ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            r = self.distances / self.thresholds
        r = np.where(np.isnan(r), np.inf, r)
        return r.max(axis=1)

    def write_csv(self, path, header_lines: Sequence[str] = ()) -> None:
        """``index,predicted,max_ratio,triggering_buses`` (buses joined by ``;``)."""
        ratio = self.max_ratio()
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "predicted", "max_ratio", "triggering_buses"])
            for k in range(len(self)):
                trig = ";".join(str(b) for b in sorted(self[k].triggering))
                w.writerow([self.start + k, int(self.predicted[k]), f"{ratio[k]:.17g}", trig])


# --- numerical kernels -----------------------------------------------------


@njit(cache=True, nogil=True)
def _rank1_inverse_inplace(Sinv, v, alpha, u):
    """Overwrite ``S^-1`` with the inverse of ``(1-a) S + a v v^T``.

    ``u`` is scratch space of length ``len(v)``.  Returns False, leaving
    ``Sinv`` untouched, when the update is numerically unusable.
    """
    k = v.shape[0]
    q = 0.0
    for i in range(k):
        acc = 0.0
        for j in range(k):
            acc += Sinv[i, j] * v[j]
        u[i] = acc
        q += v[i] * acc
    denom = (1.0 - alpha) / alpha + q
    if not (q >= 0.0) or not np.isfinite(denom):
        return False
    scale = 1.0 / (1.0 - alpha)
    for i in range(k):
        ui = u[i] / denom
        for j in range(i, k):
            a = (Sinv[i, j] - ui * u[j]) * scale
            b = (Sinv[j, i] - u[j] / denom * u[i]) * scale
            s = 0.5 * (a + b)
            Sinv[i, j] = s
            Sinv[j, i] = s
    return True


@njit(cache=True, nogil=True)
def _mahal(Sinv, v):
    k = v.shape[0]
    acc = 0.0
    for i in range(k):
        row = 0.0
        for j in range(k):
            row += Sinv[i, j] * v[j]
        acc += v[i] * row
    return max(acc, 0.0)


@njit(cache=True, nogil=True)
def _window_threshold(win, length, eta, fallback):
    if length < 2:
        return fallback
    m = 0.0
    for i in range(length):
        m += win[i]
    m /= length
    s = 0.0
    for i in range(length):
        s += (win[i] - m) ** 2
    return m + eta * np.sqrt(s / length)


@njit(cache=True, nogil=True)
def _stream(
    X, idx, dims, mu, Sinv, S, win, win_len, win_pos, tau, tau0, updates,
    alpha, eta, recompute_period, literal_mean, adapt,
    pred, dist, thr, rejected,
):
    n = X.shape[0]
    M = idx.shape[0]
    beta = win.shape[1]
    K = idx.shape[1]
    v = np.empty((M, K))
    scratch = np.empty(K)
    for t in range(n):
        row = X[t]
        finite = True
        for c in range(row.shape[0]):
            if not np.isfinite(row[c]):
                finite = False
                break
        if not finite:
            rejected[t] = True
            pred[t] = 1
            for m in range(M):
                dist[t, m] = np.nan
                thr[t, m] = tau[m]
            continue
        hit = False
        for m in range(M):
            k = dims[m]
            for i in range(k):
                v[m, i] = row[idx[m, i]] - mu[m, i]
            d = _mahal(Sinv[m, :k, :k], v[m, :k])
            dist[t, m] = d
            thr[t, m] = tau[m]
            if d > tau[m]:
                hit = True
        pred[t] = 1 if hit else 0
        if hit or not adapt:
            continue
        for m in range(M):
            k = dims[m]
            vm = v[m, :k]
            for i in range(k):
                for j in range(k):
                    S[m, i, j] = (1.0 - alpha) * S[m, i, j] + alpha * vm[i] * vm[j]
            updates[m] += 1
            exact = updates[m] % recompute_period == 0
            if exact or not _rank1_inverse_inplace(Sinv[m, :k, :k], vm, alpha, scratch[:k]):
                Sinv[m, :k, :k] = np.linalg.inv(np.ascontiguousarray(S[m, :k, :k]))
            for i in range(k):
                if literal_mean:
                    mu[m, i] = (1.0 - alpha) * mu[m, i] + alpha * vm[i]
                else:
                    mu[m, i] = mu[m, i] + alpha * vm[i]
            win[m, win_pos[m]] = dist[t, m]
            win_pos[m] = (win_pos[m] + 1) % beta
            if win_len[m] < beta:
                win_len[m] += 1
            tau[m] = _window_threshold(win[m], win_len[m], eta, tau0[m])


# --- standalone operations ---------------------------------------------------


def mahalanobis(state: LocalDetectorState, z: np.ndarray) -> float:
    """Squared distance ``(z - mu)^T S^-1 (z - mu)``."""
    z = np.asarray(z, dtype=float)
    if z.shape != state.mean.shape:
        raise ValueError(f"expected {state.mean.shape[0]} features, got {z.shape}")
    return float(_mahal(np.ascontiguousarray(state.inv_cov), z - state.mean))


def woodbury_update(
    mu: np.ndarray, inv_cov: np.ndarray, z: np.ndarray, alpha: float, literal_mean: bool = False
) -> tuple[np.ndarray, np.ndarray]:
    """Exponentially weighted mean and rank-1 inverse-covariance update.

    Returns ``(mu_new, inv((1-a) S + a (z-mu)(z-mu)^T))``.  If the rank-1
    formula is numerically unusable a ``LinAlgError`` is raised so the caller
    can take the exact path.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    mu = np.asarray(mu, dtype=float)
    v = np.asarray(z, dtype=float) - mu
    new = np.array(inv_cov, dtype=float, order="C")
    if not _rank1_inverse_inplace(new, v, alpha, np.empty(v.size)):
        raise np.linalg.LinAlgError("rank-1 update lost positive definiteness")
    mu_new = (1 - alpha) * mu + alpha * v if literal_mean else mu + alpha * v
    return mu_new, new


def adaptive_threshold(window: Sequence[float], eta: float, fallback: float | None = None) -> float:
    """``mean(B) + eta * std(B)`` with the population std.

    With fewer than two entries ``fallback`` is returned (a ``ValueError`` if
    none is given).
    """
    b = np.asarray(window, dtype=float)
    if b.size < 2:
        if fallback is None:
            raise ValueError("window needs at least two entries")
        return float(fallback)
    return float(_window_threshold(b, b.size, float(eta), 0.0))


# --- ensemble ----------------------------------------------------------------


def _covariance(rows: np.ndarray, eps: float, strict: bool, bus: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Mean, loaded covariance, and whether the raw covariance was singular."""
    mu = rows.mean(axis=0)
    C = np.atleast_2d(np.cov(rows, rowvar=False))
    k = C.shape[0]
    sd = np.sqrt(np.clip(np.diag(C), 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = C / np.outer(sd, sd)
    if np.any(sd == 0) or not np.all(np.isfinite(corr)):
        rank = int(np.linalg.matrix_rank(C))
    else:
        rank = int(np.linalg.matrix_rank(corr, tol=1e-10))
    singular = rank < k
    if singular and strict:
        raise SingularCovarianceError(bus, rank, k)
    scale = float(np.trace(C)) / k if np.trace(C) > 0 else 1.0
    return mu, C + eps * scale * np.eye(k), singular


def _spd_inverse(C: np.ndarray, bus: int) -> np.ndarray:
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(bus, -1, C.shape[0]) from exc
    Linv = np.linalg.inv(L)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


def _population_threshold(d: np.ndarray, eta: float) -> float:
    return float(d.mean() + eta * d.std())


class CrossLayerEnsemble:
    """Ensemble of per-bus detectors (CECD-AS when fed cross-layer rows).

    Parameters
    ----------
    config : EnsembleConfig
    groups : sequence of ``(bus, column indices)``
        One local detector per entry, in that order.  ``None`` means a single
        group over every column.
    """

    def __init__(self, config: EnsembleConfig = EnsembleConfig(), groups=None):
        self.config = config
        self._groups_arg = groups
        self.fitted = False
        self.samples_seen = 0

    # construction ---------------------------------------------------------

    def fit(self, features: np.ndarray, labels: np.ndarray | None = None, strict: bool = True):
        """Learn initial statistics from the normal rows of ``features``."""
        X = np.asarray(features, dtype=float)
        if X.ndim != 2:
            raise ValueError("features must be 2-D")
        groups = self._groups_arg
        if groups is None:
            groups = [(0, np.arange(X.shape[1]))]
        groups = [(int(b), np.asarray(ix, dtype=np.int64)) for b, ix in groups]
        if not groups or any(len(ix) == 0 for _, ix in groups):
            raise ValueError("every group needs at least one column")
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (X.shape[0],):
                raise ValueError("labels do not match features")
            X = X[labels == 0]
        X = X[np.all(np.isfinite(X), axis=1)]
        cfg = self.config
        kmax = max(len(ix) for _, ix in groups)
        # the non-strict (global baseline) path accepts too few rows and flags it
        need = max(cfg.beta, kmax + 1) if strict else max(cfg.beta, 2)
        if X.shape[0] < need:
            raise InsufficientDataError(f"need at least {need} normal training rows, got {X.shape[0]}")

        M = len(groups)
        self.buses = tuple(b for b, _ in groups)
        self.dims = np.array([len(ix) for _, ix in groups], dtype=np.int64)
        self.idx = np.zeros((M, kmax), dtype=np.int64)
        self.mu = np.zeros((M, kmax))
        self.S = np.zeros((M, kmax, kmax))
        self.Sinv = np.zeros((M, kmax, kmax))
        self.win = np.zeros((M, cfg.beta))
        self.win_len = np.zeros(M, dtype=np.int64)
        self.win_pos = np.zeros(M, dtype=np.int64)
        self.tau0 = np.zeros(M)
        self.updates = np.zeros(M, dtype=np.int64)
        self.singular = np.zeros(M, dtype=bool)
        for m, (bus, ix) in enumerate(groups):
            k = len(ix)
            rows = X[:, ix]
            mu, C, sing = _covariance(rows, cfg.eps, strict, bus)
            Sinv = _spd_inverse(C, bus)
            self.idx[m, :k] = ix
            self.mu[m, :k] = mu
            self.S[m, :k, :k] = C
            self.Sinv[m, :k, :k] = Sinv
            self.singular[m] = sing
            diff = rows - mu
            d = np.maximum(np.einsum("ni,ij,nj->n", diff, Sinv, diff), 0.0)
            self.tau0[m] = _population_threshold(d, cfg.eta)
            tail = d[-cfg.beta:]
            self.win[m, : len(tail)] = tail
            self.win_len[m] = len(tail)
            self.win_pos[m] = len(tail) % cfg.beta
        self.tau = self.tau0.copy()
        self.n_features = features.shape[1]
        self.fitted = True
        self.samples_seen = 0
        return self

    # streaming ------------------------------------------------------------

    def run(self, features: np.ndarray, start: int = 0) -> DetectionLog:
        """Judge every row in order, adapting after each normal verdict."""
        self._require_fitted()
        X = np.ascontiguousarray(np.atleast_2d(features), dtype=float)
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        n, M = X.shape[0], len(self.buses)
        pred = np.zeros(n, dtype=np.int8)
        dist = np.zeros((n, M))
        thr = np.zeros((n, M))
        rej = np.zeros(n, dtype=np.bool_)
        cfg = self.config
        _stream(
            X, self.idx, self.dims, self.mu, self.Sinv, self.S, self.win, self.win_len,
            self.win_pos, self.tau, self.tau0, self.updates,
            cfg.alpha, cfg.eta, cfg.recompute_period, cfg.literal_mean, cfg.adapt,
            pred, dist, thr, rej,
        )
        self.samples_seen += n
        return DetectionLog(self.buses, pred, dist, thr, rej, start=start, singular=bool(self.singular.any()))

    def step(self, sample, index: int | None = None) -> Detection:
        """Judge one sample (a feature row or an object with ``.features``)."""
        row = getattr(sample, "features", sample)
        if index is None:
            index = getattr(sample, "index", self.samples_seen)
        log = self.run(np.asarray(row, dtype=float)[None, :], start=index)
        return log[0]

    # inspection -----------------------------------------------------------

    def _require_fitted(self):
        if not self.fitted:
            raise RuntimeError("ensemble is not fitted")

    def local_states(self) -> list[LocalDetectorState]:
        self._require_fitted()
        out = []
        for m, bus in enumerate(self.buses):
            k = self.dims[m]
            L = self.win_len[m]
            order = (np.arange(L) + (self.win_pos[m] - L)) % self.config.beta
            out.append(
                LocalDetectorState(
                    bus=bus,
                    feature_indices=self.idx[m, :k].copy(),
                    mean=self.mu[m, :k].copy(),
                    inv_cov=self.Sinv[m, :k, :k].copy(),
                    cov=self.S[m, :k, :k].copy(),
                    threshold=float(self.tau[m]),
                    window=self.win[m, order].copy(),
                    updates=int(self.updates[m]),
                )
            )
        return out

    def _state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "idx": self.idx, "dims": self.dims, "mu": self.mu, "S": self.S, "Sinv": self.Sinv,
            "win": self.win, "win_len": self.win_len, "win_pos": self.win_pos,
            "tau": self.tau, "tau0": self.tau0, "updates": self.updates, "singular": self.singular,
        }

    def state_digest(self) -> str:
        """SHA-256 over every piece of adaptive state."""
        self._require_fitted()
        h = hashlib.sha256()
        for name, arr in self._state_arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def audit(self) -> None:
        """Check symmetry and positive definiteness of every inverse."""
        for st in self.local_states():
            A = st.inv_cov
            if np.max(np.abs(A - A.T)) > 1e-9 * max(1.0, np.max(np.abs(A))):
                raise np.linalg.LinAlgError(f"bus {st.bus}: inverse covariance lost symmetry")
            np.linalg.cholesky(A)

    def save(self, path) -> None:
        """JSON snapshot (floats written with full precision)."""
        self._require_fitted()
        doc = {
            "version": SNAPSHOT_VERSION,
            "config": asdict(self.config),
            "buses": list(self.buses),
            "n_features": self.n_features,
            "samples_seen": self.samples_seen,
            "arrays": {
                k: {"dtype": str(v.dtype), "shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self._state_arrays().items()
            },
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "CrossLayerEnsemble":
        doc = json.loads(Path(path).read_text())
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {doc.get('version')}")
        ens = cls(EnsembleConfig(**doc["config"]))
        for k, spec in doc["arrays"].items():
            arr = np.array(spec["data"], dtype=spec["dtype"]).reshape(spec["shape"])
            setattr(ens, k, arr)
        ens.buses = tuple(doc["buses"])
        ens.n_features = doc["n_features"]
        ens.samples_seen = doc["samples_seen"]
        ens.fitted = True
        return ens


def run_global_corrdet(
    train: np.ndarray,
    train_labels: np.ndarray | None,
    test: np.ndarray,
    config: EnsembleConfig = EnsembleConfig(),
) -> DetectionLog:
    """One detector over every column with frozen statistics and threshold.

    A rank-deficient training covariance does not raise here; loading is
    applied and the returned log has ``singular=True``.
    """
    cfg = EnsembleConfig(**{**asdict(config), "adapt": False})
    ens = CrossLayerEnsemble(cfg).fit(train, train_labels, strict=False)
    return ens.run(test)
