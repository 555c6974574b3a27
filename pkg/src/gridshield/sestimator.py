"""Weighted-least-squares state estimation and residual-based bad data tests.

All routines take explicit per-measurement standard deviations ``sigmas``
(the diagonal of ``R`` is ``sigmas**2``).  :func:`measurement_sigmas` builds
them the way the gross-error test expects: proportional to each measurement's
magnitude, floored so lightly loaded branches keep a finite weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .gridmodel import GridCase, UnobservableError

__all__ = [
    "EstimationResult",
    "measurement_sigmas",
    "wls_solve",
    "projection_matrix",
    "decompose_error",
    "compute_ii",
    "compute_cme",
    "chi2_threshold",
    "chi2_detect",
    "estimate",
    "detect_stream",
]

MAGNITUDE_FLOOR = 1e-3


@dataclass
class EstimationResult:
    x_hat: np.ndarray
    residual: np.ndarray
    projection_diag: np.ndarray
    innovation_index: np.ndarray
    cme: np.ndarray
    j_cme: float
    detected: bool
    chi2_threshold: float
    iterations: int = 1
    undetectable: np.ndarray = field(default=None, repr=False)
    fully_detectable: np.ndarray = field(default=None, repr=False)


def measurement_sigmas(case: GridCase, z: np.ndarray, floor: float = MAGNITUDE_FLOOR) -> np.ndarray:
    """``sigma_i * max(|z_i|, floor)`` for one vector or a batch of rows."""
    return case.sigmas * np.maximum(np.abs(z), floor)


def _gain(H: np.ndarray, w: np.ndarray) -> np.ndarray:
    G = H.T @ (w[:, None] * H)
    if np.linalg.matrix_rank(G) < H.shape[1]:
        raise UnobservableError("gain matrix is singular")
    return G


def wls_solve(
    case: GridCase,
    z: np.ndarray,
    sigmas: np.ndarray | None = None,
    x0: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 20,
    return_iterations: bool = False,
):
    """Gauss-Newton WLS estimate of the state.

    The DC model is affine, so the first correction already lands on the
    optimum and the second one is below ``tol``; the loop is kept so the
    convergence contract (``max|dx| < tol``) holds for any model.
    """
    z = np.asarray(z, dtype=float)
    if z.shape != (case.meas_dim,):
        raise ValueError(f"expected {case.meas_dim} measurements, got {z.shape}")
    sigmas = case.sigmas if sigmas is None else np.asarray(sigmas, dtype=float)
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    w = 1.0 / sigmas**2
    H = case.H
    G = _gain(H, w)
    x = np.zeros(case.state_dim) if x0 is None else np.array(x0, dtype=float)
    for it in range(1, max_iter + 1):
        dz = z - case.h(x)
        dx = np.linalg.solve(G, H.T @ (w * dz))
        x = x + dx
        if np.max(np.abs(dx), initial=0.0) < tol:
            break
    return (x, it) if return_iterations else x


def projection_matrix(case: GridCase, sigmas: np.ndarray | None = None) -> np.ndarray:
    """Hat matrix ``H (H^T R^-1 H)^-1 H^T R^-1``."""
    sigmas = case.sigmas if sigmas is None else np.asarray(sigmas, dtype=float)
    w = 1.0 / sigmas**2
    H = case.H
    G = _gain(H, w)
    return H @ np.linalg.solve(G, H.T * w[None, :])


def decompose_error(P: np.ndarray, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split ``e`` into its undetectable (``P e``) and detectable parts."""
    e = np.asarray(e, dtype=float)
    if P.shape != (e.size, e.size):
        raise ValueError("projection matrix and error vector sizes differ")
    e_u = P @ e
    return e_u, e - e_u


def compute_ii(P_or_diag: np.ndarray) -> np.ndarray:
    """Innovation index ``sqrt(1 - P_ii) / sqrt(P_ii)``.

    ``P_ii == 0`` maps to ``inf`` (error fully visible in the residual),
    ``P_ii == 1`` to 0 (fully masked).  Roundoff slightly outside ``[0, 1]``
    is clipped.
    """
    p = np.asarray(P_or_diag, dtype=float)
    if p.ndim == 2:
        p = np.diag(p)
    p = np.clip(p, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        return np.sqrt(1.0 - p) / np.sqrt(p)


def compute_cme(r: np.ndarray, ii: np.ndarray) -> np.ndarray:
    """Composed measurement error ``r_i * sqrt(1 + 1/II_i^2)``."""
    r = np.asarray(r, dtype=float)
    ii = np.asarray(ii, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        cme = r * np.sqrt(1.0 + 1.0 / ii**2)
    cme = np.where(np.isinf(ii), r, cme)
    masked = ii == 0
    cme = np.where(masked & (r == 0), 0.0, cme)
    cme = np.where(masked & (r != 0), np.copysign(np.inf, r), cme)
    return cme


def chi2_threshold(dof: int, p: float = 0.95) -> float:
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    return float(stats.chi2.ppf(p, dof))


def chi2_detect(
    cme: np.ndarray, sigmas: np.ndarray, dof: int | None = None, p: float = 0.95
) -> tuple[float, float, bool]:
    """``J_CME = sum((CME_i / sigma_i)^2)`` against the chi-squared quantile."""
    cme = np.asarray(cme, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas <= 0):
        raise ValueError("sigmas must be positive")
    dof = cme.size if dof is None else dof
    j = float(np.sum((cme / sigmas) ** 2))
    thr = chi2_threshold(dof, p)
    return j, thr, bool(j > thr)


def estimate(
    case: GridCase,
    z: np.ndarray,
    sigmas: np.ndarray | None = None,
    p: float = 0.95,
) -> EstimationResult:
    """Full single-snapshot pipeline: solve, project, II, CME, chi-squared."""
    z = np.asarray(z, dtype=float)
    sigmas = measurement_sigmas(case, z) if sigmas is None else np.asarray(sigmas, dtype=float)
    x_hat, iters = wls_solve(case, z, sigmas, return_iterations=True)
    r = z - case.h(x_hat)
    pdiag = np.clip(np.diag(projection_matrix(case, sigmas)), 0.0, 1.0)
    ii = compute_ii(pdiag)
    cme = compute_cme(r, ii)
    j, thr, hit = chi2_detect(cme, sigmas, case.meas_dim, p)
    return EstimationResult(
        x_hat=x_hat,
        residual=r,
        projection_diag=pdiag,
        innovation_index=ii,
        cme=cme,
        j_cme=j,
        detected=hit,
        chi2_threshold=thr,
        iterations=iters,
        undetectable=ii == 0,
        fully_detectable=np.isinf(ii),
    )


def detect_stream(
    case: GridCase, Z: np.ndarray, p: float = 0.95, floor: float = MAGNITUDE_FLOOR
) -> tuple[np.ndarray, np.ndarray, float]:
    """Vectorised chi-squared test over rows of ``Z``.

    Each row is weighted by its own magnitudes.  Returns ``(detected, j_cme,
    threshold)``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    H = case.H
    sig = measurement_sigmas(case, Z, floor)
    W = 1.0 / sig**2
    G = np.einsum("ki,nk,kj->nij", H, W, H)
    rhs = np.einsum("ki,nk->ni", H, W * (Z - case.offset))
    x_hat = np.linalg.solve(G, rhs[..., None])[..., 0]
    r = Z - case.h(x_hat)
    Ginv = np.linalg.inv(G)
    pdiag = np.clip(np.einsum("ki,nij,kj->nk", H, Ginv, H) * W, 0.0, 1.0)
    cme = compute_cme(r, compute_ii(pdiag.ravel()).reshape(pdiag.shape))
    j = np.sum((cme / sig) ** 2, axis=1)
    thr = chi2_threshold(case.meas_dim, p)
    return j > thr, j, thr
