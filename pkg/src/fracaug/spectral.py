"""Spectral machinery: normalization, eigendecomposition, fractional powers.

Also hosts the two numerical checks for the approximation results that
justify fractional augmentation: Chebyshev decay of ``x**alpha`` on a
positive interval, and the spectral identity
``||B - B**alpha|| = max_i |lambda_i - lambda_i**alpha|``.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ContractError,
    DomainError,
    EmptyGraphError,
    NumericError,
    OutOfRangeError,
)

logger = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1


def _dense(M) -> np.ndarray:
    if sp.issparse(M):
        return M.toarray().astype(np.float64)
    return np.asarray(M, dtype=np.float64)


def _check_symmetric(M: np.ndarray, tol: float, what: str = "matrix"):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractError(f"{what} must be square, got shape {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > tol:
        raise ContractError(f"{what} is not symmetric (max asymmetry {np.max(np.abs(M - M.T)):.3g})")


def normalize_adjacency(A) -> np.ndarray:
    """Symmetric degree normalization ``D^-1/2 A D^-1/2``.

    Isolated nodes get ``D^-1/2 = 0`` so their rows and columns stay zero.
    """
    A = _dense(A)
    _check_symmetric(A, 0.0, "adjacency")
    deg = A.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


def hat_transform(A_tilde) -> np.ndarray:
    """Shift a normalized adjacency's spectrum from [-1, 1] into [0, 1]."""
    A_tilde = _dense(A_tilde)
    return 0.5 * (np.eye(A_tilde.shape[0]) + A_tilde)


def _off_norm(A: np.ndarray) -> float:
    return float(np.linalg.norm(A - np.diag(np.diag(A))))


def jacobi_eigh(M: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60):
    """Cyclic Jacobi eigensolver for a dense symmetric matrix.

    Returns eigenvalues in descending order and the matching orthonormal
    eigenvectors as columns.
    """
    A = np.array(M, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    for sweep in range(max_sweeps):
        off = _off_norm(A)
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                app, aqq = A[p, p], A[q, q]
                theta = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                A[p, :] = A[:, p]
                A[q, :] = A[:, q]
                A[p, p] = app - t * apq
                A[q, q] = aqq + t * apq
                A[p, q] = A[q, p] = 0.0
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        off = _off_norm(A)
        if off > tol * scale * 1e3:
            raise NumericError(f"Jacobi did not converge after {max_sweeps} sweeps (off-norm {off:.3g})")
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def sym_evd(M, method: str = "lapack"):
    """Eigendecomposition ``M = U diag(w) U^T`` with ``w`` descending.

    ``method="jacobi"`` runs the in-house cyclic Jacobi solver;
    ``"lapack"`` defers to :func:`numpy.linalg.eigh`.
    """
    M = _dense(M)
    _check_symmetric(M, 1e-10)
    M = 0.5 * (M + M.T)
    if method == "jacobi":
        w, U = jacobi_eigh(M)
    elif method == "lapack":
        try:
            w, U = np.linalg.eigh(M)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"eigh failed: {exc}") from exc
        w, U = w[::-1].copy(), U[:, ::-1].copy()
    else:
        raise ContractError(f"unknown EVD method {method!r}")
    return w, U


@dataclass(frozen=True)
class SpectralCache:
    """Retained eigenpairs of one graph's transformed adjacency.

    ``U_l``/``lambda_l`` hold the largest eigenvalues (descending),
    ``U_s``/``lambda_s`` the smallest (ascending).
    """

    U_l: np.ndarray
    lambda_l: np.ndarray
    U_s: np.ndarray
    lambda_s: np.ndarray

    @property
    def n(self) -> int:
        return self.U_l.shape[0]

    @property
    def k_l(self) -> int:
        return self.lambda_l.size

    @property
    def k_s(self) -> int:
        return self.lambda_s.size


def _clamp_unit(w: np.ndarray) -> np.ndarray:
    if w.size and (w.min() < -1e-10 or w.max() > 1 + 1e-10):
        raise DomainError(
            f"eigenvalues must lie in [0, 1] up to 1e-10, got range [{w.min():.3g}, {w.max():.3g}]"
        )
    return np.clip(w, 0.0, 1.0)


def truncate_evd(evd, k_l: int, k_s: int) -> SpectralCache:
    """Keep the top-``k_l`` and bottom-``k_s`` eigenpairs without overlap."""
    w, U = evd
    n = w.size
    if n == 0:
        raise EmptyGraphError("cannot truncate the eigendecomposition of an empty graph")
    if k_l < 1 or k_s < 1:
        raise ContractError(f"k_l and k_s must be >= 1, got {k_l}, {k_s}")
    k_l = min(k_l, n)
    k_s = min(k_s, n - k_l)
    w = _clamp_unit(np.asarray(w, dtype=np.float64))
    low = np.arange(n - 1, n - 1 - k_s, -1, dtype=np.int64)
    return SpectralCache(
        U_l=U[:, :k_l].copy(),
        lambda_l=w[:k_l].copy(),
        U_s=U[:, low].copy(),
        lambda_s=w[low].copy(),
    )


def preprocess_adjacency(A, k_l: int, k_s: int, method: str = "lapack") -> SpectralCache:
    """Normalize, shift into [0, 1] and truncate the eigendecomposition."""
    A_hat = hat_transform(normalize_adjacency(A))
    return truncate_evd(sym_evd(A_hat, method=method), k_l, k_s)


def build_caches(graphs, k_l: int, k_s: int, jobs: int = 1, method: str = "lapack"):
    """Spectral caches for an iterable of graphs, in input order."""
    adjs = [g.adjacency for g in graphs]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda A: preprocess_adjacency(A, k_l, k_s, method), adjs))
    return [preprocess_adjacency(A, k_l, k_s, method) for A in adjs]


def _power(w: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0:
        return np.ones_like(w)
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = w[pos] ** alpha
    return out


def fractional_power(evd, alpha: float) -> np.ndarray:
    """``sum_i lambda_i**alpha u_i u_i^T`` over the supplied eigenpairs.

    ``evd`` is either a ``(eigenvalues, eigenvectors)`` pair or a
    :class:`SpectralCache` (both retained blocks are summed).
    ``0**0`` is taken as 1; ``0**alpha`` as 0 for ``alpha > 0``.
    """
    if alpha < 0:
        raise DomainError(f"fractional power requires alpha >= 0, got {alpha}")
    if isinstance(evd, SpectralCache):
        w = np.concatenate([evd.lambda_l, evd.lambda_s])
        U = np.hstack([evd.U_l, evd.U_s])
    else:
        w, U = evd
        w = np.asarray(w, dtype=np.float64)
    if np.any(w < 0):
        raise DomainError("fractional power of a matrix with negative eigenvalues is not real")
    out = (U * _power(w, alpha)) @ U.T
    return 0.5 * (out + out.T)


def operator_norm(M) -> float:
    """Spectral norm of a symmetric matrix (largest absolute eigenvalue)."""
    M = _dense(M)
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (M + M.T)))))


# ---------------------------------------------------------------------------
# Chebyshev approximation of x**alpha


@dataclass(frozen=True)
class ChebyshevApprox:
    alpha: float
    interval: tuple[float, float]
    degree: int
    coeffs: np.ndarray

    def __call__(self, x):
        """Evaluate the polynomial at scalar or array points of the interval."""
        a, b = self.interval
        t = (2.0 * np.asarray(x, dtype=np.float64) - (b + a)) / (b - a)
        return np.polynomial.chebyshev.chebval(t, self.coeffs)


def chebyshev_coeffs(alpha: float, interval, T: int) -> ChebyshevApprox:
    """Chebyshev coefficients of ``x**alpha`` on ``[a, b]`` via Gauss quadrature.

    Uses ``Q = max(64, 4T)`` Chebyshev-Gauss nodes; ``c_0`` carries
    weight ``1/pi`` and ``c_t`` (``t >= 1``) weight ``2/pi``.
    """
    a, b = (float(v) for v in interval)
    if a <= 0:
        raise DomainError(f"interval must exclude the branch point at 0, got a={a}")
    if not b > a:
        raise DomainError(f"interval must satisfy a < b, got [{a}, {b}]")
    if T < 0:
        raise ContractError(f"degree must be >= 0, got {T}")
    Q = max(64, 4 * T)
    k = np.arange(Q)
    theta = np.pi * (k + 0.5) / Q
    x = np.cos(theta)
    fx = (((b - a) * x + (b + a)) / 2.0) ** alpha
    # Gauss-Chebyshev: integral f(x) T_t(x)/sqrt(1-x^2) dx ~ (pi/Q) sum f(x_k) cos(t theta_k)
    t = np.arange(T + 1)
    integrals = (np.pi / Q) * np.cos(np.outer(t, theta)) @ fx
    coeffs = integrals * (2.0 / np.pi)
    coeffs[0] = integrals[0] / np.pi
    return ChebyshevApprox(float(alpha), (a, b), int(T), coeffs)


def chebyshev_apply(approx: ChebyshevApprox, M, tol: float = 1e-12) -> np.ndarray:
    """Evaluate the approximating polynomial at a symmetric matrix.

    Uses the three-term recurrence on the affinely rescaled matrix.
    """
    M = _dense(M)
    _check_symmetric(M, 1e-10)
    a, b = approx.interval
    w = np.linalg.eigvalsh(0.5 * (M + M.T))
    width = tol * max(1.0, abs(b))
    outside = w[(w < a - width) | (w > b + width)]
    if outside.size:
        raise OutOfRangeError(
            f"eigenvalue {outside[0]:.6g} lies outside the approximation interval [{a}, {b}]"
        )
    n = M.shape[0]
    I = np.eye(n)
    S = (2.0 * M - (b + a) * I) / (b - a)
    c = approx.coeffs
    T_prev, T_cur = I, S
    out = c[0] * I
    if c.size > 1:
        out = out + c[1] * S
    for t in range(2, c.size):
        T_prev, T_cur = T_cur, 2.0 * S @ T_cur - T_prev
        out = out + c[t] * T_cur
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class DecayFit:
    errors: np.ndarray
    beta: float
    gamma: float
    r_squared: float
    interval: tuple[float, float]
    alpha: float
    monotone: bool
    bound_holds: bool
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        return self.degenerate or (
            self.monotone and self.gamma > 0 and self.r_squared > 0.95 and self.bound_holds
        )

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "interval": list(self.interval),
            "errors": self.errors.tolist(),
            "beta": self.beta,
            "gamma": self.gamma if math.isfinite(self.gamma) else "inf",
            "r_squared": self.r_squared,
            "monotone": self.monotone,
            "bound_holds": self.bound_holds,
            "degenerate": self.degenerate,
            "passed": self.passed,
        }


def thm1_decay_check(M, alpha: float, T_max: int, interval=None,
                     floor: float = 1e-13) -> DecayFit:
    """Operator-norm error of degree-``T`` Chebyshev approximants of ``M**alpha``.

    The rate ``gamma`` is the least-squares slope of ``-log(error)``
    against ``T`` over errors above ``floor``; ``beta`` is the smallest
    scale for which ``beta * exp(-gamma T)`` bounds every fitted error.
    """
    M = _dense(M)
    w, U = sym_evd(M)
    if interval is None:
        a, b = float(w.min()), float(w.max())
        if b - a < 1e-12:
            a, b = a * (1 - 1e-3), b * (1 + 1e-3)
    else:
        a, b = (float(v) for v in interval)
    if w.min() < a - 1e-12:
        raise DomainError(f"min eigenvalue {w.min():.6g} below interval start {a}")
    if a <= 0:
        raise DomainError(f"minimum eigenvalue must be positive, got {a}")
    exact = fractional_power((np.clip(w, 0, None), U), alpha)
    errors = np.array([
        operator_norm(exact - chebyshev_apply(chebyshev_coeffs(alpha, (a, b), T), M))
        for T in range(T_max + 1)
    ])
    monotone = bool(np.all(np.diff(errors) <= 1e-12))
    fit_T = np.flatnonzero(errors > floor)
    if fit_T.size < 2:
        logger.info("decay fit degenerate: polynomial is exact beyond degree %d", fit_T.size - 1)
        return DecayFit(errors, float(errors.max(initial=0.0)), math.inf, 1.0, (a, b),
                        float(alpha), monotone, True, degenerate=True)
    logs = np.log(errors[fit_T])
    slope, intercept = np.polyfit(fit_T, logs, 1)
    pred = slope * fit_T + intercept
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    gamma = float(-slope)
    beta = float(np.max(errors[fit_T] * np.exp(gamma * fit_T)))
    bound = bool(np.all(errors[fit_T] <= beta * np.exp(-gamma * fit_T) * 1.05))
    return DecayFit(errors, beta, gamma, r2, (a, b), float(alpha), monotone, bound)


def thm2_identity_check(B, alpha: float, tol: float = 1e-8):
    """Compare ``||B - B**alpha||_2`` with ``max_i |lambda_i - lambda_i**alpha|``."""
    w, U = sym_evd(B)
    if w.min(initial=0.0) < -1e-10:
        raise DomainError(f"B must be positive semi-definite, min eigenvalue {w.min():.3g}")
    w = np.clip(w, 0.0, None)
    lhs = operator_norm(_dense(B) - fractional_power((w, U), alpha))
    rhs = float(np.max(np.abs(w - _power(w, alpha)), initial=0.0))
    return lhs, rhs, bool(abs(lhs - rhs) <= tol * max(1.0, rhs))


def thm2_perturbation_report(A, P, alpha: float) -> dict:
    """Empirical quantities around a structural perturbation ``A + P``.

    Reports the sensitivity ratio ``||A^a - (A+P)^a|| / ||P||`` and checks
    the triangle decomposition
    ``||A^a - (A+P)|| <= ||A^a - (A+P)^a|| + max_i |l_i - l_i^a|``.
    The contour constant of the analytic bound is not computed.
    """
    A, P = _dense(A), _dense(P)
    B = A + P
    wa, Ua = sym_evd(A)
    wb, Ub = sym_evd(B)
    if min(wa.min(), wb.min()) < -1e-10:
        raise DomainError("A and A + P must be positive semi-definite")
    Aa = fractional_power((np.clip(wa, 0, None), Ua), alpha)
    Ba = fractional_power((np.clip(wb, 0, None), Ub), alpha)
    lhs, rhs, ok = thm2_identity_check(B, alpha)
    sensitivity = operator_norm(Aa - Ba)
    p_norm = operator_norm(P)
    total = operator_norm(Aa - B)
    return {
        "norm_P": p_norm,
        "sensitivity": sensitivity,
        "ratio": sensitivity / p_norm if p_norm > 0 else 0.0,
        "identity_lhs": lhs,
        "identity_rhs": rhs,
        "identity_pass": ok,
        "distance": total,
        "triangle_pass": bool(total <= sensitivity + rhs + 1e-10),
    }


# ---------------------------------------------------------------------------
# cache persistence


def save_caches(path, caches, dataset_hash: str, k_l: int, k_s: int) -> Path:
    path = Path(path)
    header = {"version": CACHE_FORMAT_VERSION, "dataset": dataset_hash,
              "k_l": int(k_l), "k_s": int(k_s), "count": len(caches)}
    arrays = {"header": np.array(json.dumps(header))}
    for gid, c in enumerate(caches):
        arrays[f"{gid}/U_l"] = c.U_l
        arrays[f"{gid}/lambda_l"] = c.lambda_l
        arrays[f"{gid}/U_s"] = c.U_s
        arrays[f"{gid}/lambda_s"] = c.lambda_s
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_caches(path, dataset_hash: str, k_l: int, k_s: int):
    """Load caches written by :func:`save_caches`; ``None`` if stale or missing."""
    path = Path(path)
    if not path.is_file():
        return None
    with np.load(path) as z:
        header = json.loads(str(z["header"]))
        if (header.get("version") != CACHE_FORMAT_VERSION or header.get("dataset") != dataset_hash
                or header.get("k_l") != k_l or header.get("k_s") != k_s):
            return None
        return [
            SpectralCache(z[f"{i}/U_l"], z[f"{i}/lambda_l"], z[f"{i}/U_s"], z[f"{i}/lambda_s"])
            for i in range(header["count"])
        ]
