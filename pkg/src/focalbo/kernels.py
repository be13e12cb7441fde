"""Stationary ARD kernels, their log-parameter gradients, and jittered Cholesky.

Two families are supported, ``"matern52"`` and ``"rbf"``. Both are written as
functions of the squared ARD distance ``r2 = sum(((a - b) / ls) ** 2)``::

    matern52: (1 + s + s**2 / 3) * exp(-s),  s = sqrt(5 * r2)
    rbf:      exp(-r2 / 2)

The derivative with respect to ``r2`` is finite at zero for both, which is all
the gradient code needs.
"""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from ._accel import USE_NUMBA, njit
from .errors import NotPositiveDefiniteError, ShapeError

FAMILIES = ("matern52", "rbf")
_FAMILY_CODE = {"matern52": 0, "rbf": 1}


@dataclass(frozen=True)
class KernelParams:
    """ARD lengthscales, signal variance and observation-noise variance."""

    lengthscales: np.ndarray
    signal_var: float = 1.0
    noise_var: float = 1e-2

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.setflags(write=False)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_var", float(self.signal_var))
        object.__setattr__(self, "noise_var", float(self.noise_var))
        if ls.ndim != 1 or ls.size == 0:
            raise ShapeError("lengthscales must be a nonempty vector")
        if not (np.all(ls > 0) and self.signal_var > 0 and self.noise_var > 0):
            raise ValueError("kernel parameters must be strictly positive")
        if not (np.all(np.isfinite(ls)) and np.isfinite(self.signal_var) and np.isfinite(self.noise_var)):
            raise ValueError("kernel parameters must be finite")

    @property
    def dim(self):
        return self.lengthscales.size

    def to_log(self):
        """Log-space vector ``[log ls_1..log ls_d, log signal_var, log noise_var]``."""
        return np.concatenate([np.log(self.lengthscales), [np.log(self.signal_var), np.log(self.noise_var)]])

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(np.exp(theta[:-2]), np.exp(theta[-2]), np.exp(theta[-1]))

    @classmethod
    def default(cls, dim, lengthscale=0.2, signal_var=1.0, noise_var=1e-2):
        return cls(np.full(dim, lengthscale), signal_var, noise_var)


def _check_family(family):
    if family not in _FAMILY_CODE:
        raise ValueError(f"unknown kernel family {family!r}; expected one of {FAMILIES}")


def _as_points(A, dim, name):
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[None, :]
    if A.ndim != 2 or A.shape[1] != dim:
        raise ShapeError(f"{name} has shape {A.shape}, expected (n, {dim})")
    return A


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _sqdist_nb(A, B, inv_ls):
    n, d = A.shape
    m = B.shape[0]
    As = A * inv_ls
    Bs = B * inv_ls
    r2 = np.zeros((n, m))
    for i in range(n):
        for k in range(d):
            a = As[i, k]
            for j in range(m):
                t = a - Bs[j, k]
                r2[i, j] += t * t
    return r2


@njit(cache=True, fastmath=True)
def _contract_nb(W, A, B, inv_ls2):
    # g_ls[k] = -2 inv_ls2[k] sum_ij W_ij (a_ik - b_jk)^2
    # gB[j,k] =  2 inv_ls2[k] sum_i  W_ij (b_jk - a_ik)
    n, d = A.shape
    m = B.shape[0]
    g_ls = np.zeros(d)
    gB = np.zeros((m, d))
    for i in range(n):
        for j in range(m):
            w = W[i, j]
            if w == 0.0:
                continue
            for k in range(d):
                diff = B[j, k] - A[i, k]
                g_ls[k] += w * diff * diff
                gB[j, k] += w * diff
    for k in range(d):
        g_ls[k] *= -2.0 * inv_ls2[k]
        for j in range(m):
            gB[j, k] *= 2.0 * inv_ls2[k]
    return g_ls, gB


# ---------------------------------------------------------------------------
# numpy fallbacks
# ---------------------------------------------------------------------------

def _sqdist_np(A, B, inv_ls):
    diff = (A[:, None, :] - B[None, :, :]) * inv_ls
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kappa_inplace(r2, code, scale):
    # transcendental part stays in numpy: its SIMD exp beats scalar libm calls in numba
    if code == 0:
        s = r2
        s *= 5.0
        np.sqrt(s, out=s)
        e = np.negative(s)
        np.exp(e, out=e)
        dR = np.add(s, 1.0)
        dR *= e
        s *= s
        s *= 1.0 / 3.0
        s *= e
        s += dR
        if scale != 1.0:
            s *= scale
        dR *= -(5.0 / 6.0) * scale
        return s, dR
    e = r2
    e *= -0.5
    np.exp(e, out=e)
    if scale != 1.0:
        e *= scale
    return e, -0.5 * e


def _corr_from_r2(r2, code):
    if code == 0:
        s = np.sqrt(5.0 * r2)
        e = np.exp(-s)
        return (1.0 + s + s * s / 3.0) * e, -(5.0 / 6.0) * (1.0 + s) * e
    e = np.exp(-0.5 * r2)
    return e, -0.5 * e


def kappa(r2, family="matern52"):
    """Correlation and its ``r2``-derivative as functions of the squared ARD distance."""
    _check_family(family)
    return _corr_from_r2(np.asarray(r2, dtype=float), _FAMILY_CODE[family])


def _contract_np(W, A, B, inv_ls2):
    diff = B[None, :, :] - A[:, None, :]
    g_ls = -2.0 * inv_ls2 * np.einsum("ij,ijk->k", W, diff * diff)
    gB = 2.0 * inv_ls2 * np.einsum("ij,ijk->jk", W, diff)
    return g_ls, gB


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def correlation(A, B, lengthscales, family="matern52", with_deriv=False, scale=1.0):
    """Correlation matrix ``R[i, j] = kappa(r2(A_i, B_j))``, times ``scale``.

    With ``with_deriv`` also return ``scale * dkappa/dr2`` elementwise, which
    :func:`contract` consumes.
    """
    _check_family(family)
    ls = np.asarray(lengthscales, dtype=float)
    A = _as_points(A, ls.size, "A")
    B = _as_points(B, ls.size, "B")
    code = _FAMILY_CODE[family]
    if USE_NUMBA:
        r2 = _sqdist_nb(np.ascontiguousarray(A), np.ascontiguousarray(B), 1.0 / ls)
    else:
        r2 = _sqdist_np(A, B, 1.0 / ls)
    R, dR = _kappa_inplace(r2, code, float(scale))
    return (R, dR) if with_deriv else R


def contract(W, A, B, lengthscales):
    """Push ``W = G * dkappa/dr2`` through the squared-distance map.

    Returns ``(g_log_ls, g_B)``: the gradient of ``sum(G * kappa(r2(A, B)))``
    with respect to log-lengthscales and to the rows of ``B``. Scale ``W`` by
    the signal variance beforehand when ``G`` multiplies a covariance.
    """
    ls = np.asarray(lengthscales, dtype=float)
    inv_ls2 = 1.0 / (ls * ls)
    W = np.asarray(W, dtype=float)
    if USE_NUMBA:
        return _contract_nb(np.ascontiguousarray(W), np.ascontiguousarray(A), np.ascontiguousarray(B), inv_ls2)
    return _contract_np(W, np.asarray(A, dtype=float), np.asarray(B, dtype=float), inv_ls2)


def kernel_matrix(A, B, params, family="matern52"):
    """Covariance block ``signal_var * kappa(r2(A_i, B_j))``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.size == 0 or B.size == 0:
        raise ShapeError("kernel_matrix needs nonempty point sets")
    return correlation(A, B, params.lengthscales, family, scale=params.signal_var)


def kernel_eval(a, b, params, family="matern52"):
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != params.dim or b.size != params.dim:
        raise ShapeError(f"points of dimension {a.size}, {b.size} vs {params.dim} lengthscales")
    return float(kernel_matrix(a[None], b[None], params, family)[0, 0])


def kernel_grad(a, b, params, family="matern52"):
    """Gradient of :func:`kernel_eval` w.r.t. ``[log ls_1..log ls_d, log signal_var]``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != params.dim or b.size != params.dim:
        raise ShapeError(f"points of dimension {a.size}, {b.size} vs {params.dim} lengthscales")
    R, dR = correlation(a[None], b[None], params.lengthscales, family, with_deriv=True)
    g_ls, _ = contract(params.signal_var * dR, a[None], b[None], params.lengthscales)
    return np.concatenate([g_ls, [params.signal_var * R[0, 0]]])


def cholesky_with_jitter(M, base_jitter=1e-6, max_tries=5):
    """Lower Cholesky factor of ``M + j I`` for the smallest working ``j``.

    ``j`` runs over ``0, base * mean(diag), ..., base * mean(diag) * 10**(max_tries - 1)``.
    Returns ``(L, j)``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefiniteError("matrix has non-finite entries")
    scale = np.mean(np.diag(M))
    if not scale > 0:
        scale = 1.0
    levels = [0.0] + [base_jitter * scale * 10.0**k for k in range(max_tries)]
    eye = np.eye(M.shape[0])
    for j in levels:
        try:
            L = scipy.linalg.cholesky(M + j * eye if j else M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) > 0):
            return L, j
    raise NotPositiveDefiniteError(f"not positive definite up to jitter {levels[-1]:.3g}")
