"""Sparse variational GP with the standard and the focalized ELBO.

Models store ``q(u) = N(mean, chol @ chol.T)`` over the function values at
the inducing inputs ``Z``. The trainer works in whitened coordinates
``u = Lz v`` with ``Lz = chol(Kzz)``, which keeps Adam well conditioned when
the inducing points are strongly correlated. All gradients are analytic.

Parameter vector layout used by the trainer (``d`` inputs, ``m`` inducing)::

    [log ls (d), log signal_var, log noise_var, Z (m*d), white mean (m), tril(white chol) (m(m+1)/2)]

with the diagonal of the whitened Cholesky factor stored as its logarithm.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._accel import USE_NUMBA, njit
from .data import Dataset, PosteriorGaussian
from .errors import ShapeError, TrainingDivergedError
from .kernels import KernelParams, cholesky_with_jitter, contract, correlation, kernel_matrix
from .region import SearchRegion, count_in_region, nearest_point_in_region, region_bounds, weights_from_offsets
from .train import AdamState, TrainConfig, TrainReport, adam_step, clamp_log_params, seeded_rng, sobol_in_box

_LOG2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class VariationalState:
    Z: np.ndarray
    mean: np.ndarray
    chol: np.ndarray

    def __post_init__(self):
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        mean = np.asarray(self.mean, dtype=float).ravel()
        chol = np.tril(np.atleast_2d(np.asarray(self.chol, dtype=float)))
        m = Z.shape[0]
        if m < 1 or mean.shape != (m,) or chol.shape != (m, m):
            raise ShapeError(f"inconsistent variational state: Z {Z.shape}, mean {mean.shape}, chol {chol.shape}")
        if np.any(np.diag(chol) <= 0):
            raise ValueError("variational Cholesky factor needs a positive diagonal")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "chol", chol)

    @property
    def m(self):
        return self.Z.shape[0]

    @property
    def S(self):
        return self.chol @ self.chol.T


@dataclass(frozen=True)
class SparseGPModel:
    params: KernelParams
    family: str
    state: VariationalState
    data: Dataset | None = field(default=None, repr=False)
    region: SearchRegion | None = None
    kzz_jitter: float = 0.0  # fixed relative diagonal on Kzz; trained models use KZZ_JITTER

    def __post_init__(self):
        if self.state.Z.shape[1] != self.params.dim:
            raise ShapeError("inducing inputs and lengthscales disagree in dimension")
        if self.data is not None and self.data.dim != self.params.dim:
            raise ShapeError("data and lengthscales disagree in dimension")

    @property
    def noise_var(self):
        return self.params.noise_var

    def posterior(self, Xs, full_cov=True):
        return sparse_posterior(self, Xs, full_cov)


# ---------------------------------------------------------------------------
# parameter packing
# ---------------------------------------------------------------------------

class Layout:
    """Index bookkeeping for the flat parameter vector and the whitening map."""

    def __init__(self, d, m, family="matern52", jitter=0.0):
        self.d, self.m, self.family, self.jitter = d, m, family, jitter
        self.n_hyp = d + 2
        self.z = slice(self.n_hyp, self.n_hyp + m * d)
        self.mu = slice(self.z.stop, self.z.stop + m)
        self.tril = np.tril_indices(m)
        self.L = slice(self.mu.stop, self.mu.stop + self.tril[0].size)
        self.diag_pos = np.flatnonzero(self.tril[0] == self.tril[1])
        self.size = self.L.stop

    def pack(self, params, state):
        Lz, _ = _kzz_factor(state.Z, params, self.family, self.jitter)
        white_mean = scipy.linalg.solve_triangular(Lz, state.mean, lower=True, check_finite=False)
        white_chol = scipy.linalg.solve_triangular(Lz, state.chol, lower=True, check_finite=False)
        Lvals = white_chol[self.tril].copy()
        Lvals[self.diag_pos] = np.log(Lvals[self.diag_pos])
        return np.concatenate([params.to_log(), state.Z.ravel(), white_mean, Lvals])

    def unpack_arrays(self, theta):
        d, m = self.d, self.m
        ls = np.exp(theta[:d])
        sf2 = np.exp(theta[d])
        noise = np.exp(theta[d + 1])
        Z = theta[self.z].reshape(m, d)
        mu = theta[self.mu]
        Lvals = theta[self.L].copy()
        Lvals[self.diag_pos] = np.exp(Lvals[self.diag_pos])
        Ls = np.zeros((m, m))
        Ls[self.tril] = Lvals
        return ls, sf2, noise, Z, mu, Ls

    def unpack(self, theta):
        """``(KernelParams, VariationalState)`` with the state mapped back to unwhitened form."""
        ls, sf2, noise, Z, wm, Lw = self.unpack_arrays(theta)
        params = KernelParams(ls, sf2, noise)
        Lz, _ = _kzz_factor(Z, params, self.family, self.jitter)
        return params, VariationalState(Z.copy(), Lz @ wm, Lz @ Lw)

    def split_grad(self, grad):
        """Readable view of a flat gradient (whitened chol entries, log-diagonal coordinates)."""
        G = np.zeros((self.m, self.m))
        G[self.tril] = grad[self.L]
        return {
            "log_lengthscales": grad[: self.d],
            "log_signal_var": grad[self.d],
            "log_noise_var": grad[self.d + 1],
            "Z": grad[self.z].reshape(self.m, self.d),
            "mean": grad[self.mu],
            "chol": G,
        }


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

# trained models use Kzz = sf2 (Rzz + KZZ_JITTER I), which keeps the whitening
# map well conditioned when inducing points drift together
KZZ_JITTER = 1e-6


def _kzz_factor(Z, params, family, jitter=0.0):
    Kzz = kernel_matrix(Z, Z, params, family)
    Kzz[np.diag_indices_from(Kzz)] += jitter * params.signal_var
    return cholesky_with_jitter(Kzz)


def sparse_posterior(model, Xs, full_cov=True):
    """``q(f(Xs))``: mean ``A^T m``, cov ``Kss - A^T (Kzz - S) A`` with ``A = Kzz^-1 Kzs``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    st, p = model.state, model.params
    Lz, _ = _kzz_factor(st.Z, p, model.family, model.kzz_jitter)
    Kzs = kernel_matrix(st.Z, Xs, p, model.family)
    V = scipy.linalg.solve_triangular(Lz, Kzs, lower=True, check_finite=False)
    A = scipy.linalg.solve_triangular(Lz.T, V, lower=False, check_finite=False)
    mean = A.T @ st.mean
    W = st.chol.T @ A
    if full_cov:
        cov = kernel_matrix(Xs, Xs, p, model.family) - V.T @ V + W.T @ W
        cov = 0.5 * (cov + cov.T)
    else:
        cov = p.signal_var - np.einsum("ij,ij->j", V, V) + np.einsum("ij,ij->j", W, W)
    return PosteriorGaussian(mean, cov, Xs)


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _cross_weights_nb(g, alpha, h, KC, K, dK):
    n, m = KC.shape
    W = np.empty((n, m))
    rows = np.zeros(n)
    cols = np.zeros(m)
    g_sf = 0.0
    for i in range(n):
        gi = g[i]
        hi = 2.0 * h[i]
        acc = 0.0
        for j in range(m):
            G = gi * alpha[j] - hi * KC[i, j]
            g_sf += G * K[i, j]
            w = G * dK[i, j]
            W[i, j] = w
            acc += w
            cols[j] += w
        rows[i] = acc
    return W, rows, cols, g_sf


def _cross_grad(X, Z, ls, g, alpha, h, KC, K, dK):
    """Gradients through ``Kxz`` given ``dValue/dKxz = g alpha^T - 2 diag(h) KC``.

    ``K`` and ``dK`` are the covariance block and its ``r2``-derivative.
    Returns ``(g_log_ls, g_Z, g_log_signal_var)``.
    """
    if USE_NUMBA:
        W, rows, cols, g_sf = _cross_weights_nb(g, alpha, h, KC, K, dK)
    else:
        G = np.outer(g, alpha)
        G -= 2.0 * h[:, None] * KC
        g_sf = np.sum(G * K)
        W = G
        W *= dK
        rows = W.sum(axis=1)
        cols = W.sum(axis=0)
    # sum_ij W_ij (z_j - x_i)^2 expanded so the contractions run through BLAS
    inv_ls2 = 1.0 / (ls * ls)
    WZ = W @ Z
    g_ls = -2.0 * inv_ls2 * (rows @ (X * X) - 2.0 * np.einsum("ik,ik->k", X, WZ) + cols @ (Z * Z))
    gZ = 2.0 * inv_ls2 * (cols[:, None] * Z - W.T @ X)
    return g_ls, gZ, g_sf


def _reflect_unit(z):
    """Fold values back into [0, 1]; unlike clipping this never stacks points on a face."""
    z = np.mod(z, 2.0)
    return np.where(z > 1.0, 2.0 - z, z)


def _chol_backward(L, L_bar):
    """Gradient w.r.t. ``A`` given the gradient w.r.t. ``L = chol(A)`` (lower-triangular ``L_bar``)."""
    P = np.tril(L.T @ L_bar)
    P[np.diag_indices_from(P)] *= 0.5
    Y = scipy.linalg.solve_triangular(L, P.T, lower=True, trans="T", check_finite=False).T
    return scipy.linalg.solve_triangular(L, Y, lower=True, trans="T", check_finite=False)


class _Focus:
    """Parameter-free pieces of the focalized terms, computed once per training run."""

    def __init__(self, region, X_all, regularize=True):
        self.region = region
        self.offsets = X_all - nearest_point_in_region(X_all, region)
        self.n_in = max(count_in_region(X_all, region), 1)
        self.regularize = regularize


def _objective(theta, layout, Xb, yb, n_total, family, focus=None, off_b=None, need_grad=True):
    """ELBO value and flat gradient.

    ``focus=None`` gives the standard ELBO. Otherwise each batch term is
    weighted by its focal weight (``off_b``: batch offsets to the region,
    defaulting to the full-data offsets) and, if ``focus.regularize``, the
    weight-sum penalty over all data is subtracted.
    """
    ls, sf2, noise, Z, wm, Lw = layout.unpack_arrays(theta)
    m, d = Z.shape
    nb = Xb.shape[0]
    scale = n_total / nb
    eye = np.eye(m)

    Rzz, dRzz = correlation(Z, Z, ls, family, with_deriv=True)
    Kzz = sf2 * Rzz
    Kzz[np.diag_indices(m)] += layout.jitter * sf2
    Lz, jit = cholesky_with_jitter(Kzz)
    mu = Lz @ wm
    Ls = Lz @ Lw
    Binv = scipy.linalg.cho_solve((Lz, True), eye, check_finite=False)
    Binv = 0.5 * (Binv + Binv.T)
    Kxz, dKxz = correlation(Xb, Z, ls, family, with_deriv=True, scale=sf2)

    alpha = Binv @ mu
    fmean = Kxz @ alpha
    S = Ls @ Ls.T
    BS = Binv @ S
    C = Binv - BS @ Binv
    KC = Kxz @ C
    v = sf2 - np.einsum("ij,ij->i", KC, Kxz)
    resid = yb - fmean
    ell = -0.5 * (_LOG2PI + np.log(noise)) - 0.5 * (resid * resid + v) / noise

    reg = 0.0
    if focus is None:
        wb = np.ones(nb)
    else:
        full = off_b is None
        wb, dwb = weights_from_offsets(focus.offsets if full else off_b, ls, family)
        if focus.regularize:
            wa, dwa = (wb, dwb) if full else weights_from_offsets(focus.offsets, ls, family)
            reg = np.sum(wa) / focus.n_in - 1.0
    c = wb * scale
    F = np.dot(c, ell)

    LzinvLs = scipy.linalg.solve_triangular(Lz, Ls, lower=True, check_finite=False)
    kl = 0.5 * (
        np.sum(LzinvLs * LzinvLs) + mu @ alpha - m
        + 2.0 * np.sum(np.log(np.diag(Lz))) - 2.0 * np.sum(np.log(np.diag(Ls)))
    )
    value = F - kl - reg
    if not need_grad:
        return value, None

    g = c * resid / noise
    h = -0.5 * c / noise
    # A diag(h) A^T with A = Kzz^-1 Kzx
    G_S = Binv @ (Kxz.T @ (h[:, None] * Kxz)) @ Binv
    G_S = 0.5 * (G_S + G_S.T)
    Atg = Binv @ (Kxz.T @ g)
    g_mu = Atg - alpha
    G_Ls = 2.0 * G_S @ Ls - Binv @ Ls
    G_Ls[np.diag_indices(m)] += 1.0 / np.diag(Ls)

    # dValue/dKxz = g alpha^T - 2 diag(h) Kxz C, contracted without materializing
    g_ls_xz, gZ_xz, g_sf_xz = _cross_grad(Xb, Z, ls, g, alpha, h, KC, Kxz, dKxz)
    BSG = BS @ G_S
    G_zz = (
        -np.outer(Atg, alpha) + G_S - BSG - BSG.T
        - 0.5 * (C - np.outer(alpha, alpha))
    )
    # whitening: mean = Lz wm and chol = Lz Lw also move with Kzz
    G_zz += _chol_backward(Lz, np.tril(np.outer(g_mu, wm) + G_Ls @ Lw.T))
    g_ls_zz2, gZ_zz = contract(sf2 * (G_zz + G_zz.T) * dRzz, Z, Z, ls)
    g_ls = g_ls_xz + 0.5 * g_ls_zz2
    g_sf = g_sf_xz + np.sum(G_zz * Kzz) + jit * np.trace(G_zz) + sf2 * np.sum(h)
    g_noise = np.sum(c * (-0.5 + 0.5 * (resid * resid + v) / noise))
    if focus is not None:
        g_ls = g_ls + (scale * ell) @ dwb
        if focus.regularize:
            g_ls = g_ls - np.sum(dwa, axis=0) / focus.n_in

    grad = np.empty(layout.size)
    grad[:d] = g_ls
    grad[d] = g_sf
    grad[d + 1] = g_noise
    grad[layout.z] = (gZ_xz + gZ_zz).ravel()
    grad[layout.mu] = Lz.T @ g_mu
    gL = (Lz.T @ G_Ls)[layout.tril]
    gL[layout.diag_pos] *= np.diag(Lw)
    grad[layout.L] = gL
    return value, grad


def _batch_args(model, batch, n_total):
    data = batch if batch is not None else model.data
    if data is None or data.n == 0:
        raise ValueError("ELBO needs a nonempty batch")
    n_total = data.n if n_total is None else n_total
    return data, n_total


def elbo_standard(model, batch=None, n_total=None, with_grad=False):
    """Minibatch ELBO ``(n_total/|batch|) sum E_q[log p(y|f)] - KL[q(u)||p(u)]``.

    With ``with_grad`` returns ``(value, flat_grad)`` in :class:`Layout` order.
    """
    data, n_total = _batch_args(model, batch, n_total)
    layout = Layout(model.params.dim, model.state.m, model.family, model.kzz_jitter)
    theta = layout.pack(model.params, model.state)
    value, grad = _objective(theta, layout, data.X, data.y, n_total, model.family, need_grad=with_grad)
    _check_finite(value)
    return (value, grad) if with_grad else value


def elbo_focalized(model, batch=None, n_total=None, region=None, X_all=None, regularize=True, with_grad=False):
    """Region-weighted ELBO minus the weight-sum regularizer (computed over ``X_all``).

    ``X_all`` defaults to the model's reference data, then to the batch.
    """
    data, n_total = _batch_args(model, batch, n_total)
    if region is None:
        region = model.region if model.region is not None else SearchRegion.full(model.params.dim)
    if X_all is None:
        X_all = model.data.X if model.data is not None else data.X
    layout = Layout(model.params.dim, model.state.m, model.family, model.kzz_jitter)
    theta = layout.pack(model.params, model.state)
    focus = _Focus(region, np.atleast_2d(np.asarray(X_all, dtype=float)), regularize)
    off_b = data.X - nearest_point_in_region(data.X, region)
    value, grad = _objective(theta, layout, data.X, data.y, n_total, model.family, focus, off_b, need_grad=with_grad)
    _check_finite(value)
    return (value, grad) if with_grad else value


def _check_finite(value, epoch=None):
    if not np.isfinite(value):
        raise TrainingDivergedError("non-finite ELBO", epoch=epoch)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def initial_state(Z, params, family, jitter=0.0):
    """Prior-matching ``q(u)``: zero mean, ``S = Kzz``."""
    Lz, _ = _kzz_factor(Z, params, family, jitter)
    return VariationalState(Z, np.zeros(Z.shape[0]), Lz)


def init_inducing(region, m):
    lower, upper = region_bounds(region)
    return sobol_in_box(lower, upper, m)


def train_sparse(
    data,
    region=None,
    config=TrainConfig(),
    seed=0,
    m=50,
    family="matern52",
    init=None,
    Z=None,
    focal=True,
    regularize=True,
    counter=None,
    fix_inducing=False,
    fix_hyper=False,
):
    """Fit hyperparameters and ``q(u)`` jointly by Adam.

    ``region=None`` (or ``focal=False``) trains on the standard ELBO. Inducing
    inputs default to ``m`` Sobol points inside the region. ``fix_inducing`` /
    ``fix_hyper`` hold ``Z`` / the kernel hyperparameters at their initial
    values. Returns ``(model, TrainReport)``; same inputs and seed give
    identical results.
    """
    d = data.dim
    if region is None:
        region = SearchRegion.full(d)
    if Z is None:
        if data.n < m:
            raise ValueError(f"need at least m={m} points, got {data.n}")
        Z = init_inducing(region, m)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    # standardized targets: unit signal, noise a tenth of it
    params = init if init is not None else KernelParams(np.full(d, 0.2), 1.0, 0.1)
    state = initial_state(Z, params, family, KZZ_JITTER)
    layout = Layout(d, Z.shape[0], family, KZZ_JITTER)
    theta = layout.pack(params, state)
    focus = _Focus(region, data.X, regularize) if focal else None

    rng = seeded_rng(seed, 7)
    n = data.n
    bs = config.resolve_batch(n)
    adam = AdamState.zeros(theta.size)
    frozen = np.zeros(theta.size, dtype=bool)
    frozen[:d + 2] = fix_hyper
    frozen[layout.z] = fix_inducing
    trace = np.empty(config.epochs + 1)
    for epoch in range(config.epochs):
        order = rng.permutation(n) if bs < n else None
        total = 0.0
        for start in range(0, n, bs):
            if order is None:
                Xb, yb = data.X, data.y
            else:
                idx = order[start:start + bs]
                Xb, yb = data.X[idx], data.y[idx]
            try:
                off_b = None if (focus is None or order is None) else focus.offsets[idx]
                value, grad = _objective(theta, layout, Xb, yb, n, family, focus, off_b)
            except np.linalg.LinAlgError as exc:
                raise TrainingDivergedError(f"factorization failed: {exc}", epoch=epoch) from exc
            if counter is not None:
                counter.record(Xb.shape[0], layout.m)
            if not (np.isfinite(value) and np.all(np.isfinite(grad))):
                raise TrainingDivergedError("non-finite ELBO or gradient", epoch=epoch)
            total += value * Xb.shape[0] / n
            grad[frozen] = 0.0
            theta, adam = adam_step(theta, -grad, adam, config)
            clamp_log_params(theta, d)
            theta[layout.z] = _reflect_unit(theta[layout.z])
        trace[epoch] = total
    final, _ = _objective(theta, layout, data.X, data.y, n, family, focus, need_grad=False)
    _check_finite(final, config.epochs)
    trace[-1] = final
    params, state = layout.unpack(theta)
    return SparseGPModel(params, family, state, data, region, KZZ_JITTER), TrainReport(trace, config.epochs)


class OpCounter:
    """Counts objective evaluations and the size of their kernel blocks."""

    def __init__(self):
        self.calls = 0
        self.kernel_entries = 0
        self.cubic = 0

    def record(self, nb, m):
        self.calls += 1
        self.kernel_entries += nb * m + m * m
        self.cubic += m**3


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def posterior_sample(model_or_posterior, Xs=None, count=1, seed=0, rng=None):
    """Joint posterior draws, shape ``(count, len(Xs))``."""
    post = model_or_posterior
    if not isinstance(post, PosteriorGaussian):
        post = model_or_posterior.posterior(Xs)
    if post.mean.size < 1:
        raise ValueError("need at least one point to sample")
    rng = rng if rng is not None else seeded_rng(seed)
    eps = rng.standard_normal((count, post.mean.size))
    if post.is_diagonal:
        return post.mean[None, :] + eps * post.std[None, :]
    if not np.any(post.cov):
        return np.repeat(post.mean[None, :], count, axis=0)
    L, _ = cholesky_with_jitter(post.cov, base_jitter=1e-6)
    return post.mean[None, :] + eps @ L.T
