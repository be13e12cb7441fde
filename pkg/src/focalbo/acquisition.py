"""EI / PI / UCB / Thompson sampling and their optimizers inside a search region."""
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .region import region_bounds
from .svgp import posterior_sample
from .train import AdamState, TrainConfig, adam_step, sobol_in_box

KINDS = ("EI", "PI", "UCB", "TS")
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class AcquisitionSpec:
    kind: str = "TS"
    y_best: float = 0.0
    beta: float = 2.0
    n_candidates: int = 2048
    restarts: int = 10
    steps: int = 100

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown acquisition {self.kind!r}; expected one of {KINDS}")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if min(self.n_candidates, self.restarts, self.steps) < 1:
            raise ValueError("candidate, restart and step counts must be >= 1")

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class Proposal:
    point: np.ndarray
    value: float
    depth: int = 1
    model_id: int = 0


class CandidateResult(NamedTuple):
    proposals: list
    degenerate: bool


def acq_value(spec, mu, s):
    """Closed-form EI, PI or UCB (maximization). ``s == 0`` takes the limiting value."""
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("posterior std must be nonnegative")
    if spec.kind == "UCB":
        return mu + np.sqrt(spec.beta) * s
    if spec.kind == "TS":
        raise ValueError("Thompson sampling has no closed-form value")
    imp = mu - spec.y_best
    pos = s > 0
    with np.errstate(over="ignore"):  # subnormal s: z -> +-inf gives the right limit
        z = np.where(pos, imp / np.where(pos, s, 1.0), 0.0)
        if spec.kind == "PI":
            return np.where(pos, ndtr(z), (imp > 0).astype(float))
        ei = imp * ndtr(z) + s * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return np.where(pos, ei, np.maximum(imp, 0.0))


def _analytic(model, spec, X):
    post = model.posterior(X, full_cov=False)
    return acq_value(spec, post.mean, post.std)


def _dedupe(points, values, radius):
    keep = []
    for i in np.argsort(-values, kind="stable"):
        if all(np.max(np.abs(points[i] - points[j])) > radius for j in keep):
            keep.append(i)
    return keep


def optimize_candidates(model, region, spec, B, rng):
    """Return ``B`` proposals inside ``region``.

    TS draws ``B`` joint posterior samples over Sobol candidates and keeps
    each sample's argmax. EI/PI/UCB start projected gradient ascent
    (finite-difference gradients) from the best candidates and keep the top
    ``B`` distinct maximizers.
    """
    lower, upper = region_bounds(region)
    width = upper - lower
    skip = int(rng.integers(0, 2**20))
    cand = sobol_in_box(lower, upper, spec.n_candidates, skip)
    cand = np.clip(cand, lower, upper)

    if spec.kind == "TS":
        post = model.posterior(cand)
        degenerate = bool(np.max(post.var) <= 1e-12)
        if degenerate:
            order = np.argsort(-post.mean, kind="stable")[:B]
            return CandidateResult([Proposal(cand[i].copy(), float(post.mean[i])) for i in order], True)
        samples = posterior_sample(post, count=B, rng=rng)
        idx = np.argmax(samples, axis=1)
        props = [Proposal(cand[i].copy(), float(samples[b, i])) for b, i in enumerate(idx)]
        return CandidateResult(props, False)

    post = model.posterior(cand, full_cov=False)
    std = post.std
    degenerate = bool(np.max(std) <= 1e-12)
    if degenerate:
        vals = post.mean
    else:
        vals = acq_value(spec, post.mean, std)
    order = np.argsort(-vals, kind="stable")
    if degenerate or np.all(width <= 1e-9):
        keep = _dedupe(cand, vals, 1e-3)[:B]
        keep += [i for i in order if i not in keep][: B - len(keep)]
        return CandidateResult([Proposal(cand[i].copy(), float(vals[i])) for i in keep], degenerate)

    starts = cand[order[: spec.restarts]].copy()
    x_opt, v_opt = _gradient_ascent(model, spec, starts, lower, upper)
    pts = np.vstack([x_opt, cand[order[: max(B, spec.restarts)]]])
    pvals = np.concatenate([v_opt, vals[order[: max(B, spec.restarts)]]])
    keep = _dedupe(pts, pvals, 1e-3)[:B]
    if len(keep) < B:
        extra = [i for i in order if all(np.max(np.abs(cand[i] - pts[k])) > 0 for k in keep)]
        props = [Proposal(pts[k].copy(), float(pvals[k])) for k in keep]
        props += [Proposal(cand[i].copy(), float(vals[i])) for i in extra[: B - len(keep)]]
        return CandidateResult(props, False)
    return CandidateResult([Proposal(pts[k].copy(), float(pvals[k])) for k in keep], False)


def _gradient_ascent(model, spec, starts, lower, upper):
    """Projected Adam ascent on the acquisition with forward-difference gradients."""
    R, d = starts.shape
    width = np.maximum(upper - lower, 1e-12)
    h = 1e-6 * width
    cfg = TrainConfig(epochs=1, lr=0.02)
    x = starts.copy()
    best_x = x.copy()
    best_v = np.full(R, -np.inf)
    state = AdamState.zeros(R * d)
    eye = np.eye(d)
    for _ in range(spec.steps):
        probe = np.concatenate([x[:, None, :], x[:, None, :] + h * eye[None]], axis=1)
        # step backwards at the upper face so probes stay inside the box
        at_top = x + h > upper
        sign = np.where(at_top, -1.0, 1.0)
        probe[:, 1:, :] = x[:, None, :] + (sign * h)[:, None, :] * eye[None]
        vals = _analytic(model, spec, probe.reshape(-1, d)).reshape(R, d + 1)
        v0 = vals[:, 0]
        better = v0 > best_v
        best_v = np.where(better, v0, best_v)
        best_x[better] = x[better]
        grad = sign * (vals[:, 1:] - v0[:, None]) / h
        # scale to unit-box coordinates so the step size is region-relative
        step_grad = -(grad * width).ravel()
        if not np.all(np.isfinite(step_grad)):
            break
        z, state = adam_step(((x - lower) / width).ravel(), step_grad, state, cfg)
        x = np.clip(lower + z.reshape(R, d) * width, lower, upper)
    v_last = _analytic(model, spec, x)
    better = v_last > best_v
    best_v = np.where(better, v_last, best_v)
    best_x[better] = x[better]
    return best_x, best_v


def softmax_select(proposals, B, rng):
    """Draw ``B`` proposals with replacement, ``P(i) ~ exp(a_i - max a)``."""
    if len(proposals) < 1:
        raise ValueError("softmax_select needs at least one proposal")
    a = np.array([p.value for p in proposals], dtype=float)
    p = np.exp(a - np.max(a))
    p /= p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    u = rng.random(B)
    idx = np.searchsorted(cdf, u, side="right")
    return [proposals[i] for i in np.minimum(idx, len(proposals) - 1)]
