"""FocalAcq (hierarchical acquisition over halved regions) and the FocalBO outer loop."""
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionSpec, optimize_candidates, softmax_select
from .bench import evaluate
from .data import standardize
from .errors import ObjectiveEvaluationError, TrainingDivergedError
from .exact_gp import fit_exact
from .region import SearchRegion, region_bounds
from .svgp import train_sparse
from .train import TrainConfig, seeded_rng, sobol_points
from .turbo import TrustRegionState, restart_state, tr_region, tr_update

# deepest region side is 2^-(cap-1) ~ 1e-3 of the domain
DEFAULT_MAX_DEPTH = math.ceil(math.log2(1e3))

# RNG purposes inside one (iteration, depth, attempt) key
_ACQ, _SELECT, _NOISE, _RESTART = 1, 2, 3, 4


@dataclass(frozen=True)
class FocalConfig:
    m: int = 50
    batch_size: int = 10
    acq: AcquisitionSpec = field(default_factory=AcquisitionSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    max_depth: int = DEFAULT_MAX_DEPTH
    family: str = "matern52"
    adaptive_depth: bool = True  # False pins H at 1
    focal_elbo: bool = True  # False trains on the standard ELBO
    regularize: bool = True
    model: str = "sparse"  # or "exact"
    turbo: bool = False
    depth_workers: int = 1

    def __post_init__(self):
        if self.m < 1 or self.batch_size < 1:
            raise ValueError("m and batch_size must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.model not in ("sparse", "exact"):
            raise ValueError(f"unknown model {self.model!r}")


@dataclass(frozen=True)
class DepthArtifact:
    depth: int
    region: SearchRegion
    proposals: list
    train_objective: float
    lengthscales: np.ndarray
    degenerate: bool


@dataclass(frozen=True)
class FocalAcqResult:
    selected: list
    depths: list

    @property
    def points(self):
        return np.array([p.point for p in self.selected])

    @property
    def labels(self):
        return np.array([p.depth for p in self.selected], dtype=int)


def _train_seed(seed, iteration, depth, attempt):
    return int(np.random.SeedSequence([seed, iteration, depth, attempt]).generate_state(1)[0])


def _fit(data, region, config, seed):
    if config.model == "exact":
        return fit_exact(data, config.train, config.family)
    return train_sparse(
        data, region, config.train, seed=seed, m=config.m, family=config.family,
        focal=config.focal_elbo, regularize=config.regularize,
    )


def focal_acq(data, H, config, seed=0, iteration=0, attempt=0, base_region=None):
    """One FocalAcq call: ``H`` models on halving regions, ``B`` softmax-selected points.

    Depth 1 uses ``base_region`` (default: the whole cube); depth ``h > 1``
    uses a region of half the previous side centred on the incumbent.
    """
    if H < 1:
        raise ValueError("depth must be >= 1")
    if data.n < 1:
        raise ValueError("focal_acq needs data")
    std_data, _ = standardize(data)
    x_best, _ = data.best()
    spec = config.acq.with_(y_best=float(np.max(std_data.y)))
    regions = [base_region if base_region is not None else SearchRegion.full(data.dim)]
    for _ in range(1, H):
        regions.append(regions[-1].halved(x_best))

    def run_depth(h):
        region = regions[h - 1]
        try:
            model, report = _fit(std_data, region, config, _train_seed(seed, iteration, h, attempt))
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(f"depth {h} training diverged: {exc}", epoch=exc.epoch, depth=h) from exc
        rng = seeded_rng(seed, (iteration, h, attempt, _ACQ))
        res = optimize_candidates(model, region, spec, config.batch_size, rng)
        props = [replace(p, depth=h, model_id=h) for p in res.proposals]
        return DepthArtifact(h, region, props, report.final, model.params.lengthscales, res.degenerate)

    if config.depth_workers > 1 and H > 1:
        with ThreadPoolExecutor(config.depth_workers) as pool:
            artifacts = list(pool.map(run_depth, range(1, H + 1)))
    else:
        artifacts = [run_depth(h) for h in range(1, H + 1)]
    pool_props = [p for a in artifacts for p in a.proposals]
    selected = softmax_select(pool_props, config.batch_size, seeded_rng(seed, (iteration, 0, attempt, _SELECT)))
    return FocalAcqResult(selected, artifacts)


def update_depth(H, labels, ys, cap=DEFAULT_MAX_DEPTH):
    """Depth controller: shrink if the batch winner came from a shallower depth, else grow.

    Ties on the batch maximum go to the smallest depth label. At the cap the
    depth reflects to ``cap - 1`` so every step changes ``H`` by one.
    """
    labels = np.asarray(labels, dtype=int)
    ys = np.asarray(ys, dtype=float)
    if labels.size == 0 or labels.shape != ys.shape:
        raise ValueError("labels and observations must be nonempty and aligned")
    if np.any(labels < 1) or np.any(labels > H):
        raise ValueError(f"depth labels must lie in [1, {H}]")
    h_star = int(np.min(labels[ys == np.max(ys)]))
    if h_star < H:
        return max(1, H - 1)
    if H < cap:
        return H + 1
    return max(1, cap - 1)


@dataclass
class IterationRecord:
    iteration: int
    H_before: int
    H_after: int
    points: np.ndarray
    depths: np.ndarray
    y: np.ndarray
    best_so_far: np.ndarray  # running incumbent after each point of the batch
    proposals: list  # per depth: (depth, points, values)
    train_objectives: list
    regions: list  # per depth: (lower, upper)
    degenerate: list
    wall_ms: float = 0.0
    failures: list = field(default_factory=list)
    tr_length: float | None = None
    restart: bool = False


@dataclass
class RunTrace:
    dim: int
    batch_size: int
    seed: int
    initial_best: float
    records: list = field(default_factory=list)
    adaptive_depth: bool = True
    max_depth: int = DEFAULT_MAX_DEPTH
    config: dict = field(default_factory=dict)
    version: str = ""

    @property
    def incumbents(self):
        """Best value after each iteration, starting with the offline incumbent."""
        return np.array([self.initial_best] + [float(r.best_so_far[-1]) for r in self.records])

    @property
    def final_best(self):
        return float(self.incumbents[-1])

    @property
    def wall_ms(self):
        return np.array([r.wall_ms for r in self.records])


def run_focalbo(objective, initial, budget, config=FocalConfig(), seed=0, on_iteration=None):
    """Algorithm loop: ``budget / B`` rounds of FocalAcq, evaluate, update depth.

    A failed objective evaluation is retried once with fresh RNG sub-streams
    and then aborts with :class:`ObjectiveEvaluationError`.
    """
    B = config.batch_size
    if budget < 0 or budget % B:
        raise ValueError(f"budget {budget} must be a nonnegative multiple of batch size {B}")
    data = initial
    d = data.dim
    x_best, y_best = data.best()
    trace = RunTrace(d, B, seed, y_best, adaptive_depth=config.adaptive_depth, max_depth=config.max_depth)
    tr = TrustRegionState.initial(x_best, y_best, B, d) if config.turbo else None
    tr_ls = np.ones(d)
    H = 1
    for t in range(budget // B):
        t0 = time.perf_counter()
        failures = []
        for attempt in range(2):
            restart = tr is not None and tr.restart
            if restart:
                rng = seeded_rng(seed, (t, 0, attempt, _RESTART))
                X_new = sobol_points(d, B, skip=int(rng.integers(1, 2**20)))
                labels = np.ones(B, dtype=int)
                acq = FocalAcqResult([], [])
            else:
                base = tr_region(tr, tr_ls) if tr is not None else None
                acq = focal_acq(data, H, config, seed, t, attempt, base)
                X_new, labels = acq.points, acq.labels
            try:
                y_new = np.asarray(evaluate(objective, X_new, seeded_rng(seed, (t, 0, attempt, _NOISE))), dtype=float)
                if y_new.shape != (B,) or not np.all(np.isfinite(y_new)):
                    raise ObjectiveEvaluationError("objective returned non-finite or misshaped values")
                break
            except Exception as exc:  # noqa: BLE001 - any objective failure is retried once
                failures.append(f"{type(exc).__name__}: {exc}")
                if attempt == 1:
                    raise ObjectiveEvaluationError(f"iteration {t}: objective failed twice: {failures}") from exc
        H_before = H
        if config.adaptive_depth:
            H = update_depth(H, labels, y_new, config.max_depth)
        running = np.maximum.accumulate(np.concatenate([[y_best], y_new]))[1:]
        y_best = float(running[-1])
        data = data.append(X_new, y_new)

        if tr is not None:
            i = int(np.argmax(y_new))
            if restart:
                tr = restart_state(tr, X_new[i], y_new[i])
            else:
                improved = y_new[i] > tr.best_value + 1e-3 * abs(tr.best_value)
                better = y_new[i] > tr.best_value
                tr = tr_update(tr, improved, X_new[i] if better else None, y_new[i] if better else None)
            if acq.depths:
                tr_ls = acq.depths[0].lengthscales

        record = IterationRecord(
            iteration=t,
            H_before=H_before,
            H_after=H,
            points=X_new,
            depths=labels,
            y=y_new,
            best_so_far=running,
            proposals=[(a.depth, np.array([p.point for p in a.proposals]), np.array([p.value for p in a.proposals]))
                       for a in acq.depths],
            train_objectives=[a.train_objective for a in acq.depths],
            regions=[region_bounds(a.region) for a in acq.depths],
            degenerate=[a.degenerate for a in acq.depths],
            wall_ms=1e3 * (time.perf_counter() - t0),
            failures=failures,
            tr_length=None if tr is None else tr.length,
            restart=restart,
        )
        trace.records.append(record)
        if on_iteration is not None:
            on_iteration(record)
    return trace


@dataclass(frozen=True)
class DepthTrace:
    H: np.ndarray  # H_before of every iteration followed by the final H_after
    counts: np.ndarray  # (iterations, max_depth) selection counts per depth


def depth_trace(trace):
    if not trace.records:
        raise ValueError("empty trace")
    H = np.array([r.H_before for r in trace.records] + [trace.records[-1].H_after], dtype=int)
    width = max(trace.max_depth, int(max(r.depths.max() for r in trace.records)))
    counts = np.zeros((len(trace.records), width), dtype=int)
    for i, r in enumerate(trace.records):
        counts[i] = np.bincount(r.depths - 1, minlength=width)[:width]
    return DepthTrace(H, counts)


def replay_depths(trace):
    """Re-run the depth controller over the stored labels and observations."""
    H = [1]
    for r in trace.records:
        if trace.adaptive_depth:
            H.append(update_depth(H[-1], r.depths, r.y, trace.max_depth))
        else:
            H.append(H[-1])
    return np.array(H, dtype=int)
