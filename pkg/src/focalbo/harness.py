"""Experiment configs, run orchestration and CSV/JSON export."""
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import AcquisitionSpec
from .bench import make_objective, offline_dataset
from .data import Dataset, standardize
from .exact_gp import ExactGPModel, fit_exact
from .focal import DEFAULT_MAX_DEPTH, FocalConfig, IterationRecord, RunTrace, depth_trace, replay_depths, run_focalbo
from .metrics import predictive_nll, region_kl, rmse, with_noise
from .region import SearchRegion, region_bounds
from .svgp import train_sparse
from .train import TrainConfig, seeded_rng

log = logging.getLogger(__name__)

METHODS = ("focalbo", "svgp-bo", "exactgp-bo", "focalbo+turbo", "svgp+turbo")
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _check_keys(cls, raw, what):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown {what} keys: {unknown}")


def _train_config(overrides):
    unknown = sorted(set(overrides) - _TRAIN_KEYS)
    if unknown:
        raise ValueError(f"unknown train override keys: {unknown}")
    return TrainConfig(**overrides)


@dataclass(frozen=True)
class RunConfig:
    objective: str
    dim: int
    method: str = "focalbo"
    acquisition: str = "TS"
    offline_size: int = 2000
    budget: int = 500
    batch_size: int = 10
    m: int = 50
    seeds: list = field(default_factory=lambda: list(range(10)))
    output_dir: str = "runs"
    train: dict = field(default_factory=dict)
    noise_std: float = 0.0
    objective_seed: int = 0
    objective_lengthscale: float = 0.5
    sampler: str = "uniform"
    max_depth: int = DEFAULT_MAX_DEPTH
    regularize: bool = True
    beta: float = 2.0
    n_candidates: int = 2048
    record_wall_time: bool = False  # real timings in the trace CSV break byte-identical reruns
    workers: int | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.batch_size < 1 or self.budget < 0 or self.budget % self.batch_size:
            raise ValueError("budget must be a nonnegative multiple of batch_size")
        if self.m > self.offline_size:
            raise ValueError("m must not exceed offline_size")
        _train_config(self.train)
        object.__setattr__(self, "seeds", [int(s) for s in self.seeds])

    @classmethod
    def from_dict(cls, raw):
        _check_keys(cls, raw, "config")
        return cls(**raw)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self):
        return dataclasses.asdict(self)

    def with_(self, **kw):
        return dataclasses.replace(self, **kw)

    def config_hash(self):
        """Hash of everything that affects results (not paths or worker counts)."""
        d = self.to_dict()
        for k in ("output_dir", "workers", "seeds", "record_wall_time"):
            d.pop(k)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def focal_config(self):
        acq = AcquisitionSpec(kind=self.acquisition, beta=self.beta, n_candidates=self.n_candidates)
        common = dict(m=self.m, batch_size=self.batch_size, acq=acq, train=_train_config(self.train),
                      max_depth=self.max_depth, regularize=self.regularize)
        sparse_flat = dict(adaptive_depth=False, focal_elbo=False)
        per_method = {
            "focalbo": {},
            "svgp-bo": sparse_flat,
            "exactgp-bo": dict(sparse_flat, model="exact"),
            "focalbo+turbo": dict(turbo=True),
            "svgp+turbo": dict(sparse_flat, turbo=True),
        }
        return FocalConfig(**common, **per_method[self.method])

    def make_objective(self):
        return make_objective(self.objective, self.dim, self.noise_std, self.objective_seed,
                              self.objective_lengthscale)


# ---------------------------------------------------------------------------
# file helpers
# ---------------------------------------------------------------------------

def _fmt(v):
    """Shortest decimal that round-trips the float64."""
    return repr(float(v))


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _provenance(config_hash, seed):
    return f"# focalbo {__version__} config_hash={config_hash} seed={seed}\n"


def trace_columns(dim):
    return ["iteration", "batch_index", "depth"] + [f"x_{k}" for k in range(dim)] + [
        "y", "best_so_far", "H_before", "H_after", "wall_ms"]


def trace_csv(trace, config_hash="", record_wall_time=False):
    buf = io.StringIO()
    buf.write(_provenance(config_hash, trace.seed))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(trace_columns(trace.dim))
    for r in trace.records:
        wall = _fmt(r.wall_ms if record_wall_time else 0.0)
        for b in range(len(r.y)):
            w.writerow([r.iteration, b, int(r.depths[b])] + [_fmt(v) for v in r.points[b]]
                       + [_fmt(r.y[b]), _fmt(r.best_so_far[b]), r.H_before, r.H_after, wall])
    return buf.getvalue()


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def read_trace_csv(path, adaptive_depth=None, max_depth=DEFAULT_MAX_DEPTH, initial_best=None, seed=0):
    """Rebuild the depth-relevant parts of a :class:`RunTrace` from its CSV."""
    rows = _read_csv(path)
    if not rows:
        raise ValueError(f"{path}: empty trace")
    dim = sum(1 for k in rows[0] if k.startswith("x_"))
    by_iter = {}
    for row in rows:
        by_iter.setdefault(int(row["iteration"]), []).append(row)
    records = []
    for t in sorted(by_iter):
        rs = sorted(by_iter[t], key=lambda r: int(r["batch_index"]))
        records.append(IterationRecord(
            iteration=t,
            H_before=int(rs[0]["H_before"]),
            H_after=int(rs[0]["H_after"]),
            points=np.array([[float(r[f"x_{k}"]) for k in range(dim)] for r in rs]),
            depths=np.array([int(r["depth"]) for r in rs]),
            y=np.array([float(r["y"]) for r in rs]),
            best_so_far=np.array([float(r["best_so_far"]) for r in rs]),
            proposals=[], train_objectives=[], regions=[], degenerate=[],
            wall_ms=float(rs[0]["wall_ms"]),
        ))
    if adaptive_depth is None:
        adaptive_depth = any(r.H_before != 1 or r.H_after != 1 for r in records)
    initial_best = np.nan if initial_best is None else initial_best
    return RunTrace(dim, len(records[0].y), seed, initial_best, records, adaptive_depth, max_depth)


def dataset_csv(data):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x_{k}" for k in range(data.dim)] + ["y"])
    for x, y in zip(data.X, data.y):
        w.writerow([_fmt(v) for v in x] + [_fmt(y)])
    return buf.getvalue()


def read_dataset_csv(path):
    rows = _read_csv(path)
    dim = sum(1 for k in rows[0] if k.startswith("x_"))
    X = np.array([[float(r[f"x_{k}"]) for k in range(dim)] for r in rows])
    return Dataset(X, np.array([float(r["y"]) for r in rows]))


# ---------------------------------------------------------------------------
# BO experiments
# ---------------------------------------------------------------------------

def _paths(out_dir, cfg_hash, seed):
    stem = f"trace_{cfg_hash}_seed{seed}"
    return Path(out_dir) / f"{stem}.csv", Path(out_dir) / f"{stem}.json"


def run_seed(config, seed, out_dir=None, resume=False):
    """Run one seed, write its trace CSV and JSON summary, and return the summary dict."""
    out_dir = Path(out_dir or config.output_dir)
    cfg_hash = config.config_hash()
    csv_path, json_path = _paths(out_dir, cfg_hash, seed)
    if resume and json_path.exists() and csv_path.exists():
        summary = json.loads(json_path.read_text())
        if summary.get("status") == "ok" and summary.get("version") == __version__:
            return summary
    summary = {"config": config.to_dict(), "config_hash": cfg_hash, "seed": seed, "version": __version__}
    t0, c0 = time.perf_counter(), time.process_time()
    try:
        obj = config.make_objective()
        data = offline_dataset(obj, config.offline_size, config.sampler, seed)
        trace = run_focalbo(obj, data, config.budget, config.focal_config(), seed)
    except Exception as exc:  # noqa: BLE001 - recorded per seed, aggregate continues
        log.exception("seed %s failed", seed)
        summary.update(status="failed", error=f"{type(exc).__name__}: {exc}",
                       total_seconds=time.perf_counter() - t0)
        _atomic_write(json_path, json.dumps(summary, indent=1))
        return summary
    dt = depth_trace(trace) if trace.records else None
    summary.update(
        status="ok",
        total_seconds=time.perf_counter() - t0,
        cpu_seconds=time.process_time() - c0,
        initial_best=trace.initial_best,
        final_best=trace.final_best,
        incumbents=trace.incumbents.tolist(),
        wall_ms=trace.wall_ms.tolist(),
        H=dt.H.tolist() if dt else [1],
        adaptive_depth=trace.adaptive_depth,
        max_depth=trace.max_depth,
        failures=[r.failures for r in trace.records if r.failures],
        degenerate=[r.iteration for r in trace.records if any(r.degenerate)],
        tr_length=[r.tr_length for r in trace.records] if config.method.endswith("turbo") else None,
    )
    _atomic_write(csv_path, trace_csv(trace, cfg_hash, config.record_wall_time))
    _atomic_write(json_path, json.dumps(summary, indent=1))
    return summary


def _run_seed_job(args):
    config, seed, out_dir, resume = args
    return run_seed(config, seed, out_dir, resume)


def aggregate(summaries, batch_size):
    """Per-iteration mean and standard error of the incumbent over completed seeds."""
    ok = [s for s in summaries if s.get("status") == "ok"]
    if not ok:
        return [], ["no completed seeds"]
    warnings = [f"seed {s['seed']} failed: {s.get('error')}" for s in summaries if s.get("status") != "ok"]
    inc = np.array([s["incumbents"] for s in ok])
    k = inc.shape[0]
    mean = inc.mean(axis=0)
    se = inc.std(axis=0, ddof=1) / math.sqrt(k) if k > 1 else np.zeros_like(mean)
    rows = [(t, t * batch_size, mean[t], se[t], k) for t in range(inc.shape[1])]
    return rows, warnings


def aggregate_csv(rows, config_hash):
    buf = io.StringIO()
    buf.write(_provenance(config_hash, "all"))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "evaluations", "mean_best", "se_best", "n_seeds"])
    for t, ev, m, s, k in rows:
        w.writerow([t, ev, _fmt(m), _fmt(s), k])
    return buf.getvalue()


def run_experiment(config, out_dir=None, workers=None, seed_offset=0, resume=False):
    """All seeds of one config: per-seed trace/summary files plus ``aggregate_<hash>.csv``."""
    out_dir = Path(out_dir or config.output_dir)
    seeds = [s + seed_offset for s in config.seeds]
    workers = workers or config.workers or os.cpu_count() or 1
    jobs = [(config, s, out_dir, resume) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(workers, len(jobs))) as pool:
            summaries = list(pool.map(_run_seed_job, jobs))
    else:
        summaries = [_run_seed_job(j) for j in jobs]
    cfg_hash = config.config_hash()
    rows, warnings = aggregate(summaries, config.batch_size)
    _atomic_write(out_dir / f"aggregate_{cfg_hash}.csv", aggregate_csv(rows, cfg_hash))
    meta = {"config": config.to_dict(), "config_hash": cfg_hash, "version": __version__,
            "seeds": seeds, "completed": [s["seed"] for s in summaries if s.get("status") == "ok"],
            "warnings": warnings}
    _atomic_write(out_dir / f"aggregate_{cfg_hash}.json", json.dumps(meta, indent=1))
    return summaries


# ---------------------------------------------------------------------------
# model diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiagnosticsConfig:
    objective: str
    dim: int = 2
    n_train: int = 2000
    n_test: int = 500
    region_sizes: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.5, 1.0])
    m_values: list = field(default_factory=lambda: [50])
    replicates: int = 10
    regularize: bool = True
    noise_std: float = 0.0
    objective_seed: int = 0
    objective_lengthscale: float = 0.5
    exact_subsample: int = 500
    kl_points: int = 256
    models: list = field(default_factory=lambda: ["focal", "svgp", "exact"])
    seed: int = 0
    output_dir: str = "diagnostics"
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        _train_config(self.train)
        if not set(self.models) <= {"focal", "svgp", "exact"} or not self.models:
            raise ValueError("models must be a nonempty subset of focal, svgp, exact")
        if any(not 0 < s <= 1 for s in self.region_sizes):
            raise ValueError("region sizes must lie in (0, 1]")

    @classmethod
    def from_dict(cls, raw):
        _check_keys(cls, raw, "diagnostics")
        return cls(**raw)

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))

    def config_hash(self):
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]


DIAG_COLUMNS = ["replicate", "region_size", "m", "model", "nll", "rmse", "kl_model_exact",
                "kl_exact_model", "train_objective", "center", "config_hash", "seed"]


def _fit_exact_reference(data, cfg, train):
    """Hyperparameters from a subsample, then conditioned on every point."""
    rng = seeded_rng(cfg.seed, 31)
    n_sub = min(cfg.exact_subsample, data.n)
    sub = data.subset(np.sort(rng.choice(data.n, n_sub, replace=False)))
    model, report = fit_exact(sub, train)
    return ExactGPModel.build(data, model.params, model.family), report


def run_model_diagnostics(cfg, out_path=None):
    """One row per (replicate, region size, m, model); returns the rows as dicts.

    Each replicate draws a fresh training set and one random region center
    per size (the region lies inside the cube). The SVGP and exact models do
    not depend on the region and are trained once per replicate.
    """
    train = _train_config(cfg.train)
    obj = make_objective(cfg.objective, cfg.dim, cfg.noise_std, cfg.objective_seed, cfg.objective_lengthscale)
    cfg_hash = cfg.config_hash()
    rows = []
    for rep in range(cfg.replicates):
        rep_seed = int(np.random.SeedSequence([cfg.seed, rep]).generate_state(1)[0])
        raw = offline_dataset(obj, cfg.n_train, "uniform", rep_seed)
        data, tf = standardize(raw)
        rng = seeded_rng(rep_seed, 41)
        exact = _fit_exact_reference(data, cfg, train) if "exact" in cfg.models else (None, None)
        svgp = {}
        for size in cfg.region_sizes:
            center = rng.uniform(size / 2, 1 - size / 2, cfg.dim)
            region = SearchRegion(center, np.full(cfg.dim, size))
            lo, hi = region_bounds(region)
            Xt = lo + (hi - lo) * rng.random((cfg.n_test, cfg.dim))
            yt = tf.forward(obj.value(Xt) + cfg.noise_std * rng.standard_normal(cfg.n_test))
            test = Dataset(Xt, yt)
            for m in cfg.m_values:
                fitted = []
                if "focal" in cfg.models:
                    fitted.append(("focal", *train_sparse(data, region, train, seed=rep_seed, m=m,
                                                          regularize=cfg.regularize)))
                if "svgp" in cfg.models:
                    if m not in svgp:
                        svgp[m] = train_sparse(data, None, train, seed=rep_seed, m=m, focal=False)
                    fitted.append(("svgp", *svgp[m]))
                if exact[0] is not None:
                    fitted.append(("exact", *exact))
                for name, model, report in fitted:
                    post = model.posterior(Xt, full_cov=False)
                    kl_pq, kl_qp = (0.0, 0.0)
                    if exact[0] is not None and name != "exact":
                        kl_pq, kl_qp = region_kl(model, exact[0], region, cfg.kl_points)
                    rows.append({
                        "replicate": rep, "region_size": size, "m": m, "model": name,
                        "nll": predictive_nll(post, test, model.noise_var),
                        "rmse": rmse(post.mean, test),
                        "kl_model_exact": kl_pq, "kl_exact_model": kl_qp,
                        "train_objective": report.final,
                        "center": " ".join(_fmt(c) for c in center),
                        "config_hash": cfg_hash, "seed": cfg.seed,
                    })
    if out_path is not None:
        buf = io.StringIO()
        w = csv.DictWriter(buf, DIAG_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (_fmt(v) if isinstance(v, float) else v) for k, v in r.items()})
        _atomic_write(out_path, buf.getvalue())
    return rows


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def replay_trace(csv_path, out_path=None):
    """Depth sequence and per-depth counts from a stored trace; checks the controller replay.

    Returns ``(DepthTrace, replay_matches)``.
    """
    csv_path = Path(csv_path)
    meta_path = csv_path.with_suffix(".json")
    adaptive, cap = None, DEFAULT_MAX_DEPTH
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        adaptive = meta.get("adaptive_depth")
        cap = meta.get("max_depth", cap)
    trace = read_trace_csv(csv_path, adaptive, cap)
    dt = depth_trace(trace)
    matches = bool(np.array_equal(replay_depths(trace), dt.H))
    if out_path is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "H_before", "H_after"] + [f"count_depth_{h + 1}" for h in range(dt.counts.shape[1])])
        for t, r in enumerate(trace.records):
            w.writerow([r.iteration, r.H_before, r.H_after] + dt.counts[t].tolist())
        _atomic_write(out_path, buf.getvalue())
    return dt, matches
