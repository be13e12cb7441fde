"""Command line: ``run``, ``diagnose``, ``dataset`` and ``replay``."""
import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import make_objective, offline_dataset
from .harness import (DiagnosticsConfig, RunConfig, _atomic_write, dataset_csv, replay_trace,
                      run_experiment, run_model_diagnostics)


def _cmd_run(args):
    config = RunConfig.from_json(args.config)
    out = args.out or config.output_dir
    summaries = run_experiment(config, out, args.workers, args.seed_offset, args.resume)
    failed = [s["seed"] for s in summaries if s.get("status") != "ok"]
    for s in summaries:
        if s.get("status") == "ok":
            print(f"seed {s['seed']}: final best {s['final_best']:.6g} ({s['total_seconds']:.1f}s)")
        else:
            print(f"seed {s['seed']}: FAILED {s.get('error')}")
    print(f"wrote {out}/aggregate_{config.config_hash()}.csv")
    return 1 if failed and len(failed) == len(summaries) else 0


def _cmd_diagnose(args):
    cfg = DiagnosticsConfig.from_json(args.config)
    out = Path(args.out or cfg.output_dir) / f"diagnostics_{cfg.config_hash()}.csv"
    rows = run_model_diagnostics(cfg, out)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _cmd_dataset(args):
    obj = make_objective(args.objective, args.dim, args.noise_std, args.objective_seed, args.lengthscale)
    data = offline_dataset(obj, args.n, args.sampler, args.seed)
    text = dataset_csv(data)
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        _atomic_write(args.out, text)
        meta = {"objective": args.objective, "dim": args.dim, "n": args.n, "sampler": args.sampler,
                "seed": args.seed, "noise_std": args.noise_std, "objective_seed": args.objective_seed}
        _atomic_write(Path(args.out).with_suffix(".json"), json.dumps(meta, indent=1))
    return 0


def _cmd_replay(args):
    paths = []
    for p in map(Path, args.traces):
        paths.extend(sorted(p.glob("trace_*.csv")) if p.is_dir() else [p])
    if not paths:
        print("no trace files found", file=sys.stderr)
        return 2
    status = 0
    for p in paths:
        out = Path(args.out) / f"depth_{p.stem}.csv" if args.out else None
        dt, ok = replay_trace(p, out)
        print(f"{p.name}: {len(dt.H) - 1} iterations, final H={dt.H[-1]}, replay {'ok' if ok else 'MISMATCH'}")
        status |= 0 if ok else 1
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="focalbo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a BO experiment over seeds")
    p.add_argument("--config", required=True, help="JSON RunConfig")
    p.add_argument("--seed-offset", type=int, default=0)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--workers", type=int, help="parallel seed workers (default: config or CPU count)")
    p.add_argument("--resume", action="store_true", help="skip seeds whose outputs already exist")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("diagnose", help="model-quality sweep (NLL, RMSE, KL)")
    p.add_argument("--config", required=True, help="JSON DiagnosticsConfig")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_diagnose)

    p = sub.add_parser("dataset", help="generate an offline dataset CSV")
    p.add_argument("--objective", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--sampler", choices=["uniform", "sobol"], default="uniform")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.add_argument("--objective-seed", type=int, default=0)
    p.add_argument("--lengthscale", type=float, default=0.5, help="GP objectives only")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.set_defaults(func=_cmd_dataset)

    p = sub.add_parser("replay", help="depth traces from stored run traces")
    p.add_argument("traces", nargs="+", help="trace CSV files or directories")
    p.add_argument("--out", help="directory for depth_*.csv files")
    p.set_defaults(func=_cmd_replay)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
