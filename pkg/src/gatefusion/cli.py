"""``gatefusion`` command line: train, eval, ablations, gradient checks, data generation.

Exit codes: 0 success, 1 failed check, 2 bad configuration or input, 3 training aborted.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .config import RunConfig, load_config
from .errors import ConfigError
from .higate import PRESETS_L12, scaled_preset
from .synthdata import read_episodes, write_episodes
from .train import TEST, TRAIN, VAL, TrainingAborted, evaluate, split_episodes, train

log = logging.getLogger("gatefusion")

DECODER_CSV_COLUMNS = ["kind", "seed", "ap_av", "ap_a", "ap_v", "decoder", "lambda_mal", "lambda_opp",
                       "config_hash", "wall_time"]
FUSION_CSV_COLUMNS = ["kind", "layer_indices", "seed", "ap_av", "ap_a", "ap_v", "config_hash", "wall_time"]
FUSION_ARMS = ["none", "single-deep", "spaced-2", "spaced-3", "spaced-4", "spaced-6", "dense"]
# Component grid: (name, decoder, MAL on, OPP on)
COMPONENT_ARMS = [
    ("sum", "sum", False, False),
    ("sum+mal", "sum", True, False),
    ("sum+opp", "sum", False, True),
    ("sum+mal+opp", "sum", True, True),
    ("higate", "higate", False, False),
    ("higate+mal", "higate", True, False),
    ("higate+opp", "higate", False, True),
    ("higate+mal+opp", "higate", True, True),
]


def _seeds(arg: str | None, cfg: RunConfig) -> list[int]:
    if not arg:
        return [cfg.seed + i for i in range(5)]
    try:
        return [int(s) for s in arg.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {arg!r}") from None


def _run_arm(job: tuple[str, dict, str, str]) -> dict:
    """Train one self-contained arm; module-level so it pickles for worker processes."""
    kind, cfg_dict, out_dir, layer_indices = job
    from .config import from_dict

    cfg = from_dict(cfg_dict)
    t0 = time.perf_counter()
    res = train(cfg, out_dir)
    ev = res.final_eval
    return {"kind": kind, "seed": cfg.seed, "ap_av": ev["ap_av"], "ap_a": ev["ap_a"], "ap_v": ev["ap_v"],
            "decoder": cfg.decoder, "lambda_mal": cfg.loss.lambda_mal, "lambda_opp": cfg.loss.lambda_opp,
            "layer_indices": layer_indices, "config_hash": cfg.config_hash(),
            "wall_time": round(time.perf_counter() - t0, 3)}


def run_arms(jobs: list[tuple[str, dict, str, str]], parallel: int = 1) -> list[dict]:
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_arm, jobs))
    rows = []
    for job in jobs:
        rows.append(_run_arm(job))
        log.info("%s seed=%d ap_av=%.4f", rows[-1]["kind"], rows[-1]["seed"], rows[-1]["ap_av"])
    return rows


def write_csv(rows: list[dict], columns: list[str], path=None):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) and k.startswith("ap_") else v)
                        for k, v in r.items()})
    finally:
        if path:
            fh.close()


def decoder_jobs(cfg: RunConfig, arms, seeds, components: bool = False) -> list:
    base = Path(cfg.output_dir) / ("ablate-components" if components else "ablate-decoders")
    jobs = []
    if components:
        grid = [a for a in COMPONENT_ARMS if not arms or a[0] in arms]
    else:
        # decoder comparison runs without the auxiliary losses
        grid = [(k, k, False, False) for k in arms]
    for name, decoder, mal, opp in grid:
        for seed in seeds:
            c = cfg.with_overrides([
                f'decoder="{decoder}"', f"seed={seed}",
                f"loss.lambda_mal={cfg.loss.lambda_mal if mal else 0.0}",
                f"loss.lambda_opp={cfg.loss.lambda_opp if opp else 0.0}"])
            jobs.append((name, c.to_dict(), str(base / f"{name}-seed{seed}"), ""))
    return jobs


def fusion_jobs(cfg: RunConfig, arms, seeds) -> list:
    base = Path(cfg.output_dir) / "ablate-fusion"
    jobs = []
    for name in arms:
        layers = scaled_preset(name, cfg.encoder.n_layers)
        for seed in seeds:
            c = cfg.with_overrides(['decoder="higate"', f"seed={seed}", f"fusion.layers={json.dumps(layers)}"])
            jobs.append((name, c.to_dict(), str(base / f"{name}-seed{seed}"), " ".join(map(str, layers))))
    return jobs


# subcommands --------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config, args.override)
    out = Path(args.output_dir or cfg.output_dir)
    log.info("training %s decoder, config hash %s -> %s", cfg.decoder, cfg.config_hash(), out)
    res = train(cfg, out, log_fn=_progress if args.verbose else None)
    print(json.dumps({"config_hash": cfg.config_hash(), "output_dir": str(out),
                      "final": _ap(res.final_eval), "best": _ap(res.best_eval)}, indent=2))
    return 0


def _ap(rec: dict) -> dict:
    return {k: rec[k] for k in ("step", "ap_av", "ap_a", "ap_v")}


def _progress(rec: dict):
    if rec["event"] == "eval":
        log.info("step %d val ap_av=%.4f ap_a=%.4f ap_v=%.4f", rec["step"], rec["ap_av"], rec["ap_a"], rec["ap_v"])


def cmd_eval(args) -> int:
    for flag in ("corrupt_audio", "corrupt_video"):
        if (getattr(args, flag) or 0.0) < 0:
            raise ConfigError(f"--{flag.replace('_', '-')} must be >= 0")
    episodes = read_episodes(args.data) if args.data else None
    ckpt = Path(args.checkpoint)
    if (ckpt / "checkpoints" / "final").is_dir():
        ckpt = ckpt / "checkpoints" / "final"
    keys = ("ap_av", "ap_a", "ap_v")
    run = lambda **kw: {k: v for k, v in evaluate(ckpt, episodes, args.split, noise_seed=args.noise_seed,  # noqa: E731
                                                 **kw).items() if k in keys}
    report = {"clean": run()}
    if args.corrupt_audio is not None:
        report["audio_noise"] = run(corrupt_audio=args.corrupt_audio)
    if args.corrupt_video is not None:
        report["video_noise"] = run(corrupt_video=args.corrupt_video)
    print(json.dumps(report, indent=2))
    return 0


def cmd_ablate_decoders(args) -> int:
    cfg = load_config(args.config, args.override)
    seeds = _seeds(args.seeds, cfg)
    if args.components:
        arms = args.arms.split(",") if args.arms else []
        unknown = set(arms) - {a[0] for a in COMPONENT_ARMS}
    else:
        arms = args.arms.split(",") if args.arms else ["higate", "crossatten", "concat", "sum"]
        unknown = set(arms) - {"higate", "crossatten", "concat", "sum"}
    if unknown:
        raise ConfigError(f"unknown arm(s): {', '.join(sorted(unknown))}")
    rows = run_arms(decoder_jobs(cfg, arms, seeds, args.components), args.parallel)
    write_csv(rows, DECODER_CSV_COLUMNS, args.out)
    return 0


def cmd_ablate_fusion(args) -> int:
    cfg = load_config(args.config, args.override)
    seeds = _seeds(args.seeds, cfg)
    arms = args.arms.split(",") if args.arms else FUSION_ARMS
    unknown = set(arms) - set(FUSION_ARMS)
    if unknown:
        raise ConfigError(f"unknown fusion preset(s): {', '.join(sorted(unknown))}; "
                          f"choose from none, {', '.join(PRESETS_L12)}")
    rows = run_arms(fusion_jobs(cfg, arms, seeds), args.parallel)
    write_csv(rows, FUSION_CSV_COLUMNS, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import CHECKS, format_report, run_suite

    only = set(args.only.split(",")) if args.only else None
    if only and only - {c[0] for c in CHECKS}:
        raise ConfigError(f"unknown check(s): {', '.join(sorted(only - {c[0] for c in CHECKS}))}")
    t0 = time.perf_counter()
    results = run_suite(args.instances, seed=args.seed, only=only)
    print(format_report(results, time.perf_counter() - t0))
    failed = [r.op for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_gen_data(args) -> int:
    cfg = load_config(args.config, args.override)
    split = {"train": TRAIN, "val": VAL, "test": TEST}[args.split]
    n = args.n if args.n is not None else (cfg.data.n_test if split == TEST else cfg.data.n_val)
    if n < 1:
        raise ConfigError(f"--n must be positive, got {n}")
    episodes = split_episodes(cfg, split, n=n)
    try:
        write_episodes(args.out, episodes, cfg.data.rate)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc.strerror or exc}") from None
    labels = np.concatenate([e.labels for e in episodes])
    pos = int(labels.sum())
    print(json.dumps({"path": str(args.out), "episodes": len(episodes), "frames": int(labels.size),
                      "positive": pos, "negative": int(labels.size - pos),
                      "positive_rate": pos / labels.size, "config_hash": cfg.config_hash()}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatefusion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="JSON run configuration")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dot-path override, e.g. loss.lambda_mal=0 (repeatable)")

    sp = sub.add_parser("train", help="train one model")
    with_config(sp)
    sp.add_argument("--output-dir", help="overrides output_dir from the config")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint, optionally under feature noise")
    sp.add_argument("checkpoint", help="checkpoint directory or run output directory")
    sp.add_argument("--data", help="GFEP episode file (default: the run's validation split)")
    sp.add_argument("--split", choices=[VAL, TEST], default=VAL)
    sp.add_argument("--corrupt-audio", type=float, metavar="SIGMA", help="add N(0, SIGMA^2) to audio features")
    sp.add_argument("--corrupt-video", type=float, metavar="SIGMA", help="add N(0, SIGMA^2) to video features")
    sp.add_argument("--noise-seed", type=int, default=0)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate-decoders", help="decoder comparison (or component grid) as CSV")
    with_config(sp)
    sp.add_argument("--seeds", help="comma-separated seeds (default: seed..seed+4)")
    sp.add_argument("--arms", help="comma-separated arm names")
    sp.add_argument("--components", action="store_true",
                    help="run the HiGate/MAL/OPP on-off grid instead of the decoder comparison")
    sp.add_argument("--parallel", type=int, default=1, metavar="N")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_ablate_decoders)

    sp = sub.add_parser("ablate-fusion", help="fusion-layer preset sweep as CSV")
    with_config(sp)
    sp.add_argument("--seeds", help="comma-separated seeds (default: seed..seed+4)")
    sp.add_argument("--arms", help=f"comma-separated presets from {', '.join(FUSION_ARMS)}")
    sp.add_argument("--parallel", type=int, default=1, metavar="N")
    sp.add_argument("--out", help="CSV path (default stdout)")
    sp.set_defaults(func=cmd_ablate_fusion)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    sp.add_argument("--instances", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--only", help="comma-separated check names")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("gen-data", help="write synthetic episodes in GFEP format")
    with_config(sp)
    sp.add_argument("out", help="output .gfep path")
    sp.add_argument("--split", choices=["train", "val", "test"], default="val")
    sp.add_argument("--n", type=int, default=None, help="episode count (default: the split size)")
    sp.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"gatefusion: error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"gatefusion: error: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"gatefusion: training aborted: {exc}", file=sys.stderr)
        print(json.dumps(exc.record), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
