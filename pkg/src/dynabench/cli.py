"""Command line entry point: ``dynabench gen|train|eval|report``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import metrics as M
from .config import ConfigError, RunConfig, load_config, with_overrides

log = logging.getLogger("dynabench")

BUILTIN_POLICIES = ("expert-replay", "reactive", "oracle", "zero")


class RunFailure(RuntimeError):
    """Some requested points did not complete; carries the failing seeds."""

    def __init__(self, message: str, seeds=()):
        super().__init__(message)
        self.seeds = list(seeds)


def _setup_logging(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger("dynabench")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(message)s")
    fh = logging.FileHandler(out / "dynabench.log", encoding="utf-8")
    fh.setFormatter(fmt)
    root.addHandler(fh)


def _announce(cmd: str, cfg: RunConfig) -> None:
    text = f"# dynabench {cmd}: resolved config\n" + cfg.render()
    print(text, end="", flush=True)
    log.info("resolved config for %s\n%s", cmd, cfg.render())


def _cache_dir(cfg: RunConfig) -> Path:
    from .flow import default_cache_dir

    if os.environ.get("DYNABENCH_CACHE"):
        return Path(os.environ["DYNABENCH_CACHE"])
    return Path(cfg.cache_dir) if cfg.cache_dir else default_cache_dir()


# --- gen -------------------------------------------------------------------------------


def cmd_gen(cfg: RunConfig) -> Path:
    from .expert import generate_dataset

    out = Path(cfg.out)
    tasks = [cfg.task(alpha=a) for a in cfg.alpha_list()]
    manifest = generate_dataset(tasks, cfg.episodes, cfg.expert(), cfg.seed, out)
    if cfg.episodes >= 1:
        print(f"wrote {len(manifest.episodes)} episodes to {out}")
    failed = []
    for key, st in manifest.stats.items():
        print(f"{key}: accepted {st['accepted']}/{st['requested']} in {st['attempts']} attempts")
        failed += [f"{key}#{i}" for i in st["failures"]]
    if failed:
        raise RunFailure("synthesis failed for " + ", ".join(failed), failed)
    return out / "manifest.json"


# --- dataset access --------------------------------------------------------------------


def _manifest_path(cfg: RunConfig) -> Path:
    p = Path(cfg.dataset) if cfg.dataset else Path(cfg.out) / "manifest.json"
    return p / "manifest.json" if p.is_dir() else p


def load_dataset(cfg: RunConfig) -> list:
    from .container import read_episode

    path = _manifest_path(cfg)
    if not path.exists():
        raise ConfigError(f"dataset manifest not found: {path}")
    manifest = json.loads(path.read_text())
    return [read_episode(path.parent / name) for name in manifest["episodes"]]


# --- train -----------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> list:
    from .flow import FlowCache
    from .policy.train import FlowSource, save_checkpoint, train_bc, write_loss_csv

    episodes = load_dataset(cfg)
    if not episodes:
        raise ConfigError("dataset is empty")
    out = Path(cfg.out)
    flows = FlowSource(cfg.flow(), FlowCache(_cache_dir(cfg), cfg.flow()), dataset=str(_manifest_path(cfg).parent.name))
    written, failed = [], []
    seeds = cfg.seed_list()
    for seed in seeds:
        t0 = time.time()
        try:
            res = train_bc(episodes, cfg.train(seed=seed), flows)
        except (ValueError, FloatingPointError) as exc:
            log.error("training seed %d failed: %s", seed, exc)
            failed.append(seed)
            continue
        ckpt = _checkpoint_for(cfg, seed, len(seeds))
        save_checkpoint(ckpt, res.params)
        write_loss_csv(ckpt.with_suffix(".loss.csv"), res.curve)
        msg = f"seed {seed}: loss {res.initial_loss:.4f} -> {res.final_loss:.4f} in {time.time() - t0:.0f}s, wrote {ckpt}"
        print(msg)
        log.info(msg)
        written.append(ckpt)
    if failed:
        raise RunFailure(f"training failed for seeds {failed}", failed)
    return written


def _checkpoint_for(cfg: RunConfig, seed: int, n_seeds: int) -> Path:
    ckpt = Path(cfg.out) / cfg.checkpoint
    if n_seeds > 1:
        ckpt = ckpt.with_name(f"{ckpt.stem}_s{seed}{ckpt.suffix}")
    return ckpt


# --- eval ------------------------------------------------------------------------------


def make_policy(policy_id: str, cfg: RunConfig):
    from .policy.agents import LearnedPolicy, OraclePolicy, ReactivePolicy, ZeroPolicy
    from .policy.train import load_checkpoint

    if policy_id == "reactive":
        return ReactivePolicy()
    if policy_id == "oracle":
        return OraclePolicy()
    if policy_id == "zero":
        return ZeroPolicy()
    path = Path(policy_id)
    if not path.exists():
        raise ConfigError(f"unknown policy {policy_id!r}: expected one of {BUILTIN_POLICIES} or a checkpoint path")
    try:
        params = load_checkpoint(path)
    except ValueError as exc:
        raise ConfigError(f"cannot load checkpoint {path}: {exc}") from exc
    return LearnedPolicy(params, cfg.flow(), cfg.replan_every)


def _replay_outcomes(cfg: RunConfig, alpha: float) -> list:
    from .expert import replay

    eps = [ep for ep in load_dataset(cfg) if abs(ep.task.alpha - alpha) < 1e-12 and int(ep.task.level) == cfg.level]
    if cfg.episodes:
        eps = eps[: cfg.episodes]
    return [replay(ep).outcome for ep in eps]


def cmd_eval(cfg: RunConfig) -> Path:
    from .rollout import evaluate

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows, failed = [], []
    for seed in cfg.seed_list():
        for alpha in cfg.alpha_list():
            try:
                if cfg.policy == "expert-replay":
                    outcomes = _replay_outcomes(cfg, alpha)
                else:
                    task = cfg.task(alpha=alpha)
                    outcomes = evaluate(lambda: make_policy(cfg.policy, cfg), task, cfg.episodes, seed, cfg.expert())
            except ConfigError:
                raise
            except Exception as exc:  # one bad point must not hide the others
                log.exception("eval seed %d alpha %g failed", seed, alpha)
                print(f"seed {seed} alpha {alpha:g}: failed ({exc})", file=sys.stderr)
                failed.append(seed)
                continue
            if len(outcomes) < cfg.episodes and cfg.policy != "expert-replay":
                failed.append(seed)
            report = M.summarize(outcomes, cfg.taxonomy, cfg.level, alpha)
            rows.append((seed, report))
            msg = f"{cfg.policy} seed {seed} L{cfg.level} alpha {alpha:g}: SR {report.sr:.1f} MS {report.ms:.1f} RC {report.rc:.1f}"
            print(msg)
            log.info(msg)
    path = out / "eval.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, ["policy", "seed"] + M.CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        for seed, r in rows:
            writer.writerow({"policy": cfg.policy, "seed": seed, **r.row()})
    print(f"wrote {path}")
    if failed:
        raise RunFailure(f"evaluation failed for seeds {sorted(set(failed))}", sorted(set(failed)))
    return path


# --- report ----------------------------------------------------------------------------


def merge_csvs(paths, out_path) -> int:
    """Concatenate CSVs sharing one header; returns the number of data rows."""
    header, rows = None, []
    for p in paths:
        with open(p, newline="") as fh:
            reader = csv.reader(fh)
            try:
                head = next(reader)
            except StopIteration:
                raise ConfigError(f"{p}: empty CSV") from None
            if header is None:
                header = head
            elif head != header:
                raise ConfigError(f"{p}: header {head} differs from {header}")
            rows.extend(r for r in reader if r)
    if header is None:
        raise ConfigError("report needs at least one input CSV")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return len(rows)


def cmd_report(cfg: RunConfig, extra_inputs=()) -> Path:
    inputs = list(cfg.inputs) + list(extra_inputs)
    missing = [p for p in inputs if not Path(p).exists()]
    if missing:
        raise ConfigError(f"missing input CSVs: {missing}")
    out = Path(cfg.out) / "report.csv"
    n = merge_csvs(inputs, out)
    with open(out, newline="") as fh:
        for row in csv.DictReader(fh):
            keys = ("policy", "level", "alpha", "sr", "ms", "rc")
            print("  ".join(f"{k}={row[k]}" for k in keys if k in row))
    print(f"wrote {n} rows to {out}")
    return out


# --- entry -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dynabench", description="Dynamic manipulation benchmark runs.")
    ap.add_argument("command", choices=("gen", "train", "eval", "report"))
    ap.add_argument("--config", required=True, help="key = value run configuration")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--alpha", type=float)
    ap.add_argument("--level", type=int, choices=(1, 2, 3))
    ap.add_argument("--episodes", type=int)
    ap.add_argument("--out")
    ap.add_argument("--policy", help="expert-replay, reactive, oracle, zero or a checkpoint path")
    ap.add_argument("inputs", nargs="*", help="extra CSVs for report")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        over = dict(seed=args.seed, level=args.level, episodes=args.episodes, out=args.out, policy=args.policy)
        if args.alpha is not None:
            over.update(alpha=args.alpha, alphas=())
        if args.seed is not None:
            over.update(seeds=())
        cfg = with_overrides(cfg, **over).validate()
        _setup_logging(Path(cfg.out))
        _announce(args.command, cfg)
        if args.inputs and args.command != "report":
            raise ConfigError("positional inputs are only accepted by report")
        if args.command == "gen":
            cmd_gen(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        else:
            cmd_report(cfg, args.inputs)
    except ConfigError as exc:
        print(f"dynabench: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"dynabench: {exc}", file=sys.stderr)
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
