"""Desk-scale ablation of flow history and the auxiliary world loss.

Synthesizes expert episodes, trains every variant for every seed and
evaluates each on shared held-out Level 1 scenarios, then sweeps the full
variant across the three dynamics levels.

    python scripts/ablation.py --out runs/ablation
"""
import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from dynabench import study
from dynabench import world as W
from dynabench.expert import ExpertConfig
from dynabench.policy.agents import LearnedPolicy
from dynabench.policy.train import save_checkpoint


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--train-episodes", type=int, default=study.DESK.train_episodes)
    ap.add_argument("--eval-episodes", type=int, default=study.DESK.eval_episodes)
    ap.add_argument("--seeds", default=",".join(map(str, study.DESK.seeds)))
    ap.add_argument("--epochs", type=int, default=study.DESK.train.epochs)
    ap.add_argument("--no-levels", action="store_true", help="skip the level sweep")
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plan = replace(study.DESK, train_episodes=args.train_episodes, eval_episodes=args.eval_episodes,
                   seeds=tuple(int(s) for s in args.seeds.split(",")),
                   train=replace(study.DESK.train, epochs=args.epochs))
    task = W.TaskSpec()
    res = study.desk_ablation(task, plan)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "h", "lam", "N", "seed", "sr"])
        for v in study.ABLATION:
            for seed, sr in zip(plan.seeds, res.sr[v.name]):
                w.writerow([v.name, v.h, v.lam, v.N, seed, f"{sr:.1f}"])
                save_checkpoint(out / f"{v.name.replace(' ', '_').replace('+', '_')}_s{seed}.dpp",
                                res.params[(v.name, seed)])
    for v in study.ABLATION:
        print(f"{v.name:14s} mean SR {res.mean(v.name):5.1f}  per seed {res.sr[v.name]}")
    print(f"ablation took {res.seconds / 60:.1f} min")

    if not args.no_levels:
        params = res.params[("flow+aux N=4", plan.seeds[0])]
        reports = study.level_sweep(lambda: LearnedPolicy(params), task, plan.eval_episodes, ExpertConfig(), seed=11)
        with open(out / "levels.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["level", "sr", "ms", "rc"])
            for level, r in reports.items():
                w.writerow([level, f"{r.sr:.1f}", f"{r.ms:.1f}", f"{r.rc:.1f}"])
                print(f"level {level}: SR {r.sr:.1f} MS {r.ms:.1f} RC {r.rc:.1f}")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
