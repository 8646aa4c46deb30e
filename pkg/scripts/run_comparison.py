#!/usr/bin/env python3
"""Paired-seed comparison of memory-bank self-training vs naive replacement.

Runs both pipelines on identical scenes, detector noise, and per-round
fluctuations, then reports final pseudo-label F1 and the steady-state
variance of the per-round positive-box count.

Usage: python3 scripts/run_comparison.py [--pairs 20] [--rounds 14] [--scenes 50]
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from boxlab import (  # noqa: E402
    DetectorModel,
    EvalConfig,
    ExperimentConfig,
    Pipeline,
    SceneGenConfig,
    run_experiment,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=20)
    parser.add_argument("--rounds", type=int, default=14)
    parser.add_argument("--scenes", type=int, default=50)
    parser.add_argument("--warmup", type=int, default=2,
                        help="rounds excluded from the count-variance statistic")
    args = parser.parse_args()

    detector = DetectorModel(
        p_det=0.85, fp_rate=0.8, sigma_xy=0.30, sigma_u=0.08,
        fluctuation=0.35, feedback_gain=0.5, p_det_ceiling=0.90,
    )
    base = ExperimentConfig(
        scene_gen=SceneGenConfig(n_scenes=args.scenes),
        detector=detector,
        rounds=args.rounds,
        eval=EvalConfig(iou_threshold=0.7),
    )

    print(f"{'seed':>4} {'f1 memory':>10} {'f1 naive':>10} {'var memory':>11} {'var naive':>10}")
    f1_mem, f1_nai, var_mem, var_nai, wins = [], [], [], [], 0
    for seed in range(args.pairs):
        cfg_mem = replace(
            base,
            seed=seed,
            pipeline=Pipeline.MEMORY,
            scene_gen=replace(base.scene_gen, seed=seed),
            detector=replace(base.detector, seed=seed),
        )
        cfg_nai = replace(cfg_mem, pipeline=Pipeline.NAIVE)
        rep_mem, _ = run_experiment(cfg_mem)
        rep_nai, _ = run_experiment(cfg_nai)
        f1_mem.append(rep_mem.final_quality.f1)
        f1_nai.append(rep_nai.final_quality.f1)
        var_mem.append(float(np.var(rep_mem.positive_counts[args.warmup:])))
        var_nai.append(float(np.var(rep_nai.positive_counts[args.warmup:])))
        wins += f1_mem[-1] > f1_nai[-1]
        print(f"{seed:>4} {f1_mem[-1]:>10.3f} {f1_nai[-1]:>10.3f} {var_mem[-1]:>11.0f} {var_nai[-1]:>10.0f}")

    print("-" * 48)
    print(f"memory wins {wins}/{args.pairs} pairs on final F1")
    print(f"mean final F1: memory {np.mean(f1_mem):.3f}, naive {np.mean(f1_nai):.3f}")
    print(
        f"mean positive-count variance (rounds {args.warmup + 1}+): "
        f"memory {np.mean(var_mem):.0f}, naive {np.mean(var_nai):.0f}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
