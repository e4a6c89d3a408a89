"""Criterion-5 calibration: seg benchmark ordering across variants and seeds."""

import argparse
import sys
import time

sys.path.insert(0, "src")

import structattn.tasks as tk
from structattn.experiment import ExperimentConfig, config_with, run_experiment

VARIANTS = ("none", "spatial-only", "channel-only", "structured")


def patch_bands(factor, width):
    tk.SEG_BAND_FACTOR = factor

    def bands(w):
        q = max(width, 2)
        return (
            (0, slice(w // 4 - q // 2, w // 4 - q // 2 + q)),
            (1, slice(3 * w // 4 - q // 2, 3 * w // 4 - q // 2 + q)),
        )

    tk.seg_interference_bands = bands


def bench(args):
    patch_bands(args.band_factor, args.band_width)
    steps_per_epoch = -(-args.train // args.batch)
    epochs = args.steps // steps_per_epoch
    assert epochs * steps_per_epoch == args.steps, "steps must divide evenly"
    base = ExperimentConfig(
        task="segmentation",
        seed=0,
        image_size=32,
        classes=4,
        scales=args.scales,
        rank=args.rank,
        variant="structured",
        iterations=args.iterations,
        kernel_size=3,
        b_value=args.b_value,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        momentum=0.9,
        epochs=epochs,
        batch_size=args.batch,
        train_samples=args.train,
        eval_samples=args.eval,
        noise=args.noise,
        timing_repeats=3,
        output_dir=args.out,
    )
    print(f"== {vars(args)}", flush=True)
    t0 = time.time()
    ok_seeds = 0
    for seed in range(args.seeds):
        row = {}
        for variant in VARIANTS:
            cfg = config_with(base, seed=seed, variant=variant)
            rec = run_experiment(cfg, out_root=args.out)
            row[variant] = rec.metrics.get("mean_iou", float("nan"))
        chain = (
            row["structured"] >= max(row["spatial-only"], row["channel-only"])
            and max(row["spatial-only"], row["channel-only"]) >= row["none"]
            and row["structured"] - row["none"] >= 0.02
        )
        ok_seeds += chain
        print(
            f"seed {seed}: none={row['none']:.4f} sp={row['spatial-only']:.4f} "
            f"ch={row['channel-only']:.4f} st={row['structured']:.4f} "
            f"margin={row['structured'] - row['none']:+.4f} chain={'OK' if chain else 'FAIL'}",
            flush=True,
        )
    print(
        f"passing seeds: {ok_seeds}/{args.seeds}   elapsed {time.time() - t0:.1f}s",
        flush=True,
    )
    return ok_seeds


if __name__ == "__main__":
    p = argparse.ArgumentParser()
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--noise", type=float, default=0.35)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--rank", type=int, default=1)
    p.add_argument("--optimizer", default="adam")
    p.add_argument("--b-value", type=float, default=1.0)
    p.add_argument("--scales", type=int, default=2)
    p.add_argument("--train", type=int, default=4)
    p.add_argument("--eval", type=int, default=8)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--band-factor", type=float, default=4.0)
    p.add_argument("--band-width", type=int, default=4)
    p.add_argument("--out", default="/tmp/c5-grid")
    a = p.parse_args()
    bench(a)
