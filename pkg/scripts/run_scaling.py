"""Run the dataset-size scaling experiment: levels, data, training queue.

Stages are cached on disk, so the script can be interrupted and rerun;
completed artifacts are skipped. A short pilot run (--pilot) trains a
reduced-iteration checkpoint for sanity checks before committing to the
full queue.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dqplan import experiments


def log(message: str) -> None:
    print(f"[{time.strftime('%H:%M:%S')}] {message}", flush=True)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", type=Path, default=Path("results/scaling"))
    parser.add_argument(
        "--stage",
        choices=["levels", "data", "pilot", "train", "all"],
        default="all",
    )
    parser.add_argument("--pilot-iters", type=int, default=20_000)
    args = parser.parse_args(argv)
    cfg = experiments.ScalingConfig()
    root = args.root

    if args.stage in ("levels", "data", "pilot", "train", "all"):
        t0 = time.perf_counter()
        train, held = experiments.scaling_levels(cfg, root)
        log(f"levels ready: {len(train)} train + {len(held)} held-out "
            f"({time.perf_counter()-t0:.0f}s)")
    if args.stage in ("data", "pilot", "train", "all"):
        for index in range(cfg.train_levels):
            t0 = time.perf_counter()
            transitions = experiments.scaling_dataset(cfg, root, index)
            dt = time.perf_counter() - t0
            if dt > 1.0:
                log(f"dataset {index:02d}: {len(transitions)} samples in {dt:.0f}s")
        log("datasets ready")
    if args.stage == "pilot":
        path = experiments.scaling_train(
            cfg, root, level_count=10, seed=0, iterations=args.pilot_iters, log=log
        )
        log(f"pilot checkpoint: {path}")
    if args.stage in ("train", "all"):
        paths = experiments.scaling_train_all(cfg, root, log=log)
        for path in paths:
            log(f"checkpoint: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
