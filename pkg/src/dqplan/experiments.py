"""Cached experiment pipelines: level pools, datasets, training runs.

Every artifact lives under a root directory and is keyed by the
configuration that produced it; reruns with an unchanged configuration
reuse the artifact instead of recomputing. Files are written to a
temporary sibling and renamed, so an interrupted run never leaves a
truncated artifact behind.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import collect, data, nn, qlearn
from .grid import LevelSpec, parse_level, render_level

DEFAULT_ROOT = Path("results")


@dataclass(frozen=True)
class ScalingConfig:
    """Generalization-trend experiment: dataset-size sweep on one pool.

    Levels are deliberately smaller than the reference 26x13 shape and
    carry 6 gems with a 4-gem exit gate: the dominant training cost
    grows with the number of eligible subgoals per successor state, and
    this shape keeps that small while still supplying 500 unique
    samples per level. The learning rate is raised above the long-run
    default to compensate for the shorter, desk-scale training budget.
    """

    width: int = 16
    height: int = 10
    gem_count: int = 6
    boulder_density: float = 0.12
    dirt_density: float = 0.35
    gems_needed: int = 4
    train_levels: int = 50
    heldout_levels: int = 10
    level_seed_base: int = 1000
    heldout_seed_base: int = 2000
    samples_per_level: int = 500
    collect_seed_base: int = 7000
    stall_limit: int = 2000
    max_trajectories: int = 100_000
    plan_timeout_s: float = 30.0
    iterations: int = 200_000
    alpha: float = 1e-4
    train_seeds: tuple[int, ...] = (0, 1, 2)
    level_counts: tuple[int, ...] = (10, 50)
    eval_random_reps: int = 5
    eval_seed_base: int = 9000

    def gen_config(self, seed: int) -> collect.GenConfig:
        return collect.GenConfig(
            width=self.width,
            height=self.height,
            gem_count=self.gem_count,
            boulder_density=self.boulder_density,
            dirt_density=self.dirt_density,
            seed=seed,
        )

    def trainer_config(self, iterations: int | None = None) -> qlearn.TrainerConfig:
        return qlearn.dqp_trainer_config(
            alpha=self.alpha,
            iterations=self.iterations if iterations is None else iterations,
        )


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="ascii")
    os.replace(tmp, path)


def _manifest_guard(path: Path, payload: dict) -> None:
    """Write the manifest, or fail loudly if a different one exists."""
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path.exists():
        if path.read_text(encoding="ascii") != text:
            raise RuntimeError(
                f"{path} was produced by a different configuration; "
                "move the artifact directory aside to regenerate"
            )
        return
    _write_text(path, text)


def scaling_levels(cfg: ScalingConfig, root: Path) -> tuple[list[LevelSpec], list[LevelSpec]]:
    """Generate (or reload) the training pool and held-out levels."""
    level_dir = root / "levels"
    _manifest_guard(
        root / "levels.manifest.json",
        {
            "gen": asdict(cfg.gen_config(0)) | {"seed": "per-level"},
            "gems_needed": cfg.gems_needed,
            "train": [cfg.level_seed_base + i for i in range(cfg.train_levels)],
            "heldout": [cfg.heldout_seed_base + j for j in range(cfg.heldout_levels)],
        },
    )
    pools: list[list[LevelSpec]] = []
    for prefix, count, base in (
        ("train", cfg.train_levels, cfg.level_seed_base),
        ("held", cfg.heldout_levels, cfg.heldout_seed_base),
    ):
        levels = []
        for i in range(count):
            path = level_dir / f"{prefix}_{i:02d}.txt"
            if path.exists():
                level = parse_level(path.read_text(encoding="ascii"))
            else:
                level = collect.gen_level(cfg.gen_config(base + i))
                _write_text(path, render_level(level) + "\n")
            levels.append(level)
        pools.append(levels)
    return pools[0], pools[1]


def scaling_dataset(cfg: ScalingConfig, root: Path, index: int) -> list[qlearn.TransitionG]:
    """Collect (or reload) the dataset for one training-pool level."""
    train, _ = scaling_levels(cfg, root)
    path = root / "data" / f"train_{index:02d}.jsonl"
    if path.exists():
        transitions, _ = data.read_dataset(path)
        return transitions
    transitions = collect.collect_dqp(
        train[index],
        n=cfg.samples_per_level,
        seed=cfg.collect_seed_base + index,
        gems_needed=cfg.gems_needed,
        timeout_s=cfg.plan_timeout_s,
        max_trajectories=cfg.max_trajectories,
        stall_limit=cfg.stall_limit,
    )
    meta = collect.DatasetMeta(
        level_id=f"train_{index:02d}",
        sample_count=len(transitions),
        mode="dqp",
        seed=cfg.collect_seed_base + index,
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    data.write_dataset(tmp, transitions, meta=meta.to_dict())
    os.replace(tmp, path)
    return transitions


def scaling_net_path(
    cfg: ScalingConfig, root: Path, level_count: int, seed: int, iterations: int | None = None
) -> Path:
    iters = cfg.iterations if iterations is None else iterations
    return root / "nets" / f"dqp_L{level_count}_s{seed}_i{iters}.ckpt"


def scaling_train(
    cfg: ScalingConfig,
    root: Path,
    level_count: int,
    seed: int,
    iterations: int | None = None,
    log=None,
) -> Path:
    """Train one run of the sweep; returns the checkpoint path."""
    path = scaling_net_path(cfg, root, level_count, seed, iterations)
    if path.exists():
        return path
    transitions: list[qlearn.TransitionG] = []
    for index in range(level_count):
        transitions.extend(scaling_dataset(cfg, root, index))
    tcfg = cfg.trainer_config(iterations)
    log_path = path.with_suffix(".log")
    if log_path.exists():
        log_path.unlink()

    def on_progress(it, loss, td):
        data.append_training_log(log_path, [(it, loss, td)])
        if log is not None and it % 10_000 == 0:
            log(f"L{level_count} seed {seed}: iteration {it}, loss {loss:.3f}")

    result = qlearn.train(transitions, tcfg, seed=seed, on_progress=on_progress)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    nn.save_checkpoint(tmp, result.net.specs, result.net.params, seed=seed)
    os.replace(tmp, path)
    return path


def scaling_train_all(cfg: ScalingConfig, root: Path, log=None) -> list[Path]:
    """Run the full sweep queue; safe to rerun after an interruption."""
    _manifest_guard(
        root / "train.manifest.json",
        {
            "trainer": asdict(cfg.trainer_config()),
            "level_counts": list(cfg.level_counts),
            "seeds": list(cfg.train_seeds),
        },
    )
    paths = []
    for level_count in cfg.level_counts:
        for seed in cfg.train_seeds:
            paths.append(scaling_train(cfg, root, level_count, seed, log=log))
    return paths
