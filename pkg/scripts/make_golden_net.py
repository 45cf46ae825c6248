"""Regenerate the golden checkpoint used by the serialization tests.

The file freezes the on-disk format: tests load it, replay a fixed
forward pass, and re-serialize it expecting identical bytes. Only rerun
this after a deliberate format version bump, then refresh the literals
in tests/test_nn.py.
"""

from __future__ import annotations

import pathlib
import sys

import numpy as np

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

from dqplan import nn

OUT = pathlib.Path(__file__).resolve().parents[1] / "tests" / "data" / "golden_net.ckpt"

SPECS = (
    nn.BatchNorm(2),
    nn.Conv(3, 2, 2, 1),
    nn.Activation("relu"),
    nn.Flatten(),
    nn.BatchNorm(27),
    nn.Concat(3),
    nn.Dense(4),
    nn.Activation("relu"),
    nn.Dense(1),
)
IN_SHAPE = (4, 4, 2)
SEED = 77


def main() -> None:
    params = nn.init_params(SPECS, IN_SHAPE, SEED)
    adam = nn.AdamState.for_params(params, lr=1e-3)
    rng = np.random.default_rng(11)
    for _ in range(3):
        x = rng.uniform(-1.0, 1.0, (8, *IN_SHAPE)).astype(np.float32)
        aux = rng.uniform(0.0, 1.0, (8, 3)).astype(np.float32)
        out, cache = nn.forward(params, SPECS, x, mode="train", aux=aux)
        grads, _ = nn.backward(cache, np.ones_like(out))
        nn.adam_step(adam, params, grads)
    OUT.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(OUT, SPECS, params, adam, seed=SEED)

    probe_x = np.random.default_rng(5).uniform(-1.0, 1.0, (2, *IN_SHAPE))
    probe_aux = np.random.default_rng(6).uniform(0.0, 1.0, (2, 3))
    out, _ = nn.forward(params, SPECS, probe_x, mode="infer", aux=probe_aux)
    print(f"wrote {OUT} ({OUT.stat().st_size} bytes)")
    print("adam step:", adam.step)
    print("probe outputs:", [repr(float(v)) for v in out.reshape(-1)])


if __name__ == "__main__":
    main()
