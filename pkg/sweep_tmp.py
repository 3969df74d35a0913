"""Scratch sweep for simulator constants (not part of the package)."""
import sys
import time

import numpy as np

import raydistill.simulator as sim
from raydistill.cli import _scene_set, _train_config, _SCENE_DEFAULTS, _LOSS_DEFAULTS, _TRAIN_DEFAULTS
from raydistill.harness import train, evaluate_resilience
from raydistill.losses_aux import LossWeights
from raydistill.simulator import CorruptionSpec, CORRUPTION_KINDS
from raydistill.rng import derive_seed


def run(seed, ghost_amp, epochs=200, scenes_n=16):
    cfg = {**_SCENE_DEFAULTS, **_LOSS_DEFAULTS, **_TRAIN_DEFAULTS,
           'epochs': epochs, 'ghost_amp': ghost_amp}
    scenes = _scene_set(cfg, seed, scenes_n)
    model, rows = train(scenes, _train_config(cfg, seed, LossWeights()))
    baseline, brows = train(scenes, _train_config(cfg, seed, LossWeights(0, 0, 1, 0)))
    from raydistill.cli import _eval_corruptions
    corrs = _eval_corruptions(CORRUPTION_KINDS, 0.5, seed)
    es = derive_seed(seed, 99)
    rd = evaluate_resilience(model, scenes, corrs, seed=es)
    rb = evaluate_resilience(baseline, scenes, corrs, seed=es)
    imp = 100 * (1 - rows[-1].depth_mae / brows[-1].depth_mae)
    ok = rows[-1].depth_mae <= 0.8 * brows[-1].depth_mae and rd.aggregate > rb.aggregate
    print(f"  seed={seed} d_mae={rows[-1].depth_mae:6.3f} b_mae={brows[-1].depth_mae:6.3f} "
          f"imp={imp:5.1f}% agg_d={rd.aggregate:.4f} agg_b={rb.aggregate:.4f} "
          f"margin={rd.aggregate-rb.aggregate:+.4f} {'OK' if ok else 'X'}")
    per = {r.kind: (r.resilience, b.resilience) for r, b in zip(rd.rows, rb.rows)}
    print("    " + " ".join(f"{k}:{v[0]:.2f}/{v[1]:.2f}" for k, v in per.items()))
    return ok


if __name__ == "__main__":
    ghost_amp = float(sys.argv[1]) if len(sys.argv) > 1 else 0.85
    sig = sys.argv[2] if len(sys.argv) > 2 else None
    amp = sys.argv[3] if len(sys.argv) > 3 else None
    if sig:
        lo, hi = map(float, sig.split(","))
        sim.SIGNATURE_RANGE = (lo, hi)
    if amp:
        sim.BUMP_AMPLITUDE = float(amp)
    print(f"ghost_amp={ghost_amp} sig={sim.SIGNATURE_RANGE} amp={sim.BUMP_AMPLITUDE}")
    t0 = time.time()
    for seed in (0, 1, 2):
        run(seed, ghost_amp)
    print(f"total {time.time()-t0:.0f}s")
