"""Scratch matrix sweep (not part of the package)."""
import sys
import time

import numpy as np

import raydistill.simulator as sim
from raydistill.cli import (_scene_set, _train_config, _SCENE_DEFAULTS,
                            _LOSS_DEFAULTS, _TRAIN_DEFAULTS, _eval_corruptions)
from raydistill.harness import train, evaluate_resilience
from raydistill.losses_aux import LossWeights
from raydistill.simulator import CORRUPTION_KINDS
from raydistill.rng import derive_seed


def run(seed, ghost_amp):
    cfg = {**_SCENE_DEFAULTS, **_LOSS_DEFAULTS, **_TRAIN_DEFAULTS,
           'ghost_amp': ghost_amp}
    scenes = _scene_set(cfg, seed, 16)
    model, rows = train(scenes, _train_config(cfg, seed, LossWeights()))
    baseline, brows = train(scenes, _train_config(cfg, seed, LossWeights(0, 0, 1, 0)))
    corrs = _eval_corruptions(CORRUPTION_KINDS, 0.5, seed)
    es = derive_seed(seed, 99)
    rd = evaluate_resilience(model, scenes, corrs, seed=es)
    rb = evaluate_resilience(baseline, scenes, corrs, seed=es)
    imp = 100 * (1 - rows[-1].depth_mae / brows[-1].depth_mae)
    ok = (rows[-1].depth_mae <= 0.8 * brows[-1].depth_mae
          and rd.aggregate > rb.aggregate)
    pk = lambda rep, k: np.mean([r.resilience for r in rep.rows if r.kind == k])
    print(f"  seed={seed} d={rows[-1].depth_mae:5.2f} b={brows[-1].depth_mae:5.2f} "
          f"imp={imp:5.1f}% agg {rd.aggregate:.3f}/{rb.aggregate:.3f} "
          f"margin={rd.aggregate-rb.aggregate:+.3f} "
          + " ".join(f"{k[:4]}:{pk(rd,k):.2f}/{pk(rb,k):.2f}" for k in CORRUPTION_KINDS)
          + ("  OK" if ok else "  X"), flush=True)
    return ok


if __name__ == "__main__":
    matrix = [
        (8.0, (0.5, 0.9), 0.8),
        (6.0, (0.5, 0.9), 0.75),
        (10.0, (0.5, 0.9), 0.8),
        (8.0, (0.6, 1.0), 0.75),
    ]
    seeds = (0, 2)
    for amp, sig, ghost in matrix:
        sim.BUMP_AMPLITUDE = amp
        sim.SIGNATURE_RANGE = sig
        print(f"amp={amp} sig={sig} ghost={ghost}", flush=True)
        t0 = time.time()
        for s in seeds:
            run(s, ghost)
        print(f"  ({time.time()-t0:.0f}s)", flush=True)
