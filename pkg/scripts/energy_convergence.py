"""Discrete energy identity: max residual for a sequence of halved time steps and the observed order."""

import argparse
import math

import numpy as np

from eulalign.harness import build_sim_config, load_config
from eulalign.particles import ParticleState, energy_balance_residual, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/energy.cfg")
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()
    cfg = build_sim_config(load_config(args.config))
    rng = np.random.default_rng(cfg.seed)
    init = ParticleState(0.0, rng.normal(size=(cfg.N, cfg.domain.dim)), rng.normal(size=(cfg.N, cfg.domain.dim)))
    prev = None
    for k in range(args.levels):
        dt = cfg.dt / 2 ** k
        res = float(np.max(energy_balance_residual(simulate(cfg.with_(dt=dt), init))))
        order = "" if prev is None else f"  ratio {prev / res:.3f}  order {math.log2(prev / res):.3f}"
        print(f"dt {dt:.3e}  max residual {res:.3e}{order}")
        prev = res


if __name__ == "__main__":
    main()
