"""Modulated Coulomb energy identity: residual of the paired eps/limit runs under time-step refinement."""

import argparse

import numpy as np

from eulalign.entropy import coulomb_identity_residual
from eulalign.harness import DensitySpec, build_sim_config, load_config, well_prepared_init
from eulalign.limit import simulate_limit
from eulalign.particles import simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/coulomb_identity.cfg")
    ap.add_argument("--levels", type=int, default=3)
    args = ap.parse_args()
    conf = load_config(args.config)
    cfg = build_sim_config(conf)
    init, x0 = well_prepared_init(DensitySpec.from_config(conf), cfg.N, cfg.seed, cfg)
    prev = None
    for k in range(args.levels):
        c = cfg.with_(dt=cfg.dt / 2 ** k, snapshot_every=1)
        res = coulomb_identity_residual(simulate(c, init, record_energy=False), simulate_limit(c, x0))
        m = float(np.max(res))
        print(f"dt {c.dt:.3e}  max residual {m:.3e}  mean {np.mean(res):.3e}"
              + ("" if prev is None else f"  ratio {prev / m:.3f}"))
        prev = m


if __name__ == "__main__":
    main()
