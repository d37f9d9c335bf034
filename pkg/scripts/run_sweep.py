"""Epsilon convergence study from a config file; prints the per-epsilon table and fitted slopes.

    python3 scripts/run_sweep.py configs/rates_regular.cfg runs/regular
    python3 scripts/run_sweep.py configs/rates_coulomb.cfg runs/coulomb --workers 4
"""

import argparse
import time

from eulalign.harness import StudySpec, epsilon_sweep, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("out")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    conf = load_config(args.config)
    if args.workers:
        conf["study.workers"] = args.workers
    study = StudySpec.from_config(conf, output_dir=args.out)
    t0 = time.perf_counter()
    rep = epsilon_sweep(study)
    names = [k for k in rep.rows[0] if k != "epsilon"]
    print("epsilon  " + "  ".join(f"{n:>24}" for n in names))
    for row in rep.rows:
        print(f"{row['epsilon']:<8g} " + "  ".join(f"{row[n]:>24.6e}" for n in names))
    print("\nfitted log-log slopes:")
    for name, fit in rep.slopes.items():
        slope = fit.get("slope")
        print(f"  {name:<28} {'n/a' if slope is None else f'{slope:.3f}'}  {fit.get('status', '')}")
    print(f"\n{time.perf_counter() - t0:.1f}s, outputs in {args.out}")


if __name__ == "__main__":
    main()
