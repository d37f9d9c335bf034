"""Particle position error between eps-runs and the limit run, with its fitted rate in epsilon."""

import argparse

from eulalign.harness import DensitySpec, build_sim_config, fit_rate, load_config, tikhonov_position_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/rates_regular.cfg")
    ap.add_argument("--N", type=int, default=64)
    args = ap.parse_args()
    conf = load_config(args.config)
    cfg = build_sim_config(conf, epsilon=conf["study.epsilons"][0]).with_(N=args.N)
    errors = tikhonov_position_error(cfg, DensitySpec.from_config(conf), conf["study.epsilons"])
    for eps, err in errors:
        print(f"epsilon {eps:<8g} max position error {err:.4e}")
    print(f"slope {fit_rate(errors).slope:.3f}")


if __name__ == "__main__":
    main()
