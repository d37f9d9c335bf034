"""Flow-map Lipschitz and stability checks against the limit field of a config's limit run."""

import argparse
import sys

from eulalign.cli import run_cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", nargs="?", default="configs/flow.cfg")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    argv = ["verify-flow", "--config", args.config] + (["--out", args.out] if args.out else [])
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
