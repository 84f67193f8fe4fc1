"""Merge every metrics CSV under a run directory into plot-ready tables."""

import argparse
from pathlib import Path

from rover.runner import emit_plot_data


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logs = sorted(Path(args.run_dir).glob("logs/*.csv"))
    out = args.out or Path(args.run_dir) / "plot.csv"
    long_path, agg_path = emit_plot_data(logs, out)
    print(long_path)
    print(agg_path)


if __name__ == "__main__":
    main()
