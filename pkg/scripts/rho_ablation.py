"""Sweep the temperature of ROVER on the didactic tree.

Small temperatures make the learned policy nearly greedy, so it keeps
fewer of the four rewarded leaves.
"""

import argparse
import json
from pathlib import Path

from rover.runner import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rho", type=float, nargs="+", default=[4.0, 1.0, 0.1, 0.01, 0.001])
    ap.add_argument("--out", default="runs/rho_ablation")
    args = ap.parse_args()

    print(f"{'rho':>8}{'coverage':>10}{'success':>9}{'root H':>9}")
    for rho in args.rho:
        out = Path(args.out) / f"rho={rho:g}"
        cfg = load_config(
            ROOT / "configs" / "didactic.json",
            {"train.rho": rho, "methods": ["rover"], "out": str(out)},
        )
        status = run_experiment(cfg)
        summary = json.loads((out / "summary.json").read_text())
        if status != 0:
            print(f"{rho:>8g}  diverged: {summary['error']}")
            continue
        s = summary["results"]["methods"]["rover"]
        print(
            f"{rho:>8g}{s['mode_coverage']['mean']:>10.3f}"
            f"{s['success_rate']['mean']:>9.3f}{s['root_entropy']['mean']:>9.3f}"
        )


if __name__ == "__main__":
    main()
