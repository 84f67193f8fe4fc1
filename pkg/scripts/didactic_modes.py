"""Train all three methods on the four-mode didactic tree and print a table.

    python3 scripts/didactic_modes.py --out runs/didactic
"""

import argparse
import json
from pathlib import Path

from rover.runner import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "didactic.json")
    ap.add_argument("--out", default="runs/didactic")
    args = ap.parse_args()

    cfg = load_config(args.config, {"out": args.out})
    if run_experiment(cfg) != 0:
        raise SystemExit(1)
    res = json.loads((Path(args.out) / "summary.json").read_text())["results"]
    keys = ("success_rate", "mode_coverage", "root_entropy", "mean_traj_entropy")
    print(f"{'method':<12}" + "".join(f"{k:>19}" for k in keys))
    for method, stats in res["methods"].items():
        print(f"{method:<12}" + "".join(f"{stats[k]['mean']:>19.3f}" for k in keys))


if __name__ == "__main__":
    main()
