"""Distinct-solution recall on seeded three-number countdown puzzles.

Takes a couple of minutes for the default 50 instances; pass
--instances 5 for a quick look.
"""

import argparse
import json
from pathlib import Path

from rover.runner import load_config, run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--instances", type=int, default=50)
    ap.add_argument("--out", default="runs/countdown")
    args = ap.parse_args()

    cfg = load_config(
        ROOT / "configs" / "countdown.json",
        {"env.n_instances": args.instances, "out": args.out},
    )
    if run_experiment(cfg) != 0:
        raise SystemExit(1)
    res = json.loads((Path(args.out) / "summary.json").read_text())["results"]
    print(f"{res['n_instances']} instances, {res['mean_solutions_per_instance']:.2f} solutions each")
    for method, s in res["methods"].items():
        print(
            f"{method:<12} recall {s['distinct_recall']['mean']:.3f} "
            f"(std {s['distinct_recall']['std']:.3f})  success {s['success_rate']['mean']:.3f}"
        )


if __name__ == "__main__":
    main()
