"""Exhaustive optimality and bound checks over seeded random trees."""

import argparse
import json

from rover.theorems import run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--trees", type=int, default=500)
    args = ap.parse_args()
    report, _ = run_suite(args.trees)
    print(json.dumps(report.as_dict(), indent=2))
    bad = report.theorem1_violations + report.theorem2_violations + report.enumeration_violations
    raise SystemExit(1 if bad else 0)


if __name__ == "__main__":
    main()
