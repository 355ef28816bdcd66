"""Run one or more JSON experiment plans and write CSV + manifest per plan.

    python scripts/run_study.py scripts/configs/error_vs_nm.json --out results
"""

import argparse
import json
from pathlib import Path

from xpv import harness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("configs", nargs="+", help="JSON plan files")
    p.add_argument("--out", default="results", help="root output directory")
    p.add_argument("--trials", type=int, help="override the trial count (quick look)")
    args = p.parse_args()
    for path in args.configs:
        cfg = json.loads(Path(path).read_text())
        if args.trials:
            cfg["trials"] = args.trials
        plan = harness.ExperimentPlan.from_dict(cfg)
        out = harness.run_study(plan, Path(args.out) / Path(path).stem)
        man = out["manifest"]
        print(f"{Path(path).stem}: {len(out['rows'])} rows in {man['elapsed_s']:.1f}s")
        for key in ("fit", "fits"):
            if key in man:
                print(f"  {key}: {json.dumps(man[key])}")


if __name__ == "__main__":
    main()
