"""Spiral toy set: diversity and LSL accuracy of all four variants from 4 seeds per arm.

    python3 scripts/run_spiral.py --seeds 0 1 2 3 4 --episodes 3000 --out results/spiral.json
"""
import argparse
import json
import logging
from pathlib import Path

from covaug import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--episodes", type=int, default=3000)
    ap.add_argument("--out", default="results/spiral.json")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    runs = []
    for s in args.seeds:
        run = ex.spiral_run(s, episodes=args.episodes)
        run["checks"] = ex.spiral_checks(run)
        runs.append(run)
        v = run["variants"]
        print(f"seed {s}: real div {run['real_diversity']:.3f}  "
              + "  ".join(f"{k} div {v[k]['diversity']:.3f} acc {v[k]['acc']:.3f}" for k in v)
              + f"  baseline acc {run['baseline_acc']:.3f}  checks {run['checks']}", flush=True)
    passed = {c: sum(r["checks"][c] for r in runs) for c in ("a", "b", "c")}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps({"runs": runs, "passed": passed}, indent=2) + "\n")
    print("seeds passing each condition:", passed, f"of {len(runs)}")


if __name__ == "__main__":
    main()
