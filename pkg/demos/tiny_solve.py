"""End-to-end run at toy scale: solve, then export the figure data.

Goes through the command-line entry point, exactly as a shell user would.

    python demos/tiny_solve.py --out run-tiny
"""
import argparse
import json
from pathlib import Path

from ksmaster import cli
from ksmaster import export as ex

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "tiny.yaml"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="run-tiny")
    args = ap.parse_args()
    out = Path(args.out)

    code = cli.main(["solve", "--config", str(CONFIG), "--out", str(out)])
    if code:
        raise SystemExit(code)
    for rep in sorted(out.glob("iter_*/report.json"), key=lambda p: int(p.parent.name[5:])):
        r = json.loads(rep.read_text())
        print(f"iteration {r['iteration']}: holdout MSE {r['mean_holdout_mse']:.3e}, "
              f"policy change {r['policy_change']:.3e}")

    for kind in ("policy-slice", "scatter", "contour", "feature-surface"):
        cli.main(["export", str(out), kind])
    corr = ex.correlations(next((out / "exports").glob("scatter_iter*.csv")))
    for (i, j), c in sorted(corr.items()):
        print(f"corr(r, F1) for aggregate state {i}, type {j}: {c:+.3f}")
    print("exports in", out / "exports")


if __name__ == "__main__":
    main()
