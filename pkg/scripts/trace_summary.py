"""Summarize a training trace CSV: validation accuracy per iteration and the running best.

    python3 scripts/trace_summary.py out/trace.csv [--every 10]
"""
import argparse
import csv


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("trace")
    p.add_argument("--every", type=int, default=10, help="print every n-th iteration")
    args = p.parse_args()

    with open(args.trace, newline="") as fh:
        rows = list(csv.DictReader(fh))
    residual_cols = [c for c in rows[0] if c.startswith("residual_layer")]
    snap_cols = [c for c in rows[0] if c.startswith("snaps_layer")]
    best, best_it, total_snaps = -1.0, 0, 0
    print(f"{'iter':>5} {'val acc %':>9} {'best %':>7} {'snaps':>6}  residuals")
    for r in rows:
        it, acc = int(r["iteration"]), float(r["val_overall_accuracy"])
        total_snaps += sum(int(r[c]) for c in snap_cols)
        if acc > best:
            best, best_it = acc, it
        if it % args.every == 0 or it == int(rows[-1]["iteration"]):
            res = " ".join(f"{float(r[c]):.4g}" for c in residual_cols)
            print(f"{it:>5} {100 * acc:>9.2f} {100 * best:>7.2f} {total_snaps:>6}  {res}")
    first = float(rows[0]["val_overall_accuracy"])
    print(f"best validation accuracy {100 * best:.2f}% at iteration {best_it} "
          f"(iteration 0: {100 * first:.2f}%)")


if __name__ == "__main__":
    main()
