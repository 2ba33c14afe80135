#!/usr/bin/env python3
"""Paired t-test between two per-pair metric files written by `rrank evaluate --pairs`.

Rows are joined on (user, item); the metric column defaults to ndcg.
"""

import argparse
import csv
import sys

from scipy import stats


def load(path, column):
    with open(path, newline="") as f:
        return {(r["user"], r["item"]): float(r[column]) for r in csv.DictReader(f, delimiter="\t")}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("a")
    ap.add_argument("b")
    ap.add_argument("--metric", default="ndcg", choices=["ndcg", "pre", "rec", "f1"])
    args = ap.parse_args(argv)

    a, b = load(args.a, args.metric), load(args.b, args.metric)
    keys = sorted(a.keys() & b.keys())
    if len(keys) < 2:
        print("need at least two shared pairs", file=sys.stderr)
        return 1
    xs, ys = [a[k] for k in keys], [b[k] for k in keys]
    t, p = stats.ttest_rel(xs, ys)
    print(f"pairs {len(keys)}")
    print(f"mean a {sum(xs) / len(xs):.6f}")
    print(f"mean b {sum(ys) / len(ys):.6f}")
    print(f"t {t:.4f}")
    print(f"p {p:.3g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
