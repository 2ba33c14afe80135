#!/usr/bin/env python3
"""Convert an EXTRA dataset directory into rrank's TSV layout.

Expected input (as distributed with EXTRA):
  IDs.pickle       list of dicts with keys user, item, exp_idx (list of rationale ids)
  id2exp.json      rationale id -> sentence (optional, becomes texts.tsv)
  1/ .. 5/         train.index / test.index, whitespace-separated row numbers into IDs.pickle

Output:
  train.<k>.tsv, test.<k>.tsv for k = 0..4 (EXTRA folder k+1), and texts.tsv.
Rationale ids become "e<id>". Records with an empty rationale list are dropped.
"""

import argparse
import json
import os
import pickle
import sys


def read_index(path):
    with open(path) as f:
        return [int(tok) for tok in f.read().split()]


def clean(s):
    return str(s).replace("\t", " ").replace("\n", " ").strip()


def write_records(path, rows, records):
    kept = 0
    with open(path, "w") as out:
        for n in rows:
            r = records[n]
            rats = [f"e{e}" for e in r["exp_idx"]]
            if not rats:
                continue
            out.write(f"{clean(r['user'])}\t{clean(r['item'])}\t{','.join(rats)}\n")
            kept += 1
    return kept


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("extra_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args(argv)

    with open(os.path.join(args.extra_dir, "IDs.pickle"), "rb") as f:
        records = pickle.load(f)
    os.makedirs(args.out_dir, exist_ok=True)

    for k in range(args.folds):
        fold_dir = os.path.join(args.extra_dir, str(k + 1))
        for part in ("train", "test"):
            rows = read_index(os.path.join(fold_dir, f"{part}.index"))
            kept = write_records(os.path.join(args.out_dir, f"{part}.{k}.tsv"), rows, records)
            print(f"fold {k} {part}: {kept} of {len(rows)} records", file=sys.stderr)

    texts = os.path.join(args.extra_dir, "id2exp.json")
    if os.path.exists(texts):
        with open(texts) as f:
            id2exp = json.load(f)
        with open(os.path.join(args.out_dir, "texts.tsv"), "w") as out:
            for key, sentence in sorted(id2exp.items(), key=lambda kv: int(kv[0])):
                out.write(f"e{key}\t{clean(sentence)}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
