#!/usr/bin/env python3
"""Regenerate the checked-in test fixtures under crates/core/tests/fixtures.

Written against the byte layout alone (struct module), independent of the
Rust writer, so the reader tests compare two implementations.

Embedding values are k/16 multiples, exact in f32 and in decimal text.
"""
import random
import struct
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"
N_RATIONALES = 20
DIM = 8


def value(r, k):
    return (((r * 5 + k * 3) % 17) - 8) / 16.0


def rationale_ids():
    return [f"r{r:02d}" for r in range(N_RATIONALES)]


def write_sebp(path, ids):
    rows = sorted(ids)
    with open(path, "wb") as f:
        f.write(b"SEBP")
        f.write(struct.pack("<IQI", 1, len(rows), DIM))
        for rid in rows:
            r = int(rid[1:])
            raw = rid.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack(f"<{DIM}f", *(value(r, k) for k in range(DIM))))


def write_tsv(path, ids):
    with open(path, "w") as f:
        for rid in sorted(ids):
            r = int(rid[1:])
            f.write(rid + "\t" + ",".join(repr(value(r, k)) for k in range(DIM)) + "\n")


def write_interactions():
    rng = random.Random(0)
    ids = rationale_ids()
    records = []
    for n in range(60):
        u = f"user{n % 8}"
        i = f"item{rng.randrange(6)}"
        k = 1 + (rng.random() < 0.4)
        rats = rng.sample(ids[(n % 8) % 4 * 5:(n % 8) % 4 * 5 + 5] + ids[:2], k)
        records.append((u, i, rats))
    # every rationale appears at least once in train
    for r, rid in enumerate(ids):
        records.append((f"user{r % 8}", f"item{r % 6}", [rid]))
    rng.shuffle(records)
    test = records[:12]
    train = records[12:]
    for name, part in (("train.0.tsv", train), ("test.0.tsv", test)):
        with open(OUT / name, "w") as f:
            for u, i, rats in part:
                f.write(f"{u}\t{i}\t{','.join(rats)}\n")
    with open(OUT / "texts.tsv", "w") as f:
        for r, rid in enumerate(ids):
            f.write(f"{rid}\trationale text number {r}\n")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    ids = rationale_ids()
    write_sebp(OUT / "emb20.sebp", ids)
    write_tsv(OUT / "emb20.tsv", ids)
    write_interactions()


if __name__ == "__main__":
    main()
