#!/usr/bin/env python3
"""Build the LIBSVM ``mushrooms`` file from the UCI agaricus-lepiota table.

Each of the 22 categorical attributes is one-hot encoded over the values
that actually occur, in the order the UCI ``.names`` file lists them.
``stalk-root`` (the only attribute with missing entries) is dropped, which
leaves 112 binary features. Labels are written as 1 (edible) and 2
(poisonous).

Usage::

    python scripts/make_mushrooms.py agaricus-lepiota.data data/mushrooms.gz
"""

import argparse
import csv
import gzip
import hashlib

ATTRIBUTES = [
    ("cap-shape", "bcxfks"),
    ("cap-surface", "fgys"),
    ("cap-color", "nbcgrpuewy"),
    ("bruises", "tf"),
    ("odor", "alcyfmnps"),
    ("gill-attachment", "adfn"),
    ("gill-spacing", "cwd"),
    ("gill-size", "bn"),
    ("gill-color", "knbhgropuewy"),
    ("stalk-shape", "et"),
    ("stalk-root", "bcuezr?"),
    ("stalk-surface-above-ring", "fyks"),
    ("stalk-surface-below-ring", "fyks"),
    ("stalk-color-above-ring", "nbcgopewy"),
    ("stalk-color-below-ring", "nbcgopewy"),
    ("veil-type", "pu"),
    ("veil-color", "nowy"),
    ("ring-number", "not"),
    ("ring-type", "ceflnpsz"),
    ("spore-print-color", "knbhrouwy"),
    ("population", "acnsvy"),
    ("habitat", "glmpuwd"),
]
DROPPED = {"stalk-root"}
EXPECTED_SHA256 = "e65d082030501a3ebcbcd7c9f7c71aa9d28fdfff463bf4cf4716a3fe13ac360e"


def build(rows):
    columns = []
    for j, (name, values) in enumerate(ATTRIBUTES):
        if name in DROPPED:
            continue
        present = {r[j + 1] for r in rows}
        columns.extend((j + 1, v) for v in values if v in present)
    index = {c: i + 1 for i, c in enumerate(columns)}
    lines = []
    for r in rows:
        feats = sorted(index[(j, r[j])] for j in range(1, len(r)) if (j, r[j]) in index)
        label = "1" if r[0] == "e" else "2"
        lines.append(label + " " + " ".join(f"{i}:1" for i in feats) + "\n")
    return lines, len(columns)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("source", help="agaricus-lepiota.data (UCI, 8124 rows)")
    ap.add_argument("dest", help="output path; .gz compresses")
    args = ap.parse_args()
    raw = open(args.source, "rb").read()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != EXPECTED_SHA256:
        print(f"warning: source checksum {digest} differs from the reference copy")
    rows = [r for r in csv.reader(raw.decode().splitlines()) if r]
    lines, d = build(rows)
    payload = "".join(lines).encode()
    with open(args.dest, "wb") as fh:
        if args.dest.endswith(".gz"):
            # mtime=0 keeps the gzip bytes reproducible
            with gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
                gz.write(payload)
        else:
            fh.write(payload)
    print(f"wrote {len(lines)} rows, {d} features to {args.dest}")


if __name__ == "__main__":
    main()
