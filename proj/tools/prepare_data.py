#!/usr/bin/env python3
# SPDX-FileCopyrightText: © 2026 The mamil authors
# SPDX-License-Identifier: Apache-2.0
"""Builds the bundled datasets under data/ from PyPI wheels.

* Musk1 and Musk2 come from the `mil` wheel (columns: label, bag, 166
  features) and are rewritten as `bag_id,label,f1..f166` for the tabular
  loader.
* A 5000-image MNIST subset (500 per class) comes from the `mlxtend` wheel and
  is written as a pair of IDX files (ubyte images / labels).

Usage: tools/prepare_data.py [--out data] [--wheel-dir DIR]
"""
import argparse
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile


def fetch(pkg, wheel_dir):
    found = sorted(pathlib.Path(wheel_dir).glob(pkg + "-*.whl"))
    if not found:
        subprocess.check_call([sys.executable, "-m", "pip", "download", "--no-deps",
                               "-d", str(wheel_dir), pkg])
        found = sorted(pathlib.Path(wheel_dir).glob(pkg + "-*.whl"))
    return zipfile.ZipFile(found[-1])


def write_musk(out, wheel_dir, name):
    rows = fetch("mil", wheel_dir).read("mil/data/datasets/csv/%s.csv" % name).decode().splitlines()
    with open(out / (name + ".csv"), "w") as f:
        for line in rows:
            cells = line.strip().split(",")
            label, bag = cells[0], cells[1]
            f.write(",".join([bag, label] + cells[2:]) + "\n")


def write_mnist(out, wheel_dir):
    text = gzip.decompress(fetch("mlxtend", wheel_dir).read("mlxtend/data/data/mnist_5k.csv.gz"))
    pixels, labels = bytearray(), bytearray()
    rows = text.decode().splitlines()
    for line in rows:
        cells = [int(float(c)) for c in line.split(",")]
        pixels.extend(cells[:784])
        labels.append(cells[784])
    with open(out / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(rows), 28, 28))
        f.write(pixels)
    with open(out / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, len(rows)))
        f.write(labels)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--wheel-dir", default=None)
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheel_dir = args.wheel_dir or tmp
        write_musk(out, wheel_dir, "musk1")
        write_musk(out, wheel_dir, "musk2")
        write_mnist(out, wheel_dir)


if __name__ == "__main__":
    main()
