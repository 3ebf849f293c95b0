#!/usr/bin/env python3
"""Build the 2,000-image digit fixture used by the desk-scale experiment.

Source: the 5,000-sample MNIST subset shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per digit, pixel values 0-255,
label in the last column). The first 200 images of every digit are taken and
interleaved digit by digit, then written as standard IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx
       python3 scripts/make_digits_idx.py /tmp/mlx/mlxtend-*.whl crates/core/tests/data
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

PER_DIGIT = 200


def main(wheel: str, out_dir: str) -> None:
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = [line.split(",") for line in gzip.decompress(raw).decode().strip().split("\n")]
    by_digit = {d: [] for d in range(10)}
    for row in rows:
        digit = int(float(row[-1]))
        if len(by_digit[digit]) < PER_DIGIT:
            by_digit[digit].append(bytes(int(float(v)) for v in row[:-1]))
    images, labels = [], []
    for i in range(PER_DIGIT):
        for d in range(10):
            images.append(by_digit[d][i])
            labels.append(d)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with open(out / "digits-2k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(img)
    with open(out / "digits-2k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
