#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 real
MNIST digits as JSON arrays of 784 floats in [0, 1] (rounded to 3 decimals).
This script re-quantizes them to bytes and writes gzipped IDX files with a
fixed 8000/2000 train/test split.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN = 8000
SEED = 20211


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    samples = []
    for digit in range(10):
        data = json.loads((Path(src) / f"{digit}.json").read_text())["data"]
        for i in range(0, len(data), 784):
            pixels = [min(255, max(0, round(v * 255))) for v in data[i : i + 784]]
            samples.append((pixels, digit))
    random.Random(SEED).shuffle(samples)
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    train, test = samples[:TRAIN], samples[TRAIN:]
    write_images(out / "train-images-idx3-ubyte.gz", [s[0] for s in train])
    write_labels(out / "train-labels-idx1-ubyte.gz", [s[1] for s in train])
    write_images(out / "t10k-images-idx3-ubyte.gz", [s[0] for s in test])
    write_labels(out / "t10k-labels-idx1-ubyte.gz", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
