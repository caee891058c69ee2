#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX format, gzip) from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, MIT) ships 10,001 MNIST
digits as JSON arrays of 784 pixel intensities scaled to [0, 1] with three
decimals. This script rescales them to bytes, shuffles with a fixed seed and
writes 8,000 training and 2,000 test examples as standard IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/make_mnist_subset.py package data/mnist-subset
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

TRAIN, TEST = 8000, 2000


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src = Path(sys.argv[1]) / "src" / "digits"
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    examples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        for k in range(len(flat) // 784):
            px = [min(255, max(0, round(v * 255))) for v in flat[k * 784:(k + 1) * 784]]
            examples.append((px, digit))
    random.Random(0).shuffle(examples)
    train, test = examples[:TRAIN], examples[TRAIN:TRAIN + TEST]
    write_images(out / "train-images-idx3-ubyte.gz", [e[0] for e in train])
    write_labels(out / "train-labels-idx1-ubyte.gz", [e[1] for e in train])
    write_images(out / "t10k-images-idx3-ubyte.gz", [e[0] for e in test])
    write_labels(out / "t10k-labels-idx1-ubyte.gz", [e[1] for e in test])


if __name__ == "__main__":
    main()
