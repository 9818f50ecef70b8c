#!/usr/bin/env python3
"""Build a small MNIST training subset in IDX format.

Reads the digit arrays shipped with the `mnist` npm package (values already
scaled to [0,1] with three decimals), interleaves the ten classes round-robin
and writes gzipped IDX image/label files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist 2000
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main():
    src, out, rows = Path(sys.argv[1]), Path(sys.argv[2]), int(sys.argv[3])
    digits = [json.loads((src / f"{d}.json").read_text())["data"] for d in range(10)]
    size = 28 * 28
    images, labels = bytearray(), bytearray()
    idx = [0] * 10
    while len(labels) < rows:
        for d in range(10):
            if len(labels) == rows:
                break
            start = idx[d] * size
            px = digits[d][start:start + size]
            idx[d] += 1
            images.extend(min(255, max(0, round(v * 255))) for v in px)
            labels.append(d)
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "train-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, rows, 28, 28) + bytes(images))
    with gzip.GzipFile(out / "train-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, rows) + bytes(labels))


if __name__ == "__main__":
    main()
