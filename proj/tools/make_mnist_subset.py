#!/usr/bin/env python3
"""Convert the digits bundled with the npm `mnist` package into gzipped IDX files.

Usage: make_mnist_subset.py <npm-mnist-package-dir> <out-dir> [n_train]

The package ships 10,000 MNIST digits as per-class JSON arrays of pixel
intensities in [0, 1]. Samples are interleaved across classes in a fixed
order, the first n_train (default 8000) go to the training files and the
rest to the t10k files.
"""
import gzip
import json
import os
import struct
import sys


def main():
    pkg, out = sys.argv[1], sys.argv[2]
    n_train = int(sys.argv[3]) if len(sys.argv) > 3 else 8000
    per_class = []
    for c in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{c}.json")) as f:
            blob = json.load(f)["data"]
        per_class.append([blob[i:i + 784] for i in range(0, len(blob), 784)])
    samples = []
    cursor = [0] * 10
    while any(cursor[c] < len(per_class[c]) for c in range(10)):
        for c in range(10):
            if cursor[c] < len(per_class[c]):
                samples.append((per_class[c][cursor[c]], c))
                cursor[c] += 1
    os.makedirs(out, exist_ok=True)

    def write(prefix, part):
        with gzip.GzipFile(os.path.join(out, f"{prefix}-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">IIII", 0x803, len(part), 28, 28))
            f.write(bytes(min(255, max(0, round(v * 255))) for img, _ in part for v in img))
        with gzip.GzipFile(os.path.join(out, f"{prefix}-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
            f.write(struct.pack(">II", 0x801, len(part)))
            f.write(bytes(lbl for _, lbl in part))

    write("train", samples[:n_train])
    write("t10k", samples[n_train:])
    print(f"wrote {n_train} train / {len(samples) - n_train} test samples to {out}")


if __name__ == "__main__":
    main()
