#!/usr/bin/env python3
"""Regenerate the IDX image fixtures under data/.

mnist-3000-images-idx3-ubyte
    3000 MNIST digits (300 per class, classes interleaved) taken from the
    `mnist` npm package (src/digits/<d>.json, 28x28, values stored as x/255).
    Usage: npm pack mnist && tar xzf mnist-*.tgz
           python3 scripts/make_datasets.py --mnist-package package

digits-8x8-images-idx3-ubyte
    The 1797 UCI optical-recognition handwritten digits bundled with
    scikit-learn (8x8, intensities 0..16, rescaled to 0..255).
"""
import argparse
import json
import os
import struct

import numpy as np


def write_idx3(path, images):
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, rows, cols))
        fh.write(images.tobytes())


def mnist_subset(package_dir, per_class):
    per_digit = []
    for digit in range(10):
        with open(os.path.join(package_dir, "src", "digits", f"{digit}.json")) as fh:
            raw = np.asarray(json.load(fh)["data"], dtype=np.float64)
        imgs = np.rint(raw * 255.0).clip(0, 255).astype(np.uint8).reshape(-1, 28, 28)
        per_digit.append(imgs[:per_class])
    # round-robin over classes so that any contiguous slice is class-balanced
    out = [per_digit[d][i] for i in range(per_class) for d in range(10)]
    return np.stack(out)


def digits_8x8():
    from sklearn.datasets import load_digits

    images = load_digits().images  # (1797, 8, 8) in 0..16
    return np.rint(images * (255.0 / 16.0)).clip(0, 255).astype(np.uint8)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--mnist-package", required=True)
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    parser.add_argument("--per-class", type=int, default=300)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)
    write_idx3(os.path.join(args.out, "mnist-3000-images-idx3-ubyte"),
               mnist_subset(args.mnist_package, args.per_class))
    write_idx3(os.path.join(args.out, "digits-8x8-images-idx3-ubyte"), digits_8x8())


if __name__ == "__main__":
    main()
