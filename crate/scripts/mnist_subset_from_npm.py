#!/usr/bin/env python3
"""Build the bundled MNIST subset (IDX, gzipped) from the `mnist` npm package.

The npm package ships 10,000 MNIST digits as JSON arrays of byte/255 values
rounded to three decimals. Rounding back to bytes recovers the original pixels.
The digits are shuffled with a fixed seed and split 5000/5000 into train/test.

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist-subset
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def write_idx_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as f:
            raw = np.asarray(json.load(f)["data"], dtype=np.float64)
        pixels = np.rint(raw * 255.0).astype(np.int64).reshape(-1, 784)
        assert pixels.min() >= 0 and pixels.max() <= 255
        images.append(pixels)
        labels.append(np.full(len(pixels), digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(20200101).permutation(len(labels))
    images, labels = images[order], labels[order]
    os.makedirs(dst, exist_ok=True)
    write_idx_images(os.path.join(dst, "train-images-idx3-ubyte.gz"), images[:5000])
    write_idx_labels(os.path.join(dst, "train-labels-idx1-ubyte.gz"), labels[:5000])
    write_idx_images(os.path.join(dst, "t10k-images-idx3-ubyte.gz"), images[5000:])
    write_idx_labels(os.path.join(dst, "t10k-labels-idx1-ubyte.gz"), labels[5000:])


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
