#!/usr/bin/env python3
"""Write IDX image/label files (big-endian, magics 2051/2049).

Usage:
    write_idx.py digits <out_dir>    # scikit-learn 8x8 digits, 0..16 rescaled to 0..255
    write_idx.py fixture <out_dir>   # four 3x2 test images with known bytes
"""
import struct
import sys
from pathlib import Path


def write_images(path, images, rows, cols):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), rows, cols))
        for img in images:
            assert len(img) == rows * cols
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def digits(out):
    from sklearn.datasets import load_digits

    ds = load_digits()
    images = []
    for img in ds.images:
        images.append([int(round(v * 255.0 / 16.0)) for v in img.reshape(-1)])
    write_images(out / "digits-images-idx3-ubyte", images, 8, 8)
    write_labels(out / "digits-labels-idx1-ubyte", [int(t) for t in ds.target])


def fixture(out):
    images = [
        [0, 0, 0, 0, 0, 0],
        [255, 255, 255, 255, 255, 255],
        [0, 51, 102, 153, 204, 255],
        [17, 34, 68, 136, 1, 254],
    ]
    write_images(out / "four-images-idx3-ubyte", images, 3, 2)
    write_labels(out / "four-labels-idx1-ubyte", [0, 1, 2, 9])


if __name__ == "__main__":
    kind, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    {"digits": digits, "fixture": fixture}[kind](out)
