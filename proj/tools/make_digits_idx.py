#!/usr/bin/env python3
"""Export the sklearn handwritten-digits corpus as IDX files at 14x14.

Produces train-images-idx3-ubyte / train-labels-idx1-ubyte and the t10k-*
pair in the target directory, in the standard big-endian IDX layout, so
the same loader that reads MNIST reads these. The 8x8 source images are
rescaled to 14x14 and stretched to the full 8-bit range.
"""

import struct
import sys
from pathlib import Path

import numpy as np
from PIL import Image
from sklearn.datasets import load_digits


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> int:
    if len(sys.argv) != 2:
        print(f"usage: {sys.argv[0]} OUTPUT_DIR", file=sys.stderr)
        return 2
    out = Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)

    data = load_digits()
    images8 = (data.images * (255.0 / 16.0)).clip(0, 255).astype(np.uint8)
    labels = data.target.astype(np.uint8)

    up = np.stack(
        [
            np.asarray(Image.fromarray(im).resize((14, 14), Image.BILINEAR))
            for im in images8
        ]
    )

    rng = np.random.default_rng(0)
    perm = rng.permutation(len(up))
    up, labels = up[perm], labels[perm]
    split = 1500

    write_idx_images(out / "train-images-idx3-ubyte", up[:split])
    write_idx_labels(out / "train-labels-idx1-ubyte", labels[:split])
    write_idx_images(out / "t10k-images-idx3-ubyte", up[split:])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", labels[split:])
    print(f"wrote {split} train / {len(up) - split} test images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
