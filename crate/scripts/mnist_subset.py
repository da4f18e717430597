"""Build the small MNIST IDX fixture used by the desk-scale reduction check.

Input: the digit JSON files shipped in the `mnist` npm package
(`package/src/digits/{0..9}.json`, 10000 samples with pixels in [0, 1]).
Output: IDX files with 1000 training and 2000 test samples, drawn by a
seeded shuffle so the split is reproducible.

    python3 scripts/mnist_subset.py <digits_dir> <out_dir>
"""

import json
import struct
import sys
from pathlib import Path

import numpy as np

TRAIN, TEST, SEED = 1000, 2000, 0


def write_idx(out: Path, stem: str, images: np.ndarray, labels: np.ndarray) -> None:
    n = len(labels)
    with open(out / f"{stem}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(out / f"{stem}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    digits, out = Path(sys.argv[1]), Path(sys.argv[2])
    images, labels = [], []
    for d in range(10):
        raw = np.asarray(json.loads((digits / f"{d}.json").read_text())["data"], dtype=np.float64)
        block = np.rint(raw.reshape(-1, 784) * 255.0).clip(0, 255)
        images.append(block)
        labels.append(np.full(len(block), d))
    images, labels = np.concatenate(images), np.concatenate(labels)
    order = np.random.RandomState(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out, "train", images[:TRAIN], labels[:TRAIN])
    write_idx(out, "t10k", images[TRAIN:TRAIN + TEST], labels[TRAIN:TRAIN + TEST])


if __name__ == "__main__":
    main()
