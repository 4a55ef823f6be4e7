#!/usr/bin/env python3
"""Fetch MNIST training images and labels as IDX files.

Tries the usual IDX mirrors first. When none is reachable, falls back to the
`mnist` npm package (1.1.0), whose per-digit JSON files hold 28x28 images
scaled to [0, 1]; those are converted back to bytes with round(255 v) and
written in the IDX layout, digits interleaved 0, 1, ..., 9, 0, 1, ...

Usage: scripts/fetch_mnist.py [--out data/mnist]
"""

import argparse
import gzip
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
import urllib.request
from pathlib import Path

MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
    "http://yann.lecun.com/exdb/mnist/",
]
FILES = ["train-images-idx3-ubyte", "train-labels-idx1-ubyte"]
PIXELS = 28 * 28


def from_mirrors(out: Path) -> bool:
    for base in MIRRORS:
        try:
            blobs = {}
            for name in FILES:
                with urllib.request.urlopen(base + name + ".gz", timeout=30) as r:
                    blobs[name] = gzip.decompress(r.read())
        except OSError as e:
            print(f"{base}: {e}", file=sys.stderr)
            continue
        for name, data in blobs.items():
            (out / name).write_bytes(data)
        print(f"fetched from {base}")
        return True
    return False


def from_npm(out: Path) -> None:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True, stdout=subprocess.DEVNULL)
        with tarfile.open(next(Path(tmp).glob("mnist-*.tgz"))) as tar:
            tar.extractall(tmp, filter="data")
        digits = []
        for d in range(10):
            data = json.loads((Path(tmp) / "package/src/digits" / f"{d}.json").read_text())["data"]
            digits.append([data[k : k + PIXELS] for k in range(0, len(data), PIXELS)])
    images, labels = [], []
    for k in range(max(len(imgs) for imgs in digits)):
        for d, imgs in enumerate(digits):
            if k < len(imgs):
                images.append(bytes(round(255 * v) for v in imgs[k]))
                labels.append(d)
    (out / FILES[0]).write_bytes(struct.pack(">IIII", 0x803, len(images), 28, 28) + b"".join(images))
    (out / FILES[1]).write_bytes(struct.pack(">II", 0x801, len(labels)) + bytes(labels))
    print(f"converted {len(images)} images from the mnist npm package")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("data/mnist"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    if not from_mirrors(args.out):
        from_npm(args.out)


if __name__ == "__main__":
    main()
