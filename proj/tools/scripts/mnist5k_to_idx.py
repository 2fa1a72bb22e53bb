#!/usr/bin/env python3
"""Convert the 5,000-image MNIST sample shipped inside the mlxtend wheel to IDX files.

Usage:
    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-*.whl data/mnist5k

The CSV holds 784 pixel columns (0-255) followed by the label, 500 images per digit.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    wheel, out = Path(sys.argv[1]), Path(sys.argv[2])
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    rows = [line.split(",") for line in text.strip().split("\n")]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(int(float(v)) for v in r[:784]))
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(int(float(r[784])) for r in rows))
    print(f"wrote {len(rows)} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
