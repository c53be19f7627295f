#!/usr/bin/env python3
"""Convert the 5000-digit MNIST subset bundled with mlxtend into IDX files.

Usage:
    pip download --no-deps -d /tmp/mlx mlxtend==0.24.0
    python3 scripts/mnist5k_to_idx.py /tmp/mlx/mlxtend-0.24.0-py3-none-any.whl data/mnist5k

The CSV inside the wheel has 784 pixel columns followed by the label. The
split is stratified and deterministic: within each class, the first 400
digits (file order) go to the training split and the remaining 100 to the
test split. File order is otherwise preserved.
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_PER_CLASS = 400


def read_rows(source: Path):
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as zf:
            raw = zf.read(MEMBER)
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode("ascii")
    for line in io.StringIO(text):
        line = line.strip()
        if not line:
            continue
        values = [int(float(v)) for v in line.split(",")]
        yield bytes(values[:784]), values[784]


def write_idx(out: Path, stem: str, rows):
    images = b"".join(px for px, _ in rows)
    labels = bytes(lbl for _, lbl in rows)
    n = len(rows)
    (out / f"{stem}-images-idx3-ubyte").write_bytes(
        struct.pack(">IIII", 0x00000803, n, 28, 28) + images
    )
    (out / f"{stem}-labels-idx1-ubyte").write_bytes(
        struct.pack(">II", 0x00000801, n) + labels
    )


def main():
    source, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    seen = [0] * 10
    train, test = [], []
    for px, label in read_rows(source):
        (train if seen[label] < TRAIN_PER_CLASS else test).append((px, label))
        seen[label] += 1
    write_idx(out, "train", train)
    write_idx(out, "t10k", test)
    print(f"train={len(train)} test={len(test)} per-class={seen}")


if __name__ == "__main__":
    main()
