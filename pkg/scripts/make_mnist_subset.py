"""Build small IDX fixtures from the 5000-image MNIST sample bundled with mlxtend.

The sample holds 500 images per digit, sorted by label. The first 300 of each
digit go to the training split and the remaining 200 to the test split.

    pip download mlxtend --no-deps -d /tmp/mlx
    python scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl tests/data
"""

import gzip
import io
import sys
import zipfile
from pathlib import Path

import numpy as np

from crdonn.dataio import encode_idx

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(wheel: str, out_dir: str) -> None:
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    train, test = [], []
    for digit in range(10):
        where = np.flatnonzero(labels == digit)
        train.extend(where[:300])
        test.extend(where[300:])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("train", np.array(train)), ("t10k", np.array(test))):
        img, lab = encode_idx(images[idx], labels[idx])
        (out / f"mnist5k-{name}-images-idx3-ubyte.gz").write_bytes(gzip.compress(img, mtime=0))
        (out / f"mnist5k-{name}-labels-idx1-ubyte.gz").write_bytes(gzip.compress(lab, mtime=0))
        print(name, len(idx))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
