"""Deterministic synthetic handwritten-digit corpus in MNIST's IDX layout.

Each class is a stroke skeleton (polylines in a unit box) rendered to a
28x28 grayscale image through a random affine jitter: rotation, scale,
shear, translation, stroke width, brightness and pixel noise. Everything is
driven by one seeded generator, so a (seed, count) pair always produces the
same corpus, byte for byte.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

# stroke skeletons per digit: lists of polylines, coordinates in [0,1]^2,
# x to the right, y downward
_S = {
    0: [[(0.50, 0.16), (0.68, 0.24), (0.72, 0.50), (0.66, 0.76), (0.50, 0.84),
         (0.34, 0.76), (0.28, 0.50), (0.32, 0.24), (0.50, 0.16)]],
    1: [[(0.38, 0.30), (0.52, 0.16)], [(0.52, 0.16), (0.52, 0.84)],
        [(0.38, 0.84), (0.66, 0.84)]],
    2: [[(0.30, 0.30), (0.36, 0.18), (0.56, 0.14), (0.68, 0.24), (0.66, 0.38),
         (0.46, 0.56), (0.30, 0.72), (0.28, 0.82)],
        [(0.28, 0.82), (0.72, 0.82)]],
    3: [[(0.32, 0.22), (0.46, 0.14), (0.62, 0.18), (0.66, 0.32), (0.54, 0.44),
         (0.42, 0.47)],
        [(0.54, 0.44), (0.68, 0.56), (0.66, 0.74), (0.50, 0.84), (0.32, 0.78)]],
    4: [[(0.60, 0.16), (0.28, 0.62)], [(0.28, 0.62), (0.76, 0.62)],
        [(0.60, 0.16), (0.60, 0.86)]],
    5: [[(0.68, 0.16), (0.34, 0.16)], [(0.34, 0.16), (0.31, 0.46)],
        [(0.31, 0.46), (0.52, 0.40), (0.68, 0.50), (0.68, 0.68), (0.54, 0.82),
         (0.32, 0.78)]],
    6: [[(0.64, 0.14), (0.46, 0.26), (0.34, 0.46), (0.31, 0.66)],
        [(0.31, 0.66), (0.38, 0.52), (0.56, 0.48), (0.68, 0.60), (0.64, 0.78),
         (0.46, 0.86), (0.33, 0.76), (0.31, 0.66)]],
    7: [[(0.28, 0.18), (0.72, 0.18)], [(0.72, 0.18), (0.44, 0.84)],
        [(0.38, 0.52), (0.62, 0.52)]],
    8: [[(0.50, 0.15), (0.65, 0.23), (0.64, 0.38), (0.50, 0.46), (0.36, 0.38),
         (0.35, 0.23), (0.50, 0.15)],
        [(0.50, 0.46), (0.68, 0.56), (0.68, 0.74), (0.50, 0.85), (0.32, 0.74),
         (0.32, 0.56), (0.50, 0.46)]],
    9: [[(0.66, 0.40), (0.52, 0.50), (0.36, 0.44), (0.32, 0.28), (0.46, 0.15),
         (0.62, 0.19), (0.66, 0.32), (0.66, 0.40)],
        [(0.66, 0.40), (0.64, 0.64), (0.56, 0.86)]],
}

HW = 28


def _segments(cls: int) -> np.ndarray:
    segs = []
    for line in _S[cls]:
        pts = np.asarray(line, dtype=np.float64)
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs)  # (nseg, 2, 2)


_SEGS = {c: _segments(c) for c in range(10)}


def _render(segs: np.ndarray, radius: float, peak: float) -> np.ndarray:
    """Distance-field rasterization of segments onto the 28x28 grid."""
    ys, xs = np.mgrid[0:HW, 0:HW]
    px = np.stack([(xs + 0.5) / HW, (ys + 0.5) / HW], axis=-1)  # (HW,HW,2)
    p, q = segs[:, 0], segs[:, 1]  # (nseg, 2)
    d = q - p
    len2 = np.maximum((d * d).sum(axis=1), 1e-12)
    rel = px[:, :, None, :] - p[None, None, :, :]
    t = np.clip((rel * d).sum(axis=-1) / len2, 0.0, 1.0)
    foot = p + t[..., None] * d
    dist = np.sqrt(((px[:, :, None, :] - foot) ** 2).sum(axis=-1)).min(axis=2)
    soft = 0.6 / HW
    ink = np.clip(1.0 - (dist - radius) / soft, 0.0, 1.0)
    return ink * peak


def _jitter(segs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    ang = rng.uniform(-0.35, 0.35)
    sx = rng.uniform(0.70, 1.18)
    sy = rng.uniform(0.70, 1.18)
    shear = rng.uniform(-0.28, 0.28)
    rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    mat = rot @ np.array([[sx, shear * sx], [0.0, sy]])
    center = np.array([0.5, 0.5])
    shift = rng.uniform(-0.10, 0.10, size=2)
    flat = segs.reshape(-1, 2)
    out = (flat - center) @ mat.T + center + shift
    # per-point wobble bends the strokes a little
    out += rng.normal(0.0, 0.016, size=out.shape)
    return out.reshape(segs.shape)


def make_digit(cls: int, rng: np.random.Generator) -> np.ndarray:
    segs = _jitter(_SEGS[cls], rng)
    radius = rng.uniform(0.024, 0.060)
    peak = rng.uniform(0.55, 1.0)
    img = _render(segs, radius, peak)
    img = img * 255.0 + rng.normal(0.0, 26.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def generate(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """(images u8 (count,28,28), labels (count,)) for a seeded corpus."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=count)
    images = np.stack([make_digit(int(c), rng) for c in labels])
    return images, labels.astype(np.uint8)


def _idx_images(images: np.ndarray) -> bytes:
    n, h, w = images.shape
    return struct.pack(">IIII", 0x803, n, h, w) + images.tobytes()


def _idx_labels(labels: np.ndarray) -> bytes:
    return struct.pack(">II", 0x801, labels.size) + labels.astype(np.uint8).tobytes()


def write_corpus(out_dir, train_count=20000, test_count=10000, seed=20240601) -> dict:
    """Write gzipped IDX train/test splits; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_images, train_labels = generate(train_count, seed)
    test_images, test_labels = generate(test_count, seed + 1)
    paths = {
        "train_images": out / "digits-train-images-idx3-ubyte.gz",
        "train_labels": out / "digits-train-labels-idx1-ubyte.gz",
        "test_images": out / "digits-test-images-idx3-ubyte.gz",
        "test_labels": out / "digits-test-labels-idx1-ubyte.gz",
    }
    _write_gz(paths["train_images"], _idx_images(train_images))
    _write_gz(paths["train_labels"], _idx_labels(train_labels))
    _write_gz(paths["test_images"], _idx_images(test_images))
    _write_gz(paths["test_labels"], _idx_labels(test_labels))
    return paths


def _write_gz(path: Path, payload: bytes) -> None:
    # mtime=0 keeps the gzip container byte-reproducible
    path.write_bytes(gzip.compress(payload, compresslevel=9, mtime=0))


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="generate the synthetic digit corpus")
    ap.add_argument("--out-dir", required=True)
    ap.add_argument("--train", type=int, default=20000)
    ap.add_argument("--test", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args(argv)
    paths = write_corpus(args.out_dir, args.train, args.test, args.seed)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
