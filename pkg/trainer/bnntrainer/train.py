"""Train the reference BNN on the digit corpus and export its weight file."""

from __future__ import annotations

import argparse
import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .export import export_model
from .model import ToyBNN


def read_idx(images_path, labels_path):
    def load(path):
        raw = Path(path).read_bytes()
        return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw

    img, lab = load(images_path), load(labels_path)
    magic, n, h, w = struct.unpack(">IIII", img[:16])
    assert magic == 0x803, f"bad image magic {magic:#x}"
    lmagic, ln = struct.unpack(">II", lab[:8])
    assert lmagic == 0x801 and ln == n, "label file does not match images"
    images = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, h, w)
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8)
    return images, labels


def evaluate(model, images, labels, batch=512) -> float:
    model.eval()
    correct = 0
    with torch.no_grad():
        for i in range(0, len(labels), batch):
            x = torch.from_numpy(images[i:i + batch].astype(np.float32))[:, None] / 255.0
            pred = model(x).argmax(dim=1).numpy()
            correct += int((pred == labels[i:i + batch]).sum())
    return correct / len(labels)


def train(data_dir, out_path, epochs=6, lr=2e-3, batch=128, seed=0) -> float:
    data_dir = Path(data_dir)
    train_x, train_y = read_idx(data_dir / "digits-train-images-idx3-ubyte.gz",
                                data_dir / "digits-train-labels-idx1-ubyte.gz")
    test_x, test_y = read_idx(data_dir / "digits-test-images-idx3-ubyte.gz",
                              data_dir / "digits-test-labels-idx1-ubyte.gz")

    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = ToyBNN()
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=2, gamma=0.5)

    n = len(train_y)
    for epoch in range(epochs):
        model.train()
        order = rng.permutation(n)
        total_loss = 0.0
        for i in range(0, n, batch):
            idx = order[i:i + batch]
            x = torch.from_numpy(train_x[idx].astype(np.float32))[:, None] / 255.0
            y = torch.from_numpy(train_y[idx].astype(np.int64))
            opt.zero_grad()
            loss = F.cross_entropy(model(x), y)
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(idx)
        sched.step()
        acc = evaluate(model, test_x, test_y)
        print(f"epoch {epoch + 1}/{epochs}: loss {total_loss / n:.4f} test acc {acc:.4f}")

    acc = evaluate(model, test_x, test_y)
    blob = export_model(model)
    Path(out_path).write_bytes(blob)
    sidecar = {"trainer_test_accuracy": acc, "epochs": epochs, "lr": lr,
               "batch": batch, "seed": seed, "train_count": int(n),
               "test_count": int(len(test_y))}
    Path(out_path).with_suffix(".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"final test accuracy {acc:.4f}; wrote {out_path} ({len(blob)} bytes)")
    return acc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data-dir", required=True,
                    help="directory holding the digits-*.gz IDX files")
    ap.add_argument("--out", required=True, help="model file to write")
    ap.add_argument("--epochs", type=int, default=6)
    ap.add_argument("--lr", type=float, default=2e-3)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not Path(args.data_dir).exists():
        print(f"dataset directory {args.data_dir} is missing; "
              f"generate it with python -m bnntrainer.digits", file=sys.stderr)
        return 1
    acc = train(args.data_dir, args.out, args.epochs, args.lr, args.batch, args.seed)
    return 0 if acc >= 0.90 else 1


if __name__ == "__main__":
    raise SystemExit(main())
