"""Build the balanced MNIST subset in data/mnist-subset from the `mnist` npm package.

Usage: python3 scripts/make_mnist_subset.py <path-to-unpacked-npm-package> [per_class]

The npm package stores each digit as 784 intensities scaled to [0, 1] and
rounded to three decimals; they are mapped back to 0..255 bytes.
"""
import json
import random
import struct
import sys
from pathlib import Path

pkg = Path(sys.argv[1])
per_class = int(sys.argv[2]) if len(sys.argv) > 2 else 250
out = Path(__file__).resolve().parent.parent / "data" / "mnist-subset"
out.mkdir(parents=True, exist_ok=True)

rng = random.Random(20240517)
images, labels = [], []
for digit in range(10):
    entries = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
    rows = [entries[i:i + 784] for i in range(0, len(entries), 784)]
    for row in rng.sample(rows, per_class):
        images.append(bytes(min(255, max(0, round(v * 255))) for v in row))
        labels.append(digit)

order = list(range(len(images)))
rng.shuffle(order)
with open(out / "images.idx3-ubyte", "wb") as f:
    f.write(struct.pack(">IIII", 0x803, len(order), 28, 28))
    for i in order:
        f.write(images[i])
with open(out / "labels.idx1-ubyte", "wb") as f:
    f.write(struct.pack(">II", 0x801, len(order)))
    f.write(bytes(labels[i] for i in order))
print(f"wrote {len(order)} images to {out}")
