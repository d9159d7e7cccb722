"""Write the small binary fixtures used by the parser tests.

Pixel values follow closed formulas so the tests can recompute them:
  MNIST image i, row r, col c:   (37 * i + 11 * r + 3 * c) % 256, labels 3, 8
  CIFAR record, channel ch, row r, col c:   (5 * ch + 7 * r + 13 * c) % 256, label 6
"""

import struct
from pathlib import Path

out = Path(__file__).resolve().parent.parent / "tests" / "fixtures"
mnist = out / "mnist2"
mnist.mkdir(parents=True, exist_ok=True)

pixels = bytes((37 * i + 11 * r + 3 * c) % 256 for i in range(2) for r in range(28) for c in range(28))
(mnist / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + pixels)
(mnist / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 8]))

bad = out / "mnist_bad_magic"
bad.mkdir(parents=True, exist_ok=True)
(bad / "train-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x802, 2, 28, 28) + pixels)
(bad / "train-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 8]))

record = bytes([6]) + bytes((5 * ch + 7 * r + 13 * c) % 256 for ch in range(3) for r in range(32) for c in range(32))
(out / "cifar_one.bin").write_bytes(record)
(out / "cifar_empty.bin").write_bytes(b"")
(out / "cifar_short.bin").write_bytes(record[:-1])
