#!/usr/bin/env python3
"""Writes the oracle files the corpus manifests check against.

Computed on the host with numpy, independently of the simulator.
"""
import pathlib

import numpy as np

out = pathlib.Path(__file__).resolve().parent.parent / "tests" / "corpus" / "oracles"
out.mkdir(parents=True, exist_ok=True)

i = np.arange(1000, dtype=np.float64)
a = (0.0 + i * 0.5).astype(np.float32)
b = (1.0 + i * 0.25).astype(np.float32)
c = (a + b).astype(np.float32)
(out / "vecadd_c.bin").write_bytes(c.astype("<f4").tobytes())

bad = bytearray(c.astype("<f4").tobytes())
bad[1234] ^= 0x40
(out / "vecadd_c_corrupt.bin").write_bytes(bytes(bad))
