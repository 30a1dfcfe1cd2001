"""Subkey derivation: every random stream is a child of one root seed.

``derive_seed(root, "stream", i, j)`` hashes the stream name with CRC32 and builds
``SeedSequence(root, spawn_key=(crc, i, j))``; its first 32-bit word is the child
seed. Streams used by the pipeline: "scene" (per-scene geometry jitter and pose),
"views" (per-scene joint noise, depth offsets and outliers), "penetration"
(Monte Carlo points per lifted view) and "inpaint" (toy diffusion noise).
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(root: int, stream: str, *index: int) -> int:
    key = (zlib.crc32(stream.encode("utf-8")),) + tuple(int(i) for i in index)
    return int(np.random.SeedSequence(int(root), spawn_key=key).generate_state(1)[0])


def derive_rng(root: int, stream: str, *index: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, stream, *index))
