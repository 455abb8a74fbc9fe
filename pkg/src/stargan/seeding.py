"""Named random substreams derived from one run seed, and config hashing."""
from __future__ import annotations

import hashlib
import json
import zlib

import numpy as np


def substream_seed(seed: int, name: str, *keys: int) -> int:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode()), *map(int, keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def np_rng(seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name, *keys))


def torch_rng(seed: int, name: str, *keys: int):
    import torch
    return torch.Generator().manual_seed(substream_seed(seed, name, *keys))


def stable_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]
