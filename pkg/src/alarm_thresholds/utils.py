import hashlib
import json
import os
from datetime import datetime, timezone
from typing import Any

import numpy as np


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def derive_seed(master: int, *keys: Any) -> int:
    """Split a master seed into an independent child seed.

    The child is the first 8 bytes of SHA-256 over ``"master:key1:key2:..."``
    read big-endian and masked to 63 bits, so it is stable across platforms
    and Python versions.
    """

    material = ":".join(str(part) for part in (master, *keys))
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFF_FFFF_FFFF_FFFF


def make_rng(seed: int) -> np.random.Generator:
    # Philox is counter-based; streams are reproducible across platforms.
    return np.random.Generator(np.random.Philox(int(seed)))


def write_json(path: str, data) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, ensure_ascii=False, indent=2)
    except OSError as exc:
        raise OSError(f"Cannot write {path}: {exc}") from exc


def read_json(path: str):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def ensure_dir(path: str) -> None:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise OSError(f"Cannot create directory {path}: {exc}") from exc
