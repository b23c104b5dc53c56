# mixflow/utils.py

import csv
import hashlib
import os
from typing import Iterable, List, Optional, Sequence

import numpy as np

try:
    from tqdm import tqdm

    _HAS_TQDM = True
except ImportError:
    _HAS_TQDM = False

# -----------------------------
# 🎲 Random Streams
# -----------------------------


def stable_hash(text: str, bits: int = 64) -> int:
    """Process-independent hash of a string (blake2b, big-endian)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=bits // 8).digest()
    return int.from_bytes(digest, "big")


def derive_seed(master_seed: int, name: str) -> int:
    """Per-item seed derived from a master seed and a name, in [0, 2**31)."""
    return stable_hash(f"{master_seed}:{name}") % (2**31)


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """
    Named counter-based random stream.

    Streams with different names never share state, so drawing from one
    cannot perturb another, whatever the interleaving.
    """
    key = stable_hash(f"{seed}:{name}", bits=128)
    return np.random.Generator(
        np.random.Philox(key=[key & 0xFFFFFFFFFFFFFFFF, key >> 64])
    )


# -----------------------------
# 📁 CSV Utilities
# -----------------------------


def format_float(value: float) -> str:
    """Shortest round-trip text for a float (repr)."""
    return repr(float(value))


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Write a CSV file, creating parent directories."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def read_csv_rows(path: str) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# -----------------------------
# 📊 Progress Display
# -----------------------------


def progress_bar(total: int, desc: str, disable: bool = False):
    """tqdm progress bar when available, otherwise a silent stand-in."""
    if _HAS_TQDM and not disable:
        return tqdm(total=total, desc=desc, unit="ep")

    class Dummy:
        def update(self, n):
            pass

        def set_postfix(self, **kwargs):
            pass

        def close(self):
            pass

    return Dummy()


def env_threads(default: Optional[int] = None) -> Optional[int]:
    """Parallelism degree from MIXFLOW_THREADS, if set."""
    raw = os.environ.get("MIXFLOW_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw)
    except ValueError:
        return default
    return max(1, value)
