"""Small shared helpers."""

from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels) -> int:
    """Stable child seed from a master seed and a label path.

    All randomness in a run derives from the run seed through this split,
    so components never share or race on RNG streams.
    """
    text = f"{int(master)}|" + "|".join(str(x) for x in labels)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") & 0x7FFFFFFFFFFFFFFF
