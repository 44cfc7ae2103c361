"""Named seed derivation.

Every random stream in the toolkit is derived from one base seed plus a
sequence of string/int labels, so a single integer reproduces a whole
experiment.  Derivation hashes the label tuple with SHA-256 (stable across
platforms and processes, unlike the builtin ``hash``).
"""

import hashlib


def derive_seed(base: int, *labels) -> int:
    """Return a 64-bit seed derived from ``base`` and the label path."""
    text = repr((int(base),) + tuple(labels))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
