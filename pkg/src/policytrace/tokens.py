"""Token count estimation.

Everything downstream (context-window checks, cost accounting, policy size
reports) goes through a pluggable tokenizer callable so a real BPE tokenizer
can be swapped in. The default is a byte-level estimator calibrated to the
common ~4 bytes/token ratio of BPE vocabularies.
"""

from __future__ import annotations

from typing import Callable

Tokenizer = Callable[[str], int]

BYTES_PER_TOKEN = 4


def estimate_tokens(text: str) -> int:
    """Approximate BPE token count: ceil(utf8_bytes / 4), 0 for empty text."""
    if not text:
        return 0
    n = len(text.encode("utf-8"))
    return max(1, (n + BYTES_PER_TOKEN - 1) // BYTES_PER_TOKEN)
