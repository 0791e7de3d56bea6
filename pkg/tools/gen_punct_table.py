#!/usr/bin/env python3
"""Regenerate the frozen punctuation table used by answer normalization.

Inclusion rule (keep in sync with tests/reference_scorer.py, which rebuilds
the same set independently):
  - every ASCII character in string.punctuation
  - every code point whose Unicode category starts with "P"
  - symbol code points from the CJK punctuation / vertical-forms /
    halfwidth-and-fullwidth blocks (categories other than L*, N*, Z*)

Whitespace (category Z*) is deliberately excluded: it is handled by the
whitespace-standardization step, not the punctuation strip.
"""

import string
import sys
import unicodedata
from pathlib import Path

CJK_SYMBOL_BLOCKS = ((0x3000, 0x303F), (0xFE30, 0xFE4F), (0xFF00, 0xFFEF))

OUT = Path(__file__).resolve().parent.parent / "src" / "raft_forge" / "data" / "punctuation_v1.txt"


def build_table() -> list[str]:
    chars = set(string.punctuation)
    for cp in range(sys.maxunicode + 1):
        ch = chr(cp)
        cat = unicodedata.category(ch)
        if cat.startswith("P"):
            chars.add(ch)
        elif any(lo <= cp <= hi for lo, hi in CJK_SYMBOL_BLOCKS) and cat[0] not in "LNZC":
            chars.add(ch)
    return sorted(chars)


def main() -> None:
    chars = build_table()
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        fh.write("# punctuation table v1: one character per line, U+XXXX escapes\n")
        for ch in chars:
            fh.write(f"U+{ord(ch):04X}\n")
    print(f"wrote {len(chars)} characters to {OUT}")


if __name__ == "__main__":
    main()
