#!/usr/bin/env python3
"""Regenerate crates/core/data/emoji.tsv from CLDR short names.

Names come from the `emoji` package's CLDR-derived English names. Each
name is folded to ASCII, lowercased, and stripped to [a-z ].
"""
import re
import sys
import unicodedata

import emoji

ALLOWED_EXTRA = set(".,!?'# ")


def phrase(name: str) -> str:
    name = name.strip(":").replace("_", " ")
    name = unicodedata.normalize("NFKD", name)
    name = "".join(c for c in name if not unicodedata.combining(c)).lower()
    name = re.sub(r"[^a-z ]", " ", name)
    return " ".join(name.split())


def plain(key: str) -> bool:
    return all(c.isalpha() or c.isdigit() or c in ALLOWED_EXTRA for c in key)


def main(out):
    rows = []
    for key, data in emoji.EMOJI_DATA.items():
        p = phrase(data["en"])
        if not p or plain(key):
            continue
        rows.append((key, p))
    rows.sort(key=lambda r: [ord(c) for c in r[0]])
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write(f"# emoji-table v1: CLDR short names via python emoji {emoji.__version__}\n")
        f.write("# format: <emoji sequence>\\t<phrase>\n")
        for key, p in rows:
            f.write(f"{key}\t{p}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/emoji.tsv")
