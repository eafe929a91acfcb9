"""Samples file: a ``#`` header line, then one escaped sample per line.

Escapes: ``\\\\`` backslash, ``\\n`` newline, ``\\r`` carriage return,
``\\xHH`` a byte that is not valid UTF-8, ``\\e`` / ``\\p`` / ``\\m`` the EOS /
PAD / MASK ids.  The escaping is lossless, so token ids can be recovered.
"""

from __future__ import annotations

import json
from pathlib import Path

from .corpus import EOS, MASK, PAD
from .errors import ValidationError
from .metrics import SampleSet

HEADER_PREFIX = "# paralab-samples "
_SPECIAL_TO_ESC = {EOS: "\\e", PAD: "\\p", MASK: "\\m"}
_ESC_TO_SPECIAL = {"e": EOS, "p": PAD, "m": MASK}


def escape(ids) -> str:
    out: list[str] = []
    run: list[int] = []

    def flush():
        if not run:
            return
        text = bytes(run).decode("utf-8", errors="surrogateescape")
        for ch in text:
            if ch == "\\":
                out.append("\\\\")
            elif ch == "\n":
                out.append("\\n")
            elif ch == "\r":
                out.append("\\r")
            elif "\udc80" <= ch <= "\udcff":
                out.append(f"\\x{ord(ch) - 0xDC00:02x}")
            else:
                out.append(ch)
        run.clear()

    for tok in ids:
        tok = int(tok)
        if tok < 256:
            run.append(tok)
        else:
            flush()
            out.append(_SPECIAL_TO_ESC[tok])
    flush()
    return "".join(out)


def unescape(line: str) -> list[int]:
    ids: list[int] = []
    i = 0
    while i < len(line):
        ch = line[i]
        if ch != "\\":
            ids.extend(ch.encode("utf-8"))
            i += 1
            continue
        code = line[i + 1 : i + 2]
        if code == "\\":
            ids.append(0x5C)
        elif code == "n":
            ids.append(0x0A)
        elif code == "r":
            ids.append(0x0D)
        elif code == "x":
            ids.append(int(line[i + 2 : i + 4], 16))
            i += 2
        elif code in _ESC_TO_SPECIAL:
            ids.append(_ESC_TO_SPECIAL[code])
        else:
            raise ValidationError(f"bad escape sequence \\{code!s}")
        i += 2
    return ids


def write_samples(path: str | Path, token_samples, header: dict) -> None:
    lines = [HEADER_PREFIX + json.dumps(header, sort_keys=True)]
    lines += [escape(s) for s in token_samples]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def read_samples(path: str | Path) -> SampleSet:
    raw = Path(path).read_bytes().decode("utf-8")
    lines = raw.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(HEADER_PREFIX):
        raise ValidationError(f"{path}: missing samples header")
    header = json.loads(lines[0][len(HEADER_PREFIX):])
    return SampleSet.from_tokens([unescape(line) for line in lines[1:]], provenance=header)
