"""Bundled assembly programs with their expected verdicts.

Each ``.mvasm`` file starts with comment headers::

    # expect: verified | rejected@<offset>
    # control: <entry>        unsafe program whose entry faults when run unverified
    # run: <entry> [args]     a verified entry point worth executing
    # result: <values>        what that run returns
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from ..ir import Program, parse_program

CORPUS_DIR = Path(__file__).resolve().parent
_HEADER = re.compile(r"#\s*(expect|control|run|result):\s*(.*)$")


@dataclass
class CorpusEntry:
    name: str
    path: Path
    program: Program
    verified: bool
    offset: Optional[int] = None
    control: Optional[str] = None
    run: Optional[list] = None
    result: Optional[list] = None


def parse_headers(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        m = _HEADER.match(line.strip())
        if m:
            out[m.group(1)] = m.group(2).strip()
    return out


def load_entry(path) -> CorpusEntry:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    h = parse_headers(text)
    expect = h.get("expect")
    if expect is None:
        raise ValueError(f"{path}: missing '# expect:' header")
    if expect == "verified":
        verified, offset = True, None
    else:
        m = re.fullmatch(r"rejected@(\d+)", expect)
        if not m:
            raise ValueError(f"{path}: bad expect header {expect!r}")
        verified, offset = False, int(m.group(1))
    return CorpusEntry(
        name=path.stem, path=path, program=parse_program(text), verified=verified, offset=offset,
        control=h.get("control"),
        run=h["run"].split() if "run" in h else None,
        result=h["result"].split() if "result" in h else None,
    )


def load_corpus(directory=None) -> dict:
    """name -> CorpusEntry for every ``.mvasm`` file in ``directory`` (default: the bundled corpus)."""
    d = Path(directory) if directory is not None else CORPUS_DIR
    return {p.stem: load_entry(p) for p in sorted(d.glob("*.mvasm"))}
