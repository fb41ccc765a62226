"""Sentence-level datasets built from tagged guideline documents."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence, TextIO

from . import markup
from ._rand import shuffled
from .markup import AnnotatedSentence, Mode

ABBREVIATIONS = frozenset({
    "e.g.", "i.e.", "dr.", "fig.", "figs.", "etc.", "vs.", "al.", "cf.", "approx.",
    "mr.", "mrs.", "ms.", "no.", "nos.", "st.", "jr.", "sr.", "vol.", "ref.", "refs.",
})
_DOTTED_INITIALS = re.compile(r"^(?:[A-Za-z]\.){2,}$")
_TERMINATORS = ".!?"
_CLOSERS = "\"')]”’"


def _tag_at(text: str, i: int):
    if text.startswith("<", i):
        m = markup.TAG_RE.match(text, i)
        if m and m.group(2) in {lab.value for lab in markup.MARKUP_LABELS}:
            return m
    return None


def _is_abbreviation(text: str, dot: int) -> bool:
    start = dot
    while start > 0 and not text[start - 1].isspace() and text[start - 1] not in "(<>":
        start -= 1
    word = text[start:dot + 1]
    return word.lower() in ABBREVIATIONS or bool(_DOTTED_INITIALS.match(word))


def segment_sentences(text: str) -> list[str]:
    """Rule-based sentence splitter that understands span tags.

    A break happens after ``.``, ``!`` or ``?`` (plus any closing quotes,
    brackets or close tags) when whitespace follows and the next visible
    character is uppercase or a digit. Breaks are suppressed inside an open
    span, inside parentheses and after known abbreviations. A blank line is
    always a break outside spans.
    """
    sentences: list[str] = []
    depth = 0  # open span tags
    parens = 0
    start = 0
    i = 0
    n = len(text)

    def flush(end: int) -> None:
        piece = text[start:end].strip()
        if piece:
            sentences.append(piece)

    while i < n:
        tag = _tag_at(text, i)
        if tag:
            depth += -1 if tag.group(1) else 1
            depth = max(depth, 0)
            i = tag.end()
            continue
        ch = text[i]
        if ch == "(":
            parens += 1
        elif ch == ")":
            parens = max(parens - 1, 0)
        elif ch == "\n" and depth == 0:
            j = i + 1
            while j < n and text[j] in " \t\r":
                j += 1
            if j < n and text[j] == "\n":
                flush(i)
                start = i = j + 1
                parens = 0
                continue
        elif ch in _TERMINATORS and parens == 0:
            j = i + 1
            d = depth
            while j < n:
                if text[j] in _TERMINATORS or text[j] in _CLOSERS:
                    j += 1
                    continue
                t = _tag_at(text, j)
                if t and t.group(1):
                    d = max(d - 1, 0)
                    j = t.end()
                    continue
                break
            if j < n and text[j].isspace() and d == 0:
                k = j
                while k < n and text[k].isspace():
                    k += 1
                while (t := _tag_at(text, k)) is not None and not t.group(1):
                    k = t.end()
                following = text[k] if k < n else ""
                abbrev = ch == "." and _is_abbreviation(text, i)
                if (following.isupper() or following.isdigit()) and not abbrev:
                    flush(j)
                    start = i = j
                    depth = d
                    continue
        i += 1
    flush(n)
    return sentences


@dataclass(frozen=True)
class CorpusRecord:
    doc_id: str
    sentence: AnnotatedSentence

    @property
    def is_causal(self) -> bool:
        return bool(self.sentence.phrases)

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentence_id": self.sentence.sentence_id,
            "raw": self.sentence.raw,
            "plain": self.sentence.plain,
            "phrases": [p.to_dict() for p in self.sentence.phrases],
            "is_causal": self.is_causal,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusRecord":
        sentence, _ = markup.parse_sentence(d["raw"], Mode.LENIENT, d["sentence_id"])
        return cls(d["doc_id"], sentence)


def build_corpus(
    docs: Iterable[tuple[str, str]], mode: Mode | str = Mode.LENIENT
) -> list[CorpusRecord]:
    """Segment and parse each ``(doc_id, tagged_text)`` pair.

    Sentence ids are ``"{doc_id}:{index}"``. Strict mode propagates the
    first :class:`~csk.markup.MarkupError`.
    """
    records = []
    for doc_id, text in docs:
        for idx, raw in enumerate(segment_sentences(text)):
            sentence, _ = markup.parse_sentence(raw, mode, f"{doc_id}:{idx}")
            records.append(CorpusRecord(doc_id, sentence))
    return records


def load_documents(paths: Iterable[str | Path]) -> list[tuple[str, str]]:
    """Read tagged text files; directories contribute their ``*.txt`` files."""
    docs = []
    for path in paths:
        path = Path(path)
        files = sorted(path.glob("*.txt")) if path.is_dir() else [path]
        for f in files:
            docs.append((f.stem, f.read_text(encoding="utf-8")))
    return docs


def write_jsonl(records: Iterable[CorpusRecord], fh: TextIO) -> None:
    for r in records:
        fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_jsonl(fh: TextIO) -> list[CorpusRecord]:
    return [CorpusRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


# -- splits -----------------------------------------------------------------

@dataclass(frozen=True)
class Holdout:
    test_fraction: Fraction | float

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class KFold:
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be at least 2")


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    mode: Holdout | KFold
    group_by_doc: bool = False

    def to_dict(self) -> dict:
        d: dict = {"seed": self.seed, "group_by_doc": self.group_by_doc}
        if isinstance(self.mode, Holdout):
            d["mode"] = "holdout"
            d["test_fraction"] = str(_as_fraction(self.mode.test_fraction))
        else:
            d["mode"] = "kfold"
            d["k"] = self.mode.k
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        if d["mode"] == "holdout":
            mode = Holdout(Fraction(d["test_fraction"]))
        else:
            mode = KFold(int(d["k"]))
        return cls(int(d["seed"]), mode, bool(d.get("group_by_doc", False)))


def _as_fraction(x: Fraction | float | str) -> Fraction:
    # str() first so 0.15 means 3/20, not its binary approximation
    return x if isinstance(x, Fraction) else Fraction(str(x))


def _round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)) // 1)


def split_indices(
    n: int, spec: SplitSpec, groups: Sequence[str] | None = None
) -> dict[str, list[int]]:
    """Partition ``range(n)`` into named parts.

    Holdout gives ``train``/``test`` with ``round(fraction * n)`` test items;
    k-fold gives ``fold0``..``fold{k-1}`` whose sizes differ by at most one.
    With *groups*, whole groups are assigned instead and sizes are only
    approximately balanced. Index lists are sorted.
    """
    if n <= 0:
        raise ValueError("cannot split an empty record list")
    if spec.group_by_doc and groups is None:
        raise ValueError("group_by_doc requires group keys")
    units: list[list[int]]
    if spec.group_by_doc:
        order: dict[str, list[int]] = {}
        for i, g in enumerate(groups):
            order.setdefault(g, []).append(i)
        units = shuffled(list(order.values()), spec.seed)
    else:
        units = [[i] for i in shuffled(range(n), spec.seed)]

    if isinstance(spec.mode, Holdout):
        n_test = _round_half_up(_as_fraction(spec.mode.test_fraction) * n)
        if n_test <= 0 or n_test >= n:
            raise ValueError(f"test fraction {spec.mode.test_fraction} leaves an empty train or test set for n={n}")
        test: list[int] = []
        cut = 0
        while cut < len(units) and len(test) < n_test:
            test.extend(units[cut])
            cut += 1
        train = [i for u in units[cut:] for i in u]
        if not train or not test:
            raise ValueError("grouping leaves an empty train or test set")
        return {"train": sorted(train), "test": sorted(test)}

    k = spec.mode.k
    if k > len(units):
        raise ValueError(f"k={k} exceeds the number of split units ({len(units)})")
    folds: list[list[int]] = [[] for _ in range(k)]
    if spec.group_by_doc:
        for u in units:
            smallest = min(range(k), key=lambda f: (len(folds[f]), f))
            folds[smallest].extend(u)
    else:
        base, extra = divmod(len(units), k)
        pos = 0
        for f in range(k):
            size = base + (1 if f < extra else 0)
            folds[f] = [i for u in units[pos:pos + size] for i in u]
            pos += size
    return {f"fold{f}": sorted(fold) for f, fold in enumerate(folds)}


def split(records: Sequence[CorpusRecord], spec: SplitSpec) -> dict[str, list[CorpusRecord]]:
    parts = split_indices(len(records), spec, [r.doc_id for r in records])
    return {name: [records[i] for i in idx] for name, idx in parts.items()}


def split_manifest(records: Sequence[CorpusRecord], spec: SplitSpec) -> dict:
    parts = split_indices(len(records), spec, [r.doc_id for r in records])
    return {"spec": spec.to_dict(), "n": len(records), "partitions": parts}
