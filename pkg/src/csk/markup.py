"""Inline tag markup for causal spans.

Sentences carry spans such as ``<C>gestational diabetes</C>``. This module
parses that markup into plain text plus labeled character spans and writes
it back out again.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator


class Label(enum.Enum):
    CAUSE = "C"
    EFFECT = "E"
    CONDITION = "CO"
    ACTION = "A"
    SIGNAL = "S"
    OTHER = "O"

    @property
    def word(self) -> str:
        return _WORDS[self]

    @classmethod
    def from_word(cls, word: str) -> "Label":
        return _BY_WORD[word.strip().lower()]

    def __str__(self) -> str:
        return self.value


_WORDS = {
    Label.CAUSE: "cause",
    Label.EFFECT: "effect",
    Label.CONDITION: "condition",
    Label.ACTION: "action",
    Label.SIGNAL: "signal",
    Label.OTHER: "other",
}
_BY_WORD = {w: lab for lab, w in _WORDS.items() if lab is not Label.OTHER}

# O is a token-level label only; it never appears as a tag.
MARKUP_LABELS = frozenset(lab for lab in Label if lab is not Label.OTHER)
_TAG_LABELS = {lab.value: lab for lab in MARKUP_LABELS}

# Anything shaped like a tag. Known surface forms are checked afterwards so
# that <M> or <c> can be reported as unknown rather than silently ignored.
TAG_RE = re.compile(r"<(/?)([A-Za-z][A-Za-z0-9]*)>")


class Severity(enum.Enum):
    ERROR = "error"
    WARNING = "warning"


class DiagCode(enum.Enum):
    UNCLOSED_TAG = "UnclosedTag"
    UNOPENED_CLOSE = "UnopenedClose"
    MISMATCHED_CLOSE = "MismatchedClose"
    NESTED_TAG = "NestedTag"
    UNKNOWN_TAG = "UnknownTag"
    EMPTY_SPAN = "EmptySpan"


class Mode(enum.Enum):
    STRICT = "strict"
    LENIENT = "lenient"


@dataclass(frozen=True)
class Diagnostic:
    severity: Severity
    code: DiagCode
    offset: int
    message: str

    def to_dict(self) -> dict:
        return {
            "severity": self.severity.value,
            "code": self.code.value,
            "offset": self.offset,
            "message": self.message,
        }


class MarkupError(ValueError):
    """Raised by strict parsing on the first malformed construct."""

    def __init__(self, diagnostic: Diagnostic):
        super().__init__(f"{diagnostic.code.value} at offset {diagnostic.offset}: {diagnostic.message}")
        self.diagnostic = diagnostic


@dataclass(frozen=True)
class Phrase:
    label: Label
    text: str
    start: int
    end: int
    sentence_id: str | None = None

    def to_dict(self) -> dict:
        return {"label": self.label.value, "text": self.text, "start": self.start, "end": self.end}


@dataclass(frozen=True)
class AnnotatedSentence:
    sentence_id: str | None
    raw: str
    plain: str
    phrases: tuple[Phrase, ...] = ()

    @property
    def is_causal(self) -> bool:
        return bool(self.phrases)

    def to_dict(self, diagnostics: Iterable[Diagnostic] = ()) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "plain": self.plain,
            "phrases": [p.to_dict() for p in self.phrases],
            "diagnostics": [d.to_dict() for d in diagnostics],
        }


@dataclass
class AnnotatedDocument:
    doc_id: str
    sentences: list[AnnotatedSentence] = field(default_factory=list)

    def __iter__(self) -> Iterator[AnnotatedSentence]:
        return iter(self.sentences)


def parse_sentence(
    raw: str, mode: Mode | str = Mode.STRICT, sentence_id: str | None = None
) -> tuple[AnnotatedSentence, list[Diagnostic]]:
    """Parse tagged text into an :class:`AnnotatedSentence`.

    Strict mode raises :class:`MarkupError` on the first malformed construct.
    Lenient mode never raises: unknown tags stay as literal text, stray or
    unclosed tags are dropped, nested spans collapse into the outermost one,
    and every such repair is reported by exactly one diagnostic.
    """
    mode = Mode(mode)
    strict = mode is Mode.STRICT
    diags: list[Diagnostic] = []

    def report(severity: Severity, code: DiagCode, offset: int, message: str) -> None:
        d = Diagnostic(severity, code, offset, message)
        if strict:
            raise MarkupError(d)
        diags.append(d)

    plain_parts: list[str] = []
    plain_len = 0
    # Stack of (label, raw offset of the open tag, plain offset); only the
    # bottom entry produces a phrase, deeper ones were already diagnosed.
    stack: list[tuple[Label, int, int]] = []
    spans: list[tuple[Label, int, int]] = []
    pos = 0

    for m in TAG_RE.finditer(raw):
        chunk = raw[pos:m.start()]
        plain_parts.append(chunk)
        plain_len += len(chunk)
        pos = m.end()

        closing, name = m.group(1) == "/", m.group(2)
        label = _TAG_LABELS.get(name)
        if label is None:
            report(Severity.WARNING, DiagCode.UNKNOWN_TAG, m.start(), f"unknown tag {m.group(0)!r} kept as text")
            plain_parts.append(m.group(0))
            plain_len += len(m.group(0))
            continue

        if not closing:
            if stack:
                report(
                    Severity.ERROR, DiagCode.NESTED_TAG, m.start(),
                    f"<{name}> opened inside <{stack[0][0].value}>; inner span dropped",
                )
            stack.append((label, m.start(), plain_len))
            continue

        if not stack:
            report(Severity.ERROR, DiagCode.UNOPENED_CLOSE, m.start(), f"</{name}> without matching open tag; dropped")
            continue
        labels_open = [entry[0] for entry in stack]
        if label not in labels_open:
            report(
                Severity.ERROR, DiagCode.MISMATCHED_CLOSE, m.start(),
                f"</{name}> does not match open <{stack[-1][0].value}>; dropped",
            )
            continue
        # Pop back to the matching open tag; any inner entries were already
        # reported as nested.
        while stack[-1][0] is not label:
            stack.pop()
        outer_label, open_offset, start = stack.pop()
        if stack:
            continue
        if start == plain_len:
            report(Severity.ERROR, DiagCode.EMPTY_SPAN, open_offset, f"empty <{name}> span dropped")
            continue
        spans.append((outer_label, start, plain_len))

    chunk = raw[pos:]
    plain_parts.append(chunk)
    if stack:
        label, open_offset, _ = stack[0]
        report(Severity.ERROR, DiagCode.UNCLOSED_TAG, open_offset, f"<{label.value}> never closed; dropped")

    plain = "".join(plain_parts)
    phrases = tuple(
        Phrase(label, plain[start:end], start, end, sentence_id) for label, start, end in spans
    )
    return AnnotatedSentence(sentence_id, raw, plain, phrases), diags


def serialize_sentence(sentence: AnnotatedSentence) -> str:
    return render(sentence.plain, sentence.phrases)


def render(plain: str, phrases: Iterable[Phrase]) -> str:
    """Insert ``<L>``/``</L>`` tags into *plain* around each phrase."""
    ordered = sorted(phrases, key=lambda p: (p.start, p.end))
    out: list[str] = []
    pos = 0
    for p in ordered:
        if p.label is Label.OTHER:
            raise ValueError("label O cannot be written as a tag")
        if not 0 <= p.start < p.end <= len(plain):
            raise ValueError(f"phrase offsets [{p.start}, {p.end}) out of range")
        if p.start < pos:
            raise ValueError(f"phrase at {p.start} overlaps the previous phrase ending at {pos}")
        if plain[p.start:p.end] != p.text:
            raise ValueError(f"phrase text {p.text!r} does not match sentence text at [{p.start}, {p.end})")
        tag = p.label.value
        out.append(plain[pos:p.start])
        out.append(f"<{tag}>{p.text}</{tag}>")
        pos = p.end
    out.append(plain[pos:])
    return "".join(out)


def extract_phrases(doc: AnnotatedDocument | Iterable[AnnotatedSentence]) -> list[Phrase]:
    return [p for sentence in doc for p in sentence.phrases]


def strip_tags(raw: str) -> str:
    """Remove known tags only; unknown tag-like text is left alone."""
    return TAG_RE.sub(lambda m: "" if m.group(2) in _TAG_LABELS else m.group(0), raw)
