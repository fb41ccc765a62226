"""Few-shot prompts, instruction-tuning records, and parsers for model output."""

from __future__ import annotations

import ast
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

from . import markup
from ._rand import shuffled
from .markup import AnnotatedSentence, Label, Mode

log = logging.getLogger(__name__)

DEFAULT_INSTRUCTION = (
    "Mark the cause with <C></C>, effect with <E></E>, condition with <CO></CO>, "
    "action with <A></A>, signal with <S></S> in the sentence below."
)
DEFAULT_INSTRUCT_INSTRUCTION = "Extract the cause, condition, effect, signal, and action from the given sentence."

_LABEL_SUFFIX = re.compile(
    r"^(?P<text>.*)-\s*(?P<word>cause|effect|condition|action|signal)\s*$",
    re.IGNORECASE | re.DOTALL,
)


@dataclass(frozen=True)
class PredictedPhrase:
    text: str
    label: Label | None
    sentence_id: str | None = None
    raw_source: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("predicted phrase text must be non-empty")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "label": self.label.value if self.label else None,
            "sentence_id": self.sentence_id,
        }


@dataclass
class PromptSpec:
    shots: int = 0
    instruction_text: str = DEFAULT_INSTRUCTION
    example_pool: Sequence[AnnotatedSentence] = field(default_factory=list)
    selection_seed: int = 0

    def __post_init__(self):
        if self.shots < 0:
            raise ValueError("shots must be non-negative")
        if self.shots > len(self.example_pool):
            raise ValueError(f"{self.shots} shots requested from a pool of {len(self.example_pool)}")


def select_examples(spec: PromptSpec, exclude_plain: str | None = None) -> list[AnnotatedSentence]:
    """Seeded sample without replacement, in shuffled order.

    A pool sentence whose plain text equals *exclude_plain* is skipped, so a
    target never shows up as its own example.
    """
    pool = list(spec.example_pool)
    if exclude_plain is not None:
        key = " ".join(exclude_plain.split())
        pool = [s for s in pool if " ".join(s.plain.split()) != key]
    if spec.shots > len(pool):
        raise ValueError(f"{spec.shots} shots requested but only {len(pool)} usable pool sentences")
    return shuffled(pool, spec.selection_seed)[:spec.shots]


def build_prompt(spec: PromptSpec, target: str, exclude_target: bool = False) -> str:
    """Instruction, then the sampled tagged examples, then the target.

    The layout is::

        <instruction>

        Example 1: <tagged sentence>
        ...

        Sentence: <target>
        Tagged:
    """
    examples = select_examples(spec, target if exclude_target else None)
    parts = [spec.instruction_text.strip(), ""]
    if examples:
        for n, ex in enumerate(examples, 1):
            parts.append(f"Example {n}: {markup.serialize_sentence(ex)}")
        parts.append("")
    parts.append(f"Sentence: {' '.join(target.split())}")
    parts.append("Tagged:")
    return "\n".join(parts)


# -- instruction records ----------------------------------------------------

@dataclass(frozen=True)
class InstructRecord:
    instruction: str
    input: str
    output: str
    sentence_id: str | None = None

    def to_line(self) -> str:
        return f"###Instruction: {self.instruction} ###Input: {self.input} ###Output: {self.output}"


_LINE_RE = re.compile(r"^###Instruction: (?P<i>.*?) ###Input: (?P<in>.*) ###Output: ?(?P<out>.*)$", re.DOTALL)


def parse_instruct_line(line: str) -> InstructRecord:
    m = _LINE_RE.match(line.rstrip("\n"))
    if not m:
        raise ValueError(f"not an instruction record: {line[:60]!r}")
    return InstructRecord(m.group("i"), m.group("in"), m.group("out"))


def render_output(phrases: Iterable[markup.Phrase]) -> str:
    items = [repr(f"{p.text}-{p.label.word}") for p in sorted(phrases, key=lambda p: p.start)]
    return "[" + ", ".join(items) + "]"


def export_instruct(
    records: Iterable[AnnotatedSentence],
    instruction: str = DEFAULT_INSTRUCT_INSTRUCTION,
    with_output: bool = True,
) -> list[InstructRecord]:
    """One record per sentence. Test records (``with_output=False``) have an
    empty output."""
    out = []
    for s in records:
        plain = " ".join(s.plain.split())
        output = render_output(s.phrases) if with_output else ""
        out.append(InstructRecord(" ".join(instruction.split()), plain, output, s.sentence_id))
    return out


def write_instruct(records: Iterable[InstructRecord], fh: TextIO) -> None:
    for r in records:
        fh.write(r.to_line() + "\n")


# -- output parsers ---------------------------------------------------------

def parse_tagged_output(model_text: str, sentence_id: str | None = None) -> list[PredictedPhrase]:
    """Recover labeled spans from tagged model output (lenient parse)."""
    sentence, diags = markup.parse_sentence(model_text, Mode.LENIENT, sentence_id)
    for d in diags:
        log.debug("sentence %s: %s", sentence_id, d.message)
    return [
        PredictedPhrase(p.text, p.label, sentence_id, model_text)
        for p in sentence.phrases
        if p.text.strip()
    ]


def _split_items(body: str) -> list[str]:
    try:
        value = ast.literal_eval("[" + body + "]")
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        value = None
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return value
    # Hand-written or truncated output: split on quote-comma-quote boundaries.
    body = body.strip()
    if not body:
        return []
    items = re.split(r"""['"]\s*,\s*['"]""", body)
    items[0] = re.sub(r"""^['"]""", "", items[0])
    items[-1] = re.sub(r"""['"]$""", "", items[-1])
    return items


def split_label_suffix(item: str) -> tuple[str, Label | None]:
    """``"pre-existing diabetes-cause"`` -> ``("pre-existing diabetes", CAUSE)``.

    Only a hyphen followed by a label word at the very end counts, so hyphens
    inside the phrase are left alone.
    """
    m = _LABEL_SUFFIX.match(item)
    if m and m.group("text").strip():
        return m.group("text"), Label.from_word(m.group("word"))
    return item, None


def parse_instruct_output(model_text: str, sentence_id: str | None = None) -> list[PredictedPhrase]:
    """Parse a bracketed ``['phrase-label', ...]`` list.

    Items without a recognisable ``-label`` suffix come back with
    ``label=None``. Text without any bracketed list yields no phrases.
    """
    lo = model_text.find("[")
    hi = model_text.rfind("]")
    if lo < 0 or hi < lo:
        log.warning("sentence %s: no bracketed list in model output", sentence_id)
        return []
    out = []
    for item in _split_items(model_text[lo + 1:hi]):
        text, label = split_label_suffix(item)
        if text.strip():
            out.append(PredictedPhrase(text, label, sentence_id, model_text))
    return out


def parse_output(model_text: str, fmt: str, sentence_id: str | None = None) -> list[PredictedPhrase]:
    if fmt == "tagged":
        return parse_tagged_output(model_text, sentence_id)
    if fmt == "instruct":
        return parse_instruct_output(model_text, sentence_id)
    raise ValueError(f"unknown output format {fmt!r}")
