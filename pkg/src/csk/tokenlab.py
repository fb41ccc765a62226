"""Token-level labels: tokenization, phrase to token conversion, and
alignment repair for predictions whose token count differs from gold."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

from .markup import AnnotatedSentence, Label

PUNCT = set('.,;:()[]"“”')
_CHUNK = re.compile(r"\S+")

GAP = None

MATCH, SUBSTITUTE, DELETE, INSERT = "match", "substitute", "delete", "insert"


def _peel(chunk: str) -> list[tuple[int, int]]:
    """Split one whitespace-free chunk into (start, end) pieces."""
    lo, hi = 0, len(chunk)
    head: list[tuple[int, int]] = []
    tail: list[tuple[int, int]] = []
    while lo < hi and chunk[lo] in PUNCT:
        # ".5" and ".3,9-11" keep their leading dot
        if chunk[lo] == "." and lo + 1 < hi and chunk[lo + 1].isdigit():
            break
        head.append((lo, lo + 1))
        lo += 1
    while hi > lo and chunk[hi - 1] in PUNCT:
        tail.append((hi - 1, hi))
        hi -= 1
    middle = [(lo, hi)] if lo < hi else []
    return head + middle + tail[::-1]


def tokenize_spans(plain: str) -> list[tuple[str, int, int]]:
    """Tokens with their character offsets in *plain*."""
    out = []
    for m in _CHUNK.finditer(plain):
        base = m.start()
        for s, e in _peel(m.group(0)):
            out.append((plain[base + s:base + e], base + s, base + e))
    return out


def tokenize(plain: str) -> list[str]:
    """Whitespace split, then leading/trailing ``.,;:()[]"`` become their own
    tokens. Interior punctuation is untouched, so ``5.8%`` is one token."""
    return [t for t, _, _ in tokenize_spans(plain)]


@dataclass(frozen=True)
class TokenLabelSeq:
    tokens: tuple[str, ...]
    labels: tuple[Label, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise ValueError(f"{len(self.tokens)} tokens but {len(self.labels)} labels")
        for t in self.tokens:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"invalid token {t!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def of(cls, tokens: Iterable[str], labels: Iterable[Label | str]) -> "TokenLabelSeq":
        return cls(tuple(tokens), tuple(Label(lab) if isinstance(lab, str) else lab for lab in labels))


def to_token_labels(sentence: AnnotatedSentence) -> TokenLabelSeq:
    """Label every token by the phrase it overlaps, O otherwise.

    A token straddling a span boundary takes the span's label; if it touches
    two spans, the one covering more of its characters wins.
    """
    tokens, labels = [], []
    for tok, ts, te in tokenize_spans(sentence.plain):
        best, best_overlap = Label.OTHER, 0
        for p in sentence.phrases:
            overlap = min(te, p.end) - max(ts, p.start)
            if overlap > best_overlap:
                best, best_overlap = p.label, overlap
        tokens.append(tok)
        labels.append(best)
    return TokenLabelSeq(tuple(tokens), tuple(labels))


def label_runs(seq: TokenLabelSeq) -> list[tuple[Label, int, int]]:
    """Maximal runs of one non-O label as ``(label, first, stop)`` token ranges."""
    runs = []
    i = 0
    n = len(seq.labels)
    while i < n:
        lab = seq.labels[i]
        j = i + 1
        while j < n and seq.labels[j] is lab:
            j += 1
        if lab is not Label.OTHER:
            runs.append((lab, i, j))
        i = j
    return runs


# -- alignment --------------------------------------------------------------

@dataclass(frozen=True)
class Alignment:
    pairs: tuple[tuple[int | None, int | None], ...]
    cost: int

    def gold_indices(self) -> list[int]:
        return [g for g, _ in self.pairs if g is not None]

    def pred_indices(self) -> list[int]:
        return [p for _, p in self.pairs if p is not None]


def _same(a: str, b: str) -> bool:
    return a.casefold() == b.casefold()


def align(gold: Sequence[str], pred: Sequence[str]) -> Alignment:
    """Minimum edit-distance alignment of two token lists.

    Unit costs for insert, delete and substitute; tokens equal up to case
    match for free. On ties the traceback prefers match, then substitute,
    then delete (gold token unmatched), then insert (extra predicted token).
    """
    n, m = len(gold), len(pred)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        g = gold[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (0 if _same(g, pred[j - 1]) else 1),
                prev[j] + 1,
                row[j - 1] + 1,
            )

    pairs: list[tuple[int | None, int | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dp[i][j]
        if i > 0 and j > 0:
            same = _same(gold[i - 1], pred[j - 1])
            if same and dp[i - 1][j - 1] == here:
                pairs.append((i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
            if not same and dp[i - 1][j - 1] + 1 == here:
                pairs.append((i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
        if i > 0 and dp[i - 1][j] + 1 == here:
            pairs.append((i - 1, GAP))
            i -= 1
            continue
        pairs.append((GAP, j - 1))
        j -= 1
    pairs.reverse()
    return Alignment(tuple(pairs), dp[n][m])


@dataclass(frozen=True)
class RepairStats:
    inserted_o: int = 0
    dropped_pred: int = 0
    substitutions: int = 0

    @property
    def total(self) -> int:
        return self.inserted_o + self.dropped_pred + self.substitutions

    def __add__(self, other: "RepairStats") -> "RepairStats":
        return RepairStats(
            self.inserted_o + other.inserted_o,
            self.dropped_pred + other.dropped_pred,
            self.substitutions + other.substitutions,
        )


def project_labels(
    alignment: Alignment, pred: TokenLabelSeq, gold_tokens: Sequence[str]
) -> tuple[TokenLabelSeq, RepairStats]:
    """Carry predicted labels onto the gold tokens.

    Aligned positions (match or substitution) copy the predicted label, gold
    tokens the prediction left out get O, and extra predicted tokens are
    dropped. The result always has exactly ``len(gold_tokens)`` labels.
    """
    if alignment.gold_indices() != list(range(len(gold_tokens))):
        raise ValueError("alignment does not cover the gold tokens exactly once, in order")
    if alignment.pred_indices() != list(range(len(pred))):
        raise ValueError("alignment does not cover the predicted tokens exactly once, in order")
    labels = []
    inserted = dropped = subs = 0
    for g, p in alignment.pairs:
        if g is None:
            dropped += 1
        elif p is None:
            labels.append(Label.OTHER)
            inserted += 1
        else:
            labels.append(pred.labels[p])
            if not _same(gold_tokens[g], pred.tokens[p]):
                subs += 1
    return TokenLabelSeq(tuple(gold_tokens), tuple(labels)), RepairStats(inserted, dropped, subs)


def repair(gold_tokens: Sequence[str], pred: TokenLabelSeq) -> tuple[TokenLabelSeq, RepairStats]:
    return project_labels(align(gold_tokens, pred.tokens), pred, gold_tokens)


# -- CoNLL-style interchange ----------------------------------------------

def write_conll(seqs: Iterable[TokenLabelSeq], fh: TextIO) -> None:
    first = True
    for seq in seqs:
        if not first:
            fh.write("\n")
        first = False
        for tok, lab in zip(seq.tokens, seq.labels):
            fh.write(f"{tok}\t{lab.value}\n")


def read_conll(fh: TextIO) -> list[TokenLabelSeq]:
    seqs = []
    tokens: list[str] = []
    labels: list[Label] = []
    for lineno, line in enumerate(fh, 1):
        line = line.rstrip("\n")
        if not line.strip():
            if tokens:
                seqs.append(TokenLabelSeq(tuple(tokens), tuple(labels)))
                tokens, labels = [], []
            continue
        try:
            tok, lab = line.split("\t")
            labels.append(Label(lab.strip()))
        except ValueError:
            raise ValueError(f"line {lineno}: expected 'token<TAB>label', got {line!r}") from None
        tokens.append(tok)
    if tokens:
        seqs.append(TokenLabelSeq(tuple(tokens), tuple(labels)))
    return seqs
