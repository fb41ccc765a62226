"""Inter-annotator agreement over span annotations.

Two annotators' phrases are merged per sentence, paired by token overlap,
and compared with relaxed (Levenshtein, Jaccard) and exact criteria plus
label precision/recall/F1 with annotator A as the reference.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from statistics import fmean
from typing import Callable, Iterable, Mapping, Sequence, TextIO, TypeVar

from . import textsim
from .corpus import CorpusRecord
from .markup import Label, Phrase

T = TypeVar("T")
U = TypeVar("U")

REPORT_LABELS = (Label.CAUSE, Label.CONDITION, Label.EFFECT, Label.ACTION, Label.SIGNAL)


def pair_items(
    a: Sequence[T],
    b: Sequence[U],
    key_a: Callable[[T], tuple],
    key_b: Callable[[U], tuple],
    text_a: Callable[[T], str],
    text_b: Callable[[U], str],
    start_a: Callable[[T], float],
    start_b: Callable[[U], float],
    optimal: bool = False,
) -> list[tuple[int, int, float]]:
    """Pair items of one sentence by token Jaccard similarity.

    Greedy takes the most similar remaining pair first; ties go to the pair
    with smaller start-offset difference, then earlier ``a`` start, then the
    ordering keys. Pairs with similarity 0 are never formed. Returns
    ``(index_a, index_b, similarity)`` triples.
    """
    candidates = []
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            sim = textsim.jaccard_sim(text_a(x), text_b(y))
            if sim > 0:
                candidates.append((i, j, sim))
    if not candidates:
        return []
    if optimal:
        import numpy as np
        from scipy.optimize import linear_sum_assignment

        weights = np.zeros((len(a), len(b)))
        for i, j, sim in candidates:
            weights[i, j] = sim
        rows, cols = linear_sum_assignment(weights, maximize=True)
        return [(int(i), int(j), float(weights[i, j])) for i, j in zip(rows, cols) if weights[i, j] > 0]

    candidates.sort(key=lambda c: (
        -c[2],
        abs(start_a(a[c[0]]) - start_b(b[c[1]])),
        start_a(a[c[0]]),
        key_a(a[c[0]]),
        key_b(b[c[1]]),
    ))
    used_a: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for i, j, sim in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j, sim))
    return pairs


def _phrase_key(p: Phrase) -> tuple:
    return (p.start, p.end, p.label.value, p.text)


@dataclass(frozen=True)
class MergedRow:
    sentence_id: str
    sentence: str | None
    phrase_a: Phrase | None
    phrase_b: Phrase | None

    @property
    def label_a(self) -> Label | None:
        return self.phrase_a.label if self.phrase_a else None

    @property
    def label_b(self) -> Label | None:
        return self.phrase_b.label if self.phrase_b else None

    @property
    def two_sided(self) -> bool:
        return self.phrase_a is not None and self.phrase_b is not None


def merge_annotations(
    a: Iterable[Phrase],
    b: Iterable[Phrase],
    sentences: Mapping[str, str] | None = None,
    optimal: bool = False,
) -> list[MergedRow]:
    """Merge two annotators' phrases into one table.

    *sentences* maps sentence ids to plain text; when given, phrases pointing
    at unknown ids raise ``KeyError``. Rows come out grouped by sentence (in
    order of first appearance) with pairs ordered by A's offsets, followed by
    A-only then B-only rows.
    """
    by_sentence: dict[str, tuple[list[Phrase], list[Phrase]]] = {}
    for side, phrases in ((0, a), (1, b)):
        for p in phrases:
            if p.sentence_id is None:
                raise ValueError(f"phrase {p.text!r} has no sentence id")
            if sentences is not None and p.sentence_id not in sentences:
                raise KeyError(f"phrase {p.text!r} references unknown sentence {p.sentence_id!r}")
            by_sentence.setdefault(p.sentence_id, ([], []))[side].append(p)

    order = list(sentences) if sentences is not None else []
    order += [sid for sid in by_sentence if sentences is None or sid not in sentences]

    rows: list[MergedRow] = []
    for sid in order:
        if sid not in by_sentence:
            continue
        pa, pb = by_sentence[sid]
        pa = sorted(pa, key=_phrase_key)
        pb = sorted(pb, key=_phrase_key)
        text = sentences.get(sid) if sentences is not None else None
        pairs = pair_items(
            pa, pb, _phrase_key, _phrase_key,
            lambda p: p.text, lambda p: p.text,
            lambda p: p.start, lambda p: p.start,
            optimal=optimal,
        )
        pairs.sort(key=lambda t: (pa[t[0]].start, pb[t[1]].start))
        rows.extend(MergedRow(sid, text, pa[i], pb[j]) for i, j, _ in pairs)
        used_a = {i for i, _, _ in pairs}
        used_b = {j for _, j, _ in pairs}
        rows.extend(MergedRow(sid, text, p, None) for i, p in enumerate(pa) if i not in used_a)
        rows.extend(MergedRow(sid, text, None, p) for j, p in enumerate(pb) if j not in used_b)
    return rows


def _key_text(plain: str) -> str:
    return " ".join(plain.split())


def merge_corpora(
    a: Sequence[CorpusRecord], b: Sequence[CorpusRecord], optimal: bool = False
) -> list[MergedRow]:
    """Merge two annotated versions of the same documents.

    Sentences are matched on whitespace-normalised plain text (the n-th
    occurrence of a text in A matches the n-th in B), since segmentation can
    differ where annotators placed tags differently. B's phrases are re-keyed
    onto A's sentence ids; unmatched B sentences keep their own ids.
    """
    sentences: dict[str, str] = {}
    slots: dict[tuple[str, int], str] = {}
    seen: Counter = Counter()
    phrases_a: list[Phrase] = []
    for rec in a:
        s = rec.sentence
        key = _key_text(s.plain)
        slots[(key, seen[key])] = s.sentence_id
        seen[key] += 1
        sentences[s.sentence_id] = s.plain
        phrases_a.extend(s.phrases)

    seen.clear()
    phrases_b: list[Phrase] = []
    for rec in b:
        s = rec.sentence
        key = _key_text(s.plain)
        sid = slots.get((key, seen[key]))
        seen[key] += 1
        if sid is None:
            sid = f"b/{s.sentence_id}"
            sentences[sid] = s.plain
        for p in s.phrases:
            phrases_b.append(Phrase(p.label, p.text, p.start, p.end, sid))
    return merge_annotations(phrases_a, phrases_b, sentences, optimal=optimal)


# -- statistics -------------------------------------------------------------

@dataclass(frozen=True)
class RelaxedStat:
    levenshtein: float
    jaccard_distance: float
    pairs: int


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    support: int


def _pairs(rows: Iterable[MergedRow]) -> list[MergedRow]:
    return [r for r in rows if r.two_sided]


def relaxed_report(rows: Iterable[MergedRow]) -> dict[Label, RelaxedStat]:
    """Per-label mean normalised Levenshtein and Jaccard distance, grouped by
    annotator A's label."""
    groups: dict[Label, list[MergedRow]] = defaultdict(list)
    for r in _pairs(rows):
        groups[r.label_a].append(r)
    out = {}
    for label in sorted(groups, key=_label_order):
        rs = groups[label]
        out[label] = RelaxedStat(
            fmean(textsim.levenshtein_norm(r.phrase_a.text, r.phrase_b.text) for r in rs),
            fmean(textsim.jaccard_dist(r.phrase_a.text, r.phrase_b.text) for r in rs),
            len(rs),
        )
    return out


def exact_matches(rows: Iterable[MergedRow]) -> int:
    return sum(1 for r in _pairs(rows) if r.phrase_a.text.strip() == r.phrase_b.text.strip())


def prf_from_pairs(pairs: Sequence[tuple[Label, Label]]) -> dict[Label, PRF]:
    """Per-class scores where the first element of each pair is the reference.

    Classes are every label seen on either side. Undefined precision or
    recall (zero denominator) is reported as 0.
    """
    tp: Counter = Counter()
    fp: Counter = Counter()
    fn: Counter = Counter()
    for ref, hyp in pairs:
        if ref == hyp:
            tp[ref] += 1
        else:
            fp[hyp] += 1
            fn[ref] += 1
    out = {}
    for label in sorted(set(tp) | set(fp) | set(fn), key=_label_order):
        p_den = tp[label] + fp[label]
        r_den = tp[label] + fn[label]
        precision = tp[label] / p_den if p_den else 0.0
        recall = tp[label] / r_den if r_den else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        out[label] = PRF(precision, recall, f1, r_den)
    return out


def macro(scores: Mapping[Label, PRF], weighted: bool = False) -> PRF | None:
    """Average over classes with reference support; ``None`` if there are none."""
    rows = [s for s in scores.values() if s.support > 0]
    if not rows:
        return None
    total = sum(s.support for s in rows)
    if weighted:
        w = [s.support / total for s in rows]
        return PRF(
            sum(wi * s.precision for wi, s in zip(w, rows)),
            sum(wi * s.recall for wi, s in zip(w, rows)),
            sum(wi * s.f1 for wi, s in zip(w, rows)),
            total,
        )
    return PRF(
        fmean(s.precision for s in rows),
        fmean(s.recall for s in rows),
        fmean(s.f1 for s in rows),
        total,
    )


def label_agreement(rows: Iterable[MergedRow]) -> tuple[dict[Label, PRF], PRF | None]:
    scores = prf_from_pairs([(r.label_a, r.label_b) for r in _pairs(rows)])
    return scores, macro(scores)


def overall_agreement(rows: Iterable[MergedRow]) -> float | None:
    """Mean token Jaccard similarity over paired phrases."""
    pairs = _pairs(rows)
    if not pairs:
        return None
    return fmean(textsim.jaccard_sim(r.phrase_a.text, r.phrase_b.text) for r in pairs)


def _label_order(label: Label) -> int:
    order = [*REPORT_LABELS, Label.OTHER]
    return order.index(label)


@dataclass
class AgreementReport:
    relaxed: dict[Label, RelaxedStat]
    mean_levenshtein: float | None
    mean_jaccard_distance: float | None
    matched_pairs: int
    exact_matches: int
    labels: dict[Label, PRF]
    macro: PRF | None
    overall_jaccard: float | None
    a_only: int = 0
    b_only: int = 0
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "matched_pairs": self.matched_pairs,
            "exact_matches": self.exact_matches,
            "overall_jaccard_similarity": self.overall_jaccard,
            "mean_levenshtein_distance": self.mean_levenshtein,
            "mean_jaccard_distance": self.mean_jaccard_distance,
            "relaxed": {
                lab.word: {"levenshtein": s.levenshtein, "jaccard_distance": s.jaccard_distance, "pairs": s.pairs}
                for lab, s in self.relaxed.items()
            },
            "labels": {
                lab.word: {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}
                for lab, s in self.labels.items()
            },
            "macro": None if self.macro is None else {
                "precision": self.macro.precision, "recall": self.macro.recall, "f1": self.macro.f1,
            },
            "coverage": {"a_only": self.a_only, "b_only": self.b_only},
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render_text(self) -> str:
        lines = ["Relaxed match", f"{'':<12}{'Levenshtein':>13}{'Jaccard':>10}{'Pairs':>7}"]
        for lab, s in self.relaxed.items():
            lines.append(f"{lab.word.capitalize():<12}{s.levenshtein:>13.2f}{s.jaccard_distance:>10.2f}{s.pairs:>7d}")
        lines.append("")
        lines.append("Label agreement")
        lines.append(f"{'':<12}{'Precision':>11}{'Recall':>9}{'F1':>7}")
        for lab, s in self.labels.items():
            lines.append(f"{lab.word.capitalize():<12}{s.precision:>11.2f}{s.recall:>9.2f}{s.f1:>7.2f}")
        if self.macro is not None:
            m = self.macro
            lines.append(f"{'Macro':<12}{m.precision:>11.2f}{m.recall:>9.2f}{m.f1:>7.2f}")
        lines.append("")
        lines.append(f"Matched pairs: {self.matched_pairs}")
        lines.append(f"Exact matches: {self.exact_matches}")
        if self.overall_jaccard is not None:
            lines.append(f"Overall Jaccard similarity: {self.overall_jaccard:.2f}")
            lines.append(f"Mean Levenshtein distance: {self.mean_levenshtein:.2f}")
        lines.append(f"One-sided rows: A only {self.a_only}, B only {self.b_only}")
        return "\n".join(lines) + "\n"


def agreement_report(rows: Sequence[MergedRow]) -> AgreementReport:
    pairs = _pairs(rows)
    labels, mac = label_agreement(pairs)
    return AgreementReport(
        relaxed=relaxed_report(pairs),
        mean_levenshtein=fmean(textsim.levenshtein_norm(r.phrase_a.text, r.phrase_b.text) for r in pairs) if pairs else None,
        mean_jaccard_distance=fmean(textsim.jaccard_dist(r.phrase_a.text, r.phrase_b.text) for r in pairs) if pairs else None,
        matched_pairs=len(pairs),
        exact_matches=exact_matches(pairs),
        labels=labels,
        macro=mac,
        overall_jaccard=overall_agreement(pairs),
        a_only=sum(1 for r in rows if r.phrase_b is None),
        b_only=sum(1 for r in rows if r.phrase_a is None),
    )


MERGED_COLUMNS = ("sentence_id", "sentence", "phrase_a", "label_a", "phrase_b", "label_b")


def write_merged_csv(rows: Iterable[MergedRow], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(MERGED_COLUMNS)
    for r in rows:
        w.writerow([
            r.sentence_id,
            r.sentence or "",
            r.phrase_a.text if r.phrase_a else "",
            r.label_a.value if r.label_a else "",
            r.phrase_b.text if r.phrase_b else "",
            r.label_b.value if r.label_b else "",
        ])
