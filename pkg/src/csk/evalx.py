"""Scoring model predictions against gold annotations.

Token level: positional per-class precision/recall/F1. Phrase level: pair
predicted phrases with gold ones and report mean Jaccard and cosine
similarity plus label F1 over the pairs.
"""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import fmean
from typing import Iterable, Mapping, Sequence

from . import textsim
from .agreement import PRF, _label_order, macro, pair_items, prf_from_pairs
from .markup import Label, Phrase
from .promptkit import PredictedPhrase
from .tokenlab import TokenLabelSeq

class LengthMismatchError(ValueError):
    """Gold and predicted sequences differ in length; align them first with
    :func:`csk.tokenlab.repair`."""


@dataclass
class TokenEvalReport:
    per_class: dict[Label, PRF]
    macro: PRF | None
    weighted: PRF | None
    micro: PRF
    total_support: int
    exclude_other: bool

    def to_dict(self) -> dict:
        def prf(s: PRF | None):
            if s is None:
                return None
            return {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}

        return {
            "per_class": {lab.value: prf(s) for lab, s in self.per_class.items()},
            "macro": prf(self.macro),
            "weighted": prf(self.weighted),
            "micro": prf(self.micro),
            "total_support": self.total_support,
            "exclude_other": self.exclude_other,
        }

    def render_text(self) -> str:
        lines = [f"{'':<16}{'Precision':>10}{'Recall':>8}{'F1-score':>10}{'Support':>9}"]
        for lab, s in self.per_class.items():
            lines.append(f"{lab.value:<16}{s.precision:>10.2f}{s.recall:>8.2f}{s.f1:>10.2f}{s.support:>9d}")
        if self.macro is not None:
            m = self.macro
            lines.append(f"{'Macro average':<16}{m.precision:>10.2f}{m.recall:>8.2f}{m.f1:>10.2f}{self.total_support:>9d}")
        if self.weighted is not None:
            w = self.weighted
            lines.append(f"{'Weighted avg':<16}{w.precision:>10.2f}{w.recall:>8.2f}{w.f1:>10.2f}{self.total_support:>9d}")
        return "\n".join(lines) + "\n"


def eval_tokens(
    gold: TokenLabelSeq | Sequence[Label] | Iterable[TokenLabelSeq],
    pred: TokenLabelSeq | Sequence[Label] | Iterable[TokenLabelSeq],
    exclude_other: bool = True,
) -> TokenEvalReport:
    """Position-by-position multiclass scores.

    Accepts single sequences or parallel lists of :class:`TokenLabelSeq`.
    Macro averages skip classes without gold support. With *exclude_other*
    the O class is left out of the per-class table and every average.
    """
    gold_labels, pred_labels = _flatten(gold), _flatten(pred)
    if len(gold_labels) != len(pred_labels):
        raise LengthMismatchError(
            f"gold has {len(gold_labels)} tokens, prediction has {len(pred_labels)}; "
            "repair the prediction with tokenlab.repair() before scoring"
        )
    scores = prf_from_pairs(list(zip(gold_labels, pred_labels)))
    if exclude_other:
        scores.pop(Label.OTHER, None)
    kept = set(scores)
    tp = sum(1 for g, p in zip(gold_labels, pred_labels) if g == p and g in kept)
    n_pred = sum(1 for p in pred_labels if p in kept)
    n_gold = sum(1 for g in gold_labels if g in kept)
    mp = tp / n_pred if n_pred else 0.0
    mr = tp / n_gold if n_gold else 0.0
    micro = PRF(mp, mr, 2 * mp * mr / (mp + mr) if mp + mr else 0.0, n_gold)
    return TokenEvalReport(
        per_class=scores,
        macro=macro(scores),
        weighted=macro(scores, weighted=True),
        micro=micro,
        total_support=sum(s.support for s in scores.values()),
        exclude_other=exclude_other,
    )


def _flatten(x) -> list[Label]:
    if isinstance(x, TokenLabelSeq):
        return list(x.labels)
    items = list(x)
    if items and isinstance(items[0], TokenLabelSeq):
        return [lab for seq in items for lab in seq.labels]
    return [Label(v) if isinstance(v, str) else v for v in items]


def eval_token_corpus(gold: Sequence[TokenLabelSeq], pred: Sequence[TokenLabelSeq], exclude_other: bool = True):
    if len(gold) != len(pred):
        raise LengthMismatchError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    for i, (g, p) in enumerate(zip(gold, pred)):
        if len(g) != len(p):
            raise LengthMismatchError(
                f"sentence {i}: gold has {len(g)} tokens, prediction has {len(p)}; "
                "repair the prediction with tokenlab.repair() before scoring"
            )
    return eval_tokens(list(gold), list(pred), exclude_other)


# -- phrase level -----------------------------------------------------------

@dataclass
class PhraseEvalReport:
    mean_jaccard: float | None
    mean_cosine: float | None
    labels: dict[Label, PRF]
    macro: PRF | None
    weighted: PRF | None
    pairs: int
    labeled_pairs: int
    unlabeled: int
    unlabeled_rate: Fraction
    unmatched_gold: int
    unmatched_pred: int
    embedder: str
    notes: list[str] = field(default_factory=list)

    @property
    def mean_cosine_distance(self) -> float | None:
        return None if self.mean_cosine is None else 1.0 - self.mean_cosine

    @property
    def label_f1(self) -> float | None:
        return None if self.macro is None else self.macro.f1

    def to_dict(self) -> dict:
        def prf(s: PRF | None):
            if s is None:
                return None
            return {"precision": s.precision, "recall": s.recall, "f1": s.f1, "support": s.support}

        return {
            "jaccard_similarity": self.mean_jaccard,
            "cosine_similarity": self.mean_cosine,
            "cosine_distance": self.mean_cosine_distance,
            "label_f1": self.label_f1,
            "labels": {lab.word: prf(s) for lab, s in self.labels.items()},
            "macro": prf(self.macro),
            "weighted": prf(self.weighted),
            "pairs": self.pairs,
            "labeled_pairs": self.labeled_pairs,
            "unlabeled_predictions": self.unlabeled,
            "unlabeled_rate": float(self.unlabeled_rate),
            "unmatched_gold": self.unmatched_gold,
            "unmatched_pred": self.unmatched_pred,
            "embedder": self.embedder,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def render_similarity_table(rows: Mapping[str, PhraseEvalReport]) -> str:
    """One line per run: Jaccard similarity, cosine similarity, label F1."""
    def fmt(x):
        return "-" if x is None else f"{x:.2f}"

    width = max([len(name) for name in rows] + [8]) + 2
    lines = [f"{'':<{width}}{'Jaccard similarity':>20}{'Cosine similarity':>19}{'F1 (labels)':>13}"]
    for name, r in rows.items():
        lines.append(f"{name:<{width}}{fmt(r.mean_jaccard):>20}{fmt(r.mean_cosine):>19}{fmt(r.label_f1):>13}")
    return "\n".join(lines) + "\n"


def render_label_table(report: PhraseEvalReport) -> str:
    lines = [f"{'':<15}{'Precision':>10}{'Recall':>8}{'F1 score':>10}"]
    for lab, s in report.labels.items():
        lines.append(f"{lab.word.capitalize():<15}{s.precision:>10.2f}{s.recall:>8.2f}{s.f1:>10.2f}")
    if report.macro is not None:
        m = report.macro
        lines.append(f"{'Macro average':<15}{m.precision:>10.2f}{m.recall:>8.2f}{m.f1:>10.2f}")
    return "\n".join(lines) + "\n"


def _pred_start(p: PredictedPhrase, sentences: Mapping[str, str] | None) -> float:
    if sentences is None:
        return float("inf")
    plain = sentences.get(p.sentence_id)
    if plain is None:
        return float("inf")
    pos = plain.lower().find(p.text.strip().lower())
    return float(pos) if pos >= 0 else float("inf")


def eval_phrases(
    gold: Iterable[Phrase],
    pred: Iterable[PredictedPhrase],
    embedder: textsim.Embedder | None = None,
    sentences: Mapping[str, str] | None = None,
    omit_unlabeled: bool = False,
) -> PhraseEvalReport:
    """Phrase-level comparison of predictions with gold spans.

    Within each sentence, predictions are paired with gold phrases by greedy
    token-Jaccard matching. Jaccard and cosine means run over all pairs;
    label scores use only pairs whose prediction carries a label. With
    *omit_unlabeled*, label-less predictions are removed before pairing.
    """
    embedder = embedder or textsim.BowEmbedder()
    gold = list(gold)
    pred = list(pred)
    unlabeled = sum(1 for p in pred if p.label is None)
    rate = Fraction(unlabeled, len(pred)) if pred else Fraction(0)
    if omit_unlabeled:
        pred = [p for p in pred if p.label is not None]

    by_sentence: dict[str, tuple[list[Phrase], list[PredictedPhrase]]] = defaultdict(lambda: ([], []))
    for g in gold:
        by_sentence[g.sentence_id][0].append(g)
    for p in pred:
        by_sentence[p.sentence_id][1].append(p)

    matched: list[tuple[Phrase, PredictedPhrase, float]] = []
    unmatched_gold = unmatched_pred = 0
    for sid in sorted(by_sentence, key=lambda s: (s is None, str(s))):
        gs, ps = by_sentence[sid]
        gs = sorted(gs, key=lambda g: (g.start, g.end, g.label.value, g.text))
        ps = sorted(ps, key=lambda p: (p.text, p.label.value if p.label else ""))
        pairs = pair_items(
            gs, ps,
            lambda g: (g.start, g.end, g.label.value, g.text),
            lambda p: (p.text, p.label.value if p.label else ""),
            lambda g: g.text, lambda p: p.text,
            lambda g: g.start, lambda p: _pred_start(p, sentences),
        )
        pairs.sort(key=lambda t: (gs[t[0]].start, t[1]))
        matched.extend((gs[i], ps[j], sim) for i, j, sim in pairs)
        unmatched_gold += len(gs) - len(pairs)
        unmatched_pred += len(ps) - len(pairs)

    mean_jaccard = fmean(sim for _, _, sim in matched) if matched else None
    mean_cos = None
    if matched:
        vecs_g = embedder.embed([g.text for g, _, _ in matched])
        vecs_p = embedder.embed([p.text for _, p, _ in matched])
        mean_cos = fmean(textsim.cosine(u, v) for u, v in zip(vecs_g, vecs_p))

    labeled = [(g.label, p.label) for g, p, _ in matched if p.label is not None]
    scores = prf_from_pairs(labeled)
    scores = dict(sorted(scores.items(), key=lambda kv: _label_order(kv[0])))
    notes = []
    if not pred:
        notes.append("no predictions")
    return PhraseEvalReport(
        mean_jaccard=mean_jaccard,
        mean_cosine=mean_cos,
        labels=scores,
        macro=macro(scores),
        weighted=macro(scores, weighted=True),
        pairs=len(matched),
        labeled_pairs=len(labeled),
        unlabeled=unlabeled,
        unlabeled_rate=rate,
        unmatched_gold=unmatched_gold,
        unmatched_pred=unmatched_pred,
        embedder=getattr(embedder, "name", type(embedder).__name__),
        notes=notes,
    )


def missing_label_rate(pred: Sequence[PredictedPhrase]) -> Fraction:
    """Share of predictions without a label, as an exact fraction."""
    if not pred:
        warnings.warn("missing_label_rate of an empty prediction list is taken as 0", stacklevel=2)
        return Fraction(0)
    return Fraction(sum(1 for p in pred if p.label is None), len(pred))
