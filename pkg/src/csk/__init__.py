"""Toolkit for causal span annotations in clinical guideline text."""

from .markup import AnnotatedDocument, AnnotatedSentence, Label, Mode, Phrase, parse_sentence, serialize_sentence

__all__ = [
    "AnnotatedDocument",
    "AnnotatedSentence",
    "Label",
    "Mode",
    "Phrase",
    "parse_sentence",
    "serialize_sentence",
]
__version__ = "0.1.0"
