"""Bag-of-words documents with tf-idf weights, for tokens or transcripts.

tf(v, doc) is the raw count divided by document length; idf uses the smoothed
form log((1 + D) / (1 + df(v))) + 1, which is always >= 1, so every present
term keeps a positive weight.
"""

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError


@dataclass
class CorpusStats:
    """Document-frequency table over a fixed vocabulary."""

    vocab_size: int
    doc_count: int
    doc_freq: np.ndarray = field(compare=False)


@dataclass
class WeightedDocument:
    """Sparse tf-idf document: (term, count, weight) with terms ascending."""

    utt_id: str
    entries: list[tuple[int, int, float]] = field(default_factory=list)

    def total_weight(self) -> float:
        return sum(w for _, _, w in self.entries)

    def length(self) -> int:
        return sum(c for _, c, _ in self.entries)


@dataclass
class TextVocab:
    """Dense token-to-id map ordered by (frequency desc, token asc)."""

    ids: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, token: str) -> bool:
        return token in self.ids


def compute_stats(docs, vocab_size: int) -> CorpusStats:
    """Count, per term, the number of documents containing it."""
    if vocab_size < 1:
        raise ValidationError(f"vocab_size must be >= 1, got {vocab_size}")
    doc_freq = np.zeros(vocab_size, dtype=np.int64)
    doc_count = 0
    for doc in docs:
        doc_count += 1
        distinct = set(doc)
        for t in distinct:
            if not 0 <= t < vocab_size:
                raise ValidationError(
                    f"token {t} out of range for vocabulary size {vocab_size}"
                )
            doc_freq[t] += 1
    return CorpusStats(vocab_size=vocab_size, doc_count=doc_count, doc_freq=doc_freq)


def idf(term: int, stats: CorpusStats) -> float:
    return math.log((1 + stats.doc_count) / (1 + int(stats.doc_freq[term]))) + 1.0


def weigh_document(doc, stats: CorpusStats, utt_id: str = "") -> WeightedDocument:
    """tf-idf entries for the distinct terms of ``doc``, terms ascending."""
    if stats.doc_count < 1:
        raise ValidationError("corpus statistics cover zero documents")
    tokens = list(doc)
    counts = Counter(tokens)
    length = len(tokens)
    entries = []
    for term in sorted(counts):
        if not 0 <= term < stats.vocab_size:
            raise ValidationError(
                f"token {term} out of range for vocabulary size {stats.vocab_size}"
            )
        c = counts[term]
        entries.append((term, c, (c / length) * idf(term, stats)))
    return WeightedDocument(utt_id=utt_id, entries=entries)


_STRIP = ".,;:!?\"'()[]{}<>`"


def tokenize_transcript(text: str, vocab: TextVocab) -> list[int]:
    """Lowercase, whitespace-split, strip edge punctuation, drop OOV tokens."""
    out = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok and tok in vocab.ids:
            out.append(vocab.ids[tok])
    return out


def normalize_tokens(text: str) -> list[str]:
    toks = []
    for raw in text.lower().split():
        tok = raw.strip(_STRIP)
        if tok:
            toks.append(tok)
    return toks


def build_text_vocab(transcripts, cap: int) -> TextVocab:
    """The ``cap`` most frequent normalized tokens, ties broken lexically."""
    if cap < 1:
        raise ValidationError(f"vocabulary cap must be >= 1, got {cap}")
    freq: Counter[str] = Counter()
    for text in transcripts:
        freq.update(normalize_tokens(text))
    ranked = sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return TextVocab(ids={tok: i for i, (tok, _) in enumerate(ranked)})


# ---------------------------------------------------------------------------
# Weighted-corpus text format


def write_weighted(docs, path) -> None:
    """Per line: ``id <TAB> term:count:weight,...`` with 9-digit weights."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            body = ",".join(f"{t}:{c}:{w:.9g}" for t, c, w in doc.entries)
            fh.write(doc.utt_id + "\t" + body + "\n")


def read_weighted(path) -> list[WeightedDocument]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) > 2 or not fields[0]:
                raise FormatError(f"{path}:{lineno}: malformed weighted-corpus line")
            entries: list[tuple[int, int, float]] = []
            body = fields[1] if len(fields) == 2 else ""
            if body:
                prev = -1
                for item in body.split(","):
                    parts = item.split(":")
                    if len(parts) != 3:
                        raise FormatError(
                            f"{path}:{lineno}: malformed entry '{item}'"
                        )
                    try:
                        term, count, weight = int(parts[0]), int(parts[1]), float(parts[2])
                    except ValueError:
                        raise FormatError(
                            f"{path}:{lineno}: malformed entry '{item}'"
                        ) from None
                    if term <= prev:
                        raise FormatError(
                            f"{path}:{lineno}: terms must be strictly ascending"
                        )
                    if count < 1 or weight < 0 or not math.isfinite(weight):
                        raise FormatError(
                            f"{path}:{lineno}: invalid count or weight in '{item}'"
                        )
                    entries.append((term, count, weight))
                    prev = term
            docs.append(WeightedDocument(utt_id=fields[0], entries=entries))
    return docs
