"""Byte-pair encoding over lexical tokens, plus the fixed-vocabulary baseline.

Training starts from the corpus characters plus the word-start marker and
repeatedly merges the globally most frequent adjacent subword pair (ties
broken by lexicographic order of the pair) until the vocabulary reaches the
target size, or stops early with a warning when no pair occurs twice.

A token is pre-segmented as its character sequence with the marker glued to
the first character ("value" -> ["▁v", "a", "l", "u", "e"]), so encoded
words always begin with a marker-prefixed piece and decoding is a simple
concatenate-and-split-on-marker. Characters unseen at training time remain
single-character pieces; there is no unknown symbol in BPE mode.
"""

from __future__ import annotations

import heapq
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError, UsageError

logger = logging.getLogger(__name__)

MARKER = "▁"  # word-start marker shown as ▁

Pair = tuple[str, str]


@dataclass
class BpeModel:
    merges: list[Pair]
    alphabet: list[str]  # sorted corpus characters, marker excluded
    marker: str = MARKER
    early_stopped: bool = False
    _ranks: dict[Pair, int] = field(default_factory=dict, repr=False)
    _cache: dict[str, tuple[str, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ranks:
            self._ranks = {pair: rank for rank, pair in enumerate(self.merges)}

    @property
    def vocab(self) -> set[str]:
        """Characters + marker + merge outputs; its size is the trained target."""
        vocab = set(self.alphabet)
        vocab.add(self.marker)
        vocab.update(left + right for left, right in self.merges)
        return vocab

    def vocab_size(self) -> int:
        return len(self.vocab)


def segment_token(token: str, marker: str = MARKER) -> tuple[str, ...]:
    """Initial character segmentation with the marker glued to the first char."""
    if not token:
        raise DataError("cannot segment an empty token")
    if marker in token:
        # A literal marker character inside a token would corrupt decoding.
        raise DataError(f"token contains the reserved word-start marker: {token!r}")
    return (marker + token[0],) + tuple(token[1:])


def _count_pairs(words: dict[tuple[str, ...], int]) -> Counter:
    counts: Counter = Counter()
    for pieces, freq in words.items():
        for a, b in zip(pieces, pieces[1:]):
            counts[(a, b)] += freq
    return counts


def _merge_pieces(pieces: tuple[str, ...], pair: Pair) -> tuple[str, ...]:
    """Apply one merge at every adjacent occurrence, left to right."""
    left, right = pair
    merged = left + right
    out: list[str] = []
    i = 0
    n = len(pieces)
    while i < n:
        if i + 1 < n and pieces[i] == left and pieces[i + 1] == right:
            out.append(merged)
            i += 2
        else:
            out.append(pieces[i])
            i += 1
    return tuple(out)


def train_bpe(
    corpus: Iterable[Iterable[str]], target_vocab_size: int, marker: str = MARKER
) -> BpeModel:
    """Learn merge rules from token sequences until the vocabulary (corpus
    characters + marker + merge outputs) reaches ``target_vocab_size``.

    Token frequencies are aggregated first; pair counts are maintained
    incrementally with a lazily-invalidated heap, so only words containing
    the merged pair are touched at each step.
    """
    token_freqs: Counter = Counter()
    for seq in corpus:
        token_freqs.update(seq)
    if not token_freqs:
        raise DataError("BPE training corpus is empty")

    alphabet = sorted({c for tok in token_freqs for c in tok})
    base_size = len(alphabet) + 1  # + marker
    if target_vocab_size <= base_size:
        raise UsageError(
            f"target vocab size {target_vocab_size} not larger than the "
            f"{base_size}-symbol base alphabet"
        )

    words: list[tuple[str, ...]] = []
    freqs: list[int] = []
    for tok, freq in token_freqs.items():
        words.append(segment_token(tok, marker))
        freqs.append(freq)

    # stats: pair -> count; where: pair -> set of word indices containing it
    stats: Counter = Counter()
    where: dict[Pair, set[int]] = {}
    for idx, pieces in enumerate(words):
        f = freqs[idx]
        for pair in zip(pieces, pieces[1:]):
            stats[pair] += f
            where.setdefault(pair, set()).add(idx)

    heap: list[tuple[int, Pair]] = [(-count, pair) for pair, count in stats.items()]
    heapq.heapify(heap)

    vocab: set[str] = set(alphabet)
    vocab.add(marker)
    merges: list[Pair] = []
    model = BpeModel(merges, alphabet, marker)

    while len(vocab) < target_vocab_size:
        best: Pair | None = None
        while heap:
            neg, pair = heap[0]
            current = stats.get(pair, 0)
            if -neg != current or current == 0:
                heapq.heappop(heap)  # stale entry
                continue
            best = pair
            break
        if best is None or stats[best] < 2:
            model.early_stopped = True
            logger.warning(
                "BPE early stop at vocab size %d of %d: no pair occurs twice",
                len(vocab),
                target_vocab_size,
            )
            break

        merges.append(best)
        vocab.add(best[0] + best[1])
        touched = where.pop(best, set())
        changed: set[Pair] = {best}
        for idx in sorted(touched):
            old = words[idx]
            new = _merge_pieces(old, best)
            words[idx] = new
            f = freqs[idx]
            old_pairs = Counter(zip(old, old[1:]))
            new_pairs = Counter(zip(new, new[1:]))
            for pair, c in (old_pairs - new_pairs).items():
                stats[pair] -= c * f
                changed.add(pair)
                if stats[pair] <= 0:
                    stats.pop(pair, None)
                    where.pop(pair, None)
                elif pair in where:
                    if pair not in new_pairs:
                        where[pair].discard(idx)
            for pair, c in (new_pairs - old_pairs).items():
                stats[pair] += c * f
                changed.add(pair)
                where.setdefault(pair, set()).add(idx)
        stats.pop(best, None)
        for pair in changed:
            if pair in stats:
                heapq.heappush(heap, (-stats[pair], pair))

    model._ranks = {pair: rank for rank, pair in enumerate(merges)}
    return model


def encode_token(model: BpeModel, token: str) -> tuple[str, ...]:
    """Pieces for one token: character segmentation, then merges replayed in
    model order (a merge applies at every adjacent occurrence present when
    its turn comes)."""
    cached = model._cache.get(token)
    if cached is not None:
        return cached
    pieces = segment_token(token, model.marker)
    ranks = model._ranks
    # Simulate the single in-order replay pass: process candidate pairs by
    # ascending rank; a pair created by a later merge than its own rank has
    # missed its turn and is not applied.
    heap = sorted({ranks[p] for p in zip(pieces, pieces[1:]) if p in ranks})
    seen = set(heap)
    while heap:
        rank = heapq.heappop(heap)
        pair = model.merges[rank]
        if not any(p == pair for p in zip(pieces, pieces[1:])):
            continue
        pieces = _merge_pieces(pieces, pair)
        for p in zip(pieces, pieces[1:]):
            r = ranks.get(p)
            if r is not None and r > rank and r not in seen:
                seen.add(r)
                heapq.heappush(heap, r)
    model._cache[token] = pieces
    return pieces


def encode(model: BpeModel, tokens: Iterable[str]) -> list[str]:
    """Subword pieces for a token sequence; each word's first piece carries
    the marker. Total given the single-character fallback."""
    out: list[str] = []
    for token in tokens:
        out.extend(encode_token(model, token))
    return out


def decode(pieces: Iterable[str], marker: str = MARKER) -> list[str]:
    """Inverse of encode: concatenate, split at markers, strip markers."""
    pieces = list(pieces)
    if not pieces:
        return []
    if not pieces[0].startswith(marker):
        raise DataError(f"subword stream does not start at a word boundary: {pieces[0]!r}")
    tokens = "".join(pieces).split(marker)
    return tokens[1:]  # split yields a leading empty string


# ---------------------------------------------------------------------------
# Model file format: line 1 header with the escaped alphabet, then one
# "left<TAB>right" merge per line, in merge order. Reload is bit-exact.
# ---------------------------------------------------------------------------

_FORMAT_LINE = "patchforge-bpe v1"


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch == "\\":
            out.append("\\\\")
        elif ch == "\t":
            out.append("\\t")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == " ":
            out.append("\\s")
        else:
            out.append(ch)
    return "".join(out)


def _unescape(s: str) -> str:
    out = []
    i = 0
    while i < len(s):
        ch = s[i]
        if ch == "\\":
            if i + 1 >= len(s):
                raise DataError("dangling escape in BPE model file")
            nxt = s[i + 1]
            out.append({"\\": "\\", "t": "\t", "n": "\n", "r": "\r", "s": " "}[nxt])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def save_model(model: BpeModel, path: str | Path) -> None:
    lines = [
        f"{_FORMAT_LINE} marker={_escape(model.marker)} "
        f"early_stopped={int(model.early_stopped)} "
        f"alphabet={' '.join(_escape(c) for c in model.alphabet)}"
    ]
    lines.extend(f"{_escape(l)}\t{_escape(r)}" for l, r in model.merges)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> BpeModel:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or not lines[0].startswith(_FORMAT_LINE):
        raise DataError(f"{path} is not a patchforge BPE model file")
    header = lines[0][len(_FORMAT_LINE) :].strip()
    fields = dict(part.split("=", 1) for part in header.split(" ", 2))
    marker = _unescape(fields["marker"])
    alphabet = [_unescape(c) for c in fields["alphabet"].split(" ") if c]
    merges: list[Pair] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        try:
            left, right = line.split("\t")
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: malformed merge line") from exc
        merges.append((_unescape(left), _unescape(right)))
    return BpeModel(
        merges, alphabet, marker, early_stopped=bool(int(fields["early_stopped"]))
    )


# ---------------------------------------------------------------------------
# Fixed-vocabulary baseline
# ---------------------------------------------------------------------------

UNK = "<unk>"


@dataclass
class FixedVocab:
    tokens: list[str]  # frequency-descending, ties lexicographic
    unk: str = UNK
    _index: set[str] = field(default_factory=set, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = set(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index


def build_fixed_vocab(corpus: Iterable[Iterable[str]], k: int) -> FixedVocab:
    """Top-k most frequent whole tokens, ties broken lexicographically."""
    if k < 1:
        raise UsageError("fixed vocabulary size must be >= 1")
    freqs: Counter = Counter()
    for seq in corpus:
        freqs.update(seq)
    if not freqs:
        raise DataError("fixed-vocab training corpus is empty")
    ranked = sorted(freqs.items(), key=lambda kv: (-kv[1], kv[0]))
    return FixedVocab([tok for tok, _ in ranked[:k]])


def encode_fixed(vocab: FixedVocab, tokens: Iterable[str]) -> tuple[list[str], int]:
    """Replace out-of-vocabulary tokens with the unk symbol; returns
    (encoded tokens, OOV count)."""
    out: list[str] = []
    oov = 0
    for token in tokens:
        if token in vocab:
            out.append(token)
        else:
            out.append(vocab.unk)
            oov += 1
    return out, oov
