"""Mapping between token sequences and the integer ids the model consumes.

Two modes mirror the two vocabulary strategies: subword (BPE pieces, no
unknown symbol) and fixed (top-K whole tokens with unk substitution). Both
reserve PAD=0, BOS=1, EOS=2 and assign the remaining ids in sorted piece
order, so the table is a pure function of the underlying vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import bpe as bpe_mod
from .errors import DataError

PAD, BOS, EOS = 0, 1, 2
SPECIALS = ["<pad>", "<bos>", "<eos>"]


@dataclass
class Codec:
    mode: str  # "bpe" or "fixed"
    pieces: list[str]  # id -> piece string, specials first
    marker: str = bpe_mod.MARKER
    _ids: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._ids:
            self._ids = {p: i for i, p in enumerate(self.pieces)}

    @property
    def vocab_size(self) -> int:
        return len(self.pieces)

    def piece_ids(self, pieces: list[str]) -> list[int]:
        try:
            return [self._ids[p] for p in pieces]
        except KeyError as exc:
            raise DataError(f"piece {exc.args[0]!r} is outside the model vocabulary") from exc

    def ids_to_pieces(self, ids: list[int]) -> list[str]:
        return [self.pieces[i] for i in ids if i not in (PAD, BOS, EOS)]


@dataclass
class SubwordCodec(Codec):
    model: bpe_mod.BpeModel = None  # type: ignore[assignment]

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        return self.piece_ids(bpe_mod.encode(self.model, tokens))

    def decode_ids(self, ids: list[int]) -> list[str]:
        return bpe_mod.decode(self.ids_to_pieces(ids), self.marker)


@dataclass
class FixedCodec(Codec):
    vocab: bpe_mod.FixedVocab = None  # type: ignore[assignment]

    def encode_tokens(self, tokens: list[str]) -> list[int]:
        encoded, _ = bpe_mod.encode_fixed(self.vocab, tokens)
        return self.piece_ids(encoded)

    def decode_ids(self, ids: list[int]) -> list[str]:
        return self.ids_to_pieces(ids)


def subword_codec(model: bpe_mod.BpeModel) -> SubwordCodec:
    """Id table covering every piece the model can emit over its alphabet:
    bare characters, marker-prefixed characters, and merge outputs."""
    pieces = set(model.alphabet)
    pieces.update(model.marker + c for c in model.alphabet)
    pieces.update(left + right for left, right in model.merges)
    table = SPECIALS + sorted(pieces)
    return SubwordCodec("bpe", table, marker=model.marker, model=model)


def fixed_codec(vocab: bpe_mod.FixedVocab) -> FixedCodec:
    table = SPECIALS + sorted(set(vocab.tokens) | {vocab.unk})
    return FixedCodec("fixed", table, vocab=vocab)


def codec_from_table(mode: str, pieces: list[str], marker: str = bpe_mod.MARKER) -> Codec:
    """Rebuild a codec from a checkpoint's stored id table.

    A fixed-mode codec round-trips completely; a subword codec rebuilt this
    way can decode ids but needs the BPE model file to encode new text.
    """
    if mode == "fixed":
        tokens = [p for p in pieces if p not in SPECIALS and p != bpe_mod.UNK]
        return FixedCodec(mode, pieces, vocab=bpe_mod.FixedVocab(tokens))
    if mode == "bpe":
        return SubwordCodec(mode, pieces, marker=marker, model=None)
    raise DataError(f"unknown vocabulary mode {mode!r}")
