"""Beam-search inference producing ranked candidate patches.

The search is decoupled from the transformer: it drives any step function
returning next-token log-probabilities, which keeps it testable against
exhaustive enumeration on micro-models. Scores are pure sums of per-step
log-probabilities unless a length penalty is configured; ties break on the
lexicographically smaller id sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import model as m
from .codec import BOS, EOS, Codec
from .errors import DataError, UsageError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BeamConfig:
    width: int = 50
    max_len: int = 200
    length_penalty: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise UsageError("beam width must be >= 1")
        if self.length_penalty < 0:
            raise UsageError("length penalty must be non-negative")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]  # emitted ids, EOS included when finished
    log_prob: float
    finished: bool
    truncated: bool = False

    def score(self, length_penalty: float) -> float:
        if length_penalty == 0.0 or not self.ids:
            return self.log_prob
        return self.log_prob / (len(self.ids) ** length_penalty)


class StepScorer(Protocol):
    """Batched next-token scorer over live hypothesis rows."""

    def start(self, n_rows: int) -> None: ...

    def step(self, prev_ids: np.ndarray) -> np.ndarray: ...

    def reorder(self, rows: np.ndarray) -> None: ...


class ModelScorer:
    """Incremental transformer decoding over one source sequence."""

    def __init__(self, params: m.Params, config: m.ModelConfig, src_ids: Sequence[int]):
        self.params = params
        self.config = config
        self.src_ids = list(src_ids)
        self.dec: m.IncrementalDecoder | None = None

    def start(self, n_rows: int) -> None:
        src = np.asarray([self.src_ids] * n_rows)
        self.dec = m.IncrementalDecoder(self.params, self.config, src)

    def step(self, prev_ids: np.ndarray) -> np.ndarray:
        assert self.dec is not None
        return self.dec.step(prev_ids)

    def reorder(self, rows: np.ndarray) -> None:
        assert self.dec is not None
        self.dec.reorder(rows)


class RecomputeScorer:
    """Reference scorer that re-runs the full forward pass each step; slow,
    but shares float semantics with exhaustive enumeration oracles."""

    def __init__(self, params: m.Params, config: m.ModelConfig, src_ids: Sequence[int]):
        self.params = params
        self.config = config
        self.src = np.asarray([list(src_ids)])
        self.prefixes: list[list[int]] = []
        self.n_steps = 0

    def start(self, n_rows: int) -> None:
        self.prefixes = [[] for _ in range(n_rows)]
        self.n_steps = 0

    def step(self, prev_ids: np.ndarray) -> np.ndarray:
        prev = np.asarray(prev_ids).reshape(-1).tolist()
        if self.n_steps > 0:  # the first call conditions on BOS alone
            for row, p in enumerate(prev):
                self.prefixes[row].append(int(p))
        self.n_steps += 1
        out = []
        for row in range(len(self.prefixes)):
            prefix = [BOS] + self.prefixes[row]
            probs = m.forward(self.params, self.config, self.src, np.asarray([prefix]))
            out.append(np.log(probs[0, -1]))
        return np.stack(out)

    def reorder(self, rows: np.ndarray) -> None:
        self.prefixes = [list(self.prefixes[r]) for r in rows]


def beam_search(scorer: StepScorer, beam: BeamConfig, vocab_size: int) -> list[Hypothesis]:
    """Standard beam search.

    Every live hypothesis is expanded with all vocabulary continuations;
    the ``width`` best unfinished candidates form the next beam, finished
    candidates retire into the result pool. The search stops when the pool
    holds ``width`` hypotheses that outrank every live one (only provable
    without a length penalty, where scores cannot increase) or at max_len.
    Results are sorted by score, best first. If nothing finished, the best
    live hypothesis is returned with ``truncated`` set.
    """
    width = beam.width
    scorer.start(1)
    live: list[Hypothesis] = [Hypothesis((), 0.0, False)]
    pool: dict[tuple[int, ...], Hypothesis] = {}

    def sort_key(h: Hypothesis):
        return (-h.score(beam.length_penalty), h.ids)

    best_live: Hypothesis | None = None
    for step_idx in range(beam.max_len):
        prev = np.array([h.ids[-1] if h.ids else BOS for h in live])
        logp = scorer.step(prev)  # [rows, vocab]
        if not np.all(logp <= 1e-6):
            raise DataError("step scorer returned log-probabilities > 0")
        scores = np.asarray([h.log_prob for h in live])[:, None] + logp
        flat = scores.reshape(-1)
        # Take enough top candidates to refill the beam even if many finish.
        k = min(flat.size, 2 * width + 1)
        top = np.argpartition(-flat, k - 1)[:k] if k < flat.size else np.arange(flat.size)
        candidates: list[tuple[Hypothesis, int]] = []
        for j in top.tolist():
            row, tok = divmod(j, vocab_size)
            lp = float(flat[j])
            if lp == m.NEG_INF:
                continue
            ids = live[row].ids + (tok,)
            candidates.append((Hypothesis(ids, lp, tok == EOS), row))
        candidates.sort(key=lambda ht: sort_key(ht[0]))
        next_live: list[Hypothesis] = []
        next_rows: list[int] = []
        for hyp, row in candidates:
            if hyp.finished:
                pool.setdefault(hyp.ids, hyp)
            elif len(next_live) < width:
                next_live.append(hyp)
                next_rows.append(row)
        if len(pool) > 4 * width:
            keep = sorted(pool.values(), key=sort_key)[:width]
            pool = {h.ids: h for h in keep}
        if not next_live:
            break
        live = next_live
        best_live = live[0]
        scorer.reorder(np.asarray(next_rows))
        if beam.length_penalty == 0.0 and len(pool) >= width:
            kth_finished = sorted(pool.values(), key=sort_key)[width - 1]
            if kth_finished.score(0.0) >= best_live.score(0.0):
                break

    results = sorted(pool.values(), key=sort_key)[:width]
    if not results and best_live is not None:
        logger.warning("beam search hit max_len=%d with no finished hypothesis", beam.max_len)
        return [Hypothesis(best_live.ids, best_live.log_prob, False, truncated=True)]
    return results


@dataclass
class PredictionDiagnostics:
    undecodable: int = 0


def predict_patches(
    params: m.Params,
    config: m.ModelConfig,
    codec: Codec,
    source_tokens: list[str],
    beam: BeamConfig,
    scorer_factory: Callable[..., StepScorer] = ModelScorer,
    diagnostics: PredictionDiagnostics | None = None,
) -> list[tuple[list[str], float]]:
    """Ranked candidate token sequences with scores for one vulnerable
    function. Hypotheses whose subword structure cannot be decoded back to
    tokens are dropped and counted."""
    if diagnostics is None:
        diagnostics = PredictionDiagnostics()
    src_ids = codec.encode_tokens(source_tokens)
    scorer = scorer_factory(params, config, src_ids)
    max_len = min(beam.max_len, config.max_positions - 2)
    hyps = beam_search(scorer, BeamConfig(beam.width, max_len, beam.length_penalty), config.vocab_size)
    out: list[tuple[list[str], float]] = []
    for hyp in hyps:
        try:
            tokens = codec.decode_ids(list(hyp.ids))
        except DataError:
            diagnostics.undecodable += 1
            continue
        out.append((tokens, hyp.score(beam.length_penalty)))
    return out
