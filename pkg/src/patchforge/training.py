"""Training loop: seeded 98/2 split, Adam, best-validation snapshotting.

Validation accuracy is exact sequence match under greedy decoding. The
returned parameters are the snapshot with the highest validation accuracy
(ties resolved toward the lower training loss, i.e. the later epoch while
the model is still improving). A non-finite loss aborts training and
returns the last finite-loss snapshot.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import model as m
from .errors import DataError, NumericsError

logger = logging.getLogger(__name__)

Example = tuple[list[int], list[int]]


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 20
    batch_size: int = 16
    val_fraction: float = 0.02


@dataclass
class TrainResult:
    params: m.Params
    log: list[dict]
    best_epoch: int
    aborted: bool = False
    skipped_overlong: int = 0


class Adam:
    def __init__(self, params: m.Params, cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: m.Params, grads: m.Params) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * (g * g)
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            params[k] -= (c.lr * mhat / (np.sqrt(vhat) + c.eps)).astype(params[k].dtype)


def split_dataset(
    examples: list[Example], seed: int, val_fraction: float = 0.02
) -> tuple[list[Example], list[Example]]:
    """Deterministic seeded-shuffle split; validation gets at least one
    example but never the whole dataset."""
    if not examples:
        raise DataError("training dataset is empty")
    order = np.random.default_rng(seed).permutation(len(examples))
    n_val = int(round(val_fraction * len(examples)))
    n_val = max(1, min(len(examples) - 1, n_val)) if len(examples) > 1 else 0
    val_idx = set(order[:n_val].tolist())
    train = [examples[i] for i in order[n_val:]]
    val = [examples[i] for i in sorted(val_idx)]
    return train, val


def exact_match_rate(
    params: m.Params, config: m.ModelConfig, examples: list[Example]
) -> float:
    """Fraction of examples whose greedy decode equals the target exactly."""
    if not examples:
        return 0.0
    hits = 0
    for src, tgt in examples:
        out = m.greedy_decode(params, config, src, max_len=config.max_positions - 2)
        if out == list(tgt):
            hits += 1
    return hits / len(examples)


def _snapshot(params: m.Params) -> m.Params:
    return {k: v.copy() for k, v in params.items()}


def train(
    dataset: list[Example],
    config: m.ModelConfig,
    opt: OptimizerConfig,
    split_seed: int,
) -> TrainResult:
    """Minibatch Adam over a seeded 98/2 split of (source, target) id pairs.

    Examples longer than max_positions - 2 (room for BOS/EOS) are skipped
    with a count. The per-epoch log records training loss and validation
    exact-match accuracy; no wall-clock data, so logs replay bit-identically
    for a fixed seed in single-threaded mode.
    """
    limit = config.max_positions - 2
    usable = [ex for ex in dataset if len(ex[0]) <= limit and len(ex[1]) <= limit]
    skipped = len(dataset) - len(usable)
    if skipped:
        logger.warning("skipping %d examples longer than %d ids", skipped, limit)
    if not usable:
        raise DataError("no training examples fit within max_positions")

    train_set, val_set = split_dataset(usable, split_seed, opt.val_fraction)
    rng = np.random.default_rng(split_seed + 1)
    init_rng = np.random.default_rng(split_seed + 2)
    params = m.init_params(config, init_rng)
    adam = Adam(params, opt)
    dropout_rng = np.random.default_rng(split_seed + 3) if config.dropout > 0 else None

    log: list[dict] = []
    best = (-1.0, float("inf"))  # (val accuracy, train loss); higher/lower is better
    best_params = _snapshot(params)
    best_epoch = -1
    last_good = _snapshot(params)
    aborted = False

    for epoch in range(opt.epochs):
        order = rng.permutation(len(train_set))
        total_loss = 0.0
        total_batches = 0
        try:
            for start in range(0, len(order), opt.batch_size):
                rows = order[start : start + opt.batch_size]
                batch = m.make_batch([train_set[i] for i in rows])
                loss, grads = m.loss_and_gradients(params, config, batch, rng=dropout_rng)
                adam.step(params, grads)
                total_loss += loss
                total_batches += 1
            if any(not np.isfinite(v).all() for v in params.values()):
                raise NumericsError("non-finite parameters after update")
        except NumericsError as exc:
            logger.error("training diverged at epoch %d: %s; restoring last snapshot", epoch, exc)
            params = last_good
            aborted = True
            break
        train_loss = total_loss / max(1, total_batches)
        val_acc = exact_match_rate(params, config, val_set)
        log.append({"epoch": epoch, "train_loss": train_loss, "val_exact_match": val_acc})
        last_good = _snapshot(params)
        if (val_acc, -train_loss) > (best[0], -best[1]):
            best = (val_acc, train_loss)
            best_params = _snapshot(params)
            best_epoch = epoch
    return TrainResult(best_params if not aborted else params, log, best_epoch, aborted, skipped)
