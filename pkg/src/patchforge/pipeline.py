"""Stage orchestration: mine -> extract -> bpe -> train -> predict -> evaluate.

Every stage writes its outputs plus a machine-readable stage report that
echoes the full effective configuration and the input fingerprints. A
completed stage with unchanged inputs and config is skipped unless forced.
All artifacts are newline-delimited text except the model checkpoint.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, fields
from pathlib import Path

from . import bpe as bpe_mod
from . import clexer, codec, evaluation, extraction, mining, model, training
from .beam import BeamConfig, ModelScorer, PredictionDiagnostics, predict_patches
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DataError, LexError, UsageError
from .records import dump_record, read_records, write_json, write_records

logger = logging.getLogger(__name__)

VALID_BPE_SIZES = (1000, 5000, 10000)
STAGES = ("mine", "extract", "bpe", "train", "predict", "evaluate")

# artifact filename -> stage that produces it
ARTIFACTS = {
    "mined.jsonl": "mine",
    "dataset.jsonl": "extract",
    "model.bpe": "bpe",
    "model.ckpt": "train",
    "predictions.jsonl": "predict",
    "report.json": "evaluate",
}


@dataclass
class PipelineConfig:
    seed: int = 7
    bucket: int = 50
    vocab_mode: str = "bpe"  # "bpe" or "fixed"
    bpe_vocab_size: int = 1000
    fixed_vocab_k: int = 50000
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_positions: int = 256
    dropout: float = 0.0
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 20
    val_fraction: float = 0.02
    beam_width: int = 50
    max_len: int = 200
    length_penalty: float = 0.0
    events: str = ""
    testset: str = ""

    def __post_init__(self):
        if self.bucket not in extraction.VALID_BUCKETS:
            raise UsageError(
                f"invalid bucket {self.bucket}; expected one of {extraction.VALID_BUCKETS}"
            )
        if self.vocab_mode not in ("bpe", "fixed"):
            raise UsageError(f"invalid vocab_mode {self.vocab_mode!r}")
        if self.vocab_mode == "bpe" and self.bpe_vocab_size not in VALID_BPE_SIZES:
            raise UsageError(
                f"invalid bpe_vocab_size {self.bpe_vocab_size}; expected one of {VALID_BPE_SIZES}"
            )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def model_config(self, vocab_size: int) -> model.ModelConfig:
        return model.ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            max_positions=self.max_positions,
            dropout=self.dropout,
        )

    def optimizer_config(self) -> training.OptimizerConfig:
        return training.OptimizerConfig(
            lr=self.lr,
            epochs=self.epochs,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
        )


def parse_kv_config(path: str | Path) -> dict[str, str]:
    """Flat ``key=value`` file; '#' starts a comment, blank lines ignored."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def config_from_kv(values: dict[str, str]) -> PipelineConfig:
    kwargs: dict = {}
    valid = {f.name: f.type for f in fields(PipelineConfig)}
    casts = {"int": int, "float": float, "str": str}
    for key, raw in values.items():
        if key not in valid:
            raise UsageError(f"unknown configuration key {key!r}")
        try:
            kwargs[key] = casts[valid[key]](raw)
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {raw!r}") from exc
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    return config_from_kv(parse_kv_config(path))


def name_model(bucket: int, vocab_mode: str, size: int) -> str:
    """Canonical model names: "BPE_1000-d200", "Baseline-d50"."""
    if bucket not in extraction.VALID_BUCKETS:
        raise UsageError(f"invalid bucket {bucket}")
    if vocab_mode == "bpe":
        return f"BPE_{size}-d{bucket}"
    if vocab_mode == "fixed":
        return f"Baseline-d{bucket}"
    raise UsageError(f"invalid vocab mode {vocab_mode!r}")


# ---------------------------------------------------------------------------
# Stage bodies. Each returns a counts dict for the stage report.
# ---------------------------------------------------------------------------


def stage_mine(in_path: str | Path, out_path: str | Path, stats_path: str | Path | None = None) -> dict:
    stats = mining.MineStats()
    paths = mining.archive_paths(in_path)
    n = write_records(out_path, mining.mine_archives(paths, stats))
    counts = stats.as_dict()
    counts["written"] = n
    if stats_path:
        write_json(stats_path, counts)
    return counts


def stage_extract(
    in_path: str | Path, bucket: int, out_path: str | Path, stats_path: str | Path | None = None
) -> dict:
    if bucket not in extraction.VALID_BUCKETS:
        raise UsageError(f"invalid bucket {bucket}; expected one of {extraction.VALID_BUCKETS}")
    ex_stats = extraction.ExtractStats()
    dd_stats = extraction.DedupStats()
    files_failed = 0

    def pairs():
        nonlocal files_failed
        for record in read_records(in_path):
            sha = record.get("sha", "")
            for f in record.get("files", []):
                before, after = f.get("before"), f.get("after")
                if before is None or after is None:
                    continue
                try:
                    file_pairs = extraction.extract_pairs_from_file(before, after, ex_stats)
                except LexError:
                    files_failed += 1
                    continue
                for pair in file_pairs:
                    pair.origin = (sha, f.get("path", ""))
                    yield pair

    survivors = extraction.dedup_and_bucket(pairs(), bucket, dd_stats)
    n = write_records(
        out_path,
        (
            {
                "name": p.name,
                "before_tokens": list(p.before_tokens),
                "after_tokens": list(p.after_tokens),
                "origin": {"sha": p.origin[0], "path": p.origin[1]},
            }
            for p in survivors
        ),
    )
    counts = {
        "functions": ex_stats.functions,
        "pairs_before_dedup": dd_stats.seen,
        "duplicates_removed": dd_stats.duplicates,
        "oversize_removed": dd_stats.oversize,
        "written": n,
        "skipped_kr": ex_stats.skipped_kr,
        "skipped_preproc": ex_stats.skipped_preproc,
        "skipped_lex_error": ex_stats.skipped_lex_error,
        "files_failed": files_failed,
        "added_only": ex_stats.added,
        "deleted_only": ex_stats.deleted,
        "bucket": bucket,
    }
    if stats_path:
        write_json(stats_path, counts)
    return counts


def _dataset_token_streams(path: str | Path):
    for record in read_records(path):
        yield record["before_tokens"]
        yield record["after_tokens"]


def stage_bpe_train(in_path: str | Path, vocab_size: int, out_path: str | Path) -> dict:
    bpe_model = bpe_mod.train_bpe(_dataset_token_streams(in_path), vocab_size)
    bpe_mod.save_model(bpe_model, out_path)
    return {
        "target_vocab_size": vocab_size,
        "vocab_size": bpe_model.vocab_size(),
        "merges": len(bpe_model.merges),
        "early_stopped": bpe_model.early_stopped,
    }


def _build_codec(cfg: PipelineConfig, dataset_path: str | Path, bpe_path: str | Path | None):
    if cfg.vocab_mode == "bpe":
        if not bpe_path or not Path(bpe_path).exists():
            raise DataError(
                "BPE model file is missing; produce it with the bpe stage "
                f"(expected {bpe_path})"
            )
        return codec.subword_codec(bpe_mod.load_model(bpe_path))
    vocab = bpe_mod.build_fixed_vocab(_dataset_token_streams(dataset_path), cfg.fixed_vocab_k)
    return codec.fixed_codec(vocab)


def stage_train(
    dataset_path: str | Path,
    cfg: PipelineConfig,
    out_path: str | Path,
    bpe_path: str | Path | None = None,
    log_path: str | Path | None = None,
) -> dict:
    cdc = _build_codec(cfg, dataset_path, bpe_path)
    examples: list[training.Example] = []
    unencodable = 0
    for record in read_records(dataset_path):
        try:
            examples.append(
                (cdc.encode_tokens(record["before_tokens"]), cdc.encode_tokens(record["after_tokens"]))
            )
        except DataError:
            unencodable += 1
    if not examples:
        raise DataError(f"dataset {dataset_path} holds no encodable training pairs")
    mcfg = cfg.model_config(cdc.vocab_size)
    result = training.train(examples, mcfg, cfg.optimizer_config(), cfg.seed)
    size = cfg.bpe_vocab_size if cfg.vocab_mode == "bpe" else cfg.fixed_vocab_k
    save_checkpoint(
        out_path,
        result.params,
        mcfg,
        cfg.vocab_mode,
        cdc.pieces,
        extra={
            "model_name": name_model(cfg.bucket, cfg.vocab_mode, size),
            "best_epoch": result.best_epoch,
            "aborted": result.aborted,
        },
    )
    if log_path:
        write_json(log_path, result.log)
    final = result.log[-1] if result.log else {}
    return {
        "examples": len(examples),
        "unencodable": unencodable,
        "skipped_overlong": result.skipped_overlong,
        "vocab_size": cdc.vocab_size,
        "epochs_run": len(result.log),
        "best_epoch": result.best_epoch,
        "aborted": result.aborted,
        "final_train_loss": final.get("train_loss"),
        "final_val_exact_match": final.get("val_exact_match"),
    }


def stage_predict(
    ckpt_path: str | Path,
    testset_path: str | Path,
    out_path: str | Path,
    beam_width: int,
    max_len: int,
    length_penalty: float = 0.0,
    bpe_path: str | Path | None = None,
) -> dict:
    params, mcfg, header = load_checkpoint(ckpt_path)
    cdc = codec.codec_from_table(header["vocab_mode"], header["id_table"])
    if header["vocab_mode"] == "bpe":
        if not bpe_path or not Path(bpe_path).exists():
            raise DataError(
                f"a BPE-mode checkpoint needs the bpe model file to encode input (expected {bpe_path})"
            )
        cdc.model = bpe_mod.load_model(bpe_path)
    vulns = evaluation.load_testset(testset_path)
    beam = BeamConfig(beam_width, max_len, length_penalty)
    diags = PredictionDiagnostics()
    unencodable = 0
    n_predictions = 0

    def records():
        nonlocal unencodable, n_predictions
        for vuln in vulns:
            for fn in vuln.functions:
                origin = {"cve_id": vuln.cve_id, "path": fn.path, "name": fn.name}
                try:
                    ranked = predict_patches(
                        params, mcfg, cdc, list(fn.before_tokens), beam,
                        scorer_factory=ModelScorer, diagnostics=diags,
                    )
                except DataError:
                    unencodable += 1
                    continue
                for rank, (tokens, score) in enumerate(ranked, start=1):
                    n_predictions += 1
                    yield {"origin": origin, "rank": rank, "score": score, "tokens": tokens}

    write_records(out_path, records())
    return {
        "functions": sum(len(v.functions) for v in vulns),
        "predictions": n_predictions,
        "beam_width": beam_width,
        "unencodable_functions": unencodable,
        "undecodable_hypotheses": diags.undecodable,
    }


def stage_evaluate(
    testset_path: str | Path,
    predictions_path: str | Path,
    report_path: str | Path,
    model_name: str | None = None,
) -> dict:
    vulns = evaluation.load_testset(testset_path)
    predictions = evaluation.load_predictions(predictions_path)
    report = evaluation.evaluate(vulns, predictions)
    payload = report.as_dict()
    if model_name:
        payload["model"] = model_name
    write_json(report_path, payload)
    return {
        "fixed_functions": list(report.fixed_functions),
        "partially_fixed": list(report.partially_fixed),
        "completely_fixed": list(report.completely_fixed),
    }


# ---------------------------------------------------------------------------
# Orchestration with input fingerprints and skip-if-unchanged.
# ---------------------------------------------------------------------------


def _file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fingerprint(inputs: dict[str, str], cfg: PipelineConfig) -> str:
    blob = json.dumps({"inputs": inputs, "config": cfg.as_dict()}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _stage_io(stage: str, cfg: PipelineConfig, workdir: Path) -> tuple[list[Path], list[Path]]:
    w = workdir
    table = {
        "mine": ([Path(cfg.events)], [w / "mined.jsonl"]),
        "extract": ([w / "mined.jsonl"], [w / "dataset.jsonl"]),
        "bpe": ([w / "dataset.jsonl"], [w / "model.bpe"]),
        "train": (
            [w / "dataset.jsonl"] + ([w / "model.bpe"] if cfg.vocab_mode == "bpe" else []),
            [w / "model.ckpt"],
        ),
        "predict": (
            [w / "model.ckpt", Path(cfg.testset)]
            + ([w / "model.bpe"] if cfg.vocab_mode == "bpe" else []),
            [w / "predictions.jsonl"],
        ),
        "evaluate": ([w / "predictions.jsonl", Path(cfg.testset)], [w / "report.json"]),
    }
    if stage not in table:
        raise UsageError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return table[stage]


def _check_inputs(stage: str, inputs: list[Path]) -> None:
    for path in inputs:
        if not path.exists():
            producer = ARTIFACTS.get(path.name)
            hint = (
                f"; run the {producer!r} stage first" if producer else "; provide it in the config"
            )
            raise DataError(f"stage {stage!r} needs missing input {path}{hint}")


def run_stage(stage: str, cfg: PipelineConfig, workdir: str | Path, force: bool = False) -> dict:
    """Execute one stage; writes outputs and ``<stage>.report.json``.

    Skips execution (report marked skipped) when a previous report exists
    with the same input hashes and configuration, unless ``force``.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    inputs, outputs = _stage_io(stage, cfg, workdir)
    _check_inputs(stage, inputs)
    input_hashes = {str(p): _file_hash(p) for p in inputs}
    fingerprint = _fingerprint(input_hashes, cfg)
    report_path = workdir / f"{stage}.report.json"
    if not force and report_path.exists() and all(p.exists() for p in outputs):
        try:
            previous = json.loads(report_path.read_text())
        except json.JSONDecodeError:
            previous = {}
        if previous.get("fingerprint") == fingerprint:
            logger.info("stage %s is up to date; skipping (use --force to rerun)", stage)
            previous["skipped"] = True
            write_json(report_path, previous)
            return previous

    started = time.monotonic()
    w = workdir
    size = cfg.bpe_vocab_size if cfg.vocab_mode == "bpe" else cfg.fixed_vocab_k
    if stage == "mine":
        counts = stage_mine(cfg.events, w / "mined.jsonl", w / "mine.stats.json")
    elif stage == "extract":
        counts = stage_extract(w / "mined.jsonl", cfg.bucket, w / "dataset.jsonl")
    elif stage == "bpe":
        counts = stage_bpe_train(w / "dataset.jsonl", cfg.bpe_vocab_size, w / "model.bpe")
    elif stage == "train":
        counts = stage_train(
            w / "dataset.jsonl", cfg, w / "model.ckpt",
            bpe_path=w / "model.bpe" if cfg.vocab_mode == "bpe" else None,
            log_path=w / "train.log.json",
        )
    elif stage == "predict":
        counts = stage_predict(
            w / "model.ckpt", cfg.testset, w / "predictions.jsonl",
            cfg.beam_width, cfg.max_len, cfg.length_penalty,
            bpe_path=w / "model.bpe" if cfg.vocab_mode == "bpe" else None,
        )
    else:
        counts = stage_evaluate(
            cfg.testset, w / "predictions.jsonl", w / "report.json",
            model_name=name_model(cfg.bucket, cfg.vocab_mode, size),
        )
    report = {
        "stage": stage,
        "config": cfg.as_dict(),
        "inputs": input_hashes,
        "outputs": [str(p) for p in outputs],
        "counts": counts,
        "duration_s": round(time.monotonic() - started, 3),
        "fingerprint": fingerprint,
        "skipped": False,
    }
    write_json(report_path, report)
    return report


def run_pipeline(cfg: PipelineConfig, workdir: str | Path, force: bool = False) -> list[dict]:
    """All six stages in order over one working directory."""
    if not cfg.events:
        raise UsageError("pipeline config must set events=<archive path>")
    if not cfg.testset:
        raise UsageError("pipeline config must set testset=<testset path>")
    stages = [s for s in STAGES if not (s == "bpe" and cfg.vocab_mode == "fixed")]
    return [run_stage(stage, cfg, workdir, force=force) for stage in stages]
