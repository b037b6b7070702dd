"""patchforge command line: mine, extract, lex, bpe, train, predict,
evaluate, pipeline.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import bpe as bpe_mod
from . import clexer, extraction, pipeline
from .errors import PatchforgeError, UsageError
from .records import read_records, write_records

logger = logging.getLogger("patchforge")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchforge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for mining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mine", help="select bug-fix commits touching C files")
    p.add_argument("--in", dest="input", required=True, help="archive file or directory")
    p.add_argument("--out", required=True)
    p.add_argument("--stats")

    p = sub.add_parser("extract", help="build a deduplicated function-pair dataset")
    p.add_argument("--in", dest="input", required=True, help="mined-commit records")
    p.add_argument("--bucket", type=int, required=True, choices=extraction.VALID_BUCKETS)
    p.add_argument("--out", required=True)
    p.add_argument("--stats")

    p = sub.add_parser("lex", help="tokenize one C file (debugging aid)")
    p.add_argument("--in", dest="input", required=True)

    p = sub.add_parser("bpe", help="subword model operations")
    bpe_sub = p.add_subparsers(dest="bpe_command", required=True)
    q = bpe_sub.add_parser("train")
    q.add_argument("--in", dest="input", required=True, help="dataset records")
    q.add_argument("--vocab-size", type=int, required=True)
    q.add_argument("--out", required=True)
    q = bpe_sub.add_parser("encode")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True, help=".c file or dataset records")
    q.add_argument("--out", required=True)
    q = bpe_sub.add_parser("decode")
    q.add_argument("--model", required=True)
    q.add_argument("--in", dest="input", required=True, help="records with a pieces field")
    q.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the sequence model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--bpe", help="BPE model file (subword mode)")
    p.add_argument("--fixed-vocab", type=int, help="fixed-vocabulary size (baseline mode)")
    p.add_argument("--config", required=True, help="flat key=value configuration file")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write the per-epoch training log here")

    p = sub.add_parser("predict", help="beam-search patches for vulnerable functions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bpe", help="BPE model file (required for subword checkpoints)")
    p.add_argument("--in", dest="input", required=True, help="test-set records")
    p.add_argument("--beam", type=int, default=50)
    p.add_argument("--max-len", type=int, default=200)
    p.add_argument("--length-penalty", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--truth", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--model-name")

    p = sub.add_parser("pipeline", help="run all stages over one working directory")
    p.add_argument("--config", required=True)
    p.add_argument("--workdir", required=True)
    p.add_argument("--force", action="store_true")
    p.add_argument("--stage", choices=pipeline.STAGES, help="run a single stage")
    return parser


def _cmd_lex(args) -> int:
    from pathlib import Path

    source = Path(args.input).read_text(encoding="utf-8", errors="replace")
    for token in clexer.lex(extraction.strip_comments(source)):
        print(token.text.replace("\\\n", "\\n"))
    return 0


def _cmd_bpe(args) -> int:
    if args.bpe_command == "train":
        counts = pipeline.stage_bpe_train(args.input, args.vocab_size, args.out)
        logger.info("trained: %s", counts)
        return 0
    model = bpe_mod.load_model(args.model)
    if args.bpe_command == "encode":
        if args.input.endswith(".c"):
            from pathlib import Path

            text = Path(args.input).read_text(encoding="utf-8", errors="replace")
            tokens = clexer.lex_texts(extraction.strip_comments(text))
            write_records(args.out, [{"pieces": bpe_mod.encode(model, tokens)}])
        else:
            def encoded():
                for record in read_records(args.input):
                    out = dict(record)
                    for key in ("before_tokens", "after_tokens", "tokens"):
                        if key in record:
                            out[key.replace("tokens", "pieces")] = bpe_mod.encode(
                                model, record[key]
                            )
                            del out[key]
                    yield out

            write_records(args.out, encoded())
        return 0
    # decode
    write_records(
        args.out,
        (
            {"tokens": bpe_mod.decode(record["pieces"], model.marker)}
            for record in read_records(args.input)
        ),
    )
    return 0


def _cmd_train(args) -> int:
    cfg = pipeline.load_config(args.config)
    if args.fixed_vocab is not None:
        overrides = cfg.as_dict()
        overrides.update(vocab_mode="fixed", fixed_vocab_k=args.fixed_vocab)
        cfg = pipeline.PipelineConfig(**overrides)
    elif not args.bpe:
        raise UsageError("train needs --bpe MODEL for subword mode or --fixed-vocab K")
    counts = pipeline.stage_train(
        args.dataset, cfg, args.out, bpe_path=args.bpe, log_path=args.log
    )
    logger.info("trained: %s", counts)
    return 0


def run(argv: list[str]) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "mine":
        counts = pipeline.stage_mine(args.input, args.out, args.stats)
        logger.info("mined: %s", counts)
        return 0
    if args.command == "extract":
        counts = pipeline.stage_extract(args.input, args.bucket, args.out, args.stats)
        logger.info("extracted: %s", counts)
        return 0
    if args.command == "lex":
        return _cmd_lex(args)
    if args.command == "bpe":
        return _cmd_bpe(args)
    if args.command == "train":
        return _cmd_train(args)
    if args.command == "predict":
        counts = pipeline.stage_predict(
            args.ckpt, args.input, args.out, args.beam, args.max_len,
            args.length_penalty, bpe_path=args.bpe,
        )
        logger.info("predicted: %s", counts)
        return 0
    if args.command == "evaluate":
        counts = pipeline.stage_evaluate(args.truth, args.pred, args.report, args.model_name)
        logger.info("evaluated: %s", counts)
        return 0
    if args.command == "pipeline":
        cfg = pipeline.load_config(args.config)
        if args.stage:
            pipeline.run_stage(args.stage, cfg, args.workdir, force=args.force)
        else:
            pipeline.run_pipeline(cfg, args.workdir, force=args.force)
        return 0
    raise UsageError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except PatchforgeError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    raise SystemExit(main())
