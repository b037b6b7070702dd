"""Score predictions against ground truth and aggregate per vulnerability.

A function is fixed when any of its ranked predictions equals the
ground-truth token sequence exactly (token-level comparison, so formatting
noise cannot matter). A vulnerability is completely fixed when all of its
functions are fixed, partially fixed when at least one is.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .bpe import FixedVocab
from .errors import DataError
from .records import read_records

CVE_RE = re.compile(r"CVE-\d{4}-\d{4,}\Z")

FunctionKey = tuple[str, str, str]  # (cve_id, path, name)


@dataclass
class VulnFunction:
    name: str
    path: str
    before_tokens: tuple[str, ...]
    after_tokens: tuple[str, ...]


@dataclass
class VulnerabilityRecord:
    cve_id: str
    functions: list[VulnFunction]

    def __post_init__(self):
        if not CVE_RE.match(self.cve_id):
            raise DataError(f"malformed CVE identifier {self.cve_id!r}")
        if not self.functions:
            raise DataError(f"{self.cve_id}: vulnerability record without functions")

    def keys(self) -> list[FunctionKey]:
        return [(self.cve_id, f.path, f.name) for f in self.functions]


@dataclass
class EvalReport:
    fixed_functions: tuple[int, int]  # (count, total)
    partially_fixed: tuple[int, int]
    completely_fixed: tuple[int, int]
    verdicts: list[dict]
    functions_without_predictions: int = 0

    def as_dict(self) -> dict:
        def ratio(pair):
            count, total = pair
            return {"count": count, "total": total, "ratio": (count / total) if total else 0.0}

        return {
            "fixed_functions": ratio(self.fixed_functions),
            "partially_fixed": ratio(self.partially_fixed),
            "completely_fixed": ratio(self.completely_fixed),
            "functions_without_predictions": self.functions_without_predictions,
            "vulnerabilities": self.verdicts,
        }


def function_fixed(predictions: Iterable[Iterable[str]], truth: Iterable[str]) -> bool:
    """True iff some prediction's token sequence equals the truth exactly."""
    truth = tuple(truth)
    return any(tuple(p) == truth for p in predictions)


def evaluate(
    vulns: list[VulnerabilityRecord],
    predictions: dict[FunctionKey, list[list[str]]],
) -> EvalReport:
    """Per-function verdicts rolled up to vulnerability granularity.

    A prediction keyed by a function absent from ``vulns`` is an error: it
    signals a pipeline bug. A vulnerability function with no entry in
    ``predictions`` counts as having an empty prediction list.
    """
    known = {key for v in vulns for key in v.keys()}
    unknown = set(predictions) - known
    if unknown:
        raise DataError(f"predictions for unknown functions: {sorted(unknown)[:3]!r}...")
    total_functions = 0
    fixed_count = 0
    missing = 0
    verdicts = []
    n_partial = 0
    n_complete = 0
    for vuln in vulns:
        fn_verdicts = []
        for fn in vuln.functions:
            key = (vuln.cve_id, fn.path, fn.name)
            preds = predictions.get(key)
            if preds is None:
                missing += 1
                preds = []
            fixed = function_fixed(preds, fn.after_tokens)
            total_functions += 1
            fixed_count += int(fixed)
            fn_verdicts.append({"name": fn.name, "path": fn.path, "fixed": fixed})
        n_fixed = sum(1 for fv in fn_verdicts if fv["fixed"])
        partially = n_fixed >= 1
        completely = n_fixed == len(fn_verdicts)
        n_partial += int(partially)
        n_complete += int(completely)
        verdicts.append(
            {
                "cve_id": vuln.cve_id,
                "functions": fn_verdicts,
                "partially_fixed": partially,
                "completely_fixed": completely,
            }
        )
    return EvalReport(
        (fixed_count, total_functions),
        (n_partial, len(vulns)),
        (n_complete, len(vulns)),
        verdicts,
        functions_without_predictions=missing,
    )


def oov_analysis(predictions: Iterable[Iterable[str]], vocab: FixedVocab) -> float:
    """Fraction of predictions containing at least one unknown token."""
    total = 0
    with_unk = 0
    for pred in predictions:
        total += 1
        if any(tok == vocab.unk for tok in pred):
            with_unk += 1
    return (with_unk / total) if total else 0.0


# ---------------------------------------------------------------------------
# Test-set file: newline-delimited {cve_id, functions:[{name, path,
# before_tokens, after_tokens}]}
# ---------------------------------------------------------------------------


def load_testset(path: str | Path) -> list[VulnerabilityRecord]:
    """Parse vulnerability records, merging duplicate (path, name) entries
    within one CVE: the first before-state and the final after-state win."""
    records: list[VulnerabilityRecord] = []
    for obj in read_records(path):
        try:
            cve_id = obj["cve_id"]
            merged: dict[tuple[str, str], VulnFunction] = {}
            for fn in obj["functions"]:
                key = (fn["path"], fn["name"])
                after = tuple(fn["after_tokens"])
                if key in merged:
                    merged[key] = VulnFunction(
                        fn["name"], fn["path"], merged[key].before_tokens, after
                    )
                else:
                    merged[key] = VulnFunction(
                        fn["name"], fn["path"], tuple(fn["before_tokens"]), after
                    )
            records.append(VulnerabilityRecord(cve_id, list(merged.values())))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed test-set record: {exc}") from exc
    return records


def load_predictions(path: str | Path) -> dict[FunctionKey, list[list[str]]]:
    """Parse prediction records {origin:{cve_id,path,name}, rank, score,
    tokens} into ranked lists keyed by function."""
    ranked: dict[FunctionKey, list[tuple[int, list[str]]]] = {}
    for obj in read_records(path):
        try:
            origin = obj["origin"]
            key = (origin["cve_id"], origin["path"], origin["name"])
            ranked.setdefault(key, []).append((int(obj["rank"]), list(obj["tokens"])))
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed prediction record: {exc}") from exc
    return {
        key: [tokens for _, tokens in sorted(entries, key=lambda rt: rt[0])]
        for key, entries in ranked.items()
    }
