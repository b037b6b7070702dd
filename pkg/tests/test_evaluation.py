"""Function- and vulnerability-level scoring, plus the OOV analysis."""

import json
import random

import pytest

from patchforge import clexer
from patchforge.bpe import MARKER, FixedVocab, decode, encode, train_bpe
from patchforge.errors import DataError
from patchforge.evaluation import (
    VulnFunction,
    VulnerabilityRecord,
    evaluate,
    function_fixed,
    load_predictions,
    load_testset,
    oov_analysis,
)


def vuln(cve, specs):
    return VulnerabilityRecord(
        cve,
        [
            VulnFunction(name, f"src/{name}.c", ("int", name), tuple(after))
            for name, after in specs
        ],
    )


class TestFunctionFixed:
    def test_match_at_rank_37(self):
        truth = ["int", "a", ";"]
        predictions = [["x"]] * 36 + [truth] + [["y"]] * 5
        assert function_fixed(predictions, truth)

    def test_empty_predictions(self):
        assert not function_fixed([], ["int", "a", ";"])

    def test_formatting_noise_is_invisible(self):
        pretty = "int f(void)\n{\n\treturn 0;\n}\n"
        cramped = "int f(void){return 0;}"
        assert clexer.lex_texts(pretty) == clexer.lex_texts(cramped)
        assert function_fixed([clexer.lex_texts(cramped)], clexer.lex_texts(pretty))

    def test_near_miss_rejected(self):
        assert not function_fixed([["int", "a"]], ["int", "a", ";"])


class TestEvaluate:
    def _predictions(self, records, fixed_keys):
        preds = {}
        for record in records:
            for fn in record.functions:
                key = (record.cve_id, fn.path, fn.name)
                preds[key] = [list(fn.after_tokens)] if key in fixed_keys else [["wrong"]]
        return preds

    def test_spec_hand_computation(self):
        records = [
            vuln("CVE-2019-0001", [("f1", ["a"]), ("f2", ["b"])]),
            vuln("CVE-2019-0002", [("g1", ["c"]), ("g2", ["d"])]),
            vuln("CVE-2019-0003", [("h1", ["e"])]),
        ]
        fixed = {
            ("CVE-2019-0001", "src/f1.c", "f1"),
            ("CVE-2019-0001", "src/f2.c", "f2"),
            ("CVE-2019-0002", "src/g1.c", "g1"),
        }
        report = evaluate(records, self._predictions(records, fixed))
        assert report.fixed_functions == (3, 5)
        assert report.partially_fixed == (2, 3)
        assert report.completely_fixed == (1, 3)

    def test_95_function_vulnerability_partial_only(self):
        specs = [(f"fn{i}", ["tok", str(i)]) for i in range(95)]
        record = vuln("CVE-2011-1771", specs)
        keys = record.keys()
        report = evaluate([record], self._predictions([record], set(keys[:94])))
        assert report.fixed_functions == (94, 95)
        assert report.partially_fixed == (1, 1)
        assert report.completely_fixed == (0, 1)

    def test_all_empty_prediction_lists(self):
        records = [vuln("CVE-2019-0100", [("f", ["a"])])]
        report = evaluate(records, {("CVE-2019-0100", "src/f.c", "f"): []})
        assert report.fixed_functions == (0, 1)
        assert report.partially_fixed == (0, 1)
        assert report.completely_fixed == (0, 1)

    def test_unknown_prediction_key_is_error(self):
        records = [vuln("CVE-2019-0101", [("f", ["a"])])]
        with pytest.raises(DataError, match="unknown"):
            evaluate(records, {("CVE-2019-0101", "bogus.c", "nope"): []})

    def test_missing_entries_count_as_empty(self):
        records = [vuln("CVE-2019-0102", [("f", ["a"]), ("g", ["b"])])]
        report = evaluate(records, {})
        assert report.functions_without_predictions == 2

    def test_malformed_cve_id_rejected(self):
        with pytest.raises(DataError):
            vuln("CVE-19-1", [("f", ["a"])])
        with pytest.raises(DataError):
            VulnerabilityRecord("CVE-2019-1234", [])

    def test_fuzzed_invariants(self):
        rng = random.Random(0)
        for trial in range(1000):
            n_vulns = rng.randint(1, 5)
            records = []
            fixed_keys = set()
            for v in range(n_vulns):
                n_fns = rng.randint(1, 4)
                specs = [(f"t{trial}v{v}f{i}", [str(rng.randint(0, 3))]) for i in range(n_fns)]
                record = vuln(f"CVE-2020-{10000 + trial * 10 + v}", specs)
                records.append(record)
                for key in record.keys():
                    if rng.random() < 0.5:
                        fixed_keys.add(key)
            report = evaluate(records, self._predictions(records, fixed_keys))
            complete = {v["cve_id"] for v in report.verdicts if v["completely_fixed"]}
            partial = {v["cve_id"] for v in report.verdicts if v["partially_fixed"]}
            assert complete <= partial
            assert report.completely_fixed[0] <= report.partially_fixed[0]
            assert report.fixed_functions[0] <= report.fixed_functions[1]

    def test_adding_correct_prediction_is_monotone(self):
        records = [vuln("CVE-2019-0103", [("f", ["a"]), ("g", ["b"])])]
        base = {
            ("CVE-2019-0103", "src/f.c", "f"): [["z"]],
            ("CVE-2019-0103", "src/g.c", "g"): [["b"]],
        }
        before = evaluate(records, base)
        base[("CVE-2019-0103", "src/f.c", "f")].append(["a"])
        after = evaluate(records, base)
        assert after.fixed_functions[0] >= before.fixed_functions[0]
        assert after.partially_fixed[0] >= before.partially_fixed[0]
        assert after.completely_fixed[0] >= before.completely_fixed[0]


class TestOov:
    def test_all_within_vocab(self):
        vocab = FixedVocab(["a", "b"])
        assert oov_analysis([["a"], ["b", "a"]], vocab) == 0.0

    def test_all_contain_unk(self):
        vocab = FixedVocab(["a"])
        preds = [["a", vocab.unk], [vocab.unk]]
        assert oov_analysis(preds, vocab) == 1.0

    def test_mixed_fixture_seven_of_ten(self):
        vocab = FixedVocab(["a"])
        preds = [[vocab.unk, "a"]] * 7 + [["a"]] * 3
        assert oov_analysis(preds, vocab) == pytest.approx(0.7)

    def test_empty(self):
        assert oov_analysis([], FixedVocab(["a"])) == 0.0

    def test_bpe_decoded_predictions_never_contain_unk(self):
        corpus = [["open", "close", "read", "write"] * 3]
        model = train_bpe(corpus, 20)
        vocab = FixedVocab(["open"])
        decoded = [decode(encode(model, ["entirely", "novel", "words"]), model.marker)]
        assert oov_analysis(decoded, vocab) == 0.0


class TestLoading:
    def test_testset_roundtrip(self, tmp_path):
        path = tmp_path / "testset.jsonl"
        record = {
            "cve_id": "CVE-2019-9208",
            "functions": [
                {"name": "f", "path": "a.c", "before_tokens": ["x"], "after_tokens": ["y"]}
            ],
        }
        path.write_text(json.dumps(record) + "\n")
        loaded = load_testset(path)
        assert loaded[0].cve_id == "CVE-2019-9208"
        assert loaded[0].functions[0].after_tokens == ("y",)

    def test_duplicate_function_merged_final_after_state(self, tmp_path):
        path = tmp_path / "testset.jsonl"
        record = {
            "cve_id": "CVE-2019-9300",
            "functions": [
                {"name": "f", "path": "a.c", "before_tokens": ["v0"], "after_tokens": ["v1"]},
                {"name": "f", "path": "a.c", "before_tokens": ["v1"], "after_tokens": ["v2"]},
            ],
        }
        path.write_text(json.dumps(record) + "\n")
        loaded = load_testset(path)
        assert len(loaded[0].functions) == 1
        fn = loaded[0].functions[0]
        assert fn.before_tokens == ("v0",)
        assert fn.after_tokens == ("v2",)

    def test_predictions_sorted_by_rank(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        origin = {"cve_id": "CVE-2019-1111", "path": "a.c", "name": "f"}
        rows = [
            {"origin": origin, "rank": 2, "score": -2.0, "tokens": ["second"]},
            {"origin": origin, "rank": 1, "score": -1.0, "tokens": ["first"]},
        ]
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        loaded = load_predictions(path)
        assert loaded[("CVE-2019-1111", "a.c", "f")] == [["first"], ["second"]]
