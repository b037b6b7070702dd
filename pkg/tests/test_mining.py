"""Commit classification and archive mining."""

import gzip
import json

from hypothesis import given, settings
from hypothesis import strategies as st

from patchforge.mining import (
    ChangedFile,
    CommitRef,
    MineStats,
    archive_paths,
    classify_commit,
    filter_c_commits,
    iter_archive_events,
    mine_stream,
    parse_event,
)

SHA = "a" * 40


def _commit(message, paths):
    return CommitRef(SHA, message, [ChangedFile(p, "int x;", "int y;") for p in paths])


class TestClassify:
    def test_fix_bug(self):
        label = classify_commit("Fix null pointer bug in parser")
        assert label.is_bugfix
        assert label.matched_action_keyword == "fix"
        assert label.matched_subject_keyword == "bug"

    def test_empty_message(self):
        assert not classify_commit("").is_bugfix

    def test_repair_problem(self):
        label = classify_commit("repair the build problem")
        assert (label.is_bugfix, label.matched_action_keyword, label.matched_subject_keyword) == (
            True, "repair", "problem",
        )

    def test_subject_without_action(self):
        assert not classify_commit("add new feature for issues view").is_bugfix

    def test_action_without_subject(self):
        assert not classify_commit("fix typo in README").is_bugfix

    def test_inflected_forms_match(self):
        assert classify_commit("Fixes several bugs").is_bugfix
        assert classify_commit("bugfix for the solver").is_bugfix

    def test_first_match_in_reading_order(self):
        label = classify_commit("solve and fix the bug")
        assert label.matched_action_keyword == "solve"
        label = classify_commit("errors and issues: fixed")
        assert label.matched_subject_keyword == "error"

    def test_label_invariant(self):
        for msg in ("", "fix", "bug", "fix bug"):
            label = classify_commit(msg)
            both = label.matched_action_keyword is not None and label.matched_subject_keyword is not None
            assert label.is_bugfix == both

    @given(st.text(max_size=80))
    @settings(max_examples=300, deadline=None)
    def test_case_insensitive(self, message):
        assert classify_commit(message).is_bugfix == classify_commit(message.upper()).is_bugfix

    @given(st.text(max_size=60), st.text(max_size=30))
    @settings(max_examples=300, deadline=None)
    def test_monotone_under_appending(self, message, suffix):
        if classify_commit(message).is_bugfix:
            assert classify_commit(message + suffix).is_bugfix

    def test_deterministic(self):
        msg = "Fix the fault in frobnicator"
        assert classify_commit(msg) == classify_commit(msg)


class TestFilterC:
    def test_keeps_only_c_files(self):
        out = filter_c_commits(_commit("m", ["main.c", "README.md"]))
        assert [f.path for f in out.changed_files] == ["main.c"]

    def test_no_c_files(self):
        assert filter_c_commits(_commit("m", ["lib.cpp", "util.h"])) is None

    def test_all_c_files_unchanged(self):
        commit = _commit("m", ["a.c", "b.c"])
        out = filter_c_commits(commit)
        assert [f.path for f in out.changed_files] == ["a.c", "b.c"]

    def test_case_sensitive_suffix(self):
        assert filter_c_commits(_commit("m", ["weird.C"])) is None

    def test_subset_and_idempotent(self):
        commit = _commit("m", ["x.c", "y.cc", "z.c", "w.h"])
        once = filter_c_commits(commit)
        assert {f.path for f in once.changed_files} <= {f.path for f in commit.changed_files}
        twice = filter_c_commits(once)
        assert [f.path for f in twice.changed_files] == [f.path for f in once.changed_files]


def _event_line(event_id, message, path="f.c"):
    return json.dumps(
        {
            "event_id": event_id,
            "repo": "o/r",
            "commits": [
                {
                    "sha": SHA,
                    "message": message,
                    "files": [{"path": path, "before": "int a;", "after": "int b;"}],
                }
            ],
        }
    )


class TestMineStream:
    def test_three_events_one_retained(self, tmp_path):
        archive = tmp_path / "events.jsonl"
        archive.write_text(
            "\n".join(
                [
                    _event_line("e1", "Fix crash bug"),
                    _event_line("e2", "add feature"),
                    _event_line("e3", "fix the bug", path="notes.md"),
                ]
            )
        )
        stats = MineStats()
        out = list(mine_stream(iter_archive_events(archive, stats), stats))
        assert len(out) == 1
        assert out[0][1].sha == SHA
        assert stats.events_scanned == 3
        assert stats.commits_scanned == 3
        assert stats.retained == 1

    def test_empty_archive(self, tmp_path):
        archive = tmp_path / "empty.jsonl"
        archive.write_text("")
        stats = MineStats()
        assert list(mine_stream(iter_archive_events(archive, stats), stats)) == []
        assert stats.events_scanned == 0

    def test_corrupt_record_skipped_and_counted(self, tmp_path):
        archive = tmp_path / "events.jsonl"
        archive.write_text(
            "\n".join(
                [
                    _event_line("e1", "Fix crash bug"),
                    '{"event_id": "broken", "repo": 17',
                    _event_line("e2", "fix another error"),
                ]
            )
        )
        stats = MineStats()
        out = list(mine_stream(iter_archive_events(archive, stats), stats))
        assert len(out) == 2
        assert stats.malformed_records == 1
        assert stats.events_scanned == 2

    def test_bad_sha_counts_commit_malformed(self):
        stats = MineStats()
        event = parse_event(
            {
                "event_id": "e",
                "repo": "o/r",
                "commits": [{"sha": "XYZ", "message": "fix bug", "files": []}],
            },
            stats,
        )
        assert event.commits == []
        assert stats.malformed_commits == 1

    def test_file_with_both_blobs_absent_dropped(self):
        stats = MineStats()
        event = parse_event(
            {
                "event_id": "e",
                "repo": "o/r",
                "commits": [
                    {
                        "sha": SHA,
                        "message": "fix bug",
                        "files": [
                            {"path": "ghost.c", "before": None, "after": None},
                            {"path": "ok.c", "before": "a", "after": "b"},
                        ],
                    }
                ],
            },
            stats,
        )
        assert [f.path for f in event.commits[0].changed_files] == ["ok.c"]
        assert stats.dropped_file_entries == 1

    def test_gzip_archive(self, tmp_path):
        archive = tmp_path / "events.jsonl.gz"
        with gzip.open(archive, "wt", encoding="utf-8") as fh:
            fh.write(_event_line("e1", "Fix crash bug") + "\n")
        stats = MineStats()
        out = list(mine_stream(iter_archive_events(archive, stats), stats))
        assert len(out) == 1

    def test_archive_paths_sorted(self, tmp_path):
        (tmp_path / "b.jsonl").write_text("")
        (tmp_path / "a.jsonl").write_text("")
        assert [p.name for p in archive_paths(tmp_path)] == ["a.jsonl", "b.jsonl"]

    def test_rerun_identical_output(self, tmp_path):
        archive = tmp_path / "events.jsonl"
        archive.write_text(_event_line("e1", "Fix crash bug") + "\n")

        def run():
            stats = MineStats()
            return [
                (e.event_id, c.sha, l)
                for e, c, l in mine_stream(iter_archive_events(archive, stats), stats)
            ]

        assert run() == run()
