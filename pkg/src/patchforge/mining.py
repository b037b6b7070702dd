"""Select bug-fix commits touching C files from archived push events.

A commit is a bug fix when its message contains at least one action
keyword (fix, solve, repair) and at least one subject keyword (bug,
issue, problem, error, fault, vulnerability), matched case-insensitively
as substrings so that inflected forms like "fixes" or "bugfix" count.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import DataError
from .records import read_records_lenient

logger = logging.getLogger(__name__)

ACTION_KEYWORDS = ("fix", "solve", "repair")
SUBJECT_KEYWORDS = ("bug", "issue", "problem", "error", "fault", "vulnerability")

_SHA_RE = re.compile(r"[0-9a-f]{40}\Z")


@dataclass(frozen=True)
class BugFixLabel:
    is_bugfix: bool
    matched_action_keyword: str | None = None
    matched_subject_keyword: str | None = None


@dataclass
class ChangedFile:
    path: str
    before: str | None
    after: str | None


@dataclass
class CommitRef:
    sha: str
    message: str
    changed_files: list[ChangedFile]


@dataclass
class PushEvent:
    event_id: str
    repo: str
    commits: list[CommitRef]


@dataclass
class MineStats:
    events_scanned: int = 0
    commits_scanned: int = 0
    bugfix_commits: int = 0
    retained: int = 0
    malformed_records: int = 0
    malformed_commits: int = 0
    dropped_file_entries: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def _first_match(message_lower: str, keywords: tuple[str, ...]) -> str | None:
    """The keyword whose earliest occurrence comes first in reading order."""
    best: tuple[int, str] | None = None
    for kw in keywords:
        pos = message_lower.find(kw)
        if pos >= 0 and (best is None or pos < best[0]):
            best = (pos, kw)
    return best[1] if best else None


def classify_commit(message: str) -> BugFixLabel:
    lower = message.lower()
    action = _first_match(lower, ACTION_KEYWORDS)
    subject = _first_match(lower, SUBJECT_KEYWORDS)
    if action is not None and subject is not None:
        return BugFixLabel(True, action, subject)
    return BugFixLabel(False, None, None)


def filter_c_commits(commit: CommitRef) -> CommitRef | None:
    """Restrict the commit to files whose path ends in ".c" (case-sensitive);
    None when no such file remains."""
    c_files = [f for f in commit.changed_files if f.path.endswith(".c")]
    if not c_files:
        return None
    return CommitRef(commit.sha, commit.message, c_files)


def parse_event(obj: dict[str, Any], stats: MineStats) -> PushEvent | None:
    """Validate one archive record; None (counted) when it is unusable."""
    try:
        event_id = str(obj["event_id"])
        repo = str(obj["repo"])
        raw_commits = obj["commits"]
        if not isinstance(raw_commits, list):
            raise TypeError("commits is not a list")
    except (KeyError, TypeError):
        stats.malformed_records += 1
        return None
    commits = []
    for raw in raw_commits:
        try:
            sha = str(raw["sha"])
            if not _SHA_RE.match(sha):
                raise ValueError(f"bad sha {sha!r}")
            message = str(raw["message"])
            files = []
            for rf in raw.get("files", []):
                before = rf.get("before")
                after = rf.get("after")
                if before is None and after is None:
                    stats.dropped_file_entries += 1
                    continue
                files.append(ChangedFile(str(rf["path"]), before, after))
            commits.append(CommitRef(sha, message, files))
        except (KeyError, TypeError, ValueError, AttributeError):
            stats.malformed_commits += 1
            continue
    return PushEvent(event_id, repo, commits)


def mine_stream(
    events: Iterable[PushEvent], stats: MineStats | None = None
) -> Iterator[tuple[PushEvent, CommitRef, BugFixLabel]]:
    """Commits passing classify_commit then filter_c_commits, in input order."""
    if stats is None:
        stats = MineStats()
    for event in events:
        stats.events_scanned += 1
        for commit in event.commits:
            stats.commits_scanned += 1
            label = classify_commit(commit.message)
            if not label.is_bugfix:
                continue
            stats.bugfix_commits += 1
            filtered = filter_c_commits(commit)
            if filtered is None:
                continue
            stats.retained += 1
            yield event, filtered, label


def iter_archive_events(path: str | Path, stats: MineStats) -> Iterator[PushEvent]:
    """Events from one newline-delimited archive file (gzip by suffix).

    Malformed lines are counted and skipped, never fatal.
    """
    for obj in read_records_lenient(path):
        if obj is None:
            stats.malformed_records += 1
            continue
        event = parse_event(obj, stats)
        if event is not None:
            yield event


def archive_paths(target: str | Path) -> list[Path]:
    """The archive files under a directory (sorted), or the file itself."""
    target = Path(target)
    if target.is_dir():
        paths = sorted(
            p for p in target.iterdir() if p.suffix in (".jsonl", ".gz") and p.is_file()
        )
        if not paths:
            raise DataError(f"no .jsonl or .jsonl.gz archives under {target}")
        return paths
    if not target.exists():
        raise DataError(f"input archive {target} does not exist")
    return [target]


def retained_record(event: PushEvent, commit: CommitRef, label: BugFixLabel) -> dict[str, Any]:
    return {
        "event_id": event.event_id,
        "repo": event.repo,
        "sha": commit.sha,
        "message": commit.message,
        "files": [{"path": f.path, "before": f.before, "after": f.after} for f in commit.changed_files],
        "label": {
            "is_bugfix": label.is_bugfix,
            "matched_action_keyword": label.matched_action_keyword,
            "matched_subject_keyword": label.matched_subject_keyword,
        },
    }


def mine_archives(paths: list[Path], stats: MineStats) -> Iterator[dict[str, Any]]:
    for path in paths:
        logger.info("mining %s", path)
        yield from (
            retained_record(event, commit, label)
            for event, commit, label in mine_stream(iter_archive_events(path, stats), stats)
        )
