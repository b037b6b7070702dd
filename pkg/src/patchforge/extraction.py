"""Turn before/after C files into deduplicated, length-bucketed function pairs.

The function recognizer is a brace-balanced heuristic over the token
stream, not a C parser: it finds ``identifier ( ... ) {`` at top level and
matches the body braces. K&R-style definitions and functions whose braces
are broken by preprocessor conditionals are skipped and counted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from . import clexer
from .errors import LexError

logger = logging.getLogger(__name__)

VALID_BUCKETS = (50, 100, 200)

# Identifiers that look like a function head but never are one.
_NOT_A_FUNCTION_NAME = frozenset(
    ["__attribute__", "__declspec", "__asm", "__asm__", "asm", "typeof", "__typeof__", "defined"]
)

_PREPROC_CONDITIONALS = ("#if", "#ifdef", "#ifndef", "#elif", "#else", "#endif")


def strip_comments(source: str) -> str:
    """Replace every ``/*...*/`` and ``//...`` comment with a single space.

    String and character literal contents are preserved verbatim; the rest
    of the text, including line structure outside comments, is untouched.
    Raises LexError at the opening offset of an unterminated block comment.
    """
    out: list[str] = []
    i = 0
    n = len(source)
    while i < n:
        c = source[i]
        nxt = source[i + 1] if i + 1 < n else ""
        if c == "/" and nxt == "*":
            start = i
            i += 2
            while i < n and not (source[i] == "*" and i + 1 < n and source[i + 1] == "/"):
                i += 1
            if i >= n:
                raise LexError("unterminated block comment", start)
            i += 2
            out.append(" ")
        elif c == "/" and nxt == "/":
            i += 2
            while i < n:
                if source[i] == "\\" and i + 1 < n and source[i + 1] == "\n":
                    i += 2  # spliced line, comment continues
                    continue
                if source[i] == "\n":
                    break
                i += 1
            out.append(" ")
        elif c == '"' or c == "'":
            quote = c
            out.append(c)
            i += 1
            while i < n:
                ch = source[i]
                out.append(ch)
                if ch == "\\" and i + 1 < n:
                    out.append(source[i + 1])
                    i += 2
                    continue
                i += 1
                if ch == quote or ch == "\n":
                    break
        else:
            out.append(c)
            i += 1
    return "".join(out)


@dataclass
class FunctionSpan:
    name: str
    start_offset: int
    end_offset: int
    body_text: str


@dataclass
class FunctionPair:
    name: str
    before_tokens: tuple[str, ...]
    after_tokens: tuple[str, ...]
    origin: tuple[str, str] = ("", "")  # (commit sha, file path)

    def key(self) -> tuple[tuple[str, ...], tuple[str, ...]]:
        return (self.before_tokens, self.after_tokens)


@dataclass
class ExtractStats:
    functions: int = 0
    skipped_kr: int = 0
    skipped_preproc: int = 0
    skipped_lex_error: int = 0
    added: int = 0
    deleted: int = 0
    unchanged: int = 0
    pairs: int = 0

    def merge(self, other: "ExtractStats") -> None:
        for f in self.__dataclass_fields__:
            setattr(self, f, getattr(self, f) + getattr(other, f))


def _match_paren(tokens: list[clexer.Token], i: int) -> int:
    """Index of the ')' matching the '(' at i, or -1 if the file ends first."""
    depth = 0
    while i < len(tokens):
        t = tokens[i].text
        if t == "(":
            depth += 1
        elif t == ")":
            depth -= 1
            if depth == 0:
                return i
        i += 1
    return -1


def _signature_start(tokens: list[clexer.Token], name_idx: int) -> int:
    """Walk back over return-type tokens to find where the signature starts."""
    j = name_idx - 1
    while j >= 0:
        tok = tokens[j]
        if tok.kind in (clexer.KIND_KEYWORD, clexer.KIND_IDENTIFIER) or tok.text == "*":
            j -= 1
        else:
            break
    return j + 1


def extract_functions(source: str, stats: ExtractStats | None = None) -> list[FunctionSpan]:
    """Top-level function definitions of a comment-free C file, in order.

    Raises LexError for unbalanced braces at end of file unless the broken
    body contained a preprocessor conditional, in which case the function
    is skipped and counted in ``stats.skipped_preproc``.
    """
    if stats is None:
        stats = ExtractStats()
    tokens = clexer.lex(source)
    spans: list[FunctionSpan] = []
    i = 0
    n = len(tokens)
    while i < n:
        tok = tokens[i]
        if (
            tok.kind == clexer.KIND_IDENTIFIER
            and tok.text not in _NOT_A_FUNCTION_NAME
            and i + 1 < n
            and tokens[i + 1].text == "("
        ):
            close = _match_paren(tokens, i + 1)
            if close == -1:
                i += 1
                continue
            after = tokens[close + 1] if close + 1 < n else None
            if after is not None and after.text == "{":
                body_open = close + 1
                depth = 0
                j = body_open
                saw_conditional = False
                end_idx = -1
                while j < n:
                    t = tokens[j]
                    if t.kind == clexer.KIND_PREPROCESSOR:
                        if t.text.replace(" ", "").replace("\t", "").startswith(_PREPROC_CONDITIONALS):
                            saw_conditional = True
                    elif t.text == "{":
                        depth += 1
                    elif t.text == "}":
                        depth -= 1
                        if depth == 0:
                            end_idx = j
                            break
                    j += 1
                if end_idx == -1:
                    if saw_conditional:
                        stats.skipped_preproc += 1
                        logger.warning(
                            "skipping function %r: braces unbalanced across a preprocessor conditional",
                            tok.text,
                        )
                        i = body_open + 1
                        continue
                    raise LexError(
                        f"unbalanced braces at end of file (body of {tok.text!r} never closes)",
                        tokens[body_open].start,
                    )
                sig_start = _signature_start(tokens, i)
                start = tokens[sig_start].start
                end = tokens[end_idx].end
                spans.append(FunctionSpan(tok.text, start, end, source[start:end]))
                stats.functions += 1
                i = end_idx + 1
                continue
            if after is not None and after.kind in (clexer.KIND_KEYWORD, clexer.KIND_IDENTIFIER):
                # Possible K&R definition: parameter declarations (idents,
                # keywords, commas, semicolons, array brackets) up to a '{'.
                k = close + 1
                decl_material = (";", ",", "*", "[", "]")
                while (
                    k < n
                    and k - close < 64
                    and (
                        tokens[k].kind in (clexer.KIND_KEYWORD, clexer.KIND_IDENTIFIER)
                        or tokens[k].text in decl_material
                    )
                ):
                    k += 1
                if k < n and tokens[k].text == "{" and any(
                    t.text == ";" for t in tokens[close + 1 : k]
                ):
                    stats.skipped_kr += 1
                    logger.warning("skipping K&R-style definition of %r", tok.text)
                    i = k  # body braces will not match the ident-parens-brace pattern
                    continue
        i += 1
    return spans


def _spans_by_key(spans: list[FunctionSpan]) -> dict[tuple[str, int], FunctionSpan]:
    """Key spans by (name, ordinal) so duplicate names stay distinct."""
    counts: dict[str, int] = {}
    out: dict[tuple[str, int], FunctionSpan] = {}
    for span in spans:
        ordinal = counts.get(span.name, 0)
        counts[span.name] = ordinal + 1
        out[(span.name, ordinal)] = span
    return out


def pair_changed_functions(
    before: list[FunctionSpan],
    after: list[FunctionSpan],
    stats: ExtractStats | None = None,
) -> list[FunctionPair]:
    """Pairs of (before, after) token sequences for functions that changed.

    Functions are matched by (name, ordinal index); added-only and
    deleted-only functions are counted, not paired. Functions whose body
    fails to lex are skipped with a count.
    """
    if stats is None:
        stats = ExtractStats()
    before_map = _spans_by_key(before)
    after_map = _spans_by_key(after)
    stats.deleted += len([k for k in before_map if k not in after_map])
    stats.added += len([k for k in after_map if k not in before_map])
    pairs: list[FunctionPair] = []
    for key, before_span in before_map.items():
        after_span = after_map.get(key)
        if after_span is None:
            continue
        try:
            before_toks = tuple(clexer.lex_texts(before_span.body_text))
            after_toks = tuple(clexer.lex_texts(after_span.body_text))
        except LexError:
            stats.skipped_lex_error += 1
            continue
        if before_toks == after_toks or not before_toks or not after_toks:
            stats.unchanged += 1
            continue
        pairs.append(FunctionPair(key[0], before_toks, after_toks))
        stats.pairs += 1
    return pairs


def extract_pairs_from_file(
    before_source: str,
    after_source: str,
    stats: ExtractStats | None = None,
) -> list[FunctionPair]:
    """strip comments -> recognize functions -> pair the changed ones."""
    before_spans = extract_functions(strip_comments(before_source), stats)
    after_spans = extract_functions(strip_comments(after_source), stats)
    return pair_changed_functions(before_spans, after_spans, stats)


@dataclass
class DedupStats:
    seen: int = 0
    duplicates: int = 0
    oversize: int = 0
    kept: int = 0
    seen_keys: set = field(default_factory=set, repr=False)


def dedup_and_bucket(pairs, limit: int, stats: DedupStats | None = None):
    """Drop exact-duplicate pairs (keeping the first) and pairs longer than
    ``limit`` tokens on either side. Yields survivors in input order."""
    if stats is None:
        stats = DedupStats()
    for pair in pairs:
        stats.seen += 1
        key = pair.key()
        if key in stats.seen_keys:
            stats.duplicates += 1
            continue
        stats.seen_keys.add(key)
        if len(pair.before_tokens) > limit or len(pair.after_tokens) > limit:
            stats.oversize += 1
            continue
        stats.kept += 1
        yield pair
