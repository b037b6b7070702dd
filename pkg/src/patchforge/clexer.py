"""Deterministic lexer for comment-free C source.

Implements maximal-munch C11 lexical rules: identifiers/keywords, integer
and floating literals (hex, octal, suffixes), string/char literals with
escapes and prefixes, multi-character punctuators, and whole preprocessor
lines as single opaque tokens. No trigraphs, no digraphs, no universal
character names.

The token stream round-trips: ``lex(detokenize(toks)) == toks`` for any
stream produced by ``lex``.
"""

from __future__ import annotations

import re
from typing import NamedTuple

from .errors import LexError

KIND_IDENTIFIER = "identifier"
KIND_KEYWORD = "keyword"
KIND_NUMBER = "number-literal"
KIND_STRING = "string-literal"
KIND_CHAR = "char-literal"
KIND_PUNCTUATOR = "punctuator"
KIND_PREPROCESSOR = "preprocessor-line"

C11_KEYWORDS = frozenset(
    """auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Alignas _Alignof _Atomic _Bool _Complex _Generic _Imaginary _Noreturn
    _Static_assert _Thread_local""".split()
)


class Token(NamedTuple):
    kind: str
    text: str
    start: int  # byte offset of first character
    end: int  # offset one past the last character


# Longest first so alternation implements maximal munch.
PUNCTUATORS = [
    "<<=", ">>=", "...",
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "^=", "|=",
    "[", "]", "(", ")", "{", "}", ".", "&", "*", "+", "-", "~", "!",
    "/", "%", "<", ">", "^", "|", "?", ":", ";", ",", "=",
]

_INT_SUFFIX = r"(?:[uU](?:ll|LL|l|L)?|(?:ll|LL|l|L)[uU]?)"
_FLOAT_SUFFIX = r"[fFlL]"
_NUMBER = (
    rf"0[xX](?:[0-9a-fA-F]+(?:\.[0-9a-fA-F]*)?|\.[0-9a-fA-F]+)[pP][+-]?[0-9]+{_FLOAT_SUFFIX}?"
    rf"|0[xX][0-9a-fA-F]+{_INT_SUFFIX}?"
    rf"|(?:[0-9]+\.[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?{_FLOAT_SUFFIX}?"
    rf"|[0-9]+[eE][+-]?[0-9]+{_FLOAT_SUFFIX}?"
    rf"|[0-9]+{_INT_SUFFIX}?"
)
# Escapes cover any character after a backslash, including a real newline
# (line continuation inside a literal).
_STRING = r'(?:u8|u|U|L)?"(?:[^"\\\n]|\\[\s\S])*"'
_CHAR = r"(?:u|U|L)?'(?:[^'\\\n]|\\[\s\S])+'"
_IDENT = r"[A-Za-z_][A-Za-z_0-9]*"

_MASTER = re.compile(
    rf"(?P<STR>{_STRING})|(?P<CHR>{_CHAR})|(?P<NUM>{_NUMBER})|(?P<ID>{_IDENT})"
    rf"|(?P<PUNCT>{'|'.join(re.escape(p) for p in PUNCTUATORS)})"
)

_UNTERMINATED_STR = re.compile(r'(?:u8|u|U|L)?"')
_UNTERMINATED_CHR = re.compile(r"(?:u|U|L)?'")


def _scan_preprocessor_line(source: str, i: int) -> int:
    """Return the offset one past a preprocessor line starting at ``i``.

    Backslash-newline continuations are part of the line; the terminating
    newline is not.
    """
    n = len(source)
    while i < n:
        c = source[i]
        if c == "\\" and i + 1 < n and source[i + 1] == "\n":
            i += 2
            continue
        if c == "\n":
            break
        i += 1
    return i


def lex(source: str) -> list[Token]:
    """Tokenize comment-free C source.

    Raises LexError with a byte offset for unterminated literals and for
    characters that cannot start any C token.
    """
    tokens: list[Token] = []
    i = 0
    n = len(source)
    at_line_start = True
    while i < n:
        c = source[i]
        if c in " \t\r\f\v":
            i += 1
            continue
        if c == "\n":
            i += 1
            at_line_start = True
            continue
        if c == "#" and at_line_start:
            end = _scan_preprocessor_line(source, i)
            tokens.append(Token(KIND_PREPROCESSOR, source[i:end], i, end))
            i = end
            continue
        m = _MASTER.match(source, i)
        if m is None:
            if _UNTERMINATED_STR.match(source, i):
                raise LexError("unterminated string literal", i)
            if _UNTERMINATED_CHR.match(source, i):
                raise LexError("unterminated character literal", i)
            raise LexError(f"stray character {c!r} outside the C character set", i)
        text = m.group()
        kind = {
            "STR": KIND_STRING,
            "CHR": KIND_CHAR,
            "NUM": KIND_NUMBER,
            "PUNCT": KIND_PUNCTUATOR,
        }[m.lastgroup] if m.lastgroup != "ID" else (
            KIND_KEYWORD if text in C11_KEYWORDS else KIND_IDENTIFIER
        )
        tokens.append(Token(kind, text, i, m.end()))
        i = m.end()
        at_line_start = False
    return tokens


def lex_texts(source: str) -> list[str]:
    """Token texts only; the representation used throughout the pipeline."""
    return [t.text for t in lex(source)]


def detokenize(texts: list[str] | tuple[str, ...]) -> str:
    """Render a token-text sequence back to compilable-shaped C text.

    Tokens are joined with single spaces. Preprocessor lines must start at
    a line boundary and end with one, so they are framed by newlines; this
    is what makes ``lex(detokenize(t)) == t`` hold.
    """
    parts: list[str] = []
    at_line_start = True
    for text in texts:
        is_preproc = text.startswith("#")
        if is_preproc and not at_line_start:
            parts.append("\n")
            at_line_start = True
        if not at_line_start:
            parts.append(" ")
        parts.append(text)
        if is_preproc:
            parts.append("\n")
            at_line_start = True
        else:
            at_line_start = False
    if parts and parts[-1] == "\n":
        parts.pop()
    return "".join(parts)
