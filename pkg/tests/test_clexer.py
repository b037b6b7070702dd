"""Lexer unit and property tests."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patchforge import clexer
from patchforge.errors import LexError


def texts(source):
    return clexer.lex_texts(source)


class TestBasics:
    def test_arrow_kept_as_one_token(self):
        assert texts("kvPair -> freeValue") == ["kvPair", "->", "freeValue"]

    def test_blank_source(self):
        assert texts("") == []
        assert texts("   \n\t  ") == []

    def test_maximal_munch_plus_chain(self):
        assert texts("a+++++b") == ["a", "++", "++", "+", "b"]

    def test_kernel_bounds_check_line(self):
        # the added line of the CVE-2009-4004 patch
        line = "if (!bank_num || bank_num >= KVM_MAX_MCE_BANKS)"
        assert texts(line) == [
            "if", "(", "!", "bank_num", "||", "bank_num", ">=", "KVM_MAX_MCE_BANKS", ")",
        ]

    def test_three_char_punctuators(self):
        assert texts("a <<= 1; b >>= 2; f(x, ...)") == [
            "a", "<<=", "1", ";", "b", ">>=", "2", ";", "f", "(", "x", ",", "...", ")",
        ]

    def test_minus_chain(self):
        assert texts("a--->b") == ["a", "--", "->", "b"]

    def test_kinds(self):
        toks = clexer.lex('if (x) return "s";')
        kinds = [t.kind for t in toks]
        assert kinds == [
            clexer.KIND_KEYWORD, clexer.KIND_PUNCTUATOR, clexer.KIND_IDENTIFIER,
            clexer.KIND_PUNCTUATOR, clexer.KIND_KEYWORD, clexer.KIND_STRING,
            clexer.KIND_PUNCTUATOR,
        ]


class TestLiterals:
    @pytest.mark.parametrize(
        "source,expected",
        [
            ("0x1fULL", ["0x1fULL"]),
            ("1.5e-3f", ["1.5e-3f"]),
            (".5 + 1.", [".5", "+", "1."]),
            ("0x1.8p3", ["0x1.8p3"]),
            ("077u", ["077u"]),
            ("1..2", ["1.", ".2"]),
            ("x.y", ["x", ".", "y"]),
        ],
    )
    def test_numbers(self, source, expected):
        assert texts(source) == expected

    def test_string_with_escapes(self):
        assert texts(r'"a\"b\n" x') == [r'"a\"b\n"', "x"]

    def test_string_prefixes(self):
        assert texts('L"wide" u8"utf"') == ['L"wide"', 'u8"utf"']
        assert texts("u8x") == ["u8x"]  # not a string prefix without a quote

    def test_char_literals(self):
        assert texts(r"'a' '\n' L'x' '\''") == ["'a'", r"'\n'", "L'x'", r"'\''"]

    def test_comment_like_text_inside_string(self):
        assert texts('char*s="/*no*/";') == ["char", "*", "s", "=", '"/*no*/"', ";"]

    def test_unterminated_string_offset(self):
        with pytest.raises(LexError) as exc:
            clexer.lex('x = "abc')
        assert exc.value.offset == 4

    def test_unterminated_char_offset(self):
        with pytest.raises(LexError) as exc:
            clexer.lex("y = 'a")
        assert exc.value.offset == 4

    def test_string_with_line_continuation(self):
        toks = clexer.lex('"ab\\\ncd" x')
        assert toks[0].text == '"ab\\\ncd"'
        assert [t.text for t in toks[1:]] == ["x"]


class TestPreprocessor:
    def test_whole_line_is_one_token(self):
        toks = clexer.lex("#define MAX 10\nint x;")
        assert toks[0].kind == clexer.KIND_PREPROCESSOR
        assert toks[0].text == "#define MAX 10"
        assert [t.text for t in toks[1:]] == ["int", "x", ";"]

    def test_continuation_joins_lines(self):
        src = "#define ADD(a, b) \\\n    ((a) + (b))\nint y;"
        toks = clexer.lex(src)
        assert toks[0].text == "#define ADD(a, b) \\\n    ((a) + (b))"
        assert [t.text for t in toks[1:]] == ["int", "y", ";"]

    def test_indented_directive(self):
        toks = clexer.lex("  #ifdef X\n a \n#endif")
        assert [t.kind for t in toks] == [
            clexer.KIND_PREPROCESSOR, clexer.KIND_IDENTIFIER, clexer.KIND_PREPROCESSOR,
        ]

    def test_stray_hash_mid_line_is_error(self):
        with pytest.raises(LexError):
            clexer.lex("int x # 3;")


class TestErrors:
    def test_stray_byte(self):
        with pytest.raises(LexError) as exc:
            clexer.lex("int a @ b;")
        assert exc.value.offset == 6

    def test_stray_backslash(self):
        with pytest.raises(LexError):
            clexer.lex("a \\ b")


class TestDetokenize:
    def test_simple_join(self):
        assert clexer.detokenize(["int", "a", ";"]) == "int a ;"

    def test_empty(self):
        assert clexer.detokenize([]) == ""

    def test_preprocessor_framing(self):
        out = clexer.detokenize(["int", "x", ";", "#define Y 1", "int", "z", ";"])
        assert out == "int x ;\n#define Y 1\nint z ;"
        assert [t.text for t in clexer.lex(out)] == [
            "int", "x", ";", "#define Y 1", "int", "z", ";",
        ]


REAL_SNIPPETS = [
    "int main(void) { return 0; }",
    'static const char *names[] = { "a", "b" };',
    "for (i = 0; i < n; i++) sum += a[i];",
    "#include <stdio.h>\nint x = 0xff & mask;",
    "p->next = q ? q->next : NULL;",
    "while (*s++ == ' ') count--;",
    "size_t n = sizeof(struct foo_bar);",
    "if (a >= b && c != d) { x <<= 2; y |= 4; }",
]


class TestRoundTrip:
    @pytest.mark.parametrize("source", REAL_SNIPPETS)
    def test_snippets(self, source):
        toks = texts(source)
        assert texts(clexer.detokenize(toks)) == toks

    @given(
        st.lists(
            st.one_of(
                st.sampled_from(clexer.PUNCTUATORS),
                st.from_regex(r"[A-Za-z_][A-Za-z_0-9]{0,8}", fullmatch=True),
                st.from_regex(r"(0x[0-9a-f]{1,4}|[0-9]{1,5}|[0-9]+\.[0-9]+)", fullmatch=True),
                st.sampled_from(['"str"', r'"a\tb"', "'c'", "#define Z 1", "#include <a.h>"]),
            ),
            max_size=30,
        )
    )
    @settings(max_examples=200, deadline=None)
    def test_generated_token_streams(self, toks):
        rendered = clexer.detokenize(toks)
        relexed = texts(rendered)
        assert relexed == toks

    def test_determinism(self):
        src = REAL_SNIPPETS[3]
        assert clexer.lex(src) == clexer.lex(src)


class TestNewlineInvariant:
    def test_only_strings_and_preproc_span_newlines(self):
        src = '#define A \\\n 1\nchar *s = "x\\\ny";\nint a;'
        for tok in clexer.lex(src):
            if "\n" in tok.text:
                assert tok.kind in (clexer.KIND_PREPROCESSOR, clexer.KIND_STRING)
