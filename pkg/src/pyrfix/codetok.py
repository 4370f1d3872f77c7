"""Word-level code tokenization, function renaming, and vocabulary handling.

A "word" here is any syntax entity of the source language, including a
single space: whitespace runs (newlines included) collapse to one space
token, string/char literals and comments are single tokens, and operators
are matched against a syntax table by maximal munch.  Concatenating the
token texts reproduces the whitespace-normalized source.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence

# Reserved vocabulary slots, fixed for every corpus.
PAD_ID, SOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<sos>", "<eos>", "<unk>")

SPACE = " "

# Multi-character operators of C/C++ plus keywords.  Keywords tokenize as
# identifiers anyway; they are listed so a table can double as the "standard
# syntax list" of the language.
DEFAULT_C_OPERATORS = (
    "<<=", ">>=", "...", "->*",
    "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
    "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "::", "##",
)

DEFAULT_C_KEYWORDS = frozenset("""
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    bool class delete new namespace operator private protected public
    template this throw try catch typename using virtual
""".split())

DEFAULT_C_SYNTAX = tuple(DEFAULT_C_OPERATORS) + tuple(sorted(DEFAULT_C_KEYWORDS))

# Common library calls that must survive function renaming.
DEFAULT_C_LIBRARY_NAMES = frozenset("""
    abort atoi calloc exit fclose fgets fopen fprintf fputs free fscanf
    getenv malloc memcpy memmove memset printf printLine printIntLine
    printLongLongLine puts rand realloc scanf snprintf sprintf sscanf
    strcat strchr strcmp strcpy strlen strncat strncmp strncpy strstr
    strtol time srand
""".split())

_IDENT_RE = re.compile(r"[A-Za-z_]\w*\Z")
_CANONICAL_RE = re.compile(r"FUNC_\d+\Z")
_WS_RUN_RE = re.compile(r"\s+")


class LexError(ValueError):
    """Unterminated literal or comment; carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def _is_ident_start(c: str) -> bool:
    return c.isalpha() or c == "_"


def _scan_string(source: str, pos: int, quote: str) -> int:
    """Return the index one past the closing quote."""
    start = pos
    pos += 1
    while pos < len(source):
        c = source[pos]
        if c == "\\":
            pos += 2
            continue
        if c == "\n":
            break
        if c == quote:
            return pos + 1
        pos += 1
    kind = "string" if quote == '"' else "char"
    raise LexError(f"unterminated {kind} literal", start)


def _scan_number(source: str, pos: int) -> int:
    """Numeric literal: digits, hex/suffix letters, dots, signed exponents."""
    end = pos + 1
    while end < len(source):
        c = source[end]
        if c.isalnum() or c == "." or c == "_":
            end += 1
        elif c in "+-" and source[end - 1] in "eEpP" and source[pos:pos + 2] not in ("0x", "0X"):
            end += 1
        else:
            break
    return end


def tokenize(
    source: str,
    syntax_table: Sequence[str] = DEFAULT_C_SYNTAX,
    keep_comments: bool = True,
) -> list[str]:
    """Lex ``source`` into word-level tokens.

    Whitespace runs (including newlines) become one space token, literals
    and comments are single tokens (with interior whitespace runs collapsed
    so no token ever contains a newline), and multi-character operators
    from ``syntax_table`` are matched by maximal munch.  Raises
    :class:`LexError` on unterminated literals or block comments.
    """
    operators = sorted((e for e in syntax_table if not _IDENT_RE.match(e)),
                       key=len, reverse=True)
    tokens: list[str] = []
    pos = 0
    n = len(source)
    while pos < n:
        c = source[pos]
        if c.isspace():
            while pos < n and source[pos].isspace():
                pos += 1
            if not (tokens and tokens[-1] == SPACE):
                tokens.append(SPACE)
            continue
        if c in "\"'":
            end = _scan_string(source, pos, c)
            tokens.append(_WS_RUN_RE.sub(SPACE, source[pos:end]))
            pos = end
            continue
        if c == "/" and pos + 1 < n and source[pos + 1] in "/*":
            if source[pos + 1] == "/":
                end = source.find("\n", pos)
                end = n if end < 0 else end
            else:
                close = source.find("*/", pos + 2)
                if close < 0:
                    raise LexError("unterminated block comment", pos)
                end = close + 2
            if keep_comments:
                tokens.append(_WS_RUN_RE.sub(SPACE, source[pos:end]))
            pos = end
            continue
        if _is_ident_start(c):
            end = pos + 1
            while end < n and (source[end].isalnum() or source[end] == "_"):
                end += 1
            tokens.append(source[pos:end])
            pos = end
            continue
        if c.isdigit():
            end = _scan_number(source, pos)
            tokens.append(source[pos:end])
            pos = end
            continue
        for op in operators:
            if source.startswith(op, pos):
                tokens.append(op)
                pos += len(op)
                break
        else:
            tokens.append(c)
            pos += 1
    return tokens


def detokenize(tokens: Iterable[str]) -> str:
    """Inverse of :func:`tokenize` up to whitespace normalization."""
    return "".join(tokens)


def normalize_whitespace(source: str) -> str:
    """Collapse every whitespace run (newlines included) to one space."""
    return _WS_RUN_RE.sub(SPACE, source)


def rename_functions(
    tokens: Sequence[str],
    known_library_names: frozenset[str] | set[str] = DEFAULT_C_LIBRARY_NAMES,
    keywords: frozenset[str] | set[str] = DEFAULT_C_KEYWORDS,
) -> tuple[list[str], dict[str, str]]:
    """Replace user-defined function names with FUNC_1, FUNC_2, ...

    A token is treated as a function name when it is an identifier whose
    next non-space token is "(", it is not "main", not a keyword, not in
    ``known_library_names``, and not already canonical.  Every occurrence
    of a detected name is substituted, so the operation is idempotent.
    """
    order: list[str] = []
    seen: set[str] = set()
    for i, tok in enumerate(tokens):
        if not _IDENT_RE.match(tok) or tok in seen:
            continue
        if tok == "main" or tok in keywords or tok in known_library_names:
            continue
        if _CANONICAL_RE.match(tok):
            continue
        j = i + 1
        while j < len(tokens) and tokens[j] == SPACE:
            j += 1
        if j < len(tokens) and tokens[j] == "(":
            order.append(tok)
            seen.add(tok)
    mapping = {name: f"FUNC_{k + 1}" for k, name in enumerate(order)}
    renamed = [mapping.get(tok, tok) for tok in tokens]
    return renamed, mapping


def _escape(token: str) -> str:
    escaped = token.replace("\\", "\\\\")
    return "\\s" if token == SPACE else escaped


def _unescape(line: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(line):
        if line[i] == "\\" and i + 1 < len(line):
            nxt = line[i + 1]
            if nxt == "s":
                out.append(SPACE)
                i += 2
                continue
            if nxt == "\\":
                out.append("\\")
                i += 2
                continue
        out.append(line[i])
        i += 1
    return "".join(out)


class Vocabulary:
    """Dense token<->id map with reserved ids 0..3 (pad, sos, eos, unk)."""

    def __init__(self, corpus_tokens: Sequence[str] = ()):
        self._tokens: list[str] = list(RESERVED_TOKENS)
        self._index: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        for tok in corpus_tokens:
            if tok in self._index:
                raise ValueError(f"duplicate or reserved token {tok!r}")
            self._index[tok] = len(self._tokens)
            self._tokens.append(tok)

    @classmethod
    def from_corpus(cls, corpus: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        """Tokens with frequency >= min_count, ordered by (freq desc, first seen)."""
        if min_count < 1:
            raise ValueError("min_count must be >= 1")
        counts: Counter[str] = Counter()
        first_seen: dict[str, int] = {}
        for token_list in corpus:
            for tok in token_list:
                counts[tok] += 1
                if tok not in first_seen:
                    first_seen[tok] = len(first_seen)
        kept = [t for t, c in counts.items()
                if c >= min_count and t not in RESERVED_TOKENS]
        kept.sort(key=lambda t: (-counts[t], first_seen[t]))
        return cls(kept)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self._tokens)

    def lookup(self, token: str) -> int:
        """Id of ``token``, or UNK_ID when out of vocabulary."""
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise ValueError(f"token id {token_id} out of range [0, {len(self)})")
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of(i) for i in ids]

    def serialize(self) -> str:
        return "".join(_escape(t) + "\n" for t in self._tokens)

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        tokens = [_unescape(line) for line in lines]
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError(f"{path}: lines 0-3 must be the reserved tokens")
        return cls(tokens[4:])


def load_syntax_table(path) -> list[str]:
    """Syntax table file: one entry per line, UTF-8."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def save_syntax_table(entries: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(entry + "\n")
