"""Tolerant lexical scanner for JavaScript source.

Produces a stream of significant tokens while understanding the constructs
that defeat plain regex matching: comments, single/double-quoted strings,
template literals with arbitrarily nested interpolations, and regex literals
(disambiguated from division by the preceding token). It is a tokenizer, not
a grammar: callers reconstruct just enough structure from the token stream.

Interpolation delimiters are emitted as "${" and "}" punct tokens; consumers
tracking nesting must treat "${" as an opener closed by "}". Template text
chunks are emitted as "template" tokens so the literal reads as an operand.
"""

from __future__ import annotations

from dataclasses import dataclass


class LexError(ValueError):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # ident | string | template | regex | num | punct | private
    value: str  # decoded text for strings, lexeme otherwise
    line: int
    col: int


_PUNCTS = sorted(
    [
        ">>>=",
        "===", "!==", "**=", "<<=", ">>=", ">>>", "...", "&&=", "||=", "??=",
        "=>", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=",
        "^=", "&&", "||", "??", "?.", "++", "--", "<<", ">>", "**",
        "{", "}", "(", ")", "[", "]", ";", ",", "<", ">", "+", "-", "*", "/",
        "%", "&", "|", "^", "!", "~", "?", ":", "=", ".", "@",
    ],
    key=len,
    reverse=True,
)

#: Tokens after which a "/" starts a regex literal rather than division.
_REGEX_AFTER_KEYWORDS = frozenset({
    "return", "typeof", "instanceof", "in", "of", "new", "delete", "void",
    "throw", "case", "do", "else", "yield", "await", "extends", "default",
})
_DIVISION_AFTER_PUNCTS = frozenset({")", "]", "++", "--"})

_SIMPLE_ESCAPES = {
    "n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "v": "\v", "0": "\0",
}


def _is_ident_start(ch: str) -> bool:
    return ch.isalpha() or ch in "_$" or (ord(ch) > 127 and ch.isidentifier())


def _is_ident_part(ch: str) -> bool:
    return ch.isalnum() or ch in "_$" or (ord(ch) > 127 and ("x" + ch).isidentifier())


class _Scanner:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def eof(self) -> bool:
        return self.pos >= len(self.text)

    def peek(self, offset: int = 0) -> str:
        index = self.pos + offset
        return self.text[index] if index < len(self.text) else ""

    def advance(self, count: int = 1) -> str:
        taken = self.text[self.pos:self.pos + count]
        for ch in taken:
            if ch == "\n":
                self.line += 1
                self.col = 1
            else:
                self.col += 1
        self.pos += count
        return taken

    def error(self, message: str) -> LexError:
        return LexError(message, self.line, self.col)


def tokenize(text: str) -> list[Token]:
    """Lex the whole source; raises LexError on unterminated literals."""
    sc = _Scanner(text)
    tokens: list[Token] = []
    prev: Token | None = None
    # Each entry is one open template literal; the int counts "${" openings
    # currently inside normal-code mode for that literal (always 0 or 1 here,
    # nesting is handled by brace_depths).
    template_stack: list[int] = []
    # Depth of plain "{" openings inside the innermost interpolation.
    brace_depths: list[int] = []

    if sc.peek() == "#" and sc.peek(1) == "!":
        while not sc.eof() and sc.peek() != "\n":
            sc.advance()

    def emit(kind: str, value: str, line: int, col: int) -> None:
        nonlocal prev
        token = Token(kind, value, line, col)
        tokens.append(token)
        prev = token

    def regex_allowed() -> bool:
        if prev is None:
            return True
        if prev.kind in ("num", "string", "template", "regex", "private"):
            return False
        if prev.kind == "ident":
            return prev.value in _REGEX_AFTER_KEYWORDS
        return prev.value not in _DIVISION_AFTER_PUNCTS

    def scan_string(quote: str) -> None:
        line, col = sc.line, sc.col
        sc.advance()
        out: list[str] = []
        while True:
            if sc.eof():
                raise LexError("unterminated string literal", line, col)
            ch = sc.peek()
            if ch == quote:
                sc.advance()
                break
            if ch == "\n" or ch == "\r":
                raise LexError("unterminated string literal", line, col)
            if ch == "\\":
                sc.advance()
                out.append(_decode_escape(sc))
                continue
            out.append(sc.advance())
        emit("string", "".join(out), line, col)

    def scan_template_chunk() -> None:
        # Consumes template text until "`" (literal ends) or "${" (code begins).
        line, col = sc.line, sc.col
        out: list[str] = []
        while True:
            if sc.eof():
                raise LexError("unterminated template literal", line, col)
            ch = sc.peek()
            if ch == "`":
                sc.advance()
                template_stack.pop()
                emit("template", "".join(out), line, col)
                return
            if ch == "$" and sc.peek(1) == "{":
                emit("template", "".join(out), line, col)
                dollar_line, dollar_col = sc.line, sc.col
                sc.advance(2)
                brace_depths.append(0)
                emit("punct", "${", dollar_line, dollar_col)
                return
            if ch == "\\":
                sc.advance()
                out.append(_decode_escape(sc))
                continue
            out.append(sc.advance())

    def scan_regex() -> None:
        line, col = sc.line, sc.col
        sc.advance()
        in_class = False
        body: list[str] = ["/"]
        while True:
            if sc.eof() or sc.peek() in "\n\r":
                raise LexError("unterminated regular expression", line, col)
            ch = sc.advance()
            body.append(ch)
            if ch == "\\":
                if sc.eof() or sc.peek() in "\n\r":
                    raise LexError("unterminated regular expression", line, col)
                body.append(sc.advance())
            elif ch == "[":
                in_class = True
            elif ch == "]":
                in_class = False
            elif ch == "/" and not in_class:
                break
        while not sc.eof() and sc.peek().isalpha():
            body.append(sc.advance())
        emit("regex", "".join(body), line, col)

    def scan_number() -> None:
        line, col = sc.line, sc.col
        out: list[str] = []
        if sc.peek() == "0" and sc.peek(1) in "xXoObB":
            out.append(sc.advance(2))
            while not sc.eof() and (sc.peek().isalnum() or sc.peek() == "_"):
                out.append(sc.advance())
        else:
            while not sc.eof() and (sc.peek().isdigit() or sc.peek() == "_"):
                out.append(sc.advance())
            if sc.peek() == ".":
                out.append(sc.advance())
                while not sc.eof() and (sc.peek().isdigit() or sc.peek() == "_"):
                    out.append(sc.advance())
            if sc.peek() in "eE" and (sc.peek(1).isdigit() or (sc.peek(1) in "+-" and sc.peek(2).isdigit())):
                out.append(sc.advance())
                if sc.peek() in "+-":
                    out.append(sc.advance())
                while not sc.eof() and sc.peek().isdigit():
                    out.append(sc.advance())
        if sc.peek() == "n":
            out.append(sc.advance())
        emit("num", "".join(out), line, col)

    while not sc.eof():
        ch = sc.peek()

        if ch in " \t\r\n\f\v ﻿  ":
            sc.advance()
            continue

        if ch == "/" and sc.peek(1) == "/":
            while not sc.eof() and sc.peek() not in "\n  ":
                sc.advance()
            continue
        if ch == "/" and sc.peek(1) == "*":
            line, col = sc.line, sc.col
            sc.advance(2)
            while True:
                if sc.eof():
                    raise LexError("unterminated block comment", line, col)
                if sc.peek() == "*" and sc.peek(1) == "/":
                    sc.advance(2)
                    break
                sc.advance()
            continue

        if ch == "`":
            sc.advance()
            template_stack.append(0)
            scan_template_chunk()
            continue

        if ch == "}" and brace_depths and brace_depths[-1] == 0 and template_stack:
            # Closes the innermost template interpolation.
            emit("punct", "}", sc.line, sc.col)
            sc.advance()
            brace_depths.pop()
            scan_template_chunk()
            continue

        if ch in "'\"":
            scan_string(ch)
            continue

        if ch == "/" and regex_allowed():
            scan_regex()
            continue

        if ch.isdigit() or (ch == "." and sc.peek(1).isdigit()):
            scan_number()
            continue

        if _is_ident_start(ch):
            line, col = sc.line, sc.col
            out = [sc.advance()]
            while not sc.eof() and _is_ident_part(sc.peek()):
                out.append(sc.advance())
            emit("ident", "".join(out), line, col)
            continue

        if ch == "#":
            line, col = sc.line, sc.col
            sc.advance()
            out = ["#"]
            while not sc.eof() and _is_ident_part(sc.peek()):
                out.append(sc.advance())
            emit("private", "".join(out), line, col)
            continue

        for punct in _PUNCTS:
            if sc.text.startswith(punct, sc.pos):
                line, col = sc.line, sc.col
                if punct == "{" and brace_depths:
                    brace_depths[-1] += 1
                elif punct == "}" and brace_depths:
                    brace_depths[-1] -= 1
                sc.advance(len(punct))
                emit("punct", punct, line, col)
                break
        else:
            raise sc.error(f"unexpected character {ch!r}")

    if template_stack:
        raise LexError("unterminated template literal", sc.line, sc.col)
    return tokens


def _decode_escape(sc: _Scanner) -> str:
    """Consume one escape sequence (backslash already consumed)."""
    if sc.eof():
        raise sc.error("dangling escape")
    ch = sc.advance()
    if ch in _SIMPLE_ESCAPES:
        return _SIMPLE_ESCAPES[ch]
    if ch == "x":
        digits = sc.advance(2)
        try:
            return chr(int(digits, 16))
        except ValueError:
            return "x" + digits
    if ch == "u":
        if sc.peek() == "{":
            sc.advance()
            digits = []
            while not sc.eof() and sc.peek() != "}":
                digits.append(sc.advance())
            if not sc.eof():
                sc.advance()
            try:
                return chr(int("".join(digits), 16))
            except (ValueError, OverflowError):
                return "u{" + "".join(digits) + "}"
        digits = sc.advance(4)
        try:
            return chr(int(digits, 16))
        except ValueError:
            return "u" + digits
    if ch in "\n  ":
        return ""
    if ch == "\r":
        if sc.peek() == "\n":
            sc.advance()
        return ""
    return ch
