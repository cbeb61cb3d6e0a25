"""Concrete syntax for the STL fragment.

::

    phi   := atom ('&&' atom)*
    atom  := 'G' I '(' psi ')' | 'F' I '(' psi ')' | opnd 'U' I opnd | '(' phi ')'
    opnd  := pred | '(' psi ')'
    psi   := pred ('&' pred)*
    pred  := 'ball' '(' expr ',' NUM ')' | 'affine' '(' expr ',' NUM ')'
    I     := '[' NUM ',' NUM ']'
    expr  := ['-'] term (('+' | '-') term)*
    term  := [coef '*'] factor ['*' NUM]
    coef  := NUM | matrix
    factor:= NAME | NAME '[' INT ']' | vector | NUM | '(' expr ')'

Names refer to slices of the state vector. ``x`` is always the full state.
A ball whose expression references no state is read as a center point:
``ball(c, eps)`` means ``eps - ||x - c||``. An affine weight without state
references is a weight vector over the full state.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .formula import (
    And,
    Always,
    BoolFormula,
    Eventually,
    FragmentError,
    Formula,
    Interval,
    Predicate,
    Until,
    temporal_operators,
)

FULL_STATE = "x"
_KEYWORDS = {"G", "F", "U", "ball", "affine"}


class FormulaSyntaxError(ValueError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        self.text = text
        super().__init__(f"{message} (at position {pos})")


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|inf)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>&&|\|\||[&|!~\[\](),+\-*:<>=])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise FormulaSyntaxError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            val = m.group()
            if kind == "name" and val == "inf":
                kind = "num"
            toks.append(_Tok(kind, val, pos))
        pos = m.end()
    toks.append(_Tok("eof", "", len(text)))
    return toks


# expression nodes: ("vec", arr) ("ref", name, idx) ("scale", coef, node)
# ("add", a, b) ("neg", a)


def _has_ref(node) -> bool:
    tag = node[0]
    if tag == "ref":
        return True
    if tag == "vec":
        return False
    if tag == "add":
        return _has_ref(node[1]) or _has_ref(node[2])
    return _has_ref(node[-1])


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokenize(text)
        self.i = 0

    # token helpers
    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> _Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise FormulaSyntaxError(msg, tok.pos, self.text)

    def accept(self, text: str) -> bool:
        if self.tok.kind != "eof" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> _Tok:
        tok = self.tok
        if tok.text != text or tok.kind == "eof":
            self.error(f"expected {text!r}, found {tok.text or 'end of input'!r}")
        self.i += 1
        return tok

    def _reject_outside_fragment(self):
        t = self.tok
        if t.text in ("|", "||"):
            raise FragmentError(f"disjunction is not supported (position {t.pos})")
        if t.text in ("!", "~"):
            raise FragmentError(
                f"negation is not supported; negate the predicate function instead (position {t.pos})"
            )

    # formulas
    def parse(self):
        phi = self.phi()
        self._reject_outside_fragment()
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return phi

    def phi(self):
        node = self.phi_atom()
        while True:
            self._reject_outside_fragment()
            if self.accept("&&"):
                node = ("and", node, self.phi_atom())
            elif self.tok.text == "&":
                self.error("use '&&' between temporal formulas; '&' joins predicates")
            else:
                return node

    def phi_atom(self):
        self._reject_outside_fragment()
        t = self.tok
        if t.kind == "name" and t.text in ("G", "F"):
            self.i += 1
            iv = self.interval()
            self.expect("(")
            psi = self.psi()
            self.expect(")")
            return ("G" if t.text == "G" else "F", iv, psi)
        if t.text == "(":
            # either a parenthesised until operand or a parenthesised phi
            save = self.i
            try:
                left = self.operand()
            except (FormulaSyntaxError, FragmentError):
                left = None
            if left is not None and self.tok.text == "U":
                return self.until_rest(left)
            self.i = save
            self.expect("(")
            node = self.phi()
            self.expect(")")
            return node
        if t.kind == "name" and t.text in ("ball", "affine"):
            left = self.operand()
            if self.tok.text != "U":
                self.error("a bare predicate needs a temporal operator (G, F or U)")
            return self.until_rest(left)
        self.error(f"expected a temporal formula, found {t.text or 'end of input'!r}")

    def until_rest(self, left):
        self.expect("U")
        iv = self.interval()
        right = self.operand()
        return ("U", iv, left, right)

    def operand(self):
        if self.accept("("):
            psi = self.psi()
            self.expect(")")
            return psi
        return [self.pred()]

    def psi(self):
        preds = [self.psi_item()]
        while self.accept("&"):
            preds.append(self.psi_item())
        if self.tok.text == "&&":
            self.error("'&&' joins temporal formulas; use '&' inside a boolean formula")
        self._reject_outside_fragment()
        return [p for group in preds for p in group]

    def psi_item(self):
        t = self.tok
        self._reject_outside_fragment()
        if t.kind == "name" and t.text in ("G", "F"):
            raise FragmentError(
                f"temporal operator {t.text} nested inside a boolean formula (position {t.pos})"
            )
        if self.accept("("):
            inner = self.psi()
            self.expect(")")
            return inner
        pred = self.pred()
        if self.tok.text == "U":
            raise FragmentError(f"until nested inside a boolean formula (position {self.tok.pos})")
        return [pred]

    def pred(self):
        t = self.tok
        if t.kind != "name" or t.text not in ("ball", "affine"):
            self.error(f"expected a predicate (ball or affine), found {t.text or 'end of input'!r}")
        self.i += 1
        self.expect("(")
        expr = self.expr()
        self.expect(",")
        num = self.number()
        end = self.expect(")")
        label = self.text[t.pos : end.pos + 1]
        return (t.text, expr, num, label, t.pos)

    def interval(self):
        start = self.expect("[")
        a = self.number()
        self.expect(",")
        b = self.number()
        self.expect("]")
        return (a, b, start.pos)

    def number(self) -> float:
        sign = 1.0
        while self.tok.text in ("-", "+"):
            if self.tok.text == "-":
                sign = -sign
            self.i += 1
        t = self.tok
        if t.kind != "num":
            self.error(f"expected a number, found {t.text or 'end of input'!r}")
        self.i += 1
        return sign * float(t.text)

    # linear expressions
    def expr(self):
        if self.accept("-"):
            node = ("neg", self.term())
        else:
            self.accept("+")
            node = self.term()
        while self.tok.text in ("+", "-"):
            op = self.tok.text
            self.i += 1
            rhs = self.term()
            node = ("add", node, rhs if op == "+" else ("neg", rhs))
        return node

    def term(self):
        t = self.tok
        if t.kind == "num" and self.peek().text == "*":
            self.i += 2
            return ("scale", np.array(float(t.text)), self.factor())
        if t.text == "[" and self.peek().text == "[":
            mat = self.matrix()
            self.expect("*")
            return ("scale", mat, self.factor())
        node = self.factor()
        if self.tok.text == "*" and self.peek().kind == "num":
            self.i += 1
            node = ("scale", np.array(self.number()), node)
        return node

    def factor(self):
        t = self.tok
        if t.kind == "num":
            self.i += 1
            return ("vec", np.array([float(t.text)]))
        if t.text == "-":
            self.i += 1
            return ("neg", self.factor())
        if t.text == "[":
            return ("vec", self.vector())
        if t.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "name":
            if t.text in _KEYWORDS:
                self.error(f"{t.text!r} is a reserved word, not a state slice")
            self.i += 1
            idx = None
            if self.accept("["):
                it = self.tok
                if it.kind != "num" or not re.fullmatch(r"\d+", it.text):
                    self.error("state index must be a nonnegative integer")
                self.i += 1
                idx = int(it.text)
                self.expect("]")
            return ("ref", t.text, idx, t.pos)
        self.error(f"expected a state expression, found {t.text or 'end of input'!r}")

    def vector(self) -> np.ndarray:
        self.expect("[")
        vals = [self.number()]
        while self.accept(","):
            vals.append(self.number())
        self.expect("]")
        return np.array(vals)

    def matrix(self) -> np.ndarray:
        self.expect("[")
        rows = [self.vector()]
        while self.accept(","):
            rows.append(self.vector())
        self.expect("]")
        if len({len(r) for r in rows}) != 1:
            self.error("matrix rows have different lengths")
        return np.array(rows)


def _compile(node, n: int, slices: dict[str, tuple[int, int]], text: str):
    """Return (L, o) with L of shape (k, n)."""
    tag = node[0]
    if tag == "vec":
        v = node[1]
        return np.zeros((len(v), n)), v.astype(float)
    if tag == "ref":
        _, name, idx, pos = node
        if name == FULL_STATE:
            lo, hi = 0, n
        elif name in slices:
            lo, hi = slices[name]
        else:
            raise FormulaSyntaxError(f"unknown state slice {name!r}", pos, text)
        rows = np.eye(n)[lo:hi]
        if idx is not None:
            if idx >= hi - lo:
                raise FormulaSyntaxError(f"index {idx} out of range for {name!r}", pos, text)
            rows = rows[idx : idx + 1]
        return rows, np.zeros(len(rows))
    if tag == "neg":
        L, o = _compile(node[1], n, slices, text)
        return -L, -o
    if tag == "scale":
        coef = node[1]
        L, o = _compile(node[2], n, slices, text)
        if coef.ndim == 0:
            return coef * L, coef * o
        if coef.shape[1] != L.shape[0]:
            raise FormulaSyntaxError(
                f"matrix with {coef.shape[1]} columns applied to a {L.shape[0]}-vector", 0, text
            )
        return coef @ L, coef @ o
    L1, o1 = _compile(node[1], n, slices, text)
    L2, o2 = _compile(node[2], n, slices, text)
    if L1.shape[0] != L2.shape[0]:
        raise FormulaSyntaxError(
            f"adding vectors of length {L1.shape[0]} and {L2.shape[0]}", 0, text
        )
    return L1 + L2, o1 + o2


def _length_hint(node) -> int | None:
    """Length of an expression when it does not depend on the full-state size."""
    tag = node[0]
    if tag == "vec":
        return len(node[1])
    if tag == "ref":
        return 1 if node[2] is not None else None
    if tag == "neg":
        return _length_hint(node[1])
    if tag == "scale":
        return node[1].shape[0] if node[1].ndim == 2 else _length_hint(node[2])
    return _length_hint(node[1]) or _length_hint(node[2])


def _dim_hints(kind: str, node) -> list[int]:
    hints = []
    if not _has_ref(node):
        k = _length_hint(node)
        if k:
            hints.append(k)
        return hints

    def walk(nd):
        tag = nd[0]
        if tag == "scale" and nd[1].ndim == 2 and nd[2][0] == "ref" and nd[2][1] == FULL_STATE:
            hints.append(nd[1].shape[1])
        for child in nd[1:]:
            if isinstance(child, tuple):
                walk(child)

    walk(node)
    if kind == "ball":
        # a bare full-state reference fixes the expression length to n
        def bare_x(nd):
            tag = nd[0]
            if tag == "ref":
                return nd[1] == FULL_STATE and nd[2] is None
            if tag == "neg":
                return bare_x(nd[1])
            if tag == "scale":
                return nd[1].ndim == 0 and bare_x(nd[2])
            if tag == "add":
                return bare_x(nd[1]) or bare_x(nd[2])
            return False

        if bare_x(node):
            k = _length_hint(node)
            if k:
                hints.append(k)
    return hints


def _make_predicate(raw, n: int, slices, text: str) -> Predicate:
    kind, node, num, label, pos = raw
    L, o = _compile(node, n, slices, text)
    if kind == "ball":
        if not _has_ref(node):
            if len(o) != n:
                raise FormulaSyntaxError(
                    f"ball center has length {len(o)}, state has dimension {n}", pos, text
                )
            L, o = np.eye(n), -o
        if num < 0:
            raise FormulaSyntaxError("ball radius must be nonnegative", pos, text)
        return Predicate.ball(L, o, num, label)
    if not _has_ref(node):
        if len(o) != n:
            raise FormulaSyntaxError(
                f"affine weight has length {len(o)}, state has dimension {n}", pos, text
            )
        return Predicate.affine(o, num, label)
    if L.shape[0] != 1:
        raise FormulaSyntaxError("affine expression must be scalar-valued", pos, text)
    return Predicate.affine(L[0], o[0] + num, label)


def _build(raw, n, slices, text) -> Formula:
    tag = raw[0]
    if tag == "and":
        return And(_build(raw[1], n, slices, text), _build(raw[2], n, slices, text))

    def interval(spec):
        a, b, _ = spec
        return Interval(a, b)

    def psi(items):
        return BoolFormula(tuple(_make_predicate(r, n, slices, text) for r in items))

    if tag == "G":
        return Always(interval(raw[1]), psi(raw[2]))
    if tag == "F":
        return Eventually(interval(raw[1]), psi(raw[2]))
    return Until(interval(raw[1]), psi(raw[2]), psi(raw[3]))


def _raw_preds(raw):
    tag = raw[0]
    if tag == "and":
        return _raw_preds(raw[1]) + _raw_preds(raw[2])
    if tag == "U":
        return list(raw[2]) + list(raw[3])
    return list(raw[2])


def parse_formula(
    text: str,
    slices: dict[str, tuple[int, int]] | None = None,
    dim: int | None = None,
) -> Formula:
    """Parse ``text`` into a formula AST.

    ``slices`` maps names to ``(start, stop)`` index ranges of the state;
    ``dim`` is the state dimension. Without either, the dimension is
    inferred from constant vectors in the predicates.
    """
    slices = {k: (int(v[0]), int(v[1])) for k, v in (slices or {}).items()}
    if FULL_STATE in slices:
        raise ValueError(f"slice name {FULL_STATE!r} is reserved for the full state")
    raw = _Parser(text).parse()
    if dim is None and slices:
        dim = max(hi for _, hi in slices.values())
    if dim is None:
        hints = set()
        for kind, node, *_ in _raw_preds(raw):
            hints.update(_dim_hints(kind, node))
        if len(hints) != 1:
            raise FormulaSyntaxError(
                "cannot infer the state dimension; pass dim= or slices=" if not hints
                else f"inconsistent state dimensions {sorted(hints)}",
                0,
                text,
            )
        dim = hints.pop()
    for name, (lo, hi) in slices.items():
        if not 0 <= lo < hi <= dim:
            raise ValueError(f"slice {name!r} = [{lo}, {hi}) outside a {dim}-dimensional state")
    return _build(raw, dim, slices, text)


def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def format_predicate(p: Predicate, canonical: bool = False) -> str:
    if p.label and not canonical:
        return p.label
    if p.kind == "affine":
        w = ", ".join(_fmt_num(v) for v in p.matrix[0])
        return f"affine([{w}], {_fmt_num(p.offset[0])})"
    rows = ", ".join("[" + ", ".join(_fmt_num(v) for v in r) + "]" for r in p.matrix)
    off = ", ".join(_fmt_num(v) for v in p.offset)
    return f"ball([{rows}] * {FULL_STATE} + [{off}], {_fmt_num(p.radius)})"


def _fmt_psi(psi: BoolFormula, canonical: bool) -> str:
    return " & ".join(format_predicate(p, canonical) for p in psi.conjuncts)


def _fmt_iv(iv: Interval) -> str:
    return f"[{_fmt_num(iv.a)},{_fmt_num(iv.b)}]"


def format_formula(formula: Formula, canonical: bool = False) -> str:
    """Inverse of :func:`parse_formula` (up to whitespace).

    Predicates print their source text unless ``canonical`` is set, in
    which case they print in full-state matrix form.
    """
    parts = []
    for op in temporal_operators(formula):
        if isinstance(op, Always):
            parts.append(f"G{_fmt_iv(op.interval)}({_fmt_psi(op.psi, canonical)})")
        elif isinstance(op, Eventually):
            parts.append(f"F{_fmt_iv(op.interval)}({_fmt_psi(op.psi, canonical)})")
        else:
            parts.append(
                f"({_fmt_psi(op.left, canonical)}) U{_fmt_iv(op.interval)} "
                f"({_fmt_psi(op.right, canonical)})"
            )
    return " && ".join(parts)
