"""The surface language: lexer, AST, parser, typechecker, evaluator, printer.

Programs declare `hidden`/`visible` variables over finite domains, run a small
imperative body (skip, assignments, if/fi, while/od, print), and may carry a
trailing `@post { ... }` adversarial gain expression.  Gain expressions are
built from non-negative arithmetic atoms with `MAX` (adversary's choice),
`PLUS` (independent sub-adversaries), `AND` (scaling by a single atom), and a
bounded quantifier `MAX i in lo..hi: ...`.

The parser is hand-rolled recursive descent over a regex lexer; positions are
1-based line:column and ride along on AST nodes without affecting equality.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction

from .core import ArrayDomain, BoolDomain, IntRange
from .errors import (
    DivisionByZero,
    IndexOutOfBounds,
    NonStandardAndContext,
    ParseError,
    RangeEmpty,
    TypeCheckError,
)

# --- lexer ---------------------------------------------------------------------

KEYWORDS = {
    "hidden", "visible", "bool", "int", "array", "of",
    "skip", "if", "then", "else", "fi", "while", "invariant", "do", "od",
    "print", "true", "false", "div", "mod", "and", "or", "not",
    "max", "min", "in", "notin", "MAX", "PLUS", "AND",
}

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+)
    | (?P<comment>\#[^\n]*)
    | (?P<int>\d+)
    | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<post>@post)
    | (?P<sym>:=|\.\.|!=|<=|>=|[;:,()\[\]{}+\-*=<>&/])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # "int", "name", a keyword, "@post", a symbol, or "eof"
    text: str
    line: int
    col: int


def tokenize(src):
    tokens = []
    pos, line, bol = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - bol + 1)
        col = pos - bol + 1
        kind = m.lastgroup
        text = m.group()
        if kind == "ws" or kind == "comment":
            pass
        elif kind == "int":
            tokens.append(Token("int", text, line, col))
        elif kind == "name":
            k = text if text in KEYWORDS else "name"
            tokens.append(Token(k, text, line, col))
        elif kind == "post":
            tokens.append(Token("@post", text, line, col))
        else:
            tokens.append(Token(text, text, line, col))
        nl = text.count("\n")
        if nl:
            line += nl
            bol = pos + text.rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, len(src) - bol + 1))
    return tokens


# --- AST -------------------------------------------------------------------------
# pos fields never participate in equality, so parse -> print -> parse round-trips
# compare equal.

_POS = dict(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class RatLit(Expr):
    value: Fraction
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class BoolLit(Expr):
    value: bool
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Var(Expr):
    name: str
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Idx(Expr):
    name: str
    index: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Bin(Expr):
    op: str  # + - * div mod &
    left: Expr
    right: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class MaxF(Expr):
    args: tuple
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class MinF(Expr):
    args: tuple
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Cmp(Expr):
    op: str  # = != < <= > >=
    left: Expr
    right: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class BoolOp(Expr):
    op: str  # and | or   (short-circuit)
    left: Expr
    right: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Not(Expr):
    arg: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Iverson(Expr):
    arg: Expr  # boolean; value is the indicator 1/0
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Mem(Expr):
    """Membership `item in A[lo:hi]` over a half-open slice of a declared array.

    lo/hi of None mean 0 and the array length; `notin` sets negated.
    """

    item: Expr
    array: str
    lo: Expr | None
    hi: Expr | None
    negated: bool
    pos: tuple = field(**_POS)


# gain expressions


@dataclass(frozen=True)
class GainExpr:
    pass


@dataclass(frozen=True)
class GAtom(GainExpr):
    expr: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class GMax(GainExpr):
    left: GainExpr
    right: GainExpr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class GPlus(GainExpr):
    left: GainExpr
    right: GainExpr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class GAnd(GainExpr):
    scalar: Expr  # the single-atom (standard) left operand
    body: GainExpr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class GQuantMax(GainExpr):
    var: str
    values: tuple  # concrete ints, resolved at parse time
    body: GainExpr
    pos: tuple = field(**_POS)


# statements


@dataclass(frozen=True)
class Stmt:
    pass


@dataclass(frozen=True)
class SSkip(Stmt):
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class SAssign(Stmt):
    name: str
    index: Expr | None  # None for scalar targets
    value: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class SSeq(Stmt):
    stmts: tuple
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class SIf(Stmt):
    guard: Expr
    then: Stmt
    els: Stmt
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class SWhile(Stmt):
    guard: Expr
    body: Stmt
    invariant: GainExpr | None
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class SPrint(Stmt):
    expr: Expr
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Decl:
    name: str
    domain: object
    visible: bool
    pos: tuple = field(**_POS)


@dataclass(frozen=True)
class Program:
    decls: tuple
    body: Stmt
    post: GainExpr | None
    pos: tuple = field(**_POS)


# --- parser ----------------------------------------------------------------------

_STMT_END = {"eof", ";", "else", "fi", "od", "@post"}
_CMP_OPS = {"=", "!=", "<", "<=", ">", ">="}
# tokens that continue an arithmetic expression after a parenthesized gain turned
# out to be a lone atom, e.g. `(1/10)*[x notin A]`
_ARITH_CONT = {"+", "-", "*", "div", "mod", "&"} | _CMP_OPS | {"and", "or", "in", "notin"}


class Parser:
    def __init__(self, src):
        self.toks = tokenize(src)
        self.i = 0
        self.in_gain = False

    # token plumbing

    def peek(self, ahead=0):
        return self.toks[min(self.i + ahead, len(self.toks) - 1)]

    def next(self):
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, kind):
        return self.peek().kind == kind

    def accept(self, kind):
        if self.at(kind):
            return self.next()
        return None

    def expect(self, kind, what=None):
        t = self.peek()
        if t.kind != kind:
            found = t.text or "end of input"
            raise ParseError(f"expected {what or kind!r}, found {found!r}", t.line, t.col)
        return self.next()

    def fail(self, message):
        t = self.peek()
        raise ParseError(message, t.line, t.col)

    # program structure

    def parse_program(self):
        start = self.peek()
        decls = []
        while self.peek().kind in ("hidden", "visible"):
            decls.append(self.parse_decl())
            self.accept(";")
        body = self.parse_seq() if self.peek().kind not in ("@post", "eof") else SSkip()
        post = None
        if self.accept("@post"):
            self.expect("{")
            post = self.parse_gain()
            self.expect("}")
        self.expect("eof", "end of program")
        return Program(tuple(decls), body, post, pos=(start.line, start.col))

    def parse_decl(self):
        t = self.next()  # hidden | visible
        name = self.expect("name", "variable name")
        self.expect(":")
        domain = self.parse_domain()
        return Decl(name.text, domain, t.kind == "visible", pos=(t.line, t.col))

    def parse_domain(self):
        t = self.peek()
        if self.accept("bool"):
            return BoolDomain()
        if self.accept("int"):
            self.expect("[")
            lo = self.parse_signed_int()
            self.expect("..")
            hi = self.parse_signed_int()
            self.expect("]")
            if hi < lo:
                raise ParseError(f"empty range {lo}..{hi}", t.line, t.col)
            return IntRange(lo, hi)
        if self.accept("array"):
            self.expect("[")
            n = int(self.expect("int", "array length").text)
            self.expect("]")
            self.expect("of")
            elem = self.parse_domain()
            if isinstance(elem, ArrayDomain):
                self.fail("nested arrays are not supported")
            if n == 0:
                raise ParseError("array length must be positive", t.line, t.col)
            return ArrayDomain(n, elem)
        self.fail("expected a type (bool, int[lo..hi], or array[N] of ...)")

    def parse_signed_int(self):
        neg = self.accept("-")
        v = int(self.expect("int").text)
        return -v if neg else v

    # statements

    def parse_seq(self):
        start = self.peek()
        stmts = [self.parse_stmt()]
        while self.accept(";"):
            if self.peek().kind in _STMT_END:
                break  # tolerate a trailing semicolon
            stmts.append(self.parse_stmt())
        if len(stmts) == 1:
            return stmts[0]
        return SSeq(tuple(stmts), pos=(start.line, start.col))

    def parse_stmt(self):
        t = self.peek()
        if self.accept("skip"):
            return SSkip(pos=(t.line, t.col))
        if self.accept("print"):
            return SPrint(self.parse_expr(), pos=(t.line, t.col))
        if self.accept("if"):
            guard = self.parse_expr()
            self.expect("then")
            then = self.parse_seq()
            els = self.parse_seq() if self.accept("else") else SSkip(pos=(t.line, t.col))
            self.expect("fi")
            return SIf(guard, then, els, pos=(t.line, t.col))
        if self.accept("while"):
            guard = self.parse_expr()
            invariant = None
            if self.accept("invariant"):
                self.expect("{")
                invariant = self.parse_gain()
                self.expect("}")
            self.expect("do")
            body = self.parse_seq()
            self.expect("od")
            return SWhile(guard, body, invariant, pos=(t.line, t.col))
        if self.at("name"):
            name = self.next()
            index = None
            if self.accept("["):
                index = self.parse_expr()
                self.expect("]")
            self.expect(":=", "':='")
            value = self.parse_expr()
            return SAssign(name.text, index, value, pos=(name.line, name.col))
        self.fail(f"expected a statement, found {t.text or 'end of input'!r}")

    # gain expressions: MAX binds loosest, then PLUS, then AND (right-assoc)

    def parse_gain(self):
        saved, self.in_gain = self.in_gain, True
        try:
            return self._gain_max()
        finally:
            self.in_gain = saved

    def _gain_max(self):
        g = self._gain_plus()
        while True:
            t = self.accept("MAX")
            if t is None:
                return g
            g = GMax(g, self._gain_plus(), pos=(t.line, t.col))

    def _gain_plus(self):
        g = self._gain_and()
        while True:
            t = self.accept("PLUS")
            if t is None:
                return g
            g = GPlus(g, self._gain_and(), pos=(t.line, t.col))

    def _gain_and(self):
        g = self._gain_primary()
        t = self.accept("AND")
        if t is None:
            return g
        if not isinstance(g, GAtom):
            raise NonStandardAndContext(
                f"{t.line}:{t.col}: left operand of AND must be a single atom"
            )
        return GAnd(g.expr, self._gain_and(), pos=(t.line, t.col))

    def _quant_ahead(self, ahead):
        """After a MAX token, `i in` introduces a bounded quantifier."""
        return self.peek(ahead).kind == "name" and self.peek(ahead + 1).kind == "in"

    def _gain_primary(self):
        t = self.peek()
        if t.kind == "MAX" and self._quant_ahead(1):
            self.next()
            return self._gain_quant(t)
        if t.kind == "(":
            # may be a parenthesized gain or a parenthesized arithmetic
            # sub-expression; decide by what follows the closing paren
            mark = self.i
            self.next()
            g = self._gain_max()
            self.expect(")")
            if isinstance(g, GAtom) and self.peek().kind in _ARITH_CONT:
                self.i = mark  # re-parse as an arithmetic atom
                return GAtom(self.parse_expr(), pos=(t.line, t.col))
            return g
        return GAtom(self.parse_expr(), pos=(t.line, t.col))

    def _gain_quant(self, t):
        var = self.expect("name", "quantifier variable").text
        self.expect("in")
        values = self.parse_range(t)
        self.expect(":")
        body = self._gain_max()
        return GQuantMax(var, values, body, pos=(t.line, t.col))

    def parse_range(self, t):
        if self.accept("{"):
            vals = [self.parse_signed_int()]
            while self.accept(","):
                vals.append(self.parse_signed_int())
            self.expect("}")
            values = tuple(sorted(set(vals)))
        else:
            lo = self.parse_signed_int()
            self.expect("..")
            hi = self.parse_signed_int()
            values = tuple(range(lo, hi + 1))
        if not values:
            raise RangeEmpty(f"{t.line}:{t.col}: quantifier range is empty")
        return values

    # expressions, loosest binding first: or, and, not, comparison/membership,
    # additive, multiplicative (* div mod &), unary minus, primary

    def parse_expr(self):
        return self._expr_or()

    def _expr_or(self):
        e = self._expr_and()
        while True:
            t = self.accept("or")
            if t is None:
                return e
            e = BoolOp("or", e, self._expr_and(), pos=(t.line, t.col))

    def _expr_and(self):
        e = self._expr_not()
        while True:
            t = self.accept("and")
            if t is None:
                return e
            e = BoolOp("and", e, self._expr_not(), pos=(t.line, t.col))

    def _expr_not(self):
        t = self.accept("not")
        if t is not None:
            return Not(self._expr_not(), pos=(t.line, t.col))
        return self._expr_cmp()

    def _expr_cmp(self):
        e = self._expr_add()
        t = self.peek()
        if t.kind in _CMP_OPS:
            self.next()
            return Cmp(t.kind, e, self._expr_add(), pos=(t.line, t.col))
        if t.kind in ("in", "notin"):
            self.next()
            return self._membership(e, t)
        return e

    def _membership(self, item, t):
        arr = self.expect("name", "array name")
        lo = hi = None
        if self.accept("["):
            if not self.at(":"):
                lo = self.parse_expr()
            self.expect(":")
            if not self.at("]"):
                hi = self.parse_expr()
            self.expect("]")
        return Mem(item, arr.text, lo, hi, t.kind == "notin", pos=(t.line, t.col))

    def _expr_add(self):
        e = self._expr_mul()
        while True:
            t = self.peek()
            if t.kind in ("+", "-"):
                self.next()
                e = Bin(t.kind, e, self._expr_mul(), pos=(t.line, t.col))
            else:
                return e

    def _expr_mul(self):
        e = self._expr_unary()
        while True:
            t = self.peek()
            if t.kind in ("*", "div", "mod", "&"):
                self.next()
                e = Bin(t.kind, e, self._expr_unary(), pos=(t.line, t.col))
            else:
                return e

    def _expr_unary(self):
        t = self.accept("-")
        if t is not None:
            return Neg(self._expr_unary(), pos=(t.line, t.col))
        return self._expr_primary()

    def _expr_primary(self):
        t = self.peek()
        if t.kind == "int":
            self.next()
            if self.in_gain and self.at("/"):
                self.next()
                d = self.expect("int", "denominator")
                if int(d.text) == 0:
                    raise ParseError("zero denominator", d.line, d.col)
                return RatLit(Fraction(int(t.text), int(d.text)), pos=(t.line, t.col))
            return IntLit(int(t.text), pos=(t.line, t.col))
        if t.kind in ("true", "false"):
            self.next()
            return BoolLit(t.kind == "true", pos=(t.line, t.col))
        if t.kind in ("max", "min"):
            self.next()
            self.expect("(")
            args = [self.parse_expr()]
            while self.accept(","):
                args.append(self.parse_expr())
            self.expect(")")
            cls = MaxF if t.kind == "max" else MinF
            return cls(tuple(args), pos=(t.line, t.col))
        if t.kind == "name":
            self.next()
            if self.accept("["):
                index = self.parse_expr()
                self.expect("]")
                return Idx(t.text, index, pos=(t.line, t.col))
            return Var(t.text, pos=(t.line, t.col))
        if t.kind == "(":
            self.next()
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.kind == "[":
            self.next()
            e = self.parse_expr()
            self.expect("]")
            return Iverson(e, pos=(t.line, t.col))
        self.fail(f"expected an expression, found {t.text or 'end of input'!r}")


def parse_program(src):
    """Parse complete program source (declarations, body, optional @post)."""
    return Parser(src).parse_program()


def parse_gain(src):
    """Parse a standalone gain expression (as given to --gain)."""
    p = Parser(src)
    g = p.parse_gain()
    p.expect("eof", "end of gain expression")
    return g


def parse_expr(src):
    """Parse a standalone expression (handy in tests)."""
    p = Parser(src)
    e = p.parse_expr()
    p.expect("eof", "end of expression")
    return e


# --- typechecker -------------------------------------------------------------------

BOOL, INT, RAT = "bool", "int", "rat"


def decl_map(decls):
    env = {}
    for d in decls:
        if d.name in env:
            raise TypeCheckError(f"variable {d.name!r} declared twice")
        env[d.name] = d
    return env


class Checker:
    """Type checks a program (or a gain expression against declarations)."""

    def __init__(self, decls):
        self.decls = decl_map(decls)
        for d in decls:
            if d.visible and isinstance(d.domain, ArrayDomain):
                raise TypeCheckError(f"visible variable {d.name!r} must be scalar")

    def check_program(self, program):
        self.check_stmt(program.body)
        if program.post is not None:
            self.check_gain(program.post, {})
        return program

    # statements

    def check_stmt(self, s):
        if isinstance(s, SSkip):
            return
        if isinstance(s, SSeq):
            for st in s.stmts:
                self.check_stmt(st)
            return
        if isinstance(s, SPrint):
            t = self.expr_type(s.expr, {})
            if t == RAT:
                raise TypeCheckError("print argument must be a program value")
            return
        if isinstance(s, SIf):
            self.require(s.guard, BOOL, {})
            self.check_stmt(s.then)
            self.check_stmt(s.els)
            return
        if isinstance(s, SWhile):
            self.require(s.guard, BOOL, {})
            self.check_stmt(s.body)
            if s.invariant is not None:
                self.check_gain(s.invariant, {})
            return
        if isinstance(s, SAssign):
            d = self.decls.get(s.name)
            if d is None:
                raise TypeCheckError(f"assignment to undeclared variable {s.name!r}")
            dom = d.domain
            if s.index is not None:
                if not isinstance(dom, ArrayDomain):
                    raise TypeCheckError(f"{s.name!r} is not an array")
                self.require(s.index, INT, {})
                dom = dom.element
            elif isinstance(dom, ArrayDomain):
                raise TypeCheckError(f"array {s.name!r} must be assigned element-wise")
            want = BOOL if isinstance(dom, BoolDomain) else INT
            self.require(s.value, want, {})
            return
        raise TypeCheckError(f"unknown statement {s!r}")

    # gain expressions

    def check_gain(self, g, qvars):
        if isinstance(g, GAtom):
            self.check_atom(g.expr, qvars)
            return
        if isinstance(g, (GMax, GPlus)):
            self.check_gain(g.left, qvars)
            self.check_gain(g.right, qvars)
            return
        if isinstance(g, GAnd):
            self.check_atom(g.scalar, qvars)
            self.check_gain(g.body, qvars)
            return
        if isinstance(g, GQuantMax):
            if g.var in self.decls:
                raise TypeCheckError(
                    f"quantifier index {g.var!r} shadows a declared variable"
                )
            if g.var in qvars:
                raise TypeCheckError(f"quantifier index {g.var!r} shadows an outer index")
            self.check_gain(g.body, dict(qvars, **{g.var: INT}))
            return
        raise TypeCheckError(f"unknown gain expression {g!r}")

    def check_atom(self, e, qvars):
        t = self.expr_type(e, qvars)
        if t == BOOL:
            raise TypeCheckError(
                f"gain atom must be numeric; wrap the condition in [ ]: {e!r}"
            )
        if not self.is_nonneg(e, qvars):
            raise TypeCheckError(f"gain atom is not evidently non-negative: {e!r}")

    def is_nonneg(self, e, qvars):
        """Syntactic non-negativity discipline for user-written atoms."""
        if isinstance(e, IntLit):
            return e.value >= 0
        if isinstance(e, RatLit):
            return e.value >= 0
        if isinstance(e, Iverson):
            return True
        if isinstance(e, Var):
            if e.name in qvars:
                return False  # raw index values carry no sign guarantee
            dom = self.decls[e.name].domain
            return isinstance(dom, IntRange) and dom.lo >= 0
        if isinstance(e, Idx):
            dom = self.decls[e.name].domain.element
            return isinstance(dom, IntRange) and dom.lo >= 0
        if isinstance(e, Bin):
            if e.op in ("+", "*", "div", "mod", "&"):
                return self.is_nonneg(e.left, qvars) and self.is_nonneg(e.right, qvars)
            return False  # subtraction
        if isinstance(e, MaxF):
            return any(self.is_nonneg(a, qvars) for a in e.args)
        if isinstance(e, MinF):
            return all(self.is_nonneg(a, qvars) for a in e.args)
        return False

    # expressions

    def require(self, e, want, qvars):
        t = self.expr_type(e, qvars)
        if t != want and not (want == RAT and t == INT):
            raise TypeCheckError(f"expected {want}, got {t}: {e!r}")

    def expr_type(self, e, qvars):
        if isinstance(e, IntLit):
            return INT
        if isinstance(e, RatLit):
            return RAT
        if isinstance(e, BoolLit):
            return BOOL
        if isinstance(e, Var):
            if e.name in qvars:
                return qvars[e.name]
            d = self.decls.get(e.name)
            if d is None:
                raise TypeCheckError(f"undeclared variable {e.name!r}")
            if isinstance(d.domain, ArrayDomain):
                raise TypeCheckError(f"array {e.name!r} used as a scalar")
            return BOOL if isinstance(d.domain, BoolDomain) else INT
        if isinstance(e, Idx):
            d = self.decls.get(e.name)
            if d is None:
                raise TypeCheckError(f"undeclared variable {e.name!r}")
            if not isinstance(d.domain, ArrayDomain):
                raise TypeCheckError(f"{e.name!r} is not an array")
            self.require(e.index, INT, qvars)
            if isinstance(e.index, IntLit) and not (0 <= e.index.value < d.domain.length):
                raise TypeCheckError(
                    f"index {e.index.value} out of bounds for {e.name!r}"
                )
            return BOOL if isinstance(d.domain.element, BoolDomain) else INT
        if isinstance(e, Neg):
            t = self.expr_type(e.arg, qvars)
            if t == BOOL:
                raise TypeCheckError(f"negation of a boolean: {e!r}")
            return t
        if isinstance(e, Bin):
            lt = self.expr_type(e.left, qvars)
            rt = self.expr_type(e.right, qvars)
            if BOOL in (lt, rt):
                raise TypeCheckError(f"arithmetic on booleans: {e!r}")
            if e.op in ("div", "mod", "&") and RAT in (lt, rt):
                raise TypeCheckError(f"{e.op} needs integer operands: {e!r}")
            return RAT if RAT in (lt, rt) else INT
        if isinstance(e, (MaxF, MinF)):
            ts = [self.expr_type(a, qvars) for a in e.args]
            if BOOL in ts:
                raise TypeCheckError(f"max/min over booleans: {e!r}")
            return RAT if RAT in ts else INT
        if isinstance(e, Cmp):
            lt = self.expr_type(e.left, qvars)
            rt = self.expr_type(e.right, qvars)
            if (lt == BOOL) != (rt == BOOL):
                raise TypeCheckError(f"comparison mixes bool and number: {e!r}")
            if lt == BOOL and e.op not in ("=", "!="):
                raise TypeCheckError(f"ordering on booleans: {e!r}")
            return BOOL
        if isinstance(e, BoolOp):
            self.require(e.left, BOOL, qvars)
            self.require(e.right, BOOL, qvars)
            return BOOL
        if isinstance(e, Not):
            self.require(e.arg, BOOL, qvars)
            return BOOL
        if isinstance(e, Iverson):
            self.require(e.arg, BOOL, qvars)
            return INT
        if isinstance(e, Mem):
            d = self.decls.get(e.array)
            if d is None or not isinstance(d.domain, ArrayDomain):
                raise TypeCheckError(f"{e.array!r} is not a declared array")
            it = self.expr_type(e.item, qvars)
            et = BOOL if isinstance(d.domain.element, BoolDomain) else INT
            if (it == BOOL) != (et == BOOL):
                raise TypeCheckError(f"membership type mismatch: {e!r}")
            for bound in (e.lo, e.hi):
                if bound is not None:
                    self.require(bound, INT, qvars)
            return BOOL
        raise TypeCheckError(f"unknown expression {e!r}")


def check_program(program):
    return Checker(program.decls).check_program(program)


def check_gain(gain, decls):
    Checker(decls).check_gain(gain, {})
    return gain


# --- evaluation ---------------------------------------------------------------------


def eval_expr(e, state, env=None):
    """Evaluate an expression in a State (env carries quantifier bindings).

    `and`/`or` are short-circuit, so guards like `n != N and A[n] != x` stay
    total at the array boundary.  Integer div/mod follow floor-division.
    """
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, RatLit):
        return e.value
    if isinstance(e, BoolLit):
        return e.value
    if isinstance(e, Var):
        if env is not None and e.name in env:
            return env[e.name]
        return state.get(e.name)
    if isinstance(e, Idx):
        arr = state.get(e.name)
        i = eval_expr(e.index, state, env)
        if not 0 <= i < len(arr):
            raise IndexOutOfBounds(f"{e.name}[{i}] with length {len(arr)}")
        return arr[i]
    if isinstance(e, Neg):
        return -eval_expr(e.arg, state, env)
    if isinstance(e, Bin):
        a = eval_expr(e.left, state, env)
        b = eval_expr(e.right, state, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "*":
            return a * b
        if e.op == "&":
            return a & b
        if b == 0:
            raise DivisionByZero(f"{e.op} by zero")
        return a // b if e.op == "div" else a % b
    if isinstance(e, MaxF):
        return max(eval_expr(a, state, env) for a in e.args)
    if isinstance(e, MinF):
        return min(eval_expr(a, state, env) for a in e.args)
    if isinstance(e, Cmp):
        a = eval_expr(e.left, state, env)
        b = eval_expr(e.right, state, env)
        return {
            "=": a == b, "!=": a != b,
            "<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b,
        }[e.op]
    if isinstance(e, BoolOp):
        a = eval_expr(e.left, state, env)
        if e.op == "and":
            return eval_expr(e.right, state, env) if a else False
        return True if a else eval_expr(e.right, state, env)
    if isinstance(e, Not):
        return not eval_expr(e.arg, state, env)
    if isinstance(e, Iverson):
        return 1 if eval_expr(e.arg, state, env) else 0
    if isinstance(e, Mem):
        arr = state.get(e.array)
        v = eval_expr(e.item, state, env)
        lo = 0 if e.lo is None else eval_expr(e.lo, state, env)
        hi = len(arr) if e.hi is None else eval_expr(e.hi, state, env)
        if not (0 <= lo <= len(arr) and 0 <= hi <= len(arr)):
            raise IndexOutOfBounds(f"slice {e.array}[{lo}:{hi}] with length {len(arr)}")
        found = v in arr[lo:hi]
        return not found if e.negated else found
    raise TypeCheckError(f"cannot evaluate {e!r}")


# --- substitution and variable collection ----------------------------------------------


def free_vars(e):
    """Names appearing in an expression (variables and array names)."""
    out = set()

    def walk(x):
        if isinstance(x, Var):
            out.add(x.name)
        elif isinstance(x, Idx):
            out.add(x.name)
            walk(x.index)
        elif isinstance(x, Mem):
            out.add(x.array)
            walk(x.item)
            if x.lo is not None:
                walk(x.lo)
            if x.hi is not None:
                walk(x.hi)
        elif isinstance(x, (Bin, Cmp, BoolOp)):
            walk(x.left)
            walk(x.right)
        elif isinstance(x, (Neg, Not, Iverson)):
            walk(x.arg)
        elif isinstance(x, (MaxF, MinF)):
            for a in x.args:
                walk(a)

    walk(e)
    return out


def gain_vars(g):
    """Names appearing in a gain expression, minus bound quantifier indices."""
    if isinstance(g, GAtom):
        return free_vars(g.expr)
    if isinstance(g, (GMax, GPlus)):
        return gain_vars(g.left) | gain_vars(g.right)
    if isinstance(g, GAnd):
        return free_vars(g.scalar) | gain_vars(g.body)
    if isinstance(g, GQuantMax):
        return gain_vars(g.body) - {g.var}
    raise TypeCheckError(f"unknown gain expression {g!r}")


def subst_expr(e, name, repl):
    """Capture-free substitution of an expression for a scalar variable."""
    if isinstance(e, Var):
        return repl if e.name == name else e
    if isinstance(e, Idx):
        return Idx(e.name, subst_expr(e.index, name, repl), pos=e.pos)
    if isinstance(e, Mem):
        lo = None if e.lo is None else subst_expr(e.lo, name, repl)
        hi = None if e.hi is None else subst_expr(e.hi, name, repl)
        return Mem(subst_expr(e.item, name, repl), e.array, lo, hi, e.negated, pos=e.pos)
    if isinstance(e, Bin):
        return Bin(e.op, subst_expr(e.left, name, repl), subst_expr(e.right, name, repl))
    if isinstance(e, Cmp):
        return Cmp(e.op, subst_expr(e.left, name, repl), subst_expr(e.right, name, repl))
    if isinstance(e, BoolOp):
        return BoolOp(
            e.op, subst_expr(e.left, name, repl), subst_expr(e.right, name, repl)
        )
    if isinstance(e, Neg):
        return Neg(subst_expr(e.arg, name, repl))
    if isinstance(e, Not):
        return Not(subst_expr(e.arg, name, repl))
    if isinstance(e, Iverson):
        return Iverson(subst_expr(e.arg, name, repl))
    if isinstance(e, MaxF):
        return MaxF(tuple(subst_expr(a, name, repl) for a in e.args))
    if isinstance(e, MinF):
        return MinF(tuple(subst_expr(a, name, repl) for a in e.args))
    return e  # literals


def subst_gain(g, name, repl):
    if isinstance(g, GAtom):
        return GAtom(subst_expr(g.expr, name, repl), pos=g.pos)
    if isinstance(g, GMax):
        return GMax(subst_gain(g.left, name, repl), subst_gain(g.right, name, repl))
    if isinstance(g, GPlus):
        return GPlus(subst_gain(g.left, name, repl), subst_gain(g.right, name, repl))
    if isinstance(g, GAnd):
        return GAnd(subst_expr(g.scalar, name, repl), subst_gain(g.body, name, repl))
    if isinstance(g, GQuantMax):
        if g.var == name:  # shadowed; the typechecker already forbids this
            return g
        return GQuantMax(g.var, g.values, subst_gain(g.body, name, repl))
    raise TypeCheckError(f"unknown gain expression {g!r}")


def _updated_element(k, idx, val, base, elem_is_bool):
    """The value of A[k] after `A[idx] := val`, as an expression.

    For integer elements this is the arithmetic blend
    `[k = idx]*val + [k != idx]*A[k]`; boolean elements use the logical form.
    """
    same = Cmp("=", k, idx)
    if elem_is_bool:
        return BoolOp(
            "or",
            BoolOp("and", same, val),
            BoolOp("and", Not(same), base),
        )
    return Bin(
        "+",
        Bin("*", Iverson(same), val),
        Bin("*", Iverson(Not(same)), base),
    )


def subst_array_elem(e, arr, idx, val, length, elem_is_bool):
    """Substitute for the assignment `arr[idx] := val` inside an expression.

    Reads of arr[k] become a blend over whether k hits the written slot, and
    membership tests over arr expand positionally (k ranges over the array,
    guarded by the slice bounds).  idx and val are pre-state expressions and
    are not rewritten; index expressions inside e are rewritten first, since
    they are post-state reads.
    """

    def go(x):
        if isinstance(x, Idx) and x.name == arr:
            k = go(x.index)
            return _updated_element(k, idx, val, Idx(arr, k), elem_is_bool)
        if isinstance(x, Idx):
            return Idx(x.name, go(x.index), pos=x.pos)
        if isinstance(x, Mem) and x.array == arr:
            item = go(x.item)
            lo = None if x.lo is None else go(x.lo)
            hi = None if x.hi is None else go(x.hi)
            disjuncts = []
            for k in range(length):
                kl = IntLit(k)
                same = Cmp("=", kl, idx)
                hit = BoolOp(
                    "or",
                    BoolOp("and", same, Cmp("=", item, val)),
                    BoolOp("and", Not(same), Cmp("=", item, Idx(arr, kl))),
                )
                guards = []
                if lo is not None:
                    guards.append(Cmp("<=", lo, kl))
                if hi is not None:
                    guards.append(Cmp("<", kl, hi))
                d = hit
                for gd in reversed(guards):
                    d = BoolOp("and", gd, d)
                disjuncts.append(d)
            out = disjuncts[0]
            for d in disjuncts[1:]:
                out = BoolOp("or", out, d)
            return Not(out) if x.negated else out
        if isinstance(x, Mem):
            lo = None if x.lo is None else go(x.lo)
            hi = None if x.hi is None else go(x.hi)
            return Mem(go(x.item), x.array, lo, hi, x.negated, pos=x.pos)
        if isinstance(x, Bin):
            return Bin(x.op, go(x.left), go(x.right))
        if isinstance(x, Cmp):
            return Cmp(x.op, go(x.left), go(x.right))
        if isinstance(x, BoolOp):
            return BoolOp(x.op, go(x.left), go(x.right))
        if isinstance(x, Neg):
            return Neg(go(x.arg))
        if isinstance(x, Not):
            return Not(go(x.arg))
        if isinstance(x, Iverson):
            return Iverson(go(x.arg))
        if isinstance(x, MaxF):
            return MaxF(tuple(go(a) for a in x.args))
        if isinstance(x, MinF):
            return MinF(tuple(go(a) for a in x.args))
        return x

    return go(e)


def subst_array_elem_gain(g, arr, idx, val, length, elem_is_bool):
    if isinstance(g, GAtom):
        return GAtom(subst_array_elem(g.expr, arr, idx, val, length, elem_is_bool))
    if isinstance(g, GMax):
        return GMax(
            subst_array_elem_gain(g.left, arr, idx, val, length, elem_is_bool),
            subst_array_elem_gain(g.right, arr, idx, val, length, elem_is_bool),
        )
    if isinstance(g, GPlus):
        return GPlus(
            subst_array_elem_gain(g.left, arr, idx, val, length, elem_is_bool),
            subst_array_elem_gain(g.right, arr, idx, val, length, elem_is_bool),
        )
    if isinstance(g, GAnd):
        return GAnd(
            subst_array_elem(g.scalar, arr, idx, val, length, elem_is_bool),
            subst_array_elem_gain(g.body, arr, idx, val, length, elem_is_bool),
        )
    if isinstance(g, GQuantMax):
        return GQuantMax(
            g.var,
            g.values,
            subst_array_elem_gain(g.body, arr, idx, val, length, elem_is_bool),
        )
    raise TypeCheckError(f"unknown gain expression {g!r}")


# --- desugaring -----------------------------------------------------------------------


_desugared = {}  # id(program) -> (program, result); the refs keep the ids from being reused


def desugar_visible(program):
    """Insert `print v` after every assignment to a visible variable.

    Memoized per program object (and idempotent on its own output): callers
    desugar on every run, and the per-statement evaluation caches downstream
    rely on node identity being stable across runs of the same program.
    """
    cached = _desugared.get(id(program))
    if cached is not None and cached[0] is program:
        return cached[1]
    visible = {d.name for d in program.decls if d.visible}

    def walk(s):
        if isinstance(s, SAssign) and s.name in visible:
            return SSeq((s, SPrint(Var(s.name, pos=s.pos), pos=s.pos)), pos=s.pos)
        if isinstance(s, SSeq):
            return SSeq(tuple(walk(st) for st in s.stmts), pos=s.pos)
        if isinstance(s, SIf):
            return SIf(s.guard, walk(s.then), walk(s.els), pos=s.pos)
        if isinstance(s, SWhile):
            return SWhile(s.guard, walk(s.body), s.invariant, pos=s.pos)
        return s

    result = Program(program.decls, walk(program.body), program.post, pos=program.pos)
    _desugared[id(program)] = (program, result)
    _desugared[id(result)] = (result, result)
    return result


# --- printer --------------------------------------------------------------------------
# Precedence levels, loosest first; matches the parser exactly.

_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5,
         "*": 6, "div": 6, "mod": 6, "&": 6, "neg": 7}


def expr_to_source(e, prec=0):
    def wrap(level, s):
        return f"({s})" if level < prec else s

    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, RatLit):
        return f"{e.value.numerator}/{e.value.denominator}"
    if isinstance(e, BoolLit):
        return "true" if e.value else "false"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Idx):
        return f"{e.name}[{expr_to_source(e.index)}]"
    if isinstance(e, Neg):
        return wrap(7, f"-{expr_to_source(e.arg, 8)}")
    if isinstance(e, Bin):
        p = _PREC[e.op]
        return wrap(p, f"{expr_to_source(e.left, p)} {e.op} {expr_to_source(e.right, p + 1)}")
    if isinstance(e, MaxF):
        return "max(" + ", ".join(expr_to_source(a) for a in e.args) + ")"
    if isinstance(e, MinF):
        return "min(" + ", ".join(expr_to_source(a) for a in e.args) + ")"
    if isinstance(e, Cmp):
        return wrap(4, f"{expr_to_source(e.left, 5)} {e.op} {expr_to_source(e.right, 5)}")
    if isinstance(e, BoolOp):
        p = _PREC[e.op]
        return wrap(p, f"{expr_to_source(e.left, p)} {e.op} {expr_to_source(e.right, p + 1)}")
    if isinstance(e, Not):
        return wrap(3, f"not {expr_to_source(e.arg, 4)}")
    if isinstance(e, Iverson):
        return f"[{expr_to_source(e.arg)}]"
    if isinstance(e, Mem):
        op = "notin" if e.negated else "in"
        lo = "" if e.lo is None else expr_to_source(e.lo)
        hi = "" if e.hi is None else expr_to_source(e.hi)
        arr = e.array if not lo and not hi else f"{e.array}[{lo}:{hi}]"
        return wrap(4, f"{expr_to_source(e.item, 5)} {op} {arr}")
    raise TypeCheckError(f"cannot print {e!r}")


# gain precedence: MAX=1, PLUS=2, AND=3, primary=4


def gain_to_source(g, prec=0):
    def wrap(level, s):
        return f"({s})" if level < prec else s

    if isinstance(g, GAtom):
        return expr_to_source(g.expr, 5)  # atoms self-delimit or parenthesize
    if isinstance(g, GMax):
        return wrap(1, f"{gain_to_source(g.left, 1)} MAX {gain_to_source(g.right, 2)}")
    if isinstance(g, GPlus):
        return wrap(2, f"{gain_to_source(g.left, 2)} PLUS {gain_to_source(g.right, 3)}")
    if isinstance(g, GAnd):
        return wrap(3, f"{expr_to_source(g.scalar, 5)} AND {gain_to_source(g.body, 3)}")
    if isinstance(g, GQuantMax):
        vals = g.values
        if vals == tuple(range(vals[0], vals[-1] + 1)):
            rng = f"{vals[0]}..{vals[-1]}"
        else:
            rng = "{" + ", ".join(str(v) for v in vals) + "}"
        # the body extends maximally, so any binary context needs parens
        return wrap(0, f"MAX {g.var} in {rng}: {gain_to_source(g.body, 1)}")
    raise TypeCheckError(f"cannot print {g!r}")


def stmt_to_source(s, indent=0):
    pad = "  " * indent
    if isinstance(s, SSkip):
        return pad + "skip"
    if isinstance(s, SPrint):
        return pad + "print " + expr_to_source(s.expr)
    if isinstance(s, SAssign):
        tgt = s.name if s.index is None else f"{s.name}[{expr_to_source(s.index)}]"
        return pad + f"{tgt} := {expr_to_source(s.value)}"
    if isinstance(s, SSeq):
        return ";\n".join(stmt_to_source(st, indent) for st in s.stmts)
    if isinstance(s, SIf):
        out = pad + "if " + expr_to_source(s.guard) + " then\n"
        out += stmt_to_source(s.then, indent + 1) + "\n"
        if not isinstance(s.els, SSkip):
            out += pad + "else\n" + stmt_to_source(s.els, indent + 1) + "\n"
        return out + pad + "fi"
    if isinstance(s, SWhile):
        out = pad + "while " + expr_to_source(s.guard)
        if s.invariant is not None:
            out += " invariant { " + gain_to_source(s.invariant) + " }"
        return out + " do\n" + stmt_to_source(s.body, indent + 1) + "\n" + pad + "od"
    raise TypeCheckError(f"cannot print {s!r}")


def domain_to_source(dom):
    if isinstance(dom, BoolDomain):
        return "bool"
    if isinstance(dom, IntRange):
        return f"int[{dom.lo}..{dom.hi}]"
    return f"array[{dom.length}] of {domain_to_source(dom.element)}"


def program_to_source(program):
    lines = [
        f"{'visible' if d.visible else 'hidden'} {d.name} : {domain_to_source(d.domain)}"
        for d in program.decls
    ]
    body = stmt_to_source(program.body)
    if body != "skip" or program.post is None:
        lines.append(body)
    if program.post is not None:
        lines.append("@post { " + gain_to_source(program.post) + " }")
    return "\n".join(lines) + "\n"
