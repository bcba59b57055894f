"""Gain expressions: evaluation, canonical normal form, and comparison.

A gain expression describes an adversary's scoring function.  Its value
against a distribution d is defined recursively:

  atom e          expected value of e under d (atoms are non-negative)
  G1 MAX G2       max of the two values (the adversary picks the better side)
  G1 PLUS G2      sum of the two values (independent choices on each side)
  f AND G         G's value with every atom scaled pointwise by the atom f
  MAX i in R: G   max over the finitely many instantiations of i

Because atoms are non-negative, scaling distributes over MAX pointwise, and
because PLUS choices are independent, this recursive valuation agrees exactly
with first flattening to the normal form "MAX over atoms" and then taking the
best expected atom.  We therefore never need to expand the (exponentially
large) normal form just to evaluate.

Atoms use a *total* semantics: inside an atom, a boolean sub-term that indexes
out of bounds is false, and an atom whose numeric part cannot be evaluated on
some state contributes 0 there.  Multiplication short-circuits on a zero left
factor, so a guard Iverson really does shield the expression it multiplies.

The canonicalizer rewrites every atom into a sum of terms coeff*[pred]*factors
with predicates in minimized disjunctive normal form, merges complementary
and disjoint guarded terms, and renders deterministically; `simplify` prunes
atoms that are pointwise dominated on the declared state space.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from math import lcm

from .core import Dist, State, all_states
from .errors import DivisionByZero, IndexOutOfBounds, NegativeAtom, TypeCheckError
from .lang import (
    Bin,
    BoolLit,
    BoolOp,
    Cmp,
    GAnd,
    GAtom,
    GMax,
    GPlus,
    GQuantMax,
    GainExpr,
    IntLit,
    Idx,
    Iverson,
    MaxF,
    Mem,
    MinF,
    Neg,
    Not,
    RatLit,
    Var,
    eval_expr,
    expr_to_source,
    free_vars,
    gain_vars,
    subst_gain,
)

ZERO = Fraction(0)
ONE = Fraction(1)

_EVAL_ERRORS = (IndexOutOfBounds, DivisionByZero)

# DNF encoding: a predicate is a frozenset of conjunctions; a conjunction is a
# frozenset of literals; a literal is (negated, atom-Expr).  TRUE is the DNF
# with one empty conjunction, FALSE the empty DNF.
TRUE_DNF = frozenset({frozenset()})
FALSE_DNF = frozenset()


# --- total evaluation inside atoms ---------------------------------------------------


def eval_bool_total(e, state, env=None):
    """Boolean evaluation where an out-of-range atomic test counts as false.

    Negation is applied after that default, so `not (A[n] = x)` is true on a
    state where n is past the end of A.  Connectives recurse structurally.
    """
    if isinstance(e, BoolOp):
        if e.op == "and":
            return eval_bool_total(e.left, state, env) and eval_bool_total(
                e.right, state, env
            )
        return eval_bool_total(e.left, state, env) or eval_bool_total(
            e.right, state, env
        )
    if isinstance(e, Not):
        return not eval_bool_total(e.arg, state, env)
    try:
        return bool(eval_expr(e, state, env))
    except _EVAL_ERRORS:
        return False


def _eval_numeric(e, state, env):
    """Strict numeric evaluation except: `*` short-circuits on a zero left
    factor and Iverson brackets use the total boolean semantics."""
    if isinstance(e, Iverson):
        return 1 if eval_bool_total(e.arg, state, env) else 0
    if isinstance(e, Bin) and e.op == "*":
        a = _eval_numeric(e.left, state, env)
        if a == 0:
            return 0
        return a * _eval_numeric(e.right, state, env)
    if isinstance(e, Bin):
        a = _eval_numeric(e.left, state, env)
        b = _eval_numeric(e.right, state, env)
        if e.op == "+":
            return a + b
        if e.op == "-":
            return a - b
        if e.op == "&":
            return a & b
        if b == 0:
            raise DivisionByZero(f"{e.op} by zero")
        return a // b if e.op == "div" else a % b
    if isinstance(e, Neg):
        return -_eval_numeric(e.arg, state, env)
    if isinstance(e, MaxF):
        return max(_eval_numeric(a, state, env) for a in e.args)
    if isinstance(e, MinF):
        return min(_eval_numeric(a, state, env) for a in e.args)
    return eval_expr(e, state, env)


def eval_atom_total(e, state, env=None):
    """Value of a gain atom on a state; unevaluable states contribute 0."""
    try:
        return Fraction(_eval_numeric(e, state, env))
    except _EVAL_ERRORS:
        return ZERO


# --- gain evaluation -------------------------------------------------------------------


def _eval_gain(g, entries, mult, env):
    # entries: tuple of (state, prob>0); mult: per-entry accumulated scaling
    if isinstance(g, GAtom):
        total = ZERO
        for (state, p), m in zip(entries, mult):
            if m == 0:
                continue
            v = eval_atom_total(g.expr, state, env)
            if v < 0:
                raise NegativeAtom(
                    f"atom {expr_to_source(g.expr)} is {v} on {state!r}"
                )
            total += p * m * v
        return total
    if isinstance(g, GMax):
        return max(_eval_gain(g.left, entries, mult, env),
                   _eval_gain(g.right, entries, mult, env))
    if isinstance(g, GPlus):
        return _eval_gain(g.left, entries, mult, env) + _eval_gain(
            g.right, entries, mult, env
        )
    if isinstance(g, GAnd):
        scaled = []
        for (state, p), m in zip(entries, mult):
            if m == 0:
                scaled.append(ZERO)
                continue
            v = eval_atom_total(g.scalar, state, env)
            if v < 0:
                raise NegativeAtom(
                    f"atom {expr_to_source(g.scalar)} is {v} on {state!r}"
                )
            scaled.append(m * v)
        return _eval_gain(g.body, entries, scaled, env)
    if isinstance(g, GQuantMax):
        best = None
        for v in g.values:
            sub = dict(env, **{g.var: v})
            val = _eval_gain(g.body, entries, mult, sub)
            if best is None or val > best:
                best = val
        return best
    raise TypeCheckError(f"unknown gain expression {g!r}")


def eval_gain(g, dist, env=None):
    """The gain's exact value against a single distribution."""
    entries = dist.entries
    return _eval_gain(g, entries, [ONE] * len(entries), env or {})


def eval_gain_hyper(g, hyper, env=None):
    """The gain's value against a hyper: average of per-posterior values."""
    return sum((w * eval_gain(g, d, env) for d, w in hyper.entries), ZERO)


# --- canonicalization ---------------------------------------------------------------


@dataclass(frozen=True)
class _Term:
    coeff: Fraction
    pred: frozenset | None  # DNF; None means true
    factors: tuple  # canonical numeric factor expressions, sorted by render


def _const_lit(v):
    v = Fraction(v)
    return IntLit(int(v)) if v.denominator == 1 else RatLit(v)


def _is_const(e):
    return isinstance(e, (IntLit, RatLit))


def _const_val(e):
    return Fraction(e.value)


class Canon:
    """Canonicalizer and exact comparison engine bound to declarations."""

    def __init__(self, decls):
        self.decls = tuple(decls)
        self.domains = {d.name: d.domain for d in decls}
        self.order = {d.name: i for i, d in enumerate(decls)}
        self._spaces = {}
        self._models = {}
        self._lit_model_cache = {}
        self._intern = {}
        self._vars_memo = {}
        self._render_memo = {}
        self._minimized = {}
        self._atom_cache = {}
        self._vectors = {}
        self._rebuilt = {}

    # ---- projected state spaces

    def space(self, names):
        key = tuple(sorted(names, key=lambda n: self.order[n]))
        if key not in self._spaces:
            self._spaces[key] = all_states(key, [self.domains[n] for n in key])
        return key, self._spaces[key]

    def _pred_vars(self, dnf):
        out = set()
        for conj in dnf:
            for _, atom in conj:
                out |= free_vars(atom)
        return out & set(self.domains)

    # ---- literals and DNF

    def _lit_value(self, lit, state, env=None):
        neg, atom = lit
        try:
            v = bool(eval_expr(atom, state, env))
        except _EVAL_ERRORS:
            v = False
        return v != neg

    def pred_value(self, dnf, state, env=None):
        return any(
            all(self._lit_value(lit, state, env) for lit in conj) for conj in dnf
        )

    def full_mask(self, names_key):
        _, states = self.space(names_key)
        return (1 << len(states)) - 1

    def lit_models(self, lit, names_key):
        """Bitmask over the projected space of where one literal holds."""
        mkey = (lit, names_key)
        if mkey not in self._lit_model_cache:
            _, states = self.space(names_key)
            mask = 0
            for i, s in enumerate(states):
                if self._lit_value(lit, s):
                    mask |= 1 << i
            self._lit_model_cache[mkey] = mask
        return self._lit_model_cache[mkey]

    def models(self, dnf, names_key):
        """Bitmask over the projected space of where the DNF holds."""
        mkey = (dnf, names_key)
        if mkey not in self._models:
            full = self.full_mask(names_key)
            out = 0
            for conj in dnf:
                acc = full
                for lit in conj:
                    acc &= self.lit_models(lit, names_key)
                    if not acc:
                        break
                out |= acc
            self._models[mkey] = out
        return self._models[mkey]

    def lit_expr(self, lit):
        neg, atom = lit
        if isinstance(atom, Cmp):
            if atom.op == "=":
                return Cmp("!=" if neg else "=", atom.left, atom.right)
            # inequality literals are never negated (negation flips them)
            if _is_const(atom.left) and not _is_const(atom.right):
                flipped = {"<": ">", "<=": ">="}[atom.op]
                return Cmp(flipped, atom.right, atom.left)
            return atom
        if isinstance(atom, Mem):
            return Mem(atom.item, atom.array, atom.lo, atom.hi, neg)
        return Not(atom) if neg else atom

    def _conj_expr(self, conj):
        exprs = sorted(
            (self.lit_expr(lit) for lit in conj), key=lambda e: expr_to_source(e)
        )
        out = exprs[0]
        for e in exprs[1:]:
            out = BoolOp("and", out, e)
        return out

    def pred_expr(self, dnf):
        if dnf == TRUE_DNF:
            return BoolLit(True)
        if dnf == FALSE_DNF:
            return BoolLit(False)
        exprs = sorted(
            (self._conj_expr(c) for c in dnf), key=lambda e: expr_to_source(e)
        )
        out = exprs[0]
        for e in exprs[1:]:
            out = BoolOp("or", out, e)
        return out

    def pred_render(self, dnf):
        return expr_to_source(self.pred_expr(dnf))

    # ---- boolean canonicalization

    def to_dnf(self, e, neg=False):
        """Negation normal form pushed into minimized-ready DNF."""
        if isinstance(e, BoolLit):
            return FALSE_DNF if e.value == neg else TRUE_DNF
        if isinstance(e, Not):
            return self.to_dnf(e.arg, not neg)
        if isinstance(e, BoolOp):
            both = (self.to_dnf(e.left, neg), self.to_dnf(e.right, neg))
            conj = (e.op == "and") != neg  # De Morgan under negation
            if conj:
                return self._dnf_and(*both)
            return both[0] | both[1]
        if isinstance(e, Iverson):
            # [b] used as a boolean via = / != is handled in Cmp; a bare
            # Iverson is numeric and cannot reach here
            raise TypeCheckError(f"numeric expression in boolean position: {e!r}")
        if isinstance(e, Cmp):
            return self._cmp_dnf(e, neg)
        if isinstance(e, Mem):
            atom = Mem(
                self.canon_num(e.item),
                e.array,
                self._slice_bound(e.lo, 0),
                self._slice_bound(e.hi, self.domains[e.array].length),
                False,
            )
            return frozenset({frozenset({(e.negated != neg, atom)})})
        if isinstance(e, (Var, Idx)):
            atom = e if isinstance(e, Var) else Idx(e.name, self.canon_num(e.index))
            return frozenset({frozenset({(neg, atom)})})
        raise TypeCheckError(f"not a boolean expression: {e!r}")

    def _slice_bound(self, bound, default):
        if bound is None:
            return None
        b = self.canon_num(bound)
        if isinstance(b, IntLit) and b.value == default:
            return None
        return b

    @staticmethod
    def _dnf_and(d1, d2):
        out = set()
        for c1 in d1:
            for c2 in d2:
                conj = c1 | c2
                if any((not neg, atom) in conj for neg, atom in conj if neg):
                    continue  # syntactic contradiction
                out.add(conj)
        return frozenset(out)

    def _cmp_dnf(self, e, neg):
        op = e.op
        if op in ("=", "!=") and (
            isinstance(e.left, BoolLit) or isinstance(e.right, BoolLit)
        ):
            lit, other = (
                (e.left, e.right) if isinstance(e.left, BoolLit) else (e.right, e.left)
            )
            flip = (not lit.value) != (op == "!=")
            return self.to_dnf(other, neg != flip)
        left = self.canon_num(e.left)
        right = self.canon_num(e.right)
        if op in (">", ">="):
            left, right = right, left
            op = {">": "<", ">=": "<="}[op]
        if op == "!=":
            op, neg = "=", not neg
        if self._numeric_sides(left, right):
            left, right = self._shift_consts(left, right, op)
        if _is_const(left) and _is_const(right):
            value = {
                "=": _const_val(left) == _const_val(right),
                "<": _const_val(left) < _const_val(right),
                "<=": _const_val(left) <= _const_val(right),
            }[op]
            return FALSE_DNF if value == neg else TRUE_DNF
        if op == "=":
            if _is_const(left) or (
                not _is_const(right)
                and expr_to_source(right) < expr_to_source(left)
            ):
                left, right = right, left
            return frozenset({frozenset({(neg, Cmp("=", left, right))})})
        if neg:  # not (a < b) is b <= a; not (a <= b) is b < a
            left, right = right, left
            op = "<=" if op == "<" else "<"
        return frozenset({frozenset({(False, Cmp(op, left, right))})})

    @staticmethod
    def _numeric_sides(left, right):
        # boolean equality (a = b on bools) must not be const-shifted
        for side in (left, right):
            if isinstance(side, (BoolLit, BoolOp, Not, Cmp, Mem)):
                return False
        return True

    def _shift_consts(self, left, right, op):
        """Move additive constants to the right: n + 1 = 3 becomes n = 2."""

        def decompose(x):
            if _is_const(x):
                return [], _const_val(x)
            if isinstance(x, Bin) and x.op in ("+", "-"):
                lt, lc = decompose(x.left)
                rt, rc = decompose(x.right)
                if x.op == "+":
                    return lt + rt, lc + rc
                return lt + [(t, -s) for t, s in rt], lc - rc
            if isinstance(x, Neg):
                t, c = decompose(x.arg)
                return [(e, -s) for e, s in t], -c
            return [(x, 1)], ZERO

        lt, lc = decompose(left)
        rt, rc = decompose(right)
        terms = lt + [(t, -s) for t, s in rt]
        # cancel equal terms of opposite sign
        reduced = []
        for t, s in terms:
            key = expr_to_source(t)
            for i, (_, s2, key2) in enumerate(reduced):
                if key == key2 and s2 == -s:
                    del reduced[i]
                    break
            else:
                reduced.append((t, s, key))
        const = rc - lc
        if not reduced:
            return _const_lit(ZERO), _const_lit(const)
        if all(s < 0 for _, s, _ in reduced):
            if op != "=":
                return left, right  # sign flip would reverse the inequality
            reduced = [(t, -s, k) for t, s, k in reduced]
            const = -const
        elif any(s < 0 for _, s, _ in reduced):
            return left, right  # mixed signs: leave the sides alone
        reduced.sort(key=lambda tsk: tsk[2])
        out = None
        for t, s, _ in reduced:
            out = t if out is None else Bin("+", out, t)
        return out, _const_lit(const)

    # ---- DNF minimization

    def minimize(self, dnf):
        if dnf in self._minimized:
            return self._minimized[dnf]
        out = self._minimize(dnf)
        self._minimized[dnf] = out
        self._minimized[out] = out
        return out

    def _conj_key(self, conj):
        return tuple(sorted(expr_to_source(self.lit_expr(lit)) for lit in conj))

    def _minimize(self, dnf):
        if dnf in (TRUE_DNF, FALSE_DNF):
            return dnf
        names = self._pred_vars(dnf)
        if not names:
            # constant predicate with no declared variables
            probe = State((), ())
            return TRUE_DNF if self.pred_value(dnf, probe) else FALSE_DNF
        key, states = self.space(names)
        target = self.models(dnf, key)
        if not target:
            return FALSE_DNF
        if target == self.full_mask(key):
            return TRUE_DNF

        conjs = sorted(set(dnf), key=self._conj_key)
        conjs = [c for c in conjs if self.models(frozenset({c}), key)]
        # absorption: a superset conjunction is redundant next to its subset
        kept = []
        for c in conjs:
            if any(other < c for other in conjs if other != c):
                continue
            kept.append(c)
        conjs = kept

        changed = True
        while changed:
            changed = False
            # greedy literal deletion, in deterministic order
            for i, conj in enumerate(list(conjs)):
                for lit in sorted(conj, key=lambda l: expr_to_source(self.lit_expr(l))):
                    slim = conj - {lit}
                    cand = frozenset(conjs[:i] + [slim] + conjs[i + 1 :])
                    if self.models(cand, key) == target:
                        conjs[i] = slim
                        conj = slim
                        changed = True
            # greedy disjunct deletion
            for i in range(len(conjs) - 1, -1, -1):
                cand = frozenset(conjs[:i] + conjs[i + 1 :])
                if cand and self.models(cand, key) == target:
                    del conjs[i]
                    changed = True
        result = frozenset(conjs)
        if result == frozenset({frozenset()}):
            return TRUE_DNF
        return result

    def pred_taut(self, dnf):
        return self.minimize(dnf) == TRUE_DNF

    def pred_unsat(self, dnf):
        return self.minimize(dnf) == FALSE_DNF

    def preds_disjoint(self, d1, d2):
        names = self._pred_vars(d1) | self._pred_vars(d2)
        if not names:
            return self.pred_unsat(d1) or self.pred_unsat(d2)
        key, _ = self.space(names)
        return not (self.models(d1, key) & self.models(d2, key))

    # ---- numeric canonicalization (via atoms)

    def canon_num(self, e):
        return self.atom_expr(self.atom_of(e))

    # ---- atoms as sums of terms

    def atom_of(self, e):
        if e in self._atom_cache:
            return self._atom_cache[e]
        atom = self._finalize(self._terms_of(e))
        self._atom_cache[e] = atom
        return atom

    def _terms_of(self, e):
        if _is_const(e):
            v = _const_val(e)
            return [] if v == 0 else [_Term(v, None, ())]
        if isinstance(e, Iverson):
            dnf = self.minimize(self.to_dnf(e.arg))
            if dnf == FALSE_DNF:
                return []
            if dnf == TRUE_DNF:
                return [_Term(ONE, None, ())]
            return [_Term(ONE, dnf, ())]
        if isinstance(e, Neg):
            return [_Term(-t.coeff, t.pred, t.factors) for t in self._terms_of(e.arg)]
        if isinstance(e, Bin) and e.op in ("+", "-"):
            left = self._terms_of(e.left)
            right = self._terms_of(e.right)
            if e.op == "-":
                right = [_Term(-t.coeff, t.pred, t.factors) for t in right]
            return left + right
        if isinstance(e, Bin) and e.op == "*":
            return self._mul_terms(self._terms_of(e.left), self._terms_of(e.right))
        if isinstance(e, Bin):  # div mod &
            left = self.canon_num(e.left)
            right = self.canon_num(e.right)
            if _is_const(left) and _is_const(right):
                a, b = _const_val(left), _const_val(right)
                if e.op == "&" and a.denominator == b.denominator == 1:
                    return self._terms_of(_const_lit(int(a) & int(b)))
                if e.op in ("div", "mod") and b != 0 and 1 == a.denominator == b.denominator:
                    v = int(a) // int(b) if e.op == "div" else int(a) % int(b)
                    return self._terms_of(_const_lit(v))
            return [_Term(ONE, None, (Bin(e.op, left, right),))]
        if isinstance(e, (MaxF, MinF)):
            args = [self.canon_num(a) for a in e.args]
            consts = [a for a in args if _is_const(a)]
            rest = [a for a in args if not _is_const(a)]
            pick = max if isinstance(e, MaxF) else min
            folded = []
            if consts:
                folded.append(_const_lit(pick(_const_val(c) for c in consts)))
            # flatten nested max into max, min into min
            flat = []
            for a in rest:
                if isinstance(a, type(e)):
                    flat.extend(a.args)
                else:
                    flat.append(a)
            args = folded + flat
            seen, uniq = set(), []
            for a in sorted(args, key=expr_to_source):
                k = expr_to_source(a)
                if k not in seen:
                    seen.add(k)
                    uniq.append(a)
            if len(uniq) == 1:
                return self._terms_of(uniq[0])
            node = MaxF(tuple(uniq)) if isinstance(e, MaxF) else MinF(tuple(uniq))
            return [_Term(ONE, None, (node,))]
        if isinstance(e, Idx):
            return [_Term(ONE, None, (Idx(e.name, self.canon_num(e.index)),))]
        if isinstance(e, Var):
            return [_Term(ONE, None, (e,))]
        raise TypeCheckError(f"boolean expression in numeric position: {e!r}")

    def _mul_terms(self, left, right):
        out = []
        for a in left:
            for b in right:
                if a.pred is None:
                    pred = b.pred
                elif b.pred is None:
                    pred = a.pred
                else:
                    pred = self._dnf_and(a.pred, b.pred)
                    if not pred:
                        continue
                factors = tuple(
                    sorted(a.factors + b.factors, key=expr_to_source)
                )
                out.append(_Term(a.coeff * b.coeff, pred, factors))
        return out

    def _finalize(self, terms):
        # minimize predicates, dropping unsatisfiable terms
        live = []
        for t in terms:
            if t.coeff == 0:
                continue
            pred = t.pred
            if pred is not None:
                pred = self.minimize(pred)
                if pred == FALSE_DNF:
                    continue
                if pred == TRUE_DNF:
                    pred = None
            live.append(_Term(t.coeff, pred, t.factors))
        # merge identical (pred, factors)
        merged = {}
        for t in live:
            k = (t.pred, t.factors)
            merged[k] = merged.get(k, ZERO) + t.coeff
        live = [
            _Term(c, pred, factors) for (pred, factors), c in merged.items() if c != 0
        ]
        # merge guarded copies of the same quantity over disjoint predicates:
        # c*[p]*F + c*[q]*F with p, q disjoint becomes c*[p or q]*F
        buckets = {}
        for t in live:
            buckets.setdefault((t.coeff, t.factors), []).append(t)
        out = []
        for (coeff, factors), group in sorted(
            buckets.items(),
            key=lambda kv: (tuple(map(expr_to_source, kv[0][1])), kv[0][0]),
        ):
            group.sort(key=lambda t: "" if t.pred is None else self.pred_render(t.pred))
            acc = []
            for t in group:
                if t.pred is None:
                    acc.append(t)
                    continue
                for i, u in enumerate(acc):
                    if u.pred is not None and self.preds_disjoint(u.pred, t.pred):
                        pred = self.minimize(u.pred | t.pred)
                        if pred == TRUE_DNF:
                            pred = None
                        acc[i] = _Term(coeff, pred, factors)
                        break
                else:
                    acc.append(t)
            out.extend(acc)
        atom = tuple(sorted(out, key=self._term_key))
        # intern: one deep hash per distinct atom, then identity everywhere
        got = self._intern.get(atom)
        if got is None:
            self._intern[atom] = atom
            got = atom
        return got

    def _term_key(self, t):
        return (
            tuple(expr_to_source(f) for f in t.factors),
            "" if t.pred is None else self.pred_render(t.pred),
            t.coeff,
        )

    # ---- atom arithmetic

    def atom_add(self, a, b):
        return self._finalize(list(a) + list(b))

    def atom_mul(self, a, b):
        return self._finalize(self._mul_terms(list(a), list(b)))

    # ---- rebuild and render

    def term_expr(self, t, strip_sign=False):
        coeff = -t.coeff if strip_sign and t.coeff < 0 else t.coeff
        parts = []
        if coeff != 1 or (t.pred is None and not t.factors):
            parts.append(_const_lit(coeff))
        if t.pred is not None:
            parts.append(Iverson(self.pred_expr(t.pred)))
        parts.extend(t.factors)
        out = parts[0]
        for p in parts[1:]:
            out = Bin("*", out, p)
        return out

    def atom_expr(self, atom):
        if id(atom) in self._rebuilt:
            return self._rebuilt[id(atom)]
        if not atom:
            out = IntLit(0)
        else:
            pos = [t for t in atom if t.coeff > 0]
            neg = [t for t in atom if t.coeff < 0]
            if pos:
                out = self.term_expr(pos[0])
                for t in pos[1:]:
                    out = Bin("+", out, self.term_expr(t))
            else:
                out = Neg(self.term_expr(neg[0], strip_sign=True))
                neg = neg[1:]
            for t in neg:
                out = Bin("-", out, self.term_expr(t, strip_sign=True))
        self._rebuilt[id(atom)] = out
        return out

    def atom_render(self, atom):
        if id(atom) not in self._render_memo:
            self._render_memo[id(atom)] = expr_to_source(self.atom_expr(atom))
        return self._render_memo[id(atom)]

    # ---- value vectors

    def atom_vars(self, atom):
        if id(atom) in self._vars_memo:
            return self._vars_memo[id(atom)]
        out = set()
        for t in atom:
            if t.pred is not None:
                out |= self._pred_vars(t.pred)
            for f in t.factors:
                out |= free_vars(f)
        out &= set(self.domains)
        self._vars_memo[id(atom)] = out
        return out

    def atom_vector(self, atom, names_key):
        vkey = (id(atom), names_key)
        if vkey in self._vectors:
            return self._vectors[vkey]
        _, states = self.space(names_key)
        model_sets = {
            t.pred: self.models(t.pred, names_key)
            for t in atom
            if t.pred is not None
        }
        values = []
        for i, s in enumerate(states):
            total = ZERO
            try:
                for t in atom:
                    if t.pred is not None and not (model_sets[t.pred] >> i) & 1:
                        continue
                    v = t.coeff
                    for f in t.factors:
                        v *= _eval_numeric(f, s, None)
                    total += v
            except _EVAL_ERRORS:
                total = ZERO
            values.append(total)
        values = tuple(values)
        self._vectors[vkey] = values
        return values

    # ---- normal form construction

    def normalize_gain(self, g, prune=False):
        # With prune=True, dominated atoms are dropped at every combiner.
        # This is exact: combinators are monotone and atoms are combined
        # pointwise, so an atom dominated now yields dominated combinations
        # later, while its dominator's combinations survive.  Without it,
        # PLUS chains from long observation cascades go exponential.
        squeeze = self.prune if prune else self.dedupe
        if isinstance(g, GAtom):
            return [self.atom_of(g.expr)]
        if isinstance(g, GMax):
            return squeeze(
                self.normalize_gain(g.left, prune) + self.normalize_gain(g.right, prune)
            )
        if isinstance(g, GPlus):
            zero = [self.atom_of(IntLit(0))]
            left = squeeze(self.normalize_gain(g.left, prune)) or zero
            right = squeeze(self.normalize_gain(g.right, prune)) or zero
            return squeeze([self.atom_add(a, b) for a in left for b in right])
        if isinstance(g, GAnd):
            scalar = self.atom_of(g.scalar)
            return squeeze(
                [self.atom_mul(scalar, a) for a in self.normalize_gain(g.body, prune)]
            )
        if isinstance(g, GQuantMax):
            out = []
            for v in g.values:
                out.extend(
                    self.normalize_gain(subst_gain(g.body, g.var, IntLit(v)), prune)
                )
            return squeeze(out)
        raise TypeCheckError(f"unknown gain expression {g!r}")

    def dedupe(self, atoms):
        # zero atoms are kept: MAX with 0 only collapses under dominance
        # pruning.  Atoms are interned, so identity equals equality.
        seen, out = set(), []
        for a in atoms:
            if id(a) not in seen:
                seen.add(id(a))
                out.append(a)
        return out

    def prune(self, atoms):
        """Drop identically-zero atoms and pointwise-dominated atoms.

        All atoms are lifted to their shared variable space, so one vector
        per atom suffices; adding unread variables just repeats coordinates
        and cannot change any pointwise comparison.
        """
        atoms = self.dedupe(atoms)
        if not atoms:
            return []
        union = set()
        for a in atoms:
            union |= self.atom_vars(a)
        key, _ = self.space(union)
        live = [
            (a, v)
            for a in atoms
            for v in (self.atom_vector(a, key),)
            if any(x != 0 for x in v)
        ]
        # integer-scaled vectors compare much faster than Fractions
        den = 1
        for _, v in live:
            for x in v:
                den = lcm(den, x.denominator)
        if den <= 10**9:
            live = [
                (a, tuple(x.numerator * (den // x.denominator) for x in v))
                for a, v in live
            ]
        # equal vectors: keep the lexicographically smallest rendering
        byvec = {}
        for a, v in live:
            cur = byvec.get(v)
            if cur is None or self.atom_render(a) < self.atom_render(cur):
                byvec[v] = a
        # a dominating vector has a strictly larger coordinate sum
        items = sorted(
            ((v, a) for v, a in byvec.items()),
            key=lambda va: (sum(va[0]), self.atom_render(va[1])),
        )
        sums = [sum(v) for v, _ in items]
        out = []
        for i, (vi, ai) in enumerate(items):
            dominated = False
            for j in range(len(items) - 1, i, -1):
                if sums[j] <= sums[i]:
                    break
                vj = items[j][0]
                if all(x <= y for x, y in zip(vi, vj)):
                    dominated = True
                    break
            if not dominated:
                out.append(ai)
        out.sort(key=self.atom_render)
        return out


# --- normal form -----------------------------------------------------------------------


@dataclass(frozen=True)
class NormalForm:
    """A MAX of canonical atoms, in deterministic rendering order."""

    atoms: tuple  # canonical atom Exprs, sorted by render

    def render(self):
        if not self.atoms:
            return "0"
        return " MAX ".join(expr_to_source(a) for a in self.atoms)

    def as_gain(self):
        if not self.atoms:
            return GAtom(IntLit(0))
        g = GAtom(self.atoms[0])
        for a in self.atoms[1:]:
            g = GMax(g, GAtom(a))
        return g


def _atoms_to_nf(canon, atoms):
    rendered = sorted({canon.atom_render(a) for a in atoms})
    exprs = {canon.atom_render(a): canon.atom_expr(a) for a in atoms}
    return NormalForm(tuple(exprs[r] for r in rendered))


def normalize(g, decls, canon=None):
    """Flatten a gain expression into a MAX of canonical atoms (no pruning)."""
    canon = canon or Canon(decls)
    return _atoms_to_nf(canon, canon.dedupe(canon.normalize_gain(g)))


def simplify(g, decls, canon=None):
    """Normal form with identically-zero and pointwise-dominated atoms removed."""
    canon = canon or Canon(decls)
    if isinstance(g, NormalForm):
        atoms = [canon.atom_of(a) for a in g.atoms]
    else:
        atoms = canon.normalize_gain(g, prune=True)
    return _atoms_to_nf(canon, canon.prune(atoms))


def apply_context(ctx, g, decls, canon=None):
    """Scale every atom by the assertion-context Iverson [ctx]."""
    canon = canon or Canon(decls)
    guard = canon.atom_of(Iverson(ctx))
    if isinstance(g, NormalForm):
        atoms = [canon.atom_of(a) for a in g.atoms]
    else:
        atoms = canon.normalize_gain(g)
    return _atoms_to_nf(canon, canon.dedupe([canon.atom_mul(guard, a) for a in atoms]))


def eval_nf(nf, dist, canon):
    """Value of a normal form on a prior, via memoized atom vectors.

    Equals eval_gain(nf.as_gain(), dist) but marginalizes the prior onto
    each atom's variables first, so wide-support priors against many-atom
    normal forms stay cheap.
    """
    if not nf.atoms:
        return ZERO
    marginals = {}
    best = None
    for expr in nf.atoms:
        atom = canon.atom_of(expr)
        key, states = canon.space(canon.atom_vars(atom))
        if key not in marginals:
            index = {s: i for i, s in enumerate(states)}
            weights = [ZERO] * len(states)
            for s, p in dist.entries:
                proj = State(key, tuple(s.get(n) for n in key))
                weights[index[proj]] += p
            marginals[key] = weights
        vec = canon.atom_vector(atom, key)
        total = ZERO
        for w, v in zip(marginals[key], vec):
            if w:
                total += w * v
        if best is None or total > best:
            best = total
    return best


# --- semantic comparison -----------------------------------------------------------------


@dataclass
class CompareResult:
    holds: bool
    relation: str = ""
    counterexample: Dist | None = None
    left: Fraction | None = None
    right: Fraction | None = None

    def __bool__(self):
        return self.holds

    def describe(self):
        if self.holds:
            return "holds"
        return (
            f"violated on {self.counterexample!r}: "
            f"left = {self.left}, right = {self.right}"
        )


class _VecEval:
    """Evaluates gain expressions against many distributions on fixed states.

    Distributions arrive as (state index, integer weight) supports plus one
    common divisor: every combinator commutes with dividing by a positive
    constant, so the whole evaluation runs on integer weights and divides
    exactly once at the top.  Atom passes skip zero entries, which for
    Iverson-bracket atoms is most of them.
    """

    def __init__(self, states):
        self.states = list(states)
        self._values = {}

    def values(self, expr, env):
        key = (expr, tuple(sorted(env.items())) if env else ())
        if key not in self._values:
            self._values[key] = tuple(
                eval_atom_total(expr, s, env) for s in self.states
            )
        return self._values[key]

    def eval(self, g, support, mult, env):
        # support: (state index, integer weight) pairs; mult: per-entry scale
        # factors aligned with it, or None meaning all ones
        if isinstance(g, GAtom):
            vals = self.values(g.expr, env)
            total = 0
            if mult is None:
                for i, p in support:
                    v = vals[i]
                    if v < 0:
                        raise NegativeAtom(
                            f"atom {expr_to_source(g.expr)} is {v} "
                            f"on {self.states[i]!r}"
                        )
                    if v:
                        total = total + (p if v == 1 else p * v)
            else:
                for (i, p), m in zip(support, mult):
                    v = vals[i]
                    if v < 0:
                        raise NegativeAtom(
                            f"atom {expr_to_source(g.expr)} is {v} "
                            f"on {self.states[i]!r}"
                        )
                    if v and m:
                        total = total + (p * m if v == 1 else p * m * v)
            return total
        if isinstance(g, GMax):
            return max(
                self.eval(g.left, support, mult, env),
                self.eval(g.right, support, mult, env),
            )
        if isinstance(g, GPlus):
            return self.eval(g.left, support, mult, env) + self.eval(
                g.right, support, mult, env
            )
        if isinstance(g, GAnd):
            vals = self.values(g.scalar, env)
            scaled = []
            if mult is None:
                for i, _ in support:
                    v = vals[i]
                    if v < 0:
                        raise NegativeAtom(
                            f"atom {expr_to_source(g.scalar)} is {v} "
                            f"on {self.states[i]!r}"
                        )
                    scaled.append(v)
            else:
                for (i, _), m in zip(support, mult):
                    v = vals[i]
                    if v < 0:
                        raise NegativeAtom(
                            f"atom {expr_to_source(g.scalar)} is {v} "
                            f"on {self.states[i]!r}"
                        )
                    scaled.append(m * v if m else 0)
            return self.eval(g.body, support, scaled, env)
        if isinstance(g, GQuantMax):
            best = None
            for v in g.values:
                val = self.eval(g.body, support, mult, dict(env, **{g.var: v}))
                if best is None or val > best:
                    best = val
            return best
        raise TypeCheckError(f"unknown gain expression {g!r}")

    def eval_dist(self, g, support, total=1):
        raw = self.eval(g, support, None, {})
        if total == 1:
            return raw if isinstance(raw, Fraction) else Fraction(raw)
        return Fraction(raw, total)


def random_weights(n, rng, max_weight=16):
    """A non-degenerate integer weight vector (at least one positive entry)."""
    while True:
        w = [rng.randint(0, max_weight) for _ in range(n)]
        if any(w):
            return w


def _iter_dists(states, trials, seed, rng):
    # (integer-weight support, common divisor) pairs: every point, then trials
    n = len(states)
    for i in range(n):
        yield [(i, 1)], 1
    rng = rng if rng is not None else random.Random(seed)
    for _ in range(trials):
        w = random_weights(n, rng)
        total = sum(w)
        yield [(i, wi) for i, wi in enumerate(w) if wi], total


def _compare(g1, g2, decls, relation, trials, seed, states, rng):
    if states is None:
        states = all_states(
            tuple(d.name for d in decls), [d.domain for d in decls]
        )
    states = list(states)
    ev = _VecEval(states)
    for support, total in _iter_dists(states, trials, seed, rng):
        l = ev.eval_dist(g1, support, total)
        r = ev.eval_dist(g2, support, total)
        bad = (l > r) if relation == "<=" else (l != r)
        if bad:
            witness = Dist([(states[i], Fraction(p, total)) for i, p in support])
            return CompareResult(False, relation, witness, l, r)
    return CompareResult(True, relation)


def semantic_le(g1, g2, decls, trials=100, seed=42, states=None, rng=None):
    """Falsification-based check that g1's value never exceeds g2's.

    Tries every point distribution on the state space (or the given states)
    plus `trials` seeded random rational distributions.  A returned holds=True
    means no counterexample was found.
    """
    return _compare(g1, g2, decls, "<=", trials, seed, states, rng)


def semantic_eq(g1, g2, decls, trials=100, seed=42, states=None, rng=None):
    """Like semantic_le but requires exact equality of values on every trial."""
    return _compare(g1, g2, decls, "==", trials, seed, states, rng)
