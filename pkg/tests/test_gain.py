"""Gain evaluation, canonical normal forms, and the algebra battery."""

import glob
import os
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import algebra
from kuifje.core import State, avg, dist_from_entries, hyper_reduce, point
from kuifje.errors import NegativeAtom
from kuifje.gain import (
    Canon,
    eval_atom_total,
    eval_bool_total,
    eval_gain,
    eval_gain_hyper,
    eval_nf,
    normalize,
    semantic_eq,
    semantic_le,
    simplify,
)
from kuifje.lang import (
    GAtom,
    GMax,
    GPlus,
    GQuantMax,
    check_program,
    parse_expr,
    parse_gain,
    parse_program,
)

F = Fraction

SRC = """\
hidden a : bool
hidden b : bool
hidden x : int[0..9]
hidden n : int[0..3]
skip
"""
PROG = parse_program(SRC)
check_program(PROG)
DECLS = PROG.decls


def dist_ax(weights):
    """Distribution over (a, x) with x in 0..3, a alternating."""
    states = [State(("a", "x"), (bool(i % 2), i % 4)) for i in range(len(weights))]
    total = sum(weights)
    return dist_from_entries(
        [(s, F(w, total)) for s, w in zip(states, weights) if w]
    )


# ---- canonical rendering


@pytest.mark.parametrize(
    "source,canonical",
    [
        ("[x >= 3]", "[x >= 3]"),
        ("[not (x < 3)]", "[x >= 3]"),
        ("[n + 1 = 3]", "[n = 2]"),
        ("[3 = x]", "[x = 3]"),
        ("[x = x]", "1"),
        ("[x != x]", "0"),
        ("[a or not a]", "1"),
        ("[b or a]", "[a or b]"),
        ("[a and b or a and not b]", "[a]"),
        ("[x > 2 and x >= 3]", "[x >= 3]"),
        ("[a] AND [b]", "[a and b]"),
        ("[a] AND ([b] PLUS [not b])", "[a]"),
        ("[a] PLUS [not a]", "1"),
        ("[x = 3] PLUS [x = 4]", "[x = 3 or x = 4]"),
        ("2 * [a] PLUS [a]", "3 * [a]"),
        ("1/2 * [a] MAX [a]", "[a]"),
        ("[x = 1] MAX [x = 1]", "[x = 1]"),
        ("[n < 2] MAX [n >= 2] MAX [n = 1]", "[n < 2] MAX [n >= 2]"),
        ("MAX w in 0..2: [n = w]", "[n = 0] MAX [n = 1] MAX [n = 2]"),
        ("max(x, 3) AND [a]", "[a] * max(3, x)"),
        ("x + n", "n + x"),
        ("0", "0"),
    ],
)
def test_canonical_render(source, canonical):
    assert simplify(parse_gain(source), DECLS).render() == canonical


def test_render_is_reparseable_and_stable():
    for text in [
        "[a or b] MAX [a or not b]",
        "x AND [a] PLUS [not a]",
        "MAX w in 0..3: [n = w] PLUS 1/2 * [a]",
    ]:
        nf = simplify(parse_gain(text), DECLS)
        again = simplify(parse_gain(nf.render()), DECLS)
        assert again.render() == nf.render()


# ---- evaluation against an independent strategy enumeration
#
# A strategy resolves every MAX (and quantifier) choice up front; the value of
# a gain on a distribution is the best strategy's expected score.  The
# package's recursive evaluator must agree with enumerating all strategies.


def strategies(g, env):
    if isinstance(g, GAtom):
        return [lambda s, e=dict(env), x=g.expr: F(eval_atom_total(x, s, e))]
    if isinstance(g, GMax):
        return strategies(g.left, env) + strategies(g.right, env)
    if isinstance(g, GPlus):
        return [
            (lambda s, f=f, h=h: f(s) + h(s))
            for f in strategies(g.left, env)
            for h in strategies(g.right, env)
        ]
    if isinstance(g, GQuantMax):
        out = []
        for v in g.values:
            out.extend(strategies(g.body, dict(env, **{g.var: v})))
        return out
    # GAnd
    return [
        (lambda s, f=f, e=dict(env), x=g.scalar: F(eval_atom_total(x, s, e)) * f(s))
        for f in strategies(g.body, env)
    ]


def brute_eval(g, dist):
    return max(
        sum(p * f(s) for s, p in dist.entries) for f in strategies(g, {})
    )


@pytest.mark.parametrize("case", range(25))
def test_eval_matches_strategy_enumeration(case):
    rng = random.Random(900 + case)
    g = algebra.rand_gain(rng, 2)
    weights = [rng.randint(0, 9) for _ in range(6)]
    if not any(weights):
        weights[0] = 1
    d = dist_ax(weights)
    assert eval_gain(g, d) == brute_eval(g, d)


def test_eval_gain_hand_computed():
    # on a point state, MAX takes the best branch and PLUS adds
    s = State(("a", "x"), (True, 2))
    g = parse_gain("[a] PLUS [x = 2] MAX 3 * [x = 0]")
    assert eval_gain(g, point(s)) == 2
    # on a mixture, MAX commits once, PLUS decides per branch independently
    d = dist_from_entries(
        [
            (State(("a", "x"), (True, 0)), F(1, 2)),
            (State(("a", "x"), (False, 2)), F(1, 2)),
        ]
    )
    g2 = parse_gain("[a] MAX [x = 2]")
    assert eval_gain(g2, d) == F(1, 2)
    g3 = parse_gain("[a] PLUS [x = 2]")
    assert eval_gain(g3, d) == 1


def test_eval_gain_hyper_is_weighted_average():
    d1 = dist_ax([1, 1])
    d2 = dist_ax([0, 1, 2, 3])
    g = parse_gain("MAX w in 0..3: [x = w]")
    h = hyper_reduce([(d1, F(1, 3)), (d2, F(2, 3))])
    expect = F(1, 3) * eval_gain(g, d1) + F(2, 3) * eval_gain(g, d2)
    assert eval_gain_hyper(g, h) == expect


def test_quantifier_binds_and_shadows_nothing():
    d = dist_ax([1, 2, 3, 4])
    g = parse_gain("MAX w in 0..3: w * [x = w]")
    vals = [v * d.expectation(lambda s, v=v: s.get("x") == v) for v in range(4)]
    assert eval_gain(g, d) == max(vals)


# ---- total atom semantics: runtime errors zero out the atom


def test_atom_division_by_zero_contributes_zero():
    s = State(("n", "x"), (0, 5))
    assert eval_atom_total(parse_expr("x div n"), s) == 0
    assert eval_atom_total(parse_expr("[x div n = 2]"), s) == 0
    s2 = State(("n", "x"), (2, 5))
    assert eval_atom_total(parse_expr("x div n"), s2) == 2


def test_atom_index_out_of_bounds_contributes_zero():
    s = State(("A", "n"), ((1, 2, 3), 3))
    assert eval_atom_total(parse_expr("[A[n] = 1]"), s) == 0
    assert eval_bool_total(parse_expr("A[n] = 1"), s) is False


def test_multiplication_short_circuits_zero_left_factor():
    # the guard factor keeps the partial term from poisoning the atom
    s = State(("n", "x"), (0, 5))
    assert eval_atom_total(parse_expr("[n != 0] * (x div n)"), s) == 0
    s2 = State(("n", "x"), (2, 5))
    assert eval_atom_total(parse_expr("[n != 0] * (x div n)"), s2) == 2


def test_negative_atom_raises():
    d = dist_from_entries([(State(("x",), (0,)), F(1))])
    with pytest.raises(NegativeAtom):
        eval_gain(parse_gain("x - 1"), d)


# ---- normal forms and pruning


def test_normalize_expands_to_max_of_atoms():
    nf = normalize(parse_gain("([a] MAX [b]) PLUS [n = 0]"), DECLS)
    rendered = nf.render()
    assert " MAX " in rendered
    assert semantic_eq(
        nf.as_gain(), parse_gain("([a] MAX [b]) PLUS [n = 0]"), DECLS, trials=20
    )


def test_simplify_prunes_dominated_atoms():
    nf = simplify(parse_gain("[a] MAX [a and b] MAX 1/2"), DECLS)
    assert nf.render() == "1/2 MAX [a]"


def test_normalize_keeps_dominated_atoms():
    nf = normalize(parse_gain("[a] MAX [a and b]"), DECLS)
    assert nf.render() == "[a and b] MAX [a]"
    assert simplify(parse_gain("[a] MAX [a and b]"), DECLS).render() == "[a]"


def test_simplify_idempotent_on_corpus_posts():
    corpus = sorted(
        glob.glob(
            os.path.join(os.path.dirname(__file__), os.pardir, "corpus", "*.kuif")
        )
    )
    seen = 0
    for path in corpus:
        with open(path) as f:
            p = parse_program(f.read())
        check_program(p)
        if p.post is None:
            continue
        seen += 1
        nf = simplify(p.post, p.decls)
        again = simplify(nf.as_gain(), p.decls)
        assert again.render() == nf.render(), path
    assert seen >= 12


def test_eval_nf_agrees_with_eval_gain():
    rng = random.Random(7)
    g = parse_gain(
        "(MAX w in 0..9: [x = w]) MAX 1/2 * [a] PLUS [n = 1] MAX x AND [b]"
    )
    canon = Canon(DECLS)
    nf = simplify(g, DECLS, canon)
    names = tuple(d.name for d in DECLS)
    doms = [d.domain for d in DECLS]
    from kuifje.core import all_states

    states = list(all_states(names, doms))
    for trial in range(20):
        support = rng.sample(states, rng.randint(1, 12))
        weights = [rng.randint(1, 9) for _ in support]
        total = sum(weights)
        d = dist_from_entries(
            [(s, F(w, total)) for s, w in zip(support, weights)]
        )
        assert eval_nf(nf, d, canon) == eval_gain(g, d)


def test_semantic_le_strict_cases():
    assert semantic_le(parse_gain("[a and b]"), parse_gain("[a]"), DECLS)
    res = semantic_le(parse_gain("[a]"), parse_gain("[a and b]"), DECLS)
    assert not res
    assert res.counterexample is not None
    assert res.left > res.right


def test_semantic_eq_reports_counterexample():
    res = semantic_eq(parse_gain("[a]"), parse_gain("[b]"), DECLS)
    assert not res
    assert res.left != res.right


# ---- the algebra battery (the acceptance suite re-runs this at full size)


def test_algebra_battery():
    checks, violations = algebra.run_battery(cases=25, trials=5)
    assert checks >= 250
    assert violations == []


# ---- hypothesis: evaluation is affine in the distribution, per strategy


@given(
    w1=st.lists(st.integers(0, 9), min_size=4, max_size=4).filter(any),
    w2=st.lists(st.integers(0, 9), min_size=4, max_size=4).filter(any),
)
@settings(max_examples=40, deadline=None)
def test_max_is_convex_plus_is_linear(w1, w2):
    d1, d2 = dist_ax(w1), dist_ax(w2)
    mix = avg(hyper_reduce([(d1, F(1, 3)), (d2, F(2, 3))]))
    g = parse_gain("[a] MAX [x = 2] MAX 1/2 * [x < 2]")
    # MAX of atoms is convex: mixing can only lose value
    assert eval_gain(g, mix) <= F(1, 3) * eval_gain(g, d1) + F(2, 3) * eval_gain(
        g, d2
    )
    a = parse_gain("x PLUS 2 * [a]")
    # a single strategy (no MAX) is affine: mixing is exact
    assert eval_gain(a, mix) == F(1, 3) * eval_gain(a, d1) + F(2, 3) * eval_gain(
        a, d2
    )
