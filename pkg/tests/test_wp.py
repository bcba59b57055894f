"""The backwards pre-gain transformer: rules, loops, and soundness."""

from fractions import Fraction

import pytest

import soundness
from kuifje.core import State, dist_from_entries, point, uniform
from kuifje.errors import (
    BoundTooSmall,
    InvariantCheckFailed,
    KuifjeError,
    LoopNeedsInvariantOrBound,
)
from kuifje.gain import eval_gain, semantic_eq
from kuifje.lang import check_program, parse_expr, parse_gain, parse_program
from kuifje.semantics import classical_run, run
from kuifje.wp import WpConfig, WpEngine, classical_expectation, classical_wp, wp

F = Fraction


def make(src):
    p = parse_program(src)
    check_program(p)
    return p


# ---- structural rules, smallest programs that exercise each


def test_wp_skip_is_identity():
    p = make("hidden x : int[0..3]\nskip\n@post { MAX w in 0..3: [x = w] }")
    res = wp(p)
    assert res.render() == "[x = 0] MAX [x = 1] MAX [x = 2] MAX [x = 3]"


def test_wp_assign_substitutes():
    p = make("hidden x : int[0..9]\nx := x div 2\n@post { [x = 1] }")
    assert wp(p).render() == "[x div 2 = 1]"


def test_wp_assign_array_element_blends():
    p = make(
        "hidden A : array[2] of int[0..3]\nhidden i : int[0..1]\n"
        "A[i] := 2\n@post { [A[0] = 2] }"
    )
    res = wp(p)
    # after the write, A[0] = 2 holds iff we wrote slot 0 or it already held
    d_hit = point(State(("A", "i"), ((0, 0), 0)))
    d_miss = point(State(("A", "i"), ((0, 0), 1)))
    d_already = point(State(("A", "i"), ((2, 0), 1)))
    assert eval_gain(res.pre, d_hit) == 1
    assert eval_gain(res.pre, d_miss) == 0
    assert eval_gain(res.pre, d_already) == 1


def test_wp_print_splits_by_attained_value():
    p = make("hidden x : int[0..9]\nprint (x < 4)\n@post { [x = 3] }")
    # the false observation branch is identically zero and prunes away
    assert wp(p).render() == "[x = 3]"


def test_wp_print_sums_observation_branches():
    p = make(
        "hidden x : int[0..9]\nprint (x < 4)\n"
        "@post { MAX w in 0..9: [x = w] }"
    )
    res = wp(p)
    prior = uniform([State(("x",), (v,)) for v in range(10)])
    assert eval_gain(res.pre, prior) == F(1, 5)
    # each atom pairs one guess per observation cell
    assert len(res.nf.atoms) == 24


def test_wp_if_pays_both_branches():
    p = make(
        "hidden a : bool\nhidden b : bool\n"
        "if a then\n  b := true\nelse\n  skip\nfi\n"
        "@post { [b] MAX [not b] }"
    )
    assert wp(p).render() == "[a or b] MAX [a or not b]"


def test_wp_seq_composes_right_to_left():
    p = make(
        "hidden x : int[0..9]\nx := x div 2;\nx := x div 2\n@post { [x = 1] }"
    )
    assert wp(p).render() == "[x div 2 div 2 = 1]"


def test_wp_requires_a_post():
    p = make("hidden x : int[0..3]\nskip")
    with pytest.raises(KuifjeError):
        wp(p)
    assert wp(p, post=parse_gain("[x = 0]")).render() == "[x = 0]"


def test_visible_assignment_leaks():
    p = make(
        "hidden x : int[0..3]\nvisible y : int[0..3]\n"
        "y := x mod 2\n@post { MAX w in 0..3: [x = w] }"
    )
    res = wp(p)
    prior = uniform([State(("x", "y"), (v, 0)) for v in range(4)])
    # parity is published, halving the guessing space
    assert eval_gain(res.pre, prior) == F(1, 2)


# ---- loops: unfolding


def test_unfold_never_true_guard():
    p = make(
        "hidden x : int[0..3]\nwhile x < 0 do\n  x := x + 1\nod\n"
        "@post { MAX w in 0..3: [x = w] }"
    )
    res = wp(p)
    # one guard check, always false: the post passes straight through
    assert res.render() == "[x = 0] MAX [x = 1] MAX [x = 2] MAX [x = 3]"


def test_unfold_counts_iterations():
    # the guard observations reveal x exactly, though n is what changes
    p = make(
        "hidden x : int[0..3]\nhidden n : int[0..3]\n"
        "n := 0;\nwhile n != x do\n  n := n + 1\nod\n"
        "@post { MAX w in 0..3: [x = w] }"
    )
    res = wp(p)
    prior = uniform([State(("x", "n"), (v, 0)) for v in range(4)])
    assert eval_gain(res.pre, prior) == 1


def test_unfold_depth_too_small():
    p = soundness.program("search_early_exit.kuif")
    cfg = WpConfig(force_unfold=True, unfold_depth=1)
    with pytest.raises(BoundTooSmall):
        WpEngine(p, cfg).wp_program()


def test_unbounded_loop_needs_annotation():
    p = make(
        "hidden x : int[0..3]\nwhile x < 4 do\n  x := x mod 4\nod\n"
        "@post { MAX w in 0..3: [x = w] }"
    )
    cfg = WpConfig(loop_bound=50)
    with pytest.raises(LoopNeedsInvariantOrBound):
        WpEngine(p, cfg).wp_program()


# ---- loops: annotations


def test_invariant_route_returns_annotation():
    engine, nf = soundness.wp_nf("search_early_exit.kuif")
    assert nf.render() == "[x in A]"


def test_invariant_and_unfold_agree():
    p = soundness.program("search_early_exit.kuif")
    via_invariant = soundness.wp_nf("search_early_exit.kuif")[1]
    via_unfold = WpEngine(p, WpConfig(force_unfold=True)).wp_program()
    assert semantic_eq(
        via_invariant.as_gain(), via_unfold.pre, p.decls, trials=50, seed=7
    )


def test_wrong_invariant_rejected_with_counterexample():
    p = make(
        "hidden x : int[0..3]\nhidden n : int[0..3]\n"
        "n := 0;\nwhile n != x invariant { [n = 0] } do\n  n := n + 1\nod\n"
        "@post { MAX w in 0..3: [x = w] }"
    )
    with pytest.raises(InvariantCheckFailed) as e:
        wp(p)
    err = e.value
    assert "not self-consistent" in str(err)
    assert err.counterexample is not None
    lhs_text, rhs_text = err.equation
    assert lhs_text == "[n = 0]"
    assert "pre(body, annotation)" in rhs_text


def test_overclaiming_invariant_rejected():
    # claims full knowledge of x while the scan is still in progress
    src = soundness.program("search_early_exit.kuif")
    text = open(soundness.CORPUS + "/search_early_exit.kuif").read()
    corrupted = text.replace("[x in A[n:]]", "MAX w in 0..3: [x = w]")
    assert corrupted != text
    p = make(corrupted)
    with pytest.raises(InvariantCheckFailed):
        wp(p)


# ---- the unsound mode reproduces the classical (leak-blind) answer


def test_unsound_mode_underestimates_branch_leak():
    p = soundness.program("branch_assign.kuif")
    sound = wp(p)
    unsound = wp(p, config=WpConfig(unsound_no_branch_leak=True))
    assert unsound.render() == "[a or b] MAX [not a and not b]"
    prior = dist_from_entries(
        [
            (State(("a", "b"), (True, True)), F(9, 100)),
            (State(("a", "b"), (True, False)), F(21, 100)),
            (State(("a", "b"), (False, True)), F(21, 100)),
            (State(("a", "b"), (False, False)), F(49, 100)),
        ]
    )
    assert eval_gain(sound.pre, prior) == F(79, 100)
    assert eval_gain(unsound.pre, prior) == F(51, 100)


# ---- classical (leak-blind) expectations agree with the forward projection


@pytest.mark.parametrize(
    "name,expr",
    [
        ("branch_assign.kuif", "[b]"),
        ("halve_then_guess.kuif", "x"),
        ("clamp_parity.kuif", "x mod 2"),
        ("search_early_exit.kuif", "n"),
        ("reveal_max_value.kuif", "m"),
    ],
)
def test_classical_wp_matches_classical_run(name, expr):
    import random

    p = soundness.program(name)
    e = parse_expr(expr)
    engine = WpEngine(p)
    states = list(engine.states())
    rng = random.Random(5)
    priors = [point(rng.choice(states)) for _ in range(5)]
    w = [rng.randint(1, 9) for _ in states]
    total = sum(w)
    priors.append(
        dist_from_entries([(s, F(wi, total)) for s, wi in zip(states, w)])
    )
    from kuifje.lang import eval_expr

    for prior in priors:
        backwards = classical_expectation(p, e, prior)
        forwards = classical_run(p, prior).expectation(
            lambda s: F(eval_expr(e, s))
        )
        assert backwards == forwards


def test_classical_wp_is_an_expression():
    p = soundness.program("branch_assign.kuif")
    pre = classical_wp(p, parse_expr("[b]"))
    s = State(("a", "b"), (True, False))
    from kuifje.gain import eval_atom_total

    assert eval_atom_total(pre, s) == 1  # a true forces b := true


# ---- trace


def test_trace_reports_intermediate_pres():
    p = soundness.program("search_early_exit.kuif")
    res = WpEngine(p, WpConfig(trace=True)).wp_program()
    labels = [label for label, _ in res.trace]
    assert labels[0].startswith("while")
    assert labels[-1] == "n := 0"
    # the last note is the whole program's pre-gain
    assert res.trace[-1][1] == res.render()


# ---- soundness battery (cheap subset; the acceptance suite runs all of it)


@pytest.mark.parametrize(
    "name",
    [
        "branch_assign.kuif",
        "skip_loop.kuif",
        "clamp_parity.kuif",
        "halve_then_guess.kuif",
        "threshold_print.kuif",
        "mark_slot.kuif",
    ],
)
def test_soundness_fast_programs(name):
    checked = soundness.check_soundness(name, n_random=25)
    assert checked >= 25
