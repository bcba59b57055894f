"""Forward semantics: programs as transformers of hyper-distributions.

Running a program against a prior produces a Hyper: the exact distribution
over posterior distributions an observer reaches by watching the program's
observable behaviour.  Observables are print statements, branch decisions
(every guard evaluation leaks which way it went, including the final false
test of a while loop), and assignments to `visible` variables (desugared to
prints).  Assignments to hidden state update the inner distributions without
splitting them.

`classical_run` is the leak-blind counterpart: it forgets every observation
and returns the ordinary output distribution.  Averaging a run's Hyper always
reproduces it, which is the package's leak-erasure sanity law.
"""

from __future__ import annotations

from fractions import Fraction

from .core import Dist, Hyper, _hyper_merge, unit
from .errors import DomainViolation, IndexOutOfBounds, LoopBoundExceeded
from .lang import (
    SAssign,
    SIf,
    SPrint,
    SSeq,
    SSkip,
    SWhile,
    desugar_visible,
    eval_expr,
    stmt_to_source,
)

ZERO = Fraction(0)
ONE = Fraction(1)

DEFAULT_LOOP_BOUND = 10000


class MarkovUpdate:
    """A deterministic state update, applied inside each inner distribution."""

    def __init__(self, fn, label=""):
        self.fn = fn
        self.label = label

    def apply(self, dist):
        return dist.map(self.fn)


class Channel:
    """A deterministic observation: each state emits one observable value."""

    def __init__(self, fn, label=""):
        self.fn = fn
        self.label = label

    def split(self, dist):
        """Partition a distribution by observed value.

        Returns (observation, weight, conditioned distribution) triples; the
        weights sum to one and each conditioned distribution is normalized.
        """
        buckets = {}
        for state, p in dist.entries:
            buckets.setdefault(self.fn(state), []).append((state, p))
        out = []
        for obs, pairs in sorted(buckets.items()):
            w = sum(p for _, p in pairs)
            out.append((obs, w, Dist(tuple((s, p / w) for s, p in pairs), _canonical=True)))
        return out

    def matrix(self, states):
        """0/1 channel matrix over the given states (deterministic rows)."""
        columns = sorted({self.fn(s) for s in states})
        rows = [[ONE if self.fn(s) == o else ZERO for o in columns] for s in states]
        return columns, rows


def apply_markov(update, hyper):
    """Push every inner distribution through a state update."""
    return _hyper_merge((update.apply(d), w) for d, w in hyper.entries)


def apply_channel(channel, hyper):
    """Refine every inner distribution by an observation, then forget which."""
    pairs = []
    for d, w in hyper.entries:
        for _, wo, cond in channel.split(d):
            pairs.append((cond, w * wo))
    return _hyper_merge(pairs)


# --- program interpretation -----------------------------------------------------

# Statement updates and observations are pure functions of the state, so each
# AST node keeps a state -> result memo: prior batteries re-running one program
# pay for each state's evaluation once.  Keyed by node identity; the stored
# node reference keeps its id from being reused.  Exceptions are never cached.
_node_caches = {}


def _node_slots(node):
    entry = _node_caches.get(id(node))
    if entry is None or entry[0] is not node:
        entry = (node, {})
        _node_caches[id(node)] = entry
    return entry[1]


def _memoized_state_fn(fn):
    memo = {}

    def cached(state):
        try:
            return memo[state]
        except KeyError:
            memo[state] = value = fn(state)
            return value

    return cached


def _assign_fn(decls, stmt):
    """The state update for an assignment, with domain checking."""
    slots = _node_slots(stmt)
    update = slots.get("assign")
    if update is not None:
        return update
    dom = {d.name: d.domain for d in decls}[stmt.name]

    if stmt.index is None:

        def fn(state):
            v = eval_expr(stmt.value, state)
            if not dom.contains(v):
                raise DomainViolation(
                    f"{stmt.name} := {v} leaves the declared domain {dom!r}"
                )
            return state.set(stmt.name, v)

    else:
        elem = dom.element

        def fn(state):
            i = eval_expr(stmt.index, state)
            arr = state.get(stmt.name)
            if not 0 <= i < len(arr):
                raise IndexOutOfBounds(f"{stmt.name}[{i}] with length {len(arr)}")
            v = eval_expr(stmt.value, state)
            if not elem.contains(v):
                raise DomainViolation(
                    f"{stmt.name}[{i}] := {v} leaves the declared domain {elem!r}"
                )
            return state.set(stmt.name, arr[:i] + (v,) + arr[i + 1 :])

    update = MarkovUpdate(_memoized_state_fn(fn), label=stmt_to_source(stmt))
    slots["assign"] = update
    return update


def _print_channel(stmt):
    """The observation channel for a print statement."""
    slots = _node_slots(stmt)
    chan = slots.get("print")
    if chan is None:
        chan = Channel(
            _memoized_state_fn(lambda s: eval_expr(stmt.expr, s)), label="print"
        )
        slots["print"] = chan
    return chan


def _guard_channel(guard):
    """The branch-taken observation channel for a guard expression."""
    slots = _node_slots(guard)
    chan = slots.get("guard")
    if chan is None:
        chan = Channel(
            _memoized_state_fn(lambda s: bool(eval_expr(guard, s))), label="guard"
        )
        slots["guard"] = chan
    return chan


class _Runner:
    """Table-driven interpreter.

    Statements are deterministic, so each support state yields one fixed
    observation trace and one final state.  A statement maps a hyper by
    grouping each inner distribution's states by trace (that is exactly the
    cascade of guard/print channels) and pushing each group through the
    final-state map.  The per-state executions are memoized on the AST
    nodes, so prior batteries over one program pay for each state once.
    """

    def __init__(self, decls, loop_bound):
        self.decls = decls
        self.loop_bound = loop_bound

    def _exec(self, stmt, state):
        """Run one statement from one state.

        Returns (trace, final state, need) where `need` is the largest
        iteration count any loop on this path required — cached results
        re-raise for runs whose loop bound is smaller than that.
        """
        memo = _node_slots(stmt).setdefault("exec", {})
        hit = memo.get(state)
        if hit is not None:
            if hit[2] > self.loop_bound:
                raise LoopBoundExceeded(
                    f"loop exceeded {self.loop_bound} iterations; "
                    "raise the loop bound or add an invariant"
                )
            return hit
        if isinstance(stmt, SSkip):
            result = ((), state, 0)
        elif isinstance(stmt, SAssign):
            result = ((), _assign_fn(self.decls, stmt).fn(state), 0)
        elif isinstance(stmt, SPrint):
            result = ((_print_channel(stmt).fn(state),), state, 0)
        elif isinstance(stmt, SSeq):
            trace = []
            cur = state
            need = 0
            for s in stmt.stmts:
                t, cur, n = self._exec(s, cur)
                trace.extend(t)
                if n > need:
                    need = n
            result = (tuple(trace), cur, need)
        elif isinstance(stmt, SIf):
            taken = _guard_channel(stmt.guard).fn(state)
            t, fin, need = self._exec(stmt.then if taken else stmt.els, state)
            result = ((taken,) + t, fin, need)
        elif isinstance(stmt, SWhile):
            guard = _guard_channel(stmt.guard).fn
            trace = []
            cur = state
            need = 0
            k = 0  # body executions along this path so far
            while True:
                taken = guard(cur)
                trace.append(taken)
                if not taken:
                    break
                if k >= self.loop_bound:
                    raise LoopBoundExceeded(
                        f"loop exceeded {self.loop_bound} iterations; "
                        "raise the loop bound or add an invariant"
                    )
                t, cur, n = self._exec(stmt.body, cur)
                trace.extend(t)
                if n > need:
                    need = n
                k += 1
            result = (tuple(trace), cur, need if need > k else k)
        else:
            raise AssertionError(f"unhandled statement {stmt!r}")
        memo[state] = result
        return result

    def denote(self, stmt, hyper):
        pairs = []
        for d, w in hyper.entries:
            buckets = {}
            for s, p in d.entries:
                trace, fin, _ = self._exec(stmt, s)
                bucket = buckets.setdefault(trace, {})
                q = bucket.get(fin)
                bucket[fin] = p if q is None else q + p
            for fins in buckets.values():
                bw = None  # exact bucket mass
                for q in fins.values():
                    bw = q if bw is None else bw + q
                inner = Dist(
                    tuple(sorted((f, q / bw) for f, q in fins.items())),
                    _canonical=True,
                )
                pairs.append((inner, w * bw))
        return _hyper_merge(pairs)


def run(program, prior, loop_bound=DEFAULT_LOOP_BOUND, trace=None):
    """Interpret a program as a Hyper transformer from the given prior.

    `trace`, if given, is a list that receives (label, hyper) snapshots after
    each top-level statement.
    """
    program = desugar_visible(program)
    runner = _Runner(program.decls, loop_bound)
    hyper = unit(prior)
    steps = program.body.stmts if isinstance(program.body, SSeq) else (program.body,)
    for s in steps:
        hyper = runner.denote(s, hyper)
        if trace is not None:
            trace.append((stmt_to_source(s).split("\n")[0].strip(), hyper))
    return hyper


# --- leak-blind execution ---------------------------------------------------------


def classical_run(program, prior, loop_bound=DEFAULT_LOOP_BOUND):
    """Run forgetting all observations: the plain output distribution."""
    program = desugar_visible(program)
    runner = _Runner(program.decls, loop_bound)
    acc = {}
    for s, p in prior.entries:
        _, fin, _ = runner._exec(program.body, s)
        q = acc.get(fin)
        acc[fin] = p if q is None else q + p
    return Dist(tuple(sorted(acc.items())), _canonical=True)
