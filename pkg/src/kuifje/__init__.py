"""Exact quantitative information-flow analysis for a small imperative
language with observable branches and prints.

Programs run forward as transformers of hyper-distributions (distributions
over the posteriors an observer can reach); adversarial gain expressions are
evaluated on priors and hypers; and a backwards transformer computes, for a
program and a post-gain, the pre-gain whose value on any prior equals the
post-gain's value on the program's output hyper.  All arithmetic is exact.
"""

from .core import (
    ArrayDomain,
    BoolDomain,
    Dist,
    Hyper,
    IntRange,
    Rational,
    State,
    all_states,
    avg,
    dist_from_entries,
    expectation,
    hyper_reduce,
    point,
    uniform,
    unit,
)
from .errors import (
    BoundTooSmall,
    DivisionByZero,
    DomainViolation,
    IndexOutOfBounds,
    InvariantCheckFailed,
    KuifjeError,
    LoopBoundExceeded,
    LoopNeedsInvariantOrBound,
    NegativeAtom,
    NegativeProbability,
    NonStandardAndContext,
    ParseError,
    RangeEmpty,
    SumNotOne,
    TypeCheckError,
)
from .gain import (
    Canon,
    CompareResult,
    NormalForm,
    apply_context,
    eval_gain,
    eval_gain_hyper,
    eval_nf,
    normalize,
    semantic_eq,
    semantic_le,
    simplify,
)
from .lang import (
    Checker,
    Program,
    check_gain,
    check_program,
    desugar_visible,
    eval_expr,
    expr_to_source,
    gain_to_source,
    parse_expr,
    parse_gain,
    parse_program,
    program_to_source,
    stmt_to_source,
)
from .semantics import Channel, MarkovUpdate, classical_run, run
from .wp import WpConfig, WpEngine, classical_wp, wp

__all__ = [
    "ArrayDomain",
    "BoolDomain",
    "BoundTooSmall",
    "Canon",
    "Channel",
    "Checker",
    "CompareResult",
    "Dist",
    "DivisionByZero",
    "DomainViolation",
    "Hyper",
    "IndexOutOfBounds",
    "IntRange",
    "InvariantCheckFailed",
    "KuifjeError",
    "LoopBoundExceeded",
    "LoopNeedsInvariantOrBound",
    "MarkovUpdate",
    "NegativeAtom",
    "NegativeProbability",
    "NonStandardAndContext",
    "NormalForm",
    "ParseError",
    "Program",
    "RangeEmpty",
    "Rational",
    "State",
    "SumNotOne",
    "TypeCheckError",
    "WpConfig",
    "WpEngine",
    "all_states",
    "apply_context",
    "avg",
    "check_gain",
    "check_program",
    "classical_run",
    "classical_wp",
    "desugar_visible",
    "dist_from_entries",
    "eval_expr",
    "eval_gain",
    "eval_gain_hyper",
    "eval_nf",
    "expectation",
    "expr_to_source",
    "gain_to_source",
    "hyper_reduce",
    "normalize",
    "parse_expr",
    "parse_gain",
    "parse_program",
    "point",
    "program_to_source",
    "run",
    "semantic_eq",
    "semantic_le",
    "simplify",
    "stmt_to_source",
    "uniform",
    "unit",
    "wp",
]
