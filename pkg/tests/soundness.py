"""Shared soundness battery: pre-gain on the prior equals post-gain on the hyper.

Used by both the wp unit tests and the acceptance suite.  The backwards
results are cached per corpus program so one pytest session pays for each
analysis exactly once.
"""

import glob
import os
import random
from fractions import Fraction

from kuifje.core import Dist, point
from kuifje.gain import eval_gain_hyper, eval_nf
from kuifje.lang import check_program, parse_program
from kuifje.semantics import run
from kuifje.wp import WpEngine

CORPUS = os.path.join(os.path.dirname(__file__), os.pardir, "corpus")

_programs = {}
_engines = {}


def program(name):
    if name not in _programs:
        with open(os.path.join(CORPUS, name)) as f:
            p = parse_program(f.read())
        check_program(p)
        _programs[name] = p
    return _programs[name]


def corpus_names():
    return sorted(
        os.path.basename(p) for p in glob.glob(os.path.join(CORPUS, "*.kuif"))
    )


def with_post():
    return [n for n in corpus_names() if program(n).post is not None]


def wp_nf(name):
    """(engine, normal form) for a corpus program, computed once per session."""
    if name not in _engines:
        p = program(name)
        engine = WpEngine(p)
        res = engine.wp_program()
        _engines[name] = (engine, res.nf)
    return _engines[name]


def priors_for(states, n_random, seed):
    """Every point prior, then n_random seeded random rational priors."""
    states = sorted(states)
    out = [point(s) for s in states]
    rng = random.Random(seed)
    for _ in range(n_random):
        w = [rng.randint(0, 16) for _ in states]
        if not any(w):
            w[rng.randrange(len(states))] = 1
        total = sum(w)
        # Entries are sorted, positive, and sum to one by construction.
        out.append(
            Dist(
                tuple((s, Fraction(wi, total)) for s, wi in zip(states, w) if wi),
                _canonical=True,
            )
        )
    return out


def check_soundness(name, n_random=100, seed=20260816):
    """Exact agreement of backwards and forwards analysis on many priors.

    Returns the number of priors checked; raises AssertionError carrying the
    offending prior on the first mismatch.
    """
    p = program(name)
    engine, nf = wp_nf(name)
    states = list(engine.states())
    checked = 0
    for prior in priors_for(states, n_random, seed):
        lhs = eval_nf(nf, prior, engine.canon)
        rhs = eval_gain_hyper(p.post, run(p, prior))
        assert lhs == rhs, (
            f"{name}: pre-gain gives {lhs} on {prior!r} "
            f"but the forward run is worth {rhs}"
        )
        checked += 1
    return checked
