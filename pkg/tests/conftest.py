import os
import sys

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CORPUS = os.path.join(ROOT, "corpus")

sys.path.insert(0, os.path.join(ROOT, "tests"))


@pytest.fixture(scope="session")
def corpus_dir():
    return CORPUS


@pytest.fixture(scope="session")
def load_program():
    """Factory: parse and typecheck a corpus program by basename."""
    from kuifje import check_program, parse_program

    def go(name):
        with open(os.path.join(CORPUS, name + ".kuif")) as f:
            program = parse_program(f.read())
        check_program(program)
        return program

    return go
