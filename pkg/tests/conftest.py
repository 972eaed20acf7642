import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from codemcts import Problem, ResourceLimits, TestCase


@pytest.fixture
def tiny_problem():
    """Minimal stdio problem; used by engine tests that never run code."""
    return Problem(
        id="tiny",
        description="Print the letter a.",
        io_mode="stdio",
        call_spec=None,
        public_tests=[TestCase(input="", expected="a")],
        private_tests=[],
        limits=ResourceLimits(wall_seconds=5.0, memory_mb=256),
        difficulty="easy",
    )


def make_problem(pid="p", expected="a", private=(), description="Print something."):
    return Problem(
        id=pid,
        description=description,
        io_mode="stdio",
        call_spec=None,
        public_tests=[TestCase(input="", expected=expected)],
        private_tests=[TestCase(input="", expected=e) for e in private],
        limits=ResourceLimits(wall_seconds=5.0, memory_mb=256),
        difficulty="easy",
    )
