"""Rewards: candidate programs judged against test suites.

hard reward is all-or-nothing over a suite; partial reward is the pass
fraction. During search both are computed over the PUBLIC tests only;
`correct` judges the final program over public and private together and is
never consulted by the search loop.
"""

from __future__ import annotations

import hashlib
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import sandbox
from .problems import CallSpec, Problem, ResourceLimits, TestCase
from .sandbox import SandboxUnavailable

PASS = "pass"
WRONG_ANSWER = "wrong_answer"
RUNTIME_ERROR = "runtime_error"
TIMEOUT = "timeout"
MEMORY = "memory"

REWARD_MODES = ("hard", "partial")


@dataclass
class TestResult:
    status: str
    stdout: str
    stderr: str
    wall_ms: float

    @property
    def passed(self) -> bool:
        return self.status == PASS


@dataclass
class ExecutionReport:
    per_test: list[TestResult] = field(default_factory=list)

    @property
    def passed(self) -> int:
        return sum(1 for t in self.per_test if t.passed)

    @property
    def total(self) -> int:
        return len(self.per_test)


@dataclass
class Candidate:
    """One complete sampled program with its judgment."""

    completion_text: str
    program: str | None
    report: ExecutionReport | None
    reward: float
    rollout_index: int
    generation_index: int


def _normalize_stdout(text: str) -> str:
    """Competitive-judge comparison: strip trailing whitespace per line and
    drop trailing blank lines."""
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def _values_equal(a, b) -> bool:
    """Deep equality on JSON-decoded values; floats at 1e-6 relative tolerance."""
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=1e-6, abs_tol=1e-9)
    if isinstance(a, list) and isinstance(b, list):
        return len(a) == len(b) and all(_values_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_values_equal(a[k], b[k]) for k in a)
    return a == b


def _judge_stdio(outcome: sandbox.RunOutcome, expected: str) -> str:
    if _normalize_stdout(outcome.stdout) == _normalize_stdout(expected):
        return PASS
    return WRONG_ANSWER


def _judge_call(outcome: sandbox.RunOutcome, expected: str) -> tuple[str, str]:
    """Returns (status, diagnostic). The driver prints one JSON line:
    {"ok": true, "value": ...} or {"ok": false, "error": ...}."""
    try:
        envelope = json.loads(outcome.stdout.strip())
        if not isinstance(envelope, dict) or "ok" not in envelope:
            raise ValueError("not a protocol envelope")
    except ValueError:
        return RUNTIME_ERROR, f"unparseable driver output: {outcome.stdout[:200]!r}"
    if not envelope["ok"]:
        return RUNTIME_ERROR, str(envelope.get("error", "unknown error"))
    try:
        expected_value = json.loads(expected)
    except ValueError:
        return WRONG_ANSWER, f"expected value is not valid JSON: {expected[:200]!r}"
    if _values_equal(envelope.get("value"), expected_value):
        return PASS, ""
    return WRONG_ANSWER, ""


def _run_one(
    program: str,
    test: TestCase,
    io_mode: str,
    limits: ResourceLimits,
    call_spec: CallSpec | None,
) -> TestResult:
    outcome = sandbox.run(
        program,
        stdin_payload=test.input,
        limits=limits,
        io_mode=io_mode,
        call_spec=call_spec,
    )
    if outcome.status == sandbox.SPAWN_ERROR:
        raise SandboxUnavailable(outcome.stderr or "sandbox spawn failed")
    if outcome.status == sandbox.TIMEOUT:
        return TestResult(TIMEOUT, outcome.stdout, outcome.stderr, outcome.wall_ms)
    if outcome.status == sandbox.MEMORY_KILL:
        return TestResult(MEMORY, outcome.stdout, outcome.stderr, outcome.wall_ms)
    if outcome.status == sandbox.NONZERO_EXIT:
        return TestResult(RUNTIME_ERROR, outcome.stdout, outcome.stderr, outcome.wall_ms)

    if io_mode == "call":
        status, diag = _judge_call(outcome, test.expected)
        stderr = outcome.stderr if not diag else f"{diag}\n{outcome.stderr}".strip()
        return TestResult(status, outcome.stdout, stderr, outcome.wall_ms)
    status = _judge_stdio(outcome, test.expected)
    return TestResult(status, outcome.stdout, outcome.stderr, outcome.wall_ms)


def evaluate(
    program: str,
    suite: list[TestCase],
    io_mode: str = "stdio",
    limits: ResourceLimits | None = None,
    call_spec: CallSpec | None = None,
    max_workers: int = 1,
) -> ExecutionReport:
    """Run the program on every test in the suite; failures do not stop the
    remaining tests. Results come back in suite order."""
    if not suite:
        raise ValueError("test suite is empty")
    limits = limits or ResourceLimits()
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(
                pool.map(lambda t: _run_one(program, t, io_mode, limits, call_spec), suite)
            )
    else:
        results = [_run_one(program, t, io_mode, limits, call_spec) for t in suite]
    return ExecutionReport(per_test=results)


def hard_reward(report: ExecutionReport) -> float:
    """1 iff every test passed, else 0."""
    if report.total < 1:
        raise ValueError("empty report")
    return 1.0 if report.passed == report.total else 0.0


def partial_reward(report: ExecutionReport) -> float:
    """Pass fraction over the suite."""
    if report.total < 1:
        raise ValueError("empty report")
    return report.passed / report.total


def reward_for_report(report: ExecutionReport, mode: str) -> float:
    if mode not in REWARD_MODES:
        raise ValueError(f"reward mode must be one of {REWARD_MODES}")
    return hard_reward(report) if mode == "hard" else partial_reward(report)


def correct(program: str, problem: Problem, max_workers: int = 1) -> float:
    """Pass fraction over public and private tests together. A problem
    counts as solved exactly when this is 1.0."""
    report = evaluate(
        program,
        problem.all_tests,
        io_mode=problem.io_mode,
        limits=problem.limits,
        call_spec=problem.call_spec,
        max_workers=max_workers,
    )
    return partial_reward(report)


def _suite_key(suite: list[TestCase], io_mode: str, call_spec: CallSpec | None) -> str:
    payload = json.dumps(
        {
            "io_mode": io_mode,
            "call_spec": [call_spec.class_name, call_spec.method_name] if call_spec else None,
            "tests": [[t.input, t.expected] for t in suite],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class EvalCache:
    """Memo of execution reports keyed by (program hash, suite hash).

    Duplicate completions are common at low temperature; re-running them
    buys nothing. Cache hits still count as generations upstream, only the
    sandbox work is skipped.
    """

    def __init__(self):
        self._store: dict[tuple[str, str], ExecutionReport] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def evaluate(
        self,
        program: str,
        suite: list[TestCase],
        io_mode: str = "stdio",
        limits: ResourceLimits | None = None,
        call_spec: CallSpec | None = None,
        max_workers: int = 1,
    ) -> ExecutionReport:
        program_key = hashlib.sha256(program.encode("utf-8")).hexdigest()
        key = (program_key, _suite_key(suite, io_mode, call_spec))
        with self._lock:
            cached = self._store.get(key)
        if cached is not None:
            with self._lock:
                self.hits += 1
            return cached
        report = evaluate(program, suite, io_mode, limits, call_spec, max_workers)
        with self._lock:
            self.misses += 1
            self._store[key] = report
        return report
