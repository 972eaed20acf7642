"""Problem data model and JSONL dataset loading.

A dataset is a JSONL file with one problem object per line:

    {"id": "...", "description": "...", "io_mode": "stdio" | "call",
     "call_spec": {"class_name": "Solution", "method_name": "..."},   # call mode only
     "public_tests": [{"input": "...", "expected": "..."}],
     "private_tests": [...],
     "limits": {"wall_seconds": 6.0, "memory_mb": 512},               # optional
     "difficulty": "easy" | "medium" | "hard"}                        # optional
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

IO_MODES = ("stdio", "call")
DIFFICULTIES = ("easy", "medium", "hard")


class DatasetError(ValueError):
    """Raised on a malformed dataset file; carries the offending line number."""

    def __init__(self, message: str, line_no: int | None = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class TestCase:
    """One test: stdin payload and expected stdout for stdio problems,
    JSON argument list and JSON expected value for call problems."""

    input: str
    expected: str


@dataclass(frozen=True)
class CallSpec:
    """Entry point for call-mode problems: which class method to invoke."""

    method_name: str
    class_name: str = "Solution"


@dataclass(frozen=True)
class ResourceLimits:
    wall_seconds: float = 6.0
    memory_mb: int = 512
    output_cap_bytes: int = 1 << 20  # 1 MiB per stream


@dataclass
class Problem:
    id: str
    description: str
    io_mode: str = "stdio"
    call_spec: CallSpec | None = None
    public_tests: list[TestCase] = field(default_factory=list)
    private_tests: list[TestCase] = field(default_factory=list)
    limits: ResourceLimits = field(default_factory=ResourceLimits)
    difficulty: str | None = None

    def __post_init__(self):
        if self.io_mode not in IO_MODES:
            raise ValueError(f"io_mode must be one of {IO_MODES}, got {self.io_mode!r}")
        if self.io_mode == "call" and self.call_spec is None:
            raise ValueError("call-mode problem requires call_spec")
        if not self.public_tests:
            raise ValueError("public_tests must be non-empty")
        if self.difficulty is not None and self.difficulty not in DIFFICULTIES:
            raise ValueError(f"difficulty must be one of {DIFFICULTIES}")

    @property
    def all_tests(self) -> list[TestCase]:
        return list(self.public_tests) + list(self.private_tests)


def _parse_tests(raw, what: str) -> list[TestCase]:
    if not isinstance(raw, list):
        raise ValueError(f"{what} must be a list")
    tests = []
    for entry in raw:
        if not isinstance(entry, dict) or "input" not in entry or "expected" not in entry:
            raise ValueError(f"{what} entries need 'input' and 'expected'")
        if entry["expected"] is None:
            raise ValueError(f"{what} entry has null 'expected'")
        tests.append(TestCase(input=str(entry["input"]), expected=str(entry["expected"])))
    return tests


def problem_from_dict(obj: dict) -> Problem:
    """Build a Problem from one decoded JSONL object, validating the schema."""
    if not isinstance(obj, dict):
        raise ValueError("problem record must be a JSON object")
    for key in ("id", "description", "io_mode", "public_tests"):
        if key not in obj:
            raise ValueError(f"missing required field {key!r}")

    call_spec = None
    if obj.get("call_spec") is not None:
        cs = obj["call_spec"]
        if not isinstance(cs, dict) or "method_name" not in cs:
            raise ValueError("call_spec needs 'method_name'")
        call_spec = CallSpec(
            method_name=cs["method_name"],
            class_name=cs.get("class_name", "Solution"),
        )

    limits = ResourceLimits()
    if obj.get("limits"):
        lim = obj["limits"]
        limits = ResourceLimits(
            wall_seconds=float(lim.get("wall_seconds", limits.wall_seconds)),
            memory_mb=int(lim.get("memory_mb", limits.memory_mb)),
            output_cap_bytes=int(lim.get("output_cap_bytes", limits.output_cap_bytes)),
        )

    return Problem(
        id=str(obj["id"]),
        description=str(obj["description"]),
        io_mode=obj["io_mode"],
        call_spec=call_spec,
        public_tests=_parse_tests(obj["public_tests"], "public_tests"),
        private_tests=_parse_tests(obj.get("private_tests", []), "private_tests"),
        limits=limits,
        difficulty=obj.get("difficulty"),
    )


def load_problems(path: str | Path, strict: bool = True) -> list[Problem]:
    """Load a JSONL dataset.

    strict=True aborts on the first invalid line with its line number;
    strict=False logs and skips invalid lines.
    """
    path = Path(path)
    problems: list[Problem] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                problem = problem_from_dict(obj)
                if problem.id in seen_ids:
                    raise ValueError(f"duplicate problem id {problem.id!r}")
                seen_ids.add(problem.id)
            except (ValueError, TypeError) as exc:
                if strict:
                    raise DatasetError(str(exc), line_no) from exc
                log.warning("skipping dataset line %d: %s", line_no, exc)
                continue
            problems.append(problem)
    if strict and not problems:
        raise DatasetError("dataset contains no problems")
    return problems
