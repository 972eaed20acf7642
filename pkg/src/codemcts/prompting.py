"""Prompt construction and completion parsing.

Two prompt modes: "direct" asks for a program outright, "cot" walks the
model through a planning step (delimited by <startofplan>/<endofplan>)
before the code. Templates live as versioned data files so the exact bytes
can be pinned by tests; silent prompt drift changes results.

Both prompts end right before where the model writes a fenced code block,
and generation stops at the closing fence line. That means completions
usually carry an opening ``` fence with no closing one; extract_code
handles that case.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .problems import Problem

PROMPT_MODES = ("direct", "cot")
TEMPLATE_VERSION = "v1"

PLAN_START = "<startofplan>"
PLAN_END = "<endofplan>"

# Generation halts at a bare closing-fence line. The opening fence
# ("```python") does not match because of the language suffix.
CODE_STOP_SEQUENCES = ("\n```\n",)

_CODE_START_RE = re.compile(r"^(import|from|def|class)\b")


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    stop_sequences: tuple[str, ...] = CODE_STOP_SEQUENCES


def _template(mode: str) -> str:
    name = f"{mode}_{TEMPLATE_VERSION}.txt"
    return resources.files(__package__).joinpath("templates", name).read_text(encoding="utf-8")


def _render_examples(problem: Problem) -> str:
    parts = []
    for i, test in enumerate(problem.public_tests, start=1):
        parts.append(
            f"Example {i}:\nInput:\n{test.input.rstrip()}\nOutput:\n{test.expected.rstrip()}"
        )
    return "\n\n".join(parts)


def _io_cue(problem: Problem) -> str:
    if problem.io_mode == "call":
        spec = problem.call_spec
        return (
            f"Implement a class `{spec.class_name}` with a method `{spec.method_name}`. "
            "The method is called with the example input as positional arguments and "
            "must return the expected value."
        )
    return "Read the input from standard input and print the answer to standard output."


def build_prompt(problem: Problem, mode: str) -> RenderedPrompt:
    """Render the prompt for a problem. Deterministic for a given
    (problem, mode, template version)."""
    if mode not in PROMPT_MODES:
        raise ValueError(f"mode must be one of {PROMPT_MODES}, got {mode!r}")
    if not problem.description.strip():
        raise ValueError("problem description is empty")
    text = _template(mode)
    # Plain replacement, not str.format: descriptions often contain braces.
    text = text.replace("{description}", problem.description.strip())
    text = text.replace("{examples}", _render_examples(problem))
    text = text.replace("{io_cue}", _io_cue(problem))
    return RenderedPrompt(text=text)


def extract_code(completion: str) -> str | None:
    """Pull the program out of a completion.

    The LAST fenced code block wins; a fence left unclosed at the end of
    the text (the stop sequence eats the closing fence) counts as a block
    running to EOF. Without any fence, the region from the earliest
    plausible code-start line (import/from/def/class) to the end is used.
    Returns None when neither exists. Never returns fence delimiters.
    """
    lines = [line.rstrip("\r") for line in completion.split("\n")]
    blocks: list[list[str]] = []
    current: list[str] | None = None
    for line in lines:
        if line.lstrip().startswith("```"):
            if current is None:
                current = []
            else:
                blocks.append(current)
                current = None
            continue
        if current is not None:
            current.append(line)
    if current is not None:
        blocks.append(current)  # unclosed fence at EOF

    for block in reversed(blocks):
        text = "\n".join(block).strip("\n")
        if text.strip():
            return text
    if blocks:
        return None  # fenced but empty: nothing to run

    for i, line in enumerate(lines):
        if _CODE_START_RE.match(line):
            tail = [ln for ln in lines[i:] if not ln.lstrip().startswith("```")]
            text = "\n".join(tail).strip("\n")
            return text if text.strip() else None
    return None


def extract_plan(completion: str) -> str | None:
    """Text strictly between the first <startofplan> and the next
    <endofplan>; None when markers are missing or misordered."""
    start = completion.find(PLAN_START)
    if start < 0:
        return None
    inner_from = start + len(PLAN_START)
    end = completion.find(PLAN_END, inner_from)
    if end < 0:
        return None
    return completion[inner_from:end]
