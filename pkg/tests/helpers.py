"""Shared builders for the test suite: table policies over letter/program
token vocabularies, scripted failure policies, and tree walkers."""

from __future__ import annotations

import os
import random
from pathlib import Path

from codemcts import Node, Completion, PolicyError, ToyPolicy, puct_score

DATA = Path(__file__).parent / "data"


def scan_for_sandbox_processes() -> list:
    """Every sandboxed child runs from a codemcts-run-* working directory;
    grep /proc for survivors."""
    found = []
    for pid in os.listdir("/proc"):
        if not pid.isdigit():
            continue
        try:
            with open(f"/proc/{pid}/cmdline", "rb") as fh:
                cmd = fh.read().decode(errors="replace")
        except OSError:
            continue
        if "codemcts-run-" in cmd:
            found.append((pid, cmd))
        else:
            try:
                cwd = os.readlink(f"/proc/{pid}/cwd")
            except OSError:
                continue
            if "codemcts-run-" in cwd:
                found.append((pid, cwd))
    return found


def program_token(ch: str) -> str:
    """A vocabulary token that is a whole runnable line. Starting with
    'import' keeps the code extractor's no-fence fallback applicable."""
    return f"import sys; print('{ch}')\n"


def letters_policy(
    letters: str,
    eos_weight: float = 0.25,
    eos_token: str = "<eos>",
    weights: list[float] | None = None,
) -> ToyPolicy:
    """Memoryless policy: the same distribution over single-letter tokens
    plus end-of-sequence after every prefix."""
    if weights is None:
        weights = [1.0] * len(letters)
    default = {ch: w for ch, w in zip(letters, weights)}
    default[eos_token] = eos_weight
    return ToyPolicy(table={}, default=default, eos_token=eos_token)


def no_eos_policy(letters: str = "abcde") -> ToyPolicy:
    """Letters dominate; end-of-sequence never reaches the top 5 and falls
    outside the 0.8 nucleus, so simulations always run to the depth budget."""
    default = {ch: 0.19 for ch in letters}
    default["<eos>"] = 0.05
    return ToyPolicy(table={}, default=default)


class FlakyPolicy:
    """Wraps a policy, failing the first N calls of each kind."""

    def __init__(self, inner, fail_top_k: int = 0, fail_sample: int = 0,
                 kind: str = "transport"):
        self.inner = inner
        self.eos_token = inner.eos_token
        self.kind = kind
        self.top_k_failures_left = fail_top_k
        self.sample_failures_left = fail_sample
        self.top_k_calls = 0
        self.sample_calls = 0

    def top_k(self, prompt, prefix, k):
        self.top_k_calls += 1
        if self.top_k_failures_left > 0:
            self.top_k_failures_left -= 1
            raise PolicyError(self.kind, "scripted top_k failure")
        return self.inner.top_k(prompt, prefix, k)

    def sample(self, prompt, prefix, params, rng=None):
        self.sample_calls += 1
        if self.sample_failures_left > 0:
            self.sample_failures_left -= 1
            raise PolicyError(self.kind, "scripted sample failure")
        return self.inner.sample(prompt, prefix, params, rng)


class CapturePolicy:
    """Records every call it sees; delegates to an inner policy."""

    def __init__(self, inner):
        self.inner = inner
        self.eos_token = inner.eos_token
        self.top_k_log = []
        self.sample_log = []

    def top_k(self, prompt, prefix, k):
        self.top_k_log.append((prompt, list(prefix), k))
        return self.inner.top_k(prompt, prefix, k)

    def sample(self, prompt, prefix, params, rng=None):
        self.sample_log.append((prompt, list(prefix), params))
        return self.inner.sample(prompt, prefix, params, rng)


class EmptyTopKPolicy:
    """Proposes nothing; sampling yields a fixed completion."""

    eos_token = "<eos>"

    def __init__(self, text: str = ""):
        self.text = text

    def top_k(self, prompt, prefix, k):
        return []

    def sample(self, prompt, prefix, params, rng=None):
        return Completion(text=self.text, finish_reason="stop")


def brute_force_leaf(root: Node, c_base: float, c: float) -> list[Node]:
    """Independent selection walker: at each level, exhaustively evaluate
    every sibling and take the argmax with the documented tie-breaks."""
    path = [root]
    node = root
    while node.expanded and not node.terminal and node.children:
        scored = [
            (puct_score(ch.edge_q, ch.prior, node.node_visits, ch.edge_visits, c_base, c),
             ch.prior, -i, ch)
            for i, ch in enumerate(node.children)
        ]
        scored.sort(key=lambda t: (t[0], t[1], t[2]), reverse=True)
        node = scored[0][3]
        path.append(node)
    return path


def check_visit_conservation(root: Node, generations: int) -> None:
    """Asserts the bookkeeping identity at every node of the tree."""
    assert root.node_visits == sum(c.edge_visits for c in root.children), "root conservation"
    assert root.node_visits == generations, "root visits == generations"

    def walk(node: Node):
        for child in node.children:
            if child.expanded:
                assert child.node_visits == sum(g.edge_visits for g in child.children) + 1, (
                    f"conservation broken at {child.token!r}"
                )
            assert 0.0 <= child.edge_q <= 1.0
            if child.edge_visits == 0:
                assert child.edge_q == 0.0
            walk(child)

    walk(root)


def random_tree(rng: random.Random, depth: int, fanout: int) -> Node:
    """Hand-built tree with random statistics for selection tests."""
    root = Node()
    root.expanded = True
    root.node_visits = rng.randint(1, 50)

    def grow(node: Node, level: int):
        if level == 0:
            return
        for i in range(fanout):
            child = Node(
                token=f"t{level}{i}",
                prior=rng.choice([0.1, 0.2, 0.2, 0.3, 0.5]),
                depth=node.depth + 1,
            )
            child.edge_visits = rng.randint(0, 10)
            child.edge_q = round(rng.random(), 2) if child.edge_visits else 0.0
            child.node_visits = child.edge_visits
            child.expanded = level > 1 and rng.random() > 0.2
            if child.expanded:
                grow(child, level - 1)
            node.children.append(child)

    grow(root, depth)
    return root
