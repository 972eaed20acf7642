"""Acceptance gate: one test per headline guarantee, with the tolerances
and budgets pinned alongside each check."""

import hashlib
import itertools
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction

import mpmath
import pytest

import codemcts.mcts as mcts_mod
from codemcts import (
    ExecutionReport,
    ResourceLimits,
    SearchConfig,
    TestCase,
    TestResult,
    ToyPolicy,
    evaluate,
    hard_reward,
    load_problems,
    partial_reward,
    pass_at_k,
    puct_score,
    run_search,
    sandbox,
)

from conftest import make_problem
from helpers import DATA, no_eos_policy, scan_for_sandbox_processes

mpmath.mp.dps = 50


# --- selection score fidelity ------------------------------------------------

def test_puct_numeric_fidelity_1000_random_inputs():
    """<= 1e-9 relative error against 50-digit arithmetic; < 1 s."""
    rng = random.Random(20240817)
    cases = [
        (
            rng.random(),
            rng.random(),
            rng.randint(0, 100_000),
            rng.randint(0, 10_000),
            rng.uniform(0.5, 100.0),
            rng.uniform(0.0, 20.0),
        )
        for _ in range(1000)
    ]
    start = time.monotonic()
    got = [puct_score(*case) for case in cases]
    elapsed = time.monotonic() - start

    for case, value in zip(cases, got):
        q, prior, parent, edge, c_base, c = case
        beta = mpmath.log((mpmath.mpf(parent) + c_base + 1) / c_base) + c
        explore = mpmath.sqrt(mpmath.log(parent)) if parent > 1 else mpmath.mpf(0)
        want = mpmath.mpf(q) + beta * mpmath.mpf(prior) * explore / (1 + edge)
        assert value == pytest.approx(float(want), rel=1e-9, abs=1e-12), case
    assert elapsed < 1.0, f"1000 evaluations took {elapsed:.3f}s"


# --- tree bookkeeping under load ----------------------------------------------

def test_bookkeeping_invariants_after_10000_rollouts(tiny_problem, monkeypatch):
    """Visit conservation exact and per-edge mean reward <= 1e-9 from an
    independent ledger, across a 10,000-rollout search; < 30 s."""
    ledger: dict[int, list[float]] = {}
    real_backprop = mcts_mod.backpropagate

    def recording_backprop(path, reward):
        for node in path[1:]:
            ledger.setdefault(id(node), []).append(reward)
        real_backprop(path, reward)

    monkeypatch.setattr(mcts_mod, "backpropagate", recording_backprop)

    def synthetic_reward(program, text):
        # Kept well under the exploration bonus so selection keeps widening
        # the tree instead of camping on one lucky terminal; never solves.
        digest = hashlib.sha256(text.encode()).digest()
        return int.from_bytes(digest[:4], "big") / 2**32 * 0.12

    policy = ToyPolicy(
        table={},
        default={"a": 1.0, "b": 1.0, "c": 1.0, "<eos>": 0.25},
    )
    config = SearchConfig(
        max_rollouts=10_000, k=3, d_max=6, seed=7, early_stop=False,
    )
    start = time.monotonic()
    result = run_search(tiny_problem, policy, "direct", config,
                        reward_fn=synthetic_reward)
    elapsed = time.monotonic() - start

    root = result.root
    assert result.rollouts_used == 10_000
    assert root.node_visits == result.generations_used
    assert root.node_visits == sum(c.edge_visits for c in root.children)

    checked = 0
    stack = [root]
    while stack:
        node = stack.pop()
        for child in node.children:
            rewards = ledger.get(id(child), [])
            assert child.edge_visits == len(rewards)
            if rewards:
                want = math.fsum(rewards) / len(rewards)
                assert abs(child.edge_q - want) <= 1e-9
            else:
                assert child.edge_q == 0.0
            if child.expanded:
                assert child.node_visits == sum(g.edge_visits for g in child.children) + 1
            checked += 1
            stack.append(child)

    assert checked > 1000  # the tree actually grew
    assert elapsed < 30.0, f"10,000 rollouts took {elapsed:.1f}s"


# --- search vs exhaustive enumeration ----------------------------------------

def test_oracle_equivalence_on_25_random_instances(tiny_problem):
    """On >= 25 random toy spaces (vocab <= 5, depth <= 6) the search's
    maximum reward equals brute-force enumeration's, every time; < 2 min."""
    start = time.monotonic()
    instances = 0
    for index in range(25):
        rng = random.Random(1000 + index)
        while True:
            vocab_size = rng.randint(2, 5)
            depth = rng.randint(2, 6)
            if vocab_size**depth <= 256:
                break
        letters = "abcde"[:vocab_size]

        # Random graded targets over token strings, all below 1.0.
        targets: dict[str, float] = {}
        for _ in range(rng.randint(3, 8)):
            length = rng.randint(1, depth)
            text = "".join(rng.choice(letters) for _ in range(length))
            targets[text] = rng.choice([0.1, 0.2, 0.3, 0.5, 0.7, 0.9])

        oracle_best = 0.0
        for length in range(0, depth + 1):
            for combo in itertools.product(letters, repeat=length):
                oracle_best = max(oracle_best, targets.get("".join(combo), 0.0))

        policy = ToyPolicy(
            table={}, default={**{ch: 1.0 for ch in letters}, "<eos>": 0.5},
        )
        # Exploration-heavy config: every expansion simulates each new child
        # once, and terminal children reproduce exactly their own string, so
        # expanding every internal node guarantees the whole space is judged.
        # A large c keeps a mid-value terminal from starving the subtree that
        # holds the true maximum on these tiny instances.
        expandable = sum(vocab_size**i for i in range(depth))  # letter nodes
        config = SearchConfig(
            max_rollouts=6 * expandable + 50,
            k=vocab_size + 1,  # every letter plus end-of-sequence
            d_max=depth,
            seed=index,
            early_stop=False,
            c=20.0,
        )
        result = run_search(
            tiny_problem, policy, "direct", config,
            reward_fn=lambda prog, text, t=targets: t.get(text, 0.0),
        )
        search_best = result.best.reward if result.best else 0.0
        assert search_best == oracle_best, (
            f"instance {index}: search {search_best} != oracle {oracle_best} "
            f"(vocab {vocab_size}, depth {depth}, targets {targets})"
        )
        instances += 1

    elapsed = time.monotonic() - start
    assert instances >= 25
    assert elapsed < 120.0, f"oracle sweep took {elapsed:.1f}s"


# --- generation accounting -----------------------------------------------------

def test_generation_accounting_80_exact_and_early_stop_below(tiny_problem):
    """k=5 x 16 rollouts with early stop off is exactly 80 generations;
    early stop on a solvable instance lands below 80."""
    config = SearchConfig(max_rollouts=16, k=5, d_max=64, seed=0, early_stop=False)
    result = run_search(tiny_problem, no_eos_policy(), "direct", config,
                        reward_fn=lambda prog, text: 0.0)
    assert result.rollouts_used == 16
    assert result.generations_used == 80

    solvable = ToyPolicy(
        table={"": {ch: 0.19 for ch in "abcde"}},
        default={"<eos>": 1.0},
    )
    config_stop = SearchConfig(max_rollouts=16, k=5, d_max=64, seed=0, early_stop=True)
    stopped = run_search(tiny_problem, solvable, "direct", config_stop,
                         reward_fn=lambda prog, text: 1.0 if text == "a" else 0.0)
    assert stopped.best.reward == 1.0
    assert stopped.generations_used < 80


# --- reward semantics ----------------------------------------------------------

def test_reward_semantics_fixtures_and_ordering():
    """3/4 passing -> partial 0.75 and hard 0; all passing -> both 1.0;
    hard <= partial over 1,000 random reports."""
    def report(statuses):
        return ExecutionReport(per_test=[TestResult(s, "", "", 1) for s in statuses])

    three_of_four = report(["pass", "pass", "pass", "wrong_answer"])
    assert partial_reward(three_of_four) == 0.75
    assert hard_reward(three_of_four) == 0.0

    clean = report(["pass", "pass"])
    assert hard_reward(clean) == partial_reward(clean) == 1.0

    statuses = ["pass", "wrong_answer", "runtime_error", "timeout", "memory"]
    rng = random.Random(99)
    for _ in range(1000):
        rep = report([rng.choice(statuses) for _ in range(rng.randint(1, 20))])
        hard = hard_reward(rep)
        partial = partial_reward(rep)
        assert hard <= partial
        assert hard in (0.0, 1.0)
        assert (hard == 1.0) == (partial == 1.0)


# --- pass@k estimator ----------------------------------------------------------

def test_pass_at_k_matches_brute_force_subset_averaging():
    """Exact agreement with subset enumeration for every (n <= 12, c <= n,
    k <= n), plus monotonicity in k, c, and n."""
    for n in range(1, 13):
        for c in range(0, n + 1):
            correct_positions = set(range(c))
            for k in range(1, n + 1):
                hits = 0
                total = 0
                for subset in itertools.combinations(range(n), k):
                    total += 1
                    if correct_positions.intersection(subset):
                        hits += 1
                want = Fraction(hits, total)
                got = pass_at_k(n, c, k)
                assert abs(got - float(want)) <= 1e-12, (n, c, k)

    for n in (5, 9, 12):
        for c in range(0, n + 1):
            values = [pass_at_k(n, c, k) for k in range(1, n + 1)]
            assert values == sorted(values)  # more attempts never hurt
        for k in (1, 3):
            values = [pass_at_k(n, c, k) for c in range(0, n + 1)]
            assert values == sorted(values)  # more correct never hurts
    # Fixed (c, k): a larger pool of attempts dilutes the correct ones.
    dilution = [pass_at_k(n, 2, 2) for n in range(3, 13)]
    assert dilution == sorted(dilution, reverse=True)


# --- sandbox safety ------------------------------------------------------------

def test_sandbox_kills_infinite_loops_100_of_100():
    """Every one of 100 infinite-loop runs is reaped within limit + 500 ms
    and leaves no orphan processes behind."""
    limit = 0.5
    limits = ResourceLimits(wall_seconds=limit, memory_mb=128)
    sandbox.set_max_concurrent_runs(4)

    def trial(i):
        out = sandbox.run(f"n = {i}\nwhile True: pass", limits=limits)
        return out

    try:
        with ThreadPoolExecutor(max_workers=4) as pool:
            outcomes = list(pool.map(trial, range(100)))
    finally:
        sandbox.set_max_concurrent_runs(None)

    assert len(outcomes) == 100
    for out in outcomes:
        assert out.status == "timeout"
        assert out.wall_ms <= (limit + 0.5) * 1000, f"reaped after {out.wall_ms}ms"
    assert scan_for_sandbox_processes() == []


# --- reference solutions through the real pipeline -----------------------------

def test_reference_solutions_pass_their_examples():
    """Both bundled editorial solutions clear every published example via
    the full judge: [6, 10, 7] / [9, 9, 9] / [-1] and 9 / -1."""
    problems = {p.id: p for p in load_problems(DATA / "reference_problems.jsonl")}

    abc = problems["atcoder-abc322-e"]
    program = (DATA / "solutions" / "abc322e.py").read_text()
    report = evaluate(program, abc.public_tests, io_mode=abc.io_mode, limits=abc.limits)
    assert [t.status for t in report.per_test] == ["pass", "pass"]
    assert report.per_test[0].stdout.strip() == "9"
    assert report.per_test[1].stdout.strip() == "-1"

    lc = problems["leetcode-2839"]
    program = (DATA / "solutions" / "lc2839_stdio.py").read_text()
    report = evaluate(program, lc.public_tests, io_mode=lc.io_mode, limits=lc.limits)
    assert [t.status for t in report.per_test] == ["pass", "pass", "pass"]
    assert report.per_test[0].stdout.strip() == "[6, 10, 7]"
    assert report.per_test[1].stdout.strip() == "[9, 9, 9]"
    assert report.per_test[2].stdout.strip() == "[-1]"


# --- information hiding ---------------------------------------------------------

def test_private_tests_never_reach_the_search():
    """Traces are byte-identical whether private tests are present,
    shuffled and duplicated, or removed."""
    policy = ToyPolicy.from_file(DATA / "toy_policy.json")
    config = SearchConfig(max_rollouts=4, k=3, d_max=4, seed=123, early_stop=False)

    private_variants = [
        [("", "a"), ("", "b")],
        [("", "b"), ("", "a"), ("", "zzz")],
        [],
    ]
    traces = []
    for variant in private_variants:
        problem = make_problem(pid="hide", expected="a",
                               private=tuple(e for _, e in variant))
        result = run_search(problem, policy, "direct", config)
        traces.append(result.trace_json())

    assert traces[0] == traces[1] == traces[2]
