"""Token-level Monte Carlo tree search over candidate programs.

Each tree node is one token appended to the prefix so far. A rollout runs
the classic four phases: select a leaf by P-UCB, expand it with the
policy's top-k next tokens (raw model probabilities as priors), simulate a
full program from EVERY new child, and backpropagate each simulation's
reward along its path. One simulation = one "generation", the efficiency
unit reported by the benchmark layer; a rollout therefore costs up to k
generations.

Search rewards come from the PUBLIC tests only. Private tests never enter
this module.
"""

from __future__ import annotations

import json
import math
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

from .policy import Policy, PolicyError, SamplingParams
from .problems import Problem
from .prompting import build_prompt, extract_code
from .reward import Candidate, EvalCache, reward_for_report

TERMINATION_TERMINAL = "terminal"
TERMINATION_DEPTH = "depth-limit"
TERMINATION_STOP = "stop"


@dataclass
class Node:
    """One token of the search tree. Edge statistics (visits, mean reward,
    prior) describe the edge from the parent into this node; they are
    meaningless at the root."""

    token: str = ""
    prior: float = 1.0
    edge_visits: int = 0
    edge_q: float = 0.0
    node_visits: int = 0
    children: list["Node"] = field(default_factory=list)
    expanded: bool = False
    terminal: bool = False
    depth: int = 0


@dataclass(frozen=True)
class SearchConfig:
    max_rollouts: int = 16
    k: int = 5
    c_base: float = 10.0
    c: float = 4.0
    d_max: int = 512
    sampling: SamplingParams = field(default_factory=SamplingParams)
    reward_mode: str = "hard"
    early_stop: bool = True
    seed: int | None = None
    renormalize_priors: bool = False
    retry_attempts: int = 3
    retry_backoff: float = 0.5
    sim_workers: int = 1
    eval_workers: int = 1

    def __post_init__(self):
        if self.max_rollouts < 1:
            raise ValueError("max_rollouts must be >= 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.d_max < 1:
            raise ValueError("d_max must be >= 1")
        if self.c_base <= 0:
            raise ValueError("c_base must be positive")
        if self.reward_mode not in ("hard", "partial"):
            raise ValueError("reward_mode must be 'hard' or 'partial'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchResult:
    best: Candidate | None
    all_candidates: list[Candidate]
    rollouts_used: int
    generations_used: int
    best_path: list[str]
    root: Node
    prompt_text: str

    def trace_json(self) -> str:
        """Canonical record of everything the search observed and decided.
        Two runs are equivalent iff these bytes match."""
        def cand(c: Candidate) -> dict:
            return {
                "completion_text": c.completion_text,
                "program": c.program,
                "reward": c.reward,
                "rollout_index": c.rollout_index,
                "generation_index": c.generation_index,
                "statuses": [t.status for t in c.report.per_test] if c.report else None,
            }

        return json.dumps(
            {
                "prompt": self.prompt_text,
                "candidates": [cand(c) for c in self.all_candidates],
                "rollouts_used": self.rollouts_used,
                "generations_used": self.generations_used,
                "best_path": self.best_path,
                "best_generation_index": self.best.generation_index if self.best else None,
            },
            sort_keys=True,
        )


@dataclass
class SimulationOutcome:
    text: str  # prefix plus continuation; end-of-sequence markers dropped
    termination: str  # terminal | depth-limit | stop


def puct_score(
    q: float,
    prior: float,
    parent_visits: int,
    edge_visits: int,
    c_base: float = 10.0,
    c: float = 4.0,
) -> float:
    """Q + beta * p * sqrt(ln N(s)) / (1 + N(s,a)), with
    beta = ln((N(s) + c_base + 1)/c_base) + c. ln N(s) is clamped to 0 for
    N(s) <= 1 so the exploration term vanishes at unvisited parents instead
    of going undefined."""
    beta = math.log((parent_visits + c_base + 1.0) / c_base) + c
    explore = math.sqrt(math.log(parent_visits)) if parent_visits > 1 else 0.0
    return q + beta * prior * explore / (1.0 + edge_visits)


def select_leaf(root: Node, c_base: float = 10.0, c: float = 4.0) -> list[Node]:
    """Walk from the root, at each expanded node following the child with
    the highest P-UCB score (ties: higher prior, then earlier child), until
    reaching a node that is unexpanded or terminal. Returns the full path
    including the root."""
    path = [root]
    node = root
    while node.expanded and not node.terminal and node.children:
        best = None
        best_key = None
        for child in node.children:
            score = puct_score(
                child.edge_q, child.prior, node.node_visits, child.edge_visits, c_base, c
            )
            key = (score, child.prior)
            if best is None or key > best_key:
                best, best_key = child, key
        path.append(best)
        node = best
    return path


def expand(
    node: Node,
    policy: Policy,
    prompt: str,
    prefix: list[str],
    k: int,
    d_max: int,
    renormalize: bool = False,
) -> list[Node]:
    """Attach up to k children for the policy's top-k next tokens, priors =
    the model's own probabilities (not renormalized unless asked), all
    statistics zero, ordered by descending prior."""
    if node.expanded:
        raise ValueError("node already expanded")
    if node.terminal:
        raise ValueError("cannot expand a terminal node")
    entries = policy.top_k(prompt, prefix, k)

    seen: set[str] = set()
    pairs: list[tuple[str, float]] = []
    for token, prob in entries:
        if token in seen or not (prob > 0.0):
            continue
        seen.add(token)
        pairs.append((token, min(prob, 1.0)))
    pairs.sort(key=lambda kv: -kv[1])  # stable: preserves policy order on ties
    pairs = pairs[:k]
    if renormalize and pairs:
        total = sum(p for _, p in pairs)
        pairs = [(t, p / total) for t, p in pairs]

    for token, prob in pairs:
        child = Node(token=token, prior=prob, depth=node.depth + 1)
        child.terminal = (
            policy.eos_token is not None and token == policy.eos_token
        ) or child.depth >= d_max
        node.children.append(child)
    node.expanded = True
    return node.children


def join_tokens(tokens: list[str], eos_token: str | None = None) -> str:
    """Concatenate tokens into text, dropping the end-of-sequence marker."""
    return "".join(t for t in tokens if eos_token is None or t != eos_token)


def simulate(
    prefix: list[str],
    policy: Policy,
    sampling: SamplingParams,
    d_max: int,
    prompt: str = "",
    rng: random.Random | None = None,
) -> SimulationOutcome:
    """Sample one full continuation of the prefix, bounded so the total
    token depth stays within d_max."""
    eos = policy.eos_token
    if prefix and eos is not None and prefix[-1] == eos:
        return SimulationOutcome(join_tokens(prefix, eos), TERMINATION_TERMINAL)
    budget = d_max - len(prefix)
    if budget <= 0:
        return SimulationOutcome(join_tokens(prefix, eos), TERMINATION_DEPTH)
    params = replace(sampling, max_tokens=budget)
    completion = policy.sample(prompt, list(prefix), params, rng)
    termination = {
        "eos": TERMINATION_TERMINAL,
        "length": TERMINATION_DEPTH,
    }.get(completion.finish_reason, TERMINATION_STOP)
    return SimulationOutcome(join_tokens(prefix, eos) + completion.text, termination)


def backpropagate(path: list[Node], reward: float) -> None:
    """Add one visit to every node on the path and fold the reward into the
    running mean of every non-root edge."""
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward must be in [0,1], got {reward}")
    for i, node in enumerate(path):
        node.node_visits += 1
        if i > 0:
            node.edge_visits += 1
            node.edge_q += (reward - node.edge_q) / node.edge_visits


def best_path(root: Node) -> list[str]:
    """Greedy max-Q descent from the root (ties: more visits, then higher
    prior, then earlier child), stopped at the first unexpanded or terminal
    node. Empty when the root was never expanded."""
    tokens: list[str] = []
    node = root
    while node.expanded and not node.terminal and node.children:
        best = None
        best_key = None
        for child in node.children:
            key = (child.edge_q, child.edge_visits, child.prior)
            if best is None or key > best_key:
                best, best_key = child, key
        tokens.append(best.token)
        node = best
    return tokens


def _with_retries(fn, attempts: int, backoff: float):
    for attempt in range(attempts):
        try:
            return fn()
        except PolicyError as exc:
            if not exc.retryable or attempt == attempts - 1:
                raise
            if backoff > 0:
                time.sleep(backoff * (2**attempt))


def run_search(
    problem: Problem,
    policy: Policy,
    prompting: str,
    config: SearchConfig,
    reward_fn=None,
) -> SearchResult:
    """Run the full search loop on one problem.

    reward_fn, when given, replaces the extract-and-execute reward pipeline
    with a callable (program_or_None, completion_text) -> reward in [0,1];
    the search logic is otherwise identical. Tests use this to score
    synthetic token spaces without a sandbox.
    """
    rendered = build_prompt(problem, prompting)
    prompt = rendered.text
    stops = tuple(config.sampling.stop_sequences)
    for stop in rendered.stop_sequences:
        if stop not in stops:
            stops = stops + (stop,)
    sampling = replace(config.sampling, stop_sequences=stops)

    rng = random.Random(config.seed)
    cache = EvalCache()
    root = Node()
    candidates: list[Candidate] = []
    generations = 0
    rollouts = 0
    solved = False

    def judge(completion_text: str):
        program = extract_code(completion_text)
        if reward_fn is not None:
            return program, None, float(reward_fn(program, completion_text))
        if program is None:
            return None, None, 0.0  # nothing runnable in the completion
        report = cache.evaluate(
            program,
            problem.public_tests,
            problem.io_mode,
            problem.limits,
            problem.call_spec,
            config.eval_workers,
        )
        return program, report, reward_for_report(report, config.reward_mode)

    for rollout_index in range(config.max_rollouts):
        rollouts += 1
        path = select_leaf(root, config.c_base, config.c)
        leaf = path[-1]
        prefix = [n.token for n in path[1:]]

        if leaf.terminal:
            sims = [(path, prefix)]
        else:
            try:
                children = _with_retries(
                    lambda: expand(
                        leaf, policy, prompt, prefix, config.k, config.d_max,
                        config.renormalize_priors,
                    ),
                    config.retry_attempts,
                    config.retry_backoff,
                )
            except PolicyError:
                continue  # rollout consumed, zero generations
            if children:
                sims = [(path + [child], prefix + [child.token]) for child in children]
            else:
                # Policy proposed nothing: dead end, judge the prefix itself.
                leaf.terminal = True
                sims = [(path, prefix)]

        # Seeds drawn up front in child order so an error-free run is
        # byte-identical whether simulations run serially or in parallel.
        seeds = [rng.randrange(2**63) for _ in sims]

        def run_sim(args):
            (sim_path, sim_prefix), seed = args
            return _with_retries(
                lambda: simulate(
                    sim_prefix, policy, sampling, config.d_max,
                    prompt=prompt, rng=random.Random(seed),
                ),
                config.retry_attempts,
                config.retry_backoff,
            )

        jobs = list(zip(sims, seeds))
        if config.sim_workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=config.sim_workers) as pool:
                outcomes = []
                for future in [pool.submit(run_sim, job) for job in jobs]:
                    try:
                        outcomes.append(future.result())
                    except PolicyError as exc:
                        outcomes.append(exc)
        else:
            outcomes = []
            for job in jobs:
                try:
                    outcomes.append(run_sim(job))
                except PolicyError as exc:
                    outcomes.append(exc)

        # Backpropagation is applied sequentially in child order regardless
        # of how the simulations ran. A failed simulation aborts the rest
        # of the rollout; its successors are not counted.
        for (sim_path, _), outcome in zip(sims, outcomes):
            if isinstance(outcome, PolicyError):
                break
            generations += 1
            program, report, reward = judge(outcome.text)
            candidates.append(
                Candidate(
                    completion_text=outcome.text,
                    program=program,
                    report=report,
                    reward=reward,
                    rollout_index=rollout_index,
                    generation_index=generations - 1,
                )
            )
            backpropagate(sim_path, reward)
            if reward >= 1.0:
                solved = True

        if config.early_stop and solved:
            break

    best = None
    for cand in candidates:
        if best is None or cand.reward > best.reward:
            best = cand  # strict > keeps the earliest on ties

    return SearchResult(
        best=best,
        all_candidates=candidates,
        rollouts_used=rollouts,
        generations_used=generations,
        best_path=best_path(root),
        root=root,
        prompt_text=prompt,
    )
