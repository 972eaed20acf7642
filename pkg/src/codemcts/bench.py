"""Experiment orchestration and metrics.

Runs search sweeps over a problem dataset and a config grid, judges final
solutions on the full test suite (public + private), computes pass rate,
mean generations, and pass@k, and runs the best-path prompt-injection
ablation. Long sweeps journal completed cells to disk and resume where
they left off.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .mcts import SearchConfig, join_tokens, run_search
from .policy import Policy, PolicyError
from .problems import Problem, load_problems  # noqa: F401  (re-export)
from .prompting import build_prompt, extract_code
from .reward import EvalCache, SandboxUnavailable, partial_reward

ABLATION_KS = (1, 5, 10, 50, 100)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased estimator 1 - C(n-c, k)/C(n, k): the chance that at least
    one of k samples drawn from n (c of them correct) is correct. Product
    form avoids huge binomials."""
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if c == 0:
        return 0.0
    if n - c < k:
        return 1.0
    prob_all_wrong = 1.0
    for i in range(n - c + 1, n + 1):
        prob_all_wrong *= (i - k) / i
    return 1.0 - prob_all_wrong


def derive_seed(*parts) -> int:
    """Stable seed from arbitrary labels; recorded in reports so any single
    search can be replayed."""
    payload = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big") & (2**63 - 1)


def config_hash(config: SearchConfig, prompting: str) -> str:
    """Cell identity for the journal. The seed field is excluded: the sweep
    overwrites it per problem, so it never distinguishes configurations."""
    fields = config.to_dict()
    fields.pop("seed", None)
    payload = json.dumps({"config": fields, "prompting": prompting}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


@dataclass
class ExperimentReport:
    per_problem: list[dict]
    pass_rate: float
    mean_generations: float
    config: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "pass_rate": self.pass_rate,
            "mean_generations": self.mean_generations,
            "per_problem": self.per_problem,
        }


class Journal:
    """Append-only JSONL of completed (problem, config) cells. Loading it
    back makes a sweep resumable and idempotent."""

    def __init__(self, path: str | Path):
        self.path = Path(path)

    def load(self) -> dict[tuple[str, str], dict]:
        done: dict[tuple[str, str], dict] = {}
        if not self.path.exists():
            return done
        with self.path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                done[(obj["problem_id"], obj["config_hash"])] = obj["record"]
        return done

    def append(self, problem_id: str, chash: str, record: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(
                {"problem_id": problem_id, "config_hash": chash, "record": record}
            ) + "\n")
            fh.flush()


def _solve_one(
    problem: Problem,
    policy: Policy,
    prompting: str,
    config: SearchConfig,
    seed: int,
    reward_fn=None,
) -> dict:
    cfg = replace(config, seed=seed)
    record = {
        "id": problem.id,
        "seed": seed,
        "solved": False,
        "generations": 0,
        "rollouts": 0,
        "best_public_reward": 0.0,
        "error": None,
    }
    try:
        result = run_search(problem, policy, prompting, cfg, reward_fn=reward_fn)
        record["generations"] = result.generations_used
        record["rollouts"] = result.rollouts_used
        if result.best is not None:
            record["best_public_reward"] = result.best.reward
            if reward_fn is not None:
                # Synthetic reward space: no private execution possible.
                record["solved"] = result.best.reward >= 1.0
            elif result.best.program is not None:
                full = EvalCache().evaluate(
                    result.best.program,
                    problem.all_tests,
                    problem.io_mode,
                    problem.limits,
                    problem.call_spec,
                )
                record["solved"] = partial_reward(full) == 1.0
    except (PolicyError, SandboxUnavailable) as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
    return record


def run_experiment(
    dataset: list[Problem],
    policy: Policy,
    grid: list[tuple[SearchConfig, str]],
    journal_path: str | Path | None = None,
    base_seed: int = 0,
    workers: int = 1,
    reward_fn=None,
) -> list[ExperimentReport]:
    """One report per grid point. A problem counts as solved iff the search's
    best program passes the FULL suite, private tests included. Completed
    cells found in the journal are not re-run."""
    if not grid:
        raise ValueError("config grid is empty")
    if not dataset:
        raise ValueError("dataset is empty")
    journal = Journal(journal_path) if journal_path else None
    done = journal.load() if journal else {}

    reports = []
    for config, prompting in grid:
        chash = config_hash(config, prompting)
        pending = [p for p in dataset if (p.id, chash) not in done]
        records: dict[str, dict] = {
            p.id: done[(p.id, chash)] for p in dataset if (p.id, chash) in done
        }

        def solve(problem: Problem) -> tuple[str, dict]:
            seed = derive_seed(base_seed, chash, problem.id)
            return problem.id, _solve_one(problem, policy, prompting, config, seed, reward_fn)

        if workers > 1 and len(pending) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = pool.map(solve, pending)
                for pid, record in results:  # journal writes stay on this thread
                    records[pid] = record
                    if journal:
                        journal.append(pid, chash, record)
        else:
            for problem in pending:
                pid, record = solve(problem)
                records[pid] = record
                if journal:
                    journal.append(pid, chash, record)

        per_problem = [records[p.id] for p in dataset]
        solved = sum(1 for r in per_problem if r["solved"])
        reports.append(
            ExperimentReport(
                per_problem=per_problem,
                pass_rate=solved / len(per_problem),
                mean_generations=sum(r["generations"] for r in per_problem) / len(per_problem),
                config={
                    "config": config.to_dict(),
                    "prompting": prompting,
                    "config_hash": chash,
                    "base_seed": base_seed,
                },
            )
        )
    return reports


@dataclass
class AblationReport:
    per_problem: list[dict]
    ks: list[int]
    aggregate: dict  # arm -> {k: mean pass@k}
    config: dict

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "ks": self.ks,
            "aggregate": self.aggregate,
            "per_problem": self.per_problem,
        }


def best_path_ablation(
    dataset: list[Problem],
    policy: Policy,
    base_config: SearchConfig,
    samples_per_problem: int,
    prompting: str = "direct",
    base_seed: int = 0,
) -> AblationReport:
    """For each problem: run the search once to harvest its best path, then
    draw plain samples twice over — continuing from the empty prefix and
    continuing from the best path — and estimate pass@k for both arms.

    Sample seeds depend only on (problem, sample index), so a problem whose
    best path came back empty produces byte-identical arms.
    """
    if samples_per_problem < 1:
        raise ValueError("samples_per_problem must be >= 1")
    ks = [k for k in ABLATION_KS if k <= samples_per_problem]
    per_problem = []
    cache = EvalCache()

    for problem in dataset:
        search_seed = derive_seed(base_seed, "ablation-search", problem.id)
        result = run_search(
            problem, policy, prompting, replace(base_config, seed=search_seed)
        )
        path_tokens = result.best_path
        # A best path may legitimately end at the end-of-sequence marker;
        # nothing can be sampled after it, so it stays out of the prefix.
        inject = list(path_tokens)
        while inject and inject[-1] == policy.eos_token:
            inject.pop()

        rendered = build_prompt(problem, prompting)
        stops = tuple(base_config.sampling.stop_sequences)
        for stop in rendered.stop_sequences:
            if stop not in stops:
                stops = stops + (stop,)
        sampling = replace(base_config.sampling, stop_sequences=stops)

        counts = {}
        for arm, prefix in (("original", []), ("with_best_path", inject)):
            correct_count = 0
            for i in range(samples_per_problem):
                rng = random.Random(derive_seed(base_seed, "ablation-sample", problem.id, i))
                completion = policy.sample(rendered.text, list(prefix), sampling, rng)
                text = join_tokens(prefix, policy.eos_token) + completion.text
                program = extract_code(text)
                if program is None:
                    continue
                report = cache.evaluate(
                    program,
                    problem.all_tests,
                    problem.io_mode,
                    problem.limits,
                    problem.call_spec,
                )
                if partial_reward(report) == 1.0:
                    correct_count += 1
            counts[arm] = correct_count

        per_problem.append(
            {
                "id": problem.id,
                "best_path": path_tokens,
                "n": samples_per_problem,
                "correct": counts,
                "pass_at_k": {
                    arm: {str(k): pass_at_k(samples_per_problem, counts[arm], k) for k in ks}
                    for arm in counts
                },
            }
        )

    aggregate = {
        arm: {
            str(k): sum(row["pass_at_k"][arm][str(k)] for row in per_problem) / len(per_problem)
            for k in ks
        }
        for arm in ("original", "with_best_path")
    }
    return AblationReport(
        per_problem=per_problem,
        ks=ks,
        aggregate=aggregate,
        config={
            "config": base_config.to_dict(),
            "prompting": prompting,
            "samples_per_problem": samples_per_problem,
            "base_seed": base_seed,
        },
    )


def _prompt_label(prompting: str) -> str:
    return "CoT" if prompting == "cot" else "direct"


def render_text(report: ExperimentReport) -> str:
    """Plain-text summary with rows named the way the result tables name
    them ("pass rate w/direct prompting" etc.)."""
    label = _prompt_label(report.config["prompting"])
    cfg = report.config["config"]
    lines = [
        f"config {report.config['config_hash']}  "
        f"(max_rollouts={cfg['max_rollouts']}, k={cfg['k']}, "
        f"reward={cfg['reward_mode']}, early_stop={cfg['early_stop']})",
        f"problems: {len(report.per_problem)}",
        f"pass rate w/{label} prompting: {report.pass_rate:.3f}",
        f"mean generations w/{label} prompting: {report.mean_generations:.3f}",
        "",
        f"{'problem':<24} {'solved':<7} {'gens':>5} {'rollouts':>8} {'best_pub_r':>10}",
    ]
    for row in report.per_problem:
        solved = "yes" if row["solved"] else "no"
        lines.append(
            f"{row['id']:<24} {solved:<7} {row['generations']:>5} "
            f"{row['rollouts']:>8} {row['best_public_reward']:>10.3f}"
            + (f"  ! {row['error']}" if row.get("error") else "")
        )
    return "\n".join(lines) + "\n"


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["id", "solved", "generations", "rollouts", "best_public_reward", "seed", "error"]
    )
    for row in report.per_problem:
        writer.writerow(
            [
                row["id"],
                int(row["solved"]),
                row["generations"],
                row["rollouts"],
                row["best_public_reward"],
                row["seed"],
                row.get("error") or "",
            ]
        )
    return buf.getvalue()


def write_report_files(report: ExperimentReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"report_{report.config['config_hash']}"
    paths = {
        "json": out / f"{stem}.json",
        "txt": out / f"{stem}.txt",
        "csv": out / f"{stem}.csv",
    }
    paths["json"].write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["txt"].write_text(render_text(report), encoding="utf-8")
    paths["csv"].write_text(render_csv(report), encoding="utf-8")
    return paths


def render_ablation_text(report: AblationReport) -> str:
    lines = [
        f"best-path ablation: {len(report.per_problem)} problems, "
        f"n={report.config['samples_per_problem']} samples/problem",
        "",
        f"{'arm':<16} " + " ".join(f"pass@{k:<4}" for k in report.ks),
    ]
    for arm in ("original", "with_best_path"):
        vals = " ".join(f"{report.aggregate[arm][str(k)]:<9.3f}" for k in report.ks)
        lines.append(f"{arm:<16} {vals}")
    return "\n".join(lines) + "\n"


def write_ablation_files(report: AblationReport, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "ablation.json", "txt": out / "ablation.txt"}
    paths["json"].write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    paths["txt"].write_text(render_ablation_text(report), encoding="utf-8")
    return paths
