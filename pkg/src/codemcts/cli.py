"""Command-line entry point.

Subcommands: search (one problem), sweep (dataset x config grid), ablation
(best-path prompt injection), validate (dataset schema check).

Configuration precedence: CLI flag > --config file (JSON, keys mirror flag
names with underscores) > built-in defaults. The built-in sampling
defaults are temperature 0.7, top_p 0.8, repetition_penalty 1.05, k 5.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import bench
from .mcts import SearchConfig, run_search
from .policy import PolicyError, RemotePolicy, SamplingParams, ToyPolicy
from .problems import DatasetError, load_problems
from .reward import EvalCache, partial_reward
from .sandbox import SandboxUnavailable, set_max_concurrent_runs

EXIT_SOLVED = 0
EXIT_UNSOLVED = 1
EXIT_CONFIG = 2

DEFAULTS = {
    "max_rollouts": 16,
    "k": 5,
    "c_base": 10.0,
    "c": 4.0,
    "d_max": 512,
    "temperature": 0.7,
    "top_p": 0.8,
    "repetition_penalty": 1.05,
    "max_tokens": 512,
    "prompting": "direct",
    "reward": "hard",
    "early_stop": True,
    "workers": 1,
    "seed": 0,
    "model": "default",
    "timeout": 60.0,
    "dataset": None,
    "policy_url": None,
    "policy_toy": None,
    "problem_id": None,
    "out": None,
    "samples": 10,
}


class CliError(Exception):
    """Configuration or infrastructure problem; maps to exit code 2."""


def _add_common_flags(p: argparse.ArgumentParser, multi: bool = False) -> None:
    p.add_argument("--config", metavar="FILE", help="JSON config file; keys mirror flag names")
    p.add_argument("--dataset", metavar="FILE", help="problem dataset (JSONL)")
    p.add_argument("--policy-url", help="OpenAI-compatible completions server base URL")
    p.add_argument("--policy-toy", metavar="FILE", help="table-driven toy policy JSON")
    p.add_argument("--model", help="model name sent to the remote server")
    p.add_argument("--timeout", type=float, help="remote request timeout in seconds")
    if multi:
        p.add_argument("--max-rollouts", help="comma-separated list, e.g. 4,8,16")
        p.add_argument("--prompting", help="comma-separated subset of direct,cot")
    else:
        p.add_argument("--max-rollouts", type=int)
        p.add_argument("--prompting", choices=("direct", "cot"))
    p.add_argument("--k", type=int, help="children per expansion")
    p.add_argument("--c-base", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--d-max", type=int, help="max tokens per simulated completion")
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", type=float)
    p.add_argument("--repetition-penalty", type=float)
    p.add_argument("--max-tokens", type=int, help="sampling cap per completion")
    p.add_argument("--reward", choices=("hard", "partial"))
    p.add_argument("--early-stop", action=argparse.BooleanOptionalAction, default=None,
                   help="halt once a candidate passes all public tests")
    p.add_argument("--workers", type=int, help="parallelism (simulations or problems)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR", help="output directory")


def _resolve(args: argparse.Namespace) -> dict:
    merged = dict(DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            loaded = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read config file {config_path}: {exc}")
        if not isinstance(loaded, dict):
            raise CliError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key, value in vars(args).items():
        if key in ("config", "func", "resume") or value is None:
            continue
        merged[key] = value
    return merged


def _make_policy(merged: dict):
    if merged.get("policy_toy"):
        try:
            return ToyPolicy.from_file(merged["policy_toy"])
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot load toy policy: {exc}")
    if merged.get("policy_url"):
        return RemotePolicy(
            base_url=merged["policy_url"],
            model=merged["model"],
            timeout=merged["timeout"],
        )
    raise CliError("no policy configured: pass --policy-toy FILE or --policy-url URL")


def _preflight(policy) -> None:
    """Cheap reachability probe so misconfiguration fails fast."""
    if isinstance(policy, RemotePolicy):
        try:
            policy.top_k("ping", [], 1)
        except PolicyError as exc:
            raise CliError(f"policy server check failed ({exc.kind}): {exc}")


def _make_config(merged: dict, max_rollouts: int | None = None) -> SearchConfig:
    sampling = SamplingParams(
        temperature=merged["temperature"],
        top_p=merged["top_p"],
        repetition_penalty=merged["repetition_penalty"],
        max_tokens=merged["max_tokens"],
    )
    try:
        return SearchConfig(
            max_rollouts=max_rollouts if max_rollouts is not None else merged["max_rollouts"],
            k=merged["k"],
            c_base=merged["c_base"],
            c=merged["c"],
            d_max=merged["d_max"],
            sampling=sampling,
            reward_mode=merged["reward"],
            early_stop=merged["early_stop"],
            seed=merged["seed"],
        )
    except ValueError as exc:
        raise CliError(str(exc))


def _load_dataset(merged: dict):
    if not merged.get("dataset"):
        raise CliError("no dataset given: pass --dataset FILE")
    try:
        return load_problems(merged["dataset"], strict=True)
    except OSError as exc:
        raise CliError(f"cannot read dataset: {exc}")
    except DatasetError as exc:
        raise CliError(f"invalid dataset: {exc}")


def cmd_search(args: argparse.Namespace) -> int:
    merged = _resolve(args)
    problems = _load_dataset(merged)
    if merged.get("problem_id"):
        matches = [p for p in problems if p.id == merged["problem_id"]]
        if not matches:
            raise CliError(f"problem id {merged['problem_id']!r} not in dataset")
        problem = matches[0]
    elif len(problems) == 1:
        problem = problems[0]
    else:
        raise CliError("dataset has several problems; pick one with --problem-id")

    policy = _make_policy(merged)
    _preflight(policy)
    config = _make_config(merged)
    if merged["workers"] > 1:
        config = replace(config, sim_workers=merged["workers"])
        set_max_concurrent_runs(merged["workers"])

    result = run_search(problem, policy, merged["prompting"], config)

    solved = False
    if result.best is not None and result.best.program is not None:
        full = EvalCache().evaluate(
            result.best.program,
            problem.all_tests,
            problem.io_mode,
            problem.limits,
            problem.call_spec,
        )
        solved = partial_reward(full) == 1.0

    payload = {
        "problem_id": problem.id,
        "solved": solved,
        "generations_used": result.generations_used,
        "rollouts_used": result.rollouts_used,
        "best_path": result.best_path,
        "best": None,
        "config": {"config": config.to_dict(), "prompting": merged["prompting"]},
    }
    if result.best is not None:
        payload["best"] = {
            "program": result.best.program,
            "public_reward": result.best.reward,
            "rollout_index": result.best.rollout_index,
            "generation_index": result.best.generation_index,
        }
    print(json.dumps(payload, indent=2, sort_keys=True))
    print(
        f"search {problem.id}: {'solved' if solved else 'unsolved'}, "
        f"{result.generations_used} generations over {result.rollouts_used} rollouts",
        file=sys.stderr,
    )
    if merged.get("out"):
        out = Path(merged["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / f"search_{problem.id}.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return EXIT_SOLVED if solved else EXIT_UNSOLVED


def _parse_multi(raw, cast, what: str) -> list:
    if raw is None:
        return [None]
    values = []
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(cast(part))
        except ValueError:
            raise CliError(f"bad {what} value: {part!r}")
    if not values:
        raise CliError(f"empty {what} list")
    return values


def cmd_sweep(args: argparse.Namespace) -> int:
    merged = _resolve(args)
    problems = _load_dataset(merged)
    policy = _make_policy(merged)
    _preflight(policy)

    rollout_values = _parse_multi(merged.get("max_rollouts"), int, "--max-rollouts")
    mode_values = _parse_multi(merged.get("prompting"), str, "--prompting")
    for mode in mode_values:
        if mode not in ("direct", "cot"):
            raise CliError(f"bad prompting mode: {mode!r}")

    grid = [
        (_make_config(merged, max_rollouts=r), mode)
        for r in rollout_values
        for mode in mode_values
    ]

    out_dir = Path(merged["out"] or "sweep-out")
    journal_path = out_dir / "journal.jsonl"
    if journal_path.exists() and not args.resume:
        raise CliError(
            f"journal {journal_path} already exists; pass --resume to continue it "
            "or choose a fresh --out directory"
        )

    reports = bench.run_experiment(
        problems,
        policy,
        grid,
        journal_path=journal_path,
        base_seed=merged["seed"],
        workers=merged["workers"],
    )
    for report in reports:
        paths = bench.write_report_files(report, out_dir)
        print(bench.render_text(report))
        print(f"wrote {paths['json']}", file=sys.stderr)
    return 0


def cmd_ablation(args: argparse.Namespace) -> int:
    merged = _resolve(args)
    problems = _load_dataset(merged)
    policy = _make_policy(merged)
    _preflight(policy)

    prompting = merged["prompting"]
    if isinstance(prompting, str) and "," in prompting:
        raise CliError("ablation takes a single --prompting mode")
    if merged["samples"] < 1:
        raise CliError("--samples must be >= 1")
    report = bench.best_path_ablation(
        problems,
        policy,
        _make_config(merged),
        samples_per_problem=merged["samples"],
        prompting=prompting,
        base_seed=merged["seed"],
    )
    out_dir = Path(merged["out"] or "ablation-out")
    paths = bench.write_ablation_files(report, out_dir)
    print(bench.render_ablation_text(report))
    print(f"wrote {paths['json']}", file=sys.stderr)
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    path = args.dataset
    if not path:
        raise CliError("pass --dataset FILE")
    try:
        problems = load_problems(path, strict=True)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DatasetError as exc:
        print(f"invalid dataset: {exc}", file=sys.stderr)
        return 1
    print(f"OK: {len(problems)} problems")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="codemcts",
        description="Token-level MCTS for competition-level code generation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="search one problem")
    _add_common_flags(p_search)
    p_search.add_argument("--problem-id", help="problem to search (default: sole problem)")
    p_search.set_defaults(func=cmd_search)

    p_sweep = sub.add_parser("sweep", help="run a config grid over a dataset")
    _add_common_flags(p_sweep, multi=True)
    p_sweep.add_argument("--resume", action="store_true",
                         help="continue from an existing journal")
    p_sweep.set_defaults(func=cmd_sweep)

    p_abl = sub.add_parser("ablation", help="best-path prompt-injection ablation")
    _add_common_flags(p_abl)
    p_abl.add_argument("--samples", type=int, help="samples per problem per arm")
    p_abl.set_defaults(func=cmd_ablation)

    p_val = sub.add_parser("validate", help="check a dataset file")
    p_val.add_argument("--dataset", metavar="FILE")
    p_val.set_defaults(func=cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SandboxUnavailable as exc:
        print(f"sandbox unavailable: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PolicyError as exc:
        print(f"policy failure ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
