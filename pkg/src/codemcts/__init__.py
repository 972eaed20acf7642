"""Token-level Monte Carlo tree search for competition-level code generation."""

from .bench import (
    AblationReport,
    ExperimentReport,
    best_path_ablation,
    config_hash,
    derive_seed,
    pass_at_k,
    run_experiment,
)
from .mcts import (
    Node,
    SearchConfig,
    SearchResult,
    SimulationOutcome,
    backpropagate,
    best_path,
    expand,
    join_tokens,
    puct_score,
    run_search,
    select_leaf,
    simulate,
)
from .policy import (
    Completion,
    Policy,
    PolicyError,
    RemotePolicy,
    SamplingParams,
    ToyPolicy,
)
from .problems import (
    CallSpec,
    DatasetError,
    Problem,
    ResourceLimits,
    TestCase,
    load_problems,
)
from .prompting import (
    PROMPT_MODES,
    RenderedPrompt,
    build_prompt,
    extract_code,
    extract_plan,
)
from .reward import (
    Candidate,
    EvalCache,
    ExecutionReport,
    SandboxUnavailable,
    TestResult,
    correct,
    evaluate,
    hard_reward,
    partial_reward,
    reward_for_report,
)

__version__ = "0.1.0"
