"""Grid-based policy iteration, value iteration and look-ahead policy iteration
for deterministic discrete-time optimal control with undiscounted cost."""

from .backup import (
    EnumerationBudgetError,
    EvalOptions,
    GreedyOptions,
    PolicyEvaluation,
    brute_force_lookahead,
    evaluate_policy,
    greedy_control,
    greedy_policy,
    lookahead_backup,
    one_step_q,
    vi_backup,
)
from .bench import (
    BENCHMARKS,
    Benchmark,
    LqrSpec,
    dare_oracle,
    deadbeat_exact_values,
    lqr_pi_recursion_oracle,
    lqr_vi_recursion_oracle,
    make_benchmark,
)
from .grid import (
    BoxGrid,
    FieldFormatError,
    PolicyField,
    ScalarField,
    clamp_to_domain,
    interpolate,
    interpolate_policy,
    load_field,
    save_field,
)
from .model import (
    ConfigError,
    ControlSet,
    ControlSystem,
    ModelError,
    ProblemSpec,
    StageCost,
    ValidationReport,
    validate_problem,
)
from .solvers import (
    InadmissibleStartError,
    RunTrace,
    SolveOptions,
    SolveResult,
    run_mlpi,
    run_pi,
    run_vi,
)
from .verify import (
    Certificate,
    PreconditionError,
    Tolerances,
    bellman_residual,
    certify_admissible,
    check_dominance,
    check_lemma1,
    check_monotone,
    check_uniqueness,
)

__version__ = "0.1.0"
