"""
title: Factorial Inference - command line
version: 0.1.0
license: MIT

Subcommands:
  design   --k K [--format table|csv|json] [--output PATH]
  assign   --k K --n n1,...,nJ --seed S [--output PATH] [--pop pop.csv --observed data.csv]
  estimate --input data.csv [--cov ney|hw|he|all] [--alpha 0.05]
  simulate --pop pop.csv --n n1,...,nJ --reps R --seed S
  oracle   --pop pop.csv --n n1,...,nJ
  verify   --fuzz [--k-max 3] [--instances 1000] [--seed S] [--outcomes integer|uniform]
  verify   --input data.csv

Reports go to stdout as JSON (default) or an aligned table (--format table);
--json PATH also persists the JSON report. Exit codes: 0 success, 2 usage or
validation error, 3 check failure, 4 I/O error.
"""

import argparse
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Literal, Optional, Sequence

from pydantic import BaseModel, ValidationError, computed_field, model_validator

from factorial_inference import csv_io
from factorial_inference.assignment import Assignment, ObservedData, draw_assignment, observe
from factorial_inference.design import ModelMatrix, build_model_matrix, design_frame
from factorial_inference.estimators import (
    CONSERVATIVE_KINDS,
    CovarianceKind,
    EffectEstimate,
    confidence_intervals,
    estimate_ols,
    estimate_ri,
)
from factorial_inference.module_common import (
    CheckFailure,
    Config,
    ConsistencyError,
    DomainError,
    InputFileError,
    UsageError,
    configure_logging,
    get_logger,
)
from factorial_inference.module_reporting import (
    dump_json,
    format_discrepancy,
    render_checks,
    render_matrix,
    render_table,
    section,
    write_output,
)
from factorial_inference.verify import (
    COVARIANCE_TOLERANCE,
    POINT_TOLERANCE,
    EquivalenceCheck,
    EquivalenceReport,
    MonteCarloSimulator,
    OracleReport,
    SimulationReport,
    certify_observed,
    check_balanced_he,
    fingerprint,
    fuzz_suite,
    max_abs,
    run_oracle,
    simulate_randomization,
)

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CHECK_FAILURE = 3
EXIT_IO = 4

COVARIANCE_SELECTORS = {
    "ney": [CovarianceKind.NEYMANIAN],
    "hw": [CovarianceKind.HUBER_WHITE],
    "he": [CovarianceKind.HOMOSCEDASTIC],
    "all": [CovarianceKind.NEYMANIAN, CovarianceKind.HUBER_WHITE, CovarianceKind.HOMOSCEDASTIC],
}

Subcommand = Literal["design", "assign", "estimate", "simulate", "oracle", "verify"]


class RunConfig(BaseModel):
    subcommand: Subcommand
    k: Optional[int] = None
    n: Optional[list[int]] = None
    seed: Optional[int] = None
    alpha: float = 0.05
    reps: Optional[int] = None
    input: Optional[Path] = None
    pop: Optional[Path] = None
    observed: Optional[Path] = None
    json_path: Optional[Path] = None
    output: Optional[Path] = None
    cov: Literal["ney", "hw", "he", "all"] = "all"
    format: Optional[Literal["table", "csv", "json"]] = None
    fuzz: bool = False
    k_max: int = 3
    instances: int = 1000
    outcomes: Literal["integer", "uniform"] = "integer"
    debug: bool = False

    @property
    def covariance_kinds(self) -> list[CovarianceKind]:
        return COVARIANCE_SELECTORS[self.cov]

    @model_validator(mode="after")
    def check_subcommand_flags(self) -> "RunConfig":
        required = {
            "design": ["k"],
            "assign": ["k", "n", "seed"],
            "estimate": ["input"],
            "simulate": ["pop", "n", "reps", "seed"],
            "oracle": ["pop", "n"],
            "verify": [],
        }[self.subcommand]
        for name in required:
            if getattr(self, name) is None:
                raise ValueError(f"{self.subcommand} requires --{name.replace('_', '-')}")

        if self.k is not None and not 1 <= self.k <= Config.MAX_K:
            raise ValueError(f"--k must be in 1..{Config.MAX_K}, got {self.k}")
        if self.n is not None:
            if self.k is not None and len(self.n) != 1 << self.k:
                raise ValueError(f"n-vector length {len(self.n)} ≠ {1 << self.k}")
            if any(size < 1 for size in self.n):
                raise ValueError(f"n-vector entries must be positive, got {','.join(map(str, self.n))}")
        if self.seed is not None and not 0 <= self.seed < 1 << 64:
            raise ValueError(f"--seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.reps is not None and self.reps < 1:
            raise ValueError(f"--reps must be at least 1, got {self.reps}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"--alpha must lie strictly between 0 and 1, got {self.alpha}")

        if self.subcommand == "assign" and (self.pop is None) != (self.observed is None):
            raise ValueError("assign needs --pop and --observed together")

        if self.subcommand == "verify":
            if self.fuzz == (self.input is not None):
                raise ValueError("verify requires exactly one of --fuzz or --input")
            if self.fuzz and self.seed is None:
                self.seed = 0

        if self.format == "csv" and self.subcommand != "design":
            raise ValueError("--format csv is only available for design")
        if self.format is None:
            self.format = "table" if self.subcommand == "design" else "json"
        return self


class IntervalRecord(BaseModel):
    label: str
    point: float
    lower: float
    upper: float
    conservative: bool


class CovarianceRecord(BaseModel):
    kind: str
    conservative: bool
    matrix: list[list[float]]
    intervals: list[IntervalRecord]


class EstimateReport(BaseModel):
    k: int
    n_units: int
    group_sizes: list[int]
    labels: list[str]
    effects: list[float]
    alpha: float
    covariances: list[CovarianceRecord]
    checks: list[EquivalenceCheck]
    fingerprint: str
    normal_quantile: str = "scipy.stats.norm.ppf"

    @computed_field
    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def parse_n_vector(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed n-vector {text!r}; expected comma-separated integers")


def _build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="factorial-inference", description="Inference for 2^K factorial designs")
    subparsers = parser.add_subparsers(dest="subcommand", required=True, parser_class=_ArgumentParser)

    def add_common(sub: argparse.ArgumentParser, formats: Sequence[str] = ("table", "json")):
        if formats:
            sub.add_argument("--format", choices=list(formats))
        sub.add_argument("--debug", action="store_true", help="Display debugging messages on stderr")

    def add_report(sub: argparse.ArgumentParser):
        add_common(sub)
        sub.add_argument("--json", dest="json_path", type=Path, help="Also write the JSON report here")

    design = subparsers.add_parser("design", help="Print the model matrix H")
    design.add_argument("--k", type=int, required=True)
    design.add_argument("--output", type=Path)
    add_common(design, ("table", "csv", "json"))

    assign = subparsers.add_parser("assign", help="Draw a completely randomized assignment")
    assign.add_argument("--k", type=int, required=True)
    assign.add_argument("--n", type=parse_n_vector, required=True)
    assign.add_argument("--seed", type=int, required=True)
    assign.add_argument("--output", type=Path)
    assign.add_argument("--pop", type=Path, help="Potential outcomes to observe under the drawn assignment")
    assign.add_argument("--observed", type=Path, help="Write the observed data here (requires --pop)")
    add_common(assign, ())

    estimate = subparsers.add_parser("estimate", help="Estimate factorial effects from observed data")
    estimate.add_argument("--input", type=Path, required=True)
    estimate.add_argument("--cov", choices=list(COVARIANCE_SELECTORS), default="all")
    estimate.add_argument("--alpha", type=float, default=0.05)
    add_report(estimate)

    simulate = subparsers.add_parser("simulate", help="Monte Carlo randomization distribution")
    simulate.add_argument("--pop", type=Path, required=True)
    simulate.add_argument("--n", type=parse_n_vector, required=True)
    simulate.add_argument("--reps", type=int, default=MonteCarloSimulator.Valves().REPS)
    simulate.add_argument("--seed", type=int, required=True)
    add_report(simulate)

    oracle = subparsers.add_parser("oracle", help="Exact randomization distribution by enumeration")
    oracle.add_argument("--pop", type=Path, required=True)
    oracle.add_argument("--n", type=parse_n_vector, required=True)
    add_report(oracle)

    verify = subparsers.add_parser("verify", help="Certify the estimator equivalences")
    verify.add_argument("--fuzz", action="store_true")
    verify.add_argument("--input", type=Path)
    verify.add_argument("--k-max", type=int, default=3)
    verify.add_argument("--instances", type=int, default=1000)
    verify.add_argument("--seed", type=int)
    verify.add_argument("--outcomes", choices=["integer", "uniform"], default="integer")
    add_report(verify)

    return parser


def parse_args(argv: Sequence[str]) -> RunConfig:
    namespace = _build_parser().parse_args(list(argv))
    values = {key: value for key, value in vars(namespace).items() if value is not None}
    try:
        return RunConfig(**values)
    except ValidationError as e:
        error = e.errors()[0]
        cause = error.get("ctx", {}).get("error")
        message = str(cause) if cause is not None else f"--{'.'.join(map(str, error['loc']))}: {error['msg']}"
        raise UsageError(message) from e


def _estimate_for(obs: ObservedData, kind: CovarianceKind) -> EffectEstimate:
    if kind == CovarianceKind.NEYMANIAN:
        return estimate_ri(obs)
    return estimate_ols(obs, kind)


def build_estimate_report(obs: ObservedData, kinds: Sequence[CovarianceKind], alpha: float) -> EstimateReport:
    m = build_model_matrix(obs.k)
    estimates = {kind: _estimate_for(obs, kind) for kind in kinds}

    checks: list[EquivalenceCheck] = []
    scale = max(1.0, max_abs(obs.outcomes))
    if CovarianceKind.NEYMANIAN in estimates and CovarianceKind.HUBER_WHITE in estimates:
        neymanian = estimates[CovarianceKind.NEYMANIAN]
        huber_white = estimates[CovarianceKind.HUBER_WHITE]
        checks.append(
            EquivalenceCheck.evaluate(
                "point_equivalence", max_abs(neymanian.effects - huber_white.effects), POINT_TOLERANCE * scale
            )
        )
        checks.append(
            EquivalenceCheck.evaluate(
                "covariance_equivalence",
                max_abs(neymanian.covariance - huber_white.covariance),
                COVARIANCE_TOLERANCE * scale**2,
            )
        )
    if CovarianceKind.HOMOSCEDASTIC in estimates and CovarianceKind.HUBER_WHITE in estimates and obs.is_balanced():
        checks.append(check_balanced_he(obs, COVARIANCE_TOLERANCE * scale**2))

    effects = next(iter(estimates.values())).effects
    covariances = [
        CovarianceRecord(
            kind=kind.value,
            conservative=kind in CONSERVATIVE_KINDS,
            matrix=[[float(v) for v in row] for row in estimate.covariance],
            intervals=[
                IntervalRecord(**asdict(interval))
                for interval in confidence_intervals(estimate, alpha, m.labels)
            ],
        )
        for kind, estimate in estimates.items()
    ]

    return EstimateReport(
        k=obs.k,
        n_units=obs.n_units,
        group_sizes=obs.group_sizes.tolist(),
        labels=list(m.labels),
        effects=[float(v) for v in effects],
        alpha=alpha,
        covariances=covariances,
        checks=checks,
        fingerprint=fingerprint(obs),
    )


def run_design(config: RunConfig) -> ModelMatrix:
    return build_model_matrix(config.k)


def run_assign(config: RunConfig) -> Assignment:
    table = None if config.pop is None else csv_io.read_potential_outcomes(config.pop)
    if table is not None:
        _check_population_sizes(config.n, table.k)

    a = draw_assignment(config.n, config.seed)
    if table is not None:
        csv_io.write_observed_data(observe(table, a), config.observed)
        logger.debug(f"Wrote observed data for {a.n_units} units to {config.observed}")
    return a


def run_estimate(config: RunConfig) -> EstimateReport:
    obs = csv_io.read_observed_data(config.input)
    return build_estimate_report(obs, config.covariance_kinds, config.alpha)


def _check_population_sizes(n: Sequence[int], k: int) -> None:
    if len(n) != 1 << k:
        raise DomainError(f"n-vector length {len(n)} ≠ {1 << k}")


def run_simulate(config: RunConfig) -> SimulationReport:
    table = csv_io.read_potential_outcomes(config.pop)
    _check_population_sizes(config.n, table.k)
    return simulate_randomization(table, config.n, config.reps, config.seed)


def run_oracle_command(config: RunConfig) -> OracleReport:
    table = csv_io.read_potential_outcomes(config.pop)
    _check_population_sizes(config.n, table.k)
    return run_oracle(table, config.n)


def run_verify(config: RunConfig) -> EquivalenceReport:
    if config.fuzz:
        return fuzz_suite(config.k_max, config.instances, config.seed, config.outcomes, debug=config.debug)
    return certify_observed(csv_io.read_observed_data(config.input))


def render_design(config: RunConfig, m: ModelMatrix) -> str:
    if config.format == "csv":
        return csv_io.design_csv(m)
    frame = design_frame(m)
    if config.format == "json":
        return frame.to_json(orient="split", indent=2) + "\n"
    return render_table(["", *frame.columns], ([index, *row] for index, row in zip(frame.index, frame.to_numpy())))


def render_assignment(config: RunConfig, a: Assignment) -> str:
    return csv_io.assignment_csv(a)


def render_estimate(report: EstimateReport) -> str:
    text = section(
        f"K={report.k}  N={report.n_units}  group sizes {','.join(map(str, report.group_sizes))}",
        render_table(["effect", "estimate"], zip(report.labels, report.effects)),
    )
    for record in report.covariances:
        flag = " (conservative)" if record.conservative else ""
        text += section(f"Covariance: {record.kind}{flag}", render_matrix(report.labels, record.matrix))
        text += section(
            f"{100 * (1 - report.alpha):g}% intervals: {record.kind}",
            render_table(
                ["effect", "point", "lower", "upper"],
                ([i.label, i.point, i.lower, i.upper] for i in record.intervals),
            ),
        )
    if report.checks:
        text += section("Equivalence checks", render_checks(report.checks))
    return text


def render_oracle(report: OracleReport) -> str:
    text = section(
        f"Exact enumeration over {report.assignment_count:,} assignments "
        f"(n={','.join(map(str, report.group_sizes))}, additive: {'yes' if report.additive else 'no'})",
        render_table(
            ["effect", "population", "mean estimate"],
            zip(report.labels, report.population_effects, report.mean_estimate),
        ),
    )
    text += section("True sampling covariance", render_matrix(report.labels, report.true_covariance))
    text += section("Neymanian bias", render_matrix(report.labels, report.bias_matrix))
    return text + section("Checks", render_checks(report.discrepancies))


def render_simulation(report: SimulationReport) -> str:
    errors = report.monte_carlo_standard_errors or [float("nan")] * len(report.labels)
    text = section(
        f"Monte Carlo over {report.reps:,} assignments (seed {report.seed}, {report.rng_algorithm})",
        render_table(
            ["effect", "population", "mean estimate", "MC s.e."],
            zip(report.labels, report.population_effects, report.mean_estimate, errors),
        ),
    )
    text += section("Empirical covariance", render_matrix(report.labels, report.empirical_covariance))
    return text + section("True sampling covariance", render_matrix(report.labels, report.true_covariance))


def render_equivalence(report: EquivalenceReport) -> str:
    if report.instance_summary is not None:
        summary = report.instance_summary
        title = f"K={summary.k}  N={summary.n_units}  group sizes {','.join(map(str, summary.group_sizes))}"
    else:
        title = f"{report.instances:,} fuzzed instances (seed {report.seed}, {report.rng_algorithm}), worst case per check"
    text = section(title, render_checks(report.checks))
    if report.failures:
        text += section(
            "Failures",
            render_table(
                ["instance", "check", "discrepancy", "fingerprint"],
                (
                    [f.instance, f.check.name, format_discrepancy(f.check.discrepancy), f.summary.fingerprint[:16]]
                    for f in report.failures
                ),
            ),
        )
    return text


def _render_report(renderer: Callable[[Any], str]) -> Callable[[RunConfig, BaseModel], str]:
    def render(config: RunConfig, report: BaseModel) -> str:
        return dump_json(report) if config.format == "json" else renderer(report)

    return render


COMMANDS: dict[str, tuple[Callable[[RunConfig], Any], Callable[[RunConfig, Any], str]]] = {
    "design": (run_design, render_design),
    "assign": (run_assign, render_assignment),
    "estimate": (run_estimate, _render_report(render_estimate)),
    "simulate": (run_simulate, _render_report(render_simulation)),
    "oracle": (run_oracle_command, _render_report(render_oracle)),
    "verify": (run_verify, _render_report(render_equivalence)),
}


def _failed_checks(result: Any) -> list[str]:
    if isinstance(result, OracleReport):
        return [c.name for c in result.discrepancies if not c.passed]
    if isinstance(result, (EquivalenceReport, EstimateReport)):
        return [c.name for c in result.checks if not c.passed]
    return []


def execute(config: RunConfig) -> None:
    runner, renderer = COMMANDS[config.subcommand]
    logger.debug(f"Running {config.subcommand} with {config.model_dump(exclude_none=True)}")

    result = runner(config)
    write_output(renderer(config, result), config.output)

    if config.json_path is not None and isinstance(result, BaseModel):
        write_output(dump_json(result), config.json_path)

    if failed := _failed_checks(result):
        raise CheckFailure(f"Checks failed: {', '.join(failed)}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    configure_logging(debug="--debug" in argv)

    try:
        config = parse_args(argv)
        execute(config)
    except (UsageError, DomainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (CheckFailure, ConsistencyError) as e:
        print(f"check failure: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILURE
    except (InputFileError, OSError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO

    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
