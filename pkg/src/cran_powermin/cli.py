"""Command-line front end: scenario generation, solver runs, sweeps and CSV output.

Exit codes are a stable contract: 0 feasible, 2 input error, 3 infeasible,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import joint, largesystem, scheduler, transmit
from .errors import (ConfigError, ConvergenceError, CranError, DomainError, ExtractionFail,
                     InfeasibleError, NumericalLimitError, ResourceLimitError)
from .scenario import (ChannelStats, ScenarioConfig, _read_json, generate_scenario,
                       load_config, load_scenario, scenario_to_dict)

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4
CSV_SCHEMA = "cran-powermin/result-row"
CSV_VERSION = 1
FLOAT_FORMAT = "{:.12g}"

SCHEDULE_SOLVERS = ("bnb", "combinational", "heuristic", "brute-force")
TRANSMIT_SOLVERS = ("reweighted", "single")
JOINT_SOLVERS = ("sequential", "message")
SWEEP_PARAMETERS = ("tau_ex", "tau_tr", "tau", "varsigma_lb", "N", "seed-count")
ORACLE_DRAWS = 500
# efficiency sweeps draw from [lb, lb + segment]
EFFICIENCY_SEGMENT = 0.1


@dataclass
class ResultRow:
    """One solver run. ``objective`` is finite iff ``feasible``."""

    scenario_hash: str
    sweep_point: str
    replicate: int
    seed: int
    solver: str
    objective: float
    feasible: bool
    iterations: int
    nodes: int
    wall_time: float
    vm_power: float = float("nan")
    radio_power: float = float("nan")
    transmit_power: float = float("nan")
    fronthaul_power: float = float("nan")
    path: str = ""
    oracle_error: float = float("nan")
    status: str = "ok"

    def check(self):
        if bool(np.isfinite(self.objective)) != bool(self.feasible):
            raise DomainError("objective must be finite iff the run is feasible")
        return self


@dataclass
class SweepSpec:
    """Grid over one parameter, ``replications`` paired seeds per point."""

    parameter: str
    grid: tuple
    replications: int = 1
    solver: str = "combinational"
    config: dict = dataclasses.field(default_factory=dict)
    base_seed: int = 0

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        grid = tuple(float(v) for v in self.grid)
        if not grid:
            raise ConfigError("sweep grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("sweep grid must be strictly increasing")
        self.grid = grid
        if int(self.replications) < 1:
            raise ConfigError("replications must be >= 1")
        if self.parameter == "seed-count" and any(v < 1 or v != int(v) for v in grid):
            raise ConfigError("seed-count grid values must be positive integers")
        if self.solver not in SCHEDULE_SOLVERS + TRANSMIT_SOLVERS + ("alg5",):
            raise ConfigError(f"unknown solver {self.solver!r}")

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("sweep spec must be an object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# CSV


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def write_csv(rows, stream, kind="result", drop=()):
    """Write dictionaries (or dataclasses) as CSV behind a schema comment line."""
    rows = [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in rows]
    stream.write(f"# {CSV_SCHEMA} v{CSV_VERSION} kind={kind}\n")
    if not rows:
        return
    fields = [f for f in rows[0] if f not in drop]
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([_fmt(row.get(f, "")) for f in fields])


def read_csv(stream):
    """Inverse of :func:`write_csv`; values are returned as strings."""
    lines = [ln for ln in stream.read().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _emit(rows, out, kind, drop=()):
    if out is None or out == "-":
        write_csv(rows, sys.stdout, kind, drop)
    else:
        with open(out, "w", newline="") as fh:
            write_csv(rows, fh, kind, drop)


# ----------------------------------------------------------------------------
# single runs


def _infeasible_row(sc, solver, point="", replicate=0, seed=0, status="infeasible",
                    wall_time=0.0):
    return ResultRow(scenario_hash=sc.fingerprint(), sweep_point=point, replicate=replicate,
                     seed=seed, solver=solver, objective=float("nan"), feasible=False,
                     iterations=0, nodes=0, wall_time=wall_time, status=status)


def run_schedule(sc, solver="bnb", oracle=False, node_limit=100_000):
    """Run a scheduling solver on the scenario's ``tau_ex`` split.

    Raises :class:`InfeasibleError` when no assignment meets the budgets.
    """
    instance = scheduler.SchedulingInstance.from_scenario(sc)
    start = time.perf_counter()
    if solver == "bnb":
        plan = scheduler.branch_and_bound(instance, node_limit)
    elif solver == "combinational":
        plan = scheduler.combinational(instance, node_limit)
    elif solver == "heuristic":
        plan = scheduler.heuristic(instance)
    elif solver == "brute-force":
        plan = scheduler.brute_force_oracle(instance)
    else:
        raise ConfigError(f"unknown scheduling solver {solver!r}")
    wall = time.perf_counter() - start
    if plan is None:
        raise InfeasibleError(f"{solver}: no feasible assignment")
    row = ResultRow(scenario_hash=sc.fingerprint(), sweep_point="", replicate=0,
                    seed=_seed(sc), solver=solver, objective=float(plan.objective),
                    feasible=True, iterations=1, nodes=int(plan.nodes), wall_time=wall,
                    vm_power=float(plan.objective), path=plan.method)
    if oracle:
        ref = scheduler.brute_force_oracle(instance)
        row.oracle_error = abs(plan.objective - ref.objective) if ref else float("inf")
    return row.check()


def _rate_oracle_error(sc, plan, draws=ORACLE_DRAWS):
    """Largest relative gap between deterministic and Monte-Carlo UE rates."""
    det = largesystem.approx_ue_rate(plan, sc.stats, sc.radio.sigma2)
    mc = largesystem.mc_ue_rate(plan, sc.stats, sc.radio.sigma2, draws, seed=_seed(sc)).mean
    mask = mc > 0
    return float(np.max(np.abs(det[mask] - mc[mask]) / mc[mask])) if np.any(mask) else 0.0


def run_transmit(sc, solver="reweighted", oracle=False):
    """Transmit-side design on the scenario's ``tau_tr`` split."""
    rounds = {"reweighted": 5, "single": 1}.get(solver)
    if rounds is None:
        raise ConfigError(f"unknown transmit solver {solver!r}")
    res = transmit.solve_p1_detailed(sc, outer_iterations=rounds)
    targets = transmit.sinr_targets(sc)
    viol = transmit.constraint_violation(sc, res.plan, targets)
    if viol > 1e-6:
        raise NumericalLimitError(f"extracted plan violates a constraint by {viol:.3g}")
    report = res.report
    total = sc.omega * report.total
    row = ResultRow(scenario_hash=sc.fingerprint(), sweep_point="", replicate=0,
                    seed=_seed(sc), solver=solver, objective=total, feasible=True,
                    iterations=int(sum(len(t) for t in res.traces)), nodes=0,
                    wall_time=res.wall_time, radio_power=total,
                    transmit_power=float(report.transmit_power.sum()),
                    fronthaul_power=float(report.fronthaul_power.sum()))
    if oracle:
        row.oracle_error = _rate_oracle_error(sc, res.plan)
    return row.check()


def run_joint(sc, solver="sequential", oracle=False, trace_out=None):
    if solver not in JOINT_SOLVERS:
        raise ConfigError(f"unknown joint schedule {solver!r}")
    res = joint.alg5(sc, schedule=solver, seed=_seed(sc))
    plan = res.plan
    report = transmit.power_report(sc, plan.transmit)
    row = ResultRow(scenario_hash=sc.fingerprint(), sweep_point="", replicate=0,
                    seed=_seed(sc), solver=f"alg5-{solver}", objective=plan.total_power,
                    feasible=True, iterations=len(res.trace), nodes=0,
                    wall_time=res.wall_time, vm_power=plan.vm_power,
                    radio_power=plan.radio_power,
                    transmit_power=float(report.transmit_power.sum()),
                    fronthaul_power=float(report.fronthaul_power.sum()),
                    path=f"gap={FLOAT_FORMAT.format(res.gap)}")
    if oracle:
        row.oracle_error = _rate_oracle_error(sc, plan.transmit)
    if trace_out is not None:
        _emit(joint.trace_rows(res.trace), trace_out, "trace")
    return row.check()


def _seed(sc):
    return 0 if sc.seed is None else int(sc.seed)


def run_solver(sc, solver, oracle=False):
    """Dispatch on solver name; used by the sweep workers."""
    if solver in SCHEDULE_SOLVERS:
        return run_schedule(sc, solver, oracle)
    if solver in TRANSMIT_SOLVERS:
        return run_transmit(sc, solver, oracle)
    if solver == "alg5":
        return run_joint(sc, "sequential", oracle)
    raise ConfigError(f"unknown solver {solver!r}")


# ----------------------------------------------------------------------------
# approximation accuracy


def with_antennas(sc, N):
    """Same geometry with ``N`` antennas per RRH."""
    radio = dataclasses.replace(sc.radio, N=int(N))
    return sc.replace(radio=radio, stats=ChannelStats.from_gains(sc.stats.d, int(N)))


def median_ci(values, level=0.95):
    """Median with a distribution-free order-statistic confidence interval."""
    from scipy.stats import binom

    v = np.sort(np.asarray(values, dtype=float))
    n = v.size
    lo = int(binom.ppf((1 - level) / 2, n, 0.5))
    hi = int(binom.isf((1 - level) / 2, n, 0.5))
    lo, hi = max(lo - 1, 0), min(hi, n - 1)
    return float(np.median(v)), float(v[lo]), float(v[hi])


def validate_approx(sc, N_list, draws=1000, plans=50, seed=0):
    """Median inaccuracy metrics over random feasible plans for each ``N``.

    ``draws`` Monte-Carlo channel draws per plan; the interval reflects the
    spread over ``plans`` random plans.
    """
    if draws < 100:
        raise ConfigError("draws must be >= 100")
    if plans < 1 or not N_list:
        raise ConfigError("need at least one plan and one antenna count")
    rows = []
    for N in N_list:
        sc_n = with_antennas(sc, N)
        rng = np.random.default_rng([seed, int(N)])
        eps = np.array([
            largesystem.inaccuracy_metrics(
                largesystem.random_feasible_plan(sc_n, rng), sc_n.stats, sc_n.radio.sigma2,
                draws, seed=int(rng.integers(2**31))).as_tuple()
            for _ in range(plans)])
        for j, name in enumerate(("eps1", "eps2", "eps3")):
            med, lo, hi = median_ci(eps[:, j])
            rows.append({"N": int(N), "metric": name, "median": med, "ci_low": lo,
                         "ci_high": hi, "plans": plans, "draws": draws})
    return rows


# ----------------------------------------------------------------------------
# sweeps


def _point_config(spec: SweepSpec, value):
    cfg = ScenarioConfig.from_dict(spec.config)
    p = spec.parameter
    if p == "tau":
        cfg = dataclasses.replace(cfg, tau=value)
    elif p in ("tau_ex", "tau_tr"):
        tau_ex, tau_tr = cfg.task_budgets
        tau_ex, tau_tr = (value, tau_tr) if p == "tau_ex" else (tau_ex, value)
        cfg = dataclasses.replace(cfg, tau_ex=tau_ex, tau_tr=tau_tr,
                                  tau=max(cfg.tau, tau_ex + tau_tr))
    elif p == "varsigma_lb":
        cfg = dataclasses.replace(cfg, efficiency_range=(value, value + EFFICIENCY_SEGMENT))
    elif p == "N":
        cfg = dataclasses.replace(cfg, N=int(value))
    return cfg.validate()


def replicate_seed(base_seed, replicate):
    """Independent per-replicate stream, shared across grid points (paired)."""
    return int(np.random.SeedSequence([int(base_seed), int(replicate)]).generate_state(1)[0])


def sweep_tasks(spec: SweepSpec):
    tasks = []
    for value in spec.grid:
        reps = int(value) if spec.parameter == "seed-count" else int(spec.replications)
        for r in range(reps):
            tasks.append((spec, value, r))
    return tasks


def _run_point(task):
    spec, value, r = task
    cfg = _point_config(spec, value)
    seed = replicate_seed(spec.base_seed, r)
    sc = generate_scenario(cfg, seed)
    point = FLOAT_FORMAT.format(value)
    start = time.perf_counter()
    try:
        row = run_solver(sc, spec.solver)
    except InfeasibleError:
        return _infeasible_row(sc, spec.solver, point, r, seed,
                               wall_time=time.perf_counter() - start)
    except (NumericalLimitError, ConvergenceError, ResourceLimitError, ExtractionFail):
        return _infeasible_row(sc, spec.solver, point, r, seed, status="numerical",
                               wall_time=time.perf_counter() - start)
    row.sweep_point, row.replicate, row.seed = point, r, seed
    return row


def aggregate(rows):
    """Per-point mean objective over feasible runs and success fraction."""
    out, order = [], []
    groups = {}
    for row in rows:
        if row.sweep_point not in groups:
            order.append(row.sweep_point)
            groups[row.sweep_point] = []
        groups[row.sweep_point].append(row)
    for point in order:
        g = groups[point]
        ok = [r.objective for r in g if r.feasible]
        out.append({"sweep_point": point, "runs": len(g),
                    "success_fraction": len(ok) / len(g),
                    "mean_objective": float(np.mean(ok)) if ok else float("nan"),
                    "heuristic_fraction": sum(r.path == "heuristic" for r in g) / len(g)})
    return out


def run_sweep(spec: SweepSpec, jobs=1):
    """Rows in grid order, independent of worker completion order."""
    tasks = sweep_tasks(spec)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_point, tasks))
    else:
        rows = [_run_point(t) for t in tasks]
    return rows, aggregate(rows)


# ----------------------------------------------------------------------------
# entry point


def _scenario_from_args(args):
    if args.scenario is not None:
        sc = load_scenario(args.scenario)
        if args.seed is not None:
            raise ConfigError("--seed applies to --config, not to a scenario file")
        return sc
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    return generate_scenario(cfg, 0 if args.seed is None else args.seed)


def _parser():
    ap = argparse.ArgumentParser(prog="cran-powermin",
                                 description="Power minimization for cloud radio access "
                                             "networks with computation offloading.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, solver=None):
        if scenario:
            p.add_argument("scenario", nargs="?", help="scenario JSON file")
        p.add_argument("--config", help="scenario config JSON (generated on the fly)")
        p.add_argument("--seed", type=int, help="sampling seed")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--no-timing", action="store_true",
                       help="omit wall time so the CSV is byte-for-byte reproducible")
        if solver:
            p.add_argument("--solver", choices=solver, default=solver[0])
            p.add_argument("--oracle", action="store_true",
                           help="cross-check against a brute-force or Monte-Carlo oracle")
        return p

    common(sub.add_parser("generate", help="sample a scenario file"), scenario=False)
    common(sub.add_parser("schedule", help="VM placement and sizing"), solver=SCHEDULE_SOLVERS)
    common(sub.add_parser("transmit", help="transmit-side design"), solver=TRANSMIT_SOLVERS)
    jp = common(sub.add_parser("joint", help="joint computation/transmission design"),
                solver=JOINT_SOLVERS)
    jp.add_argument("--trace", help="write the price iteration trace to this CSV")
    va = common(sub.add_parser("validate-approx", help="deterministic-equivalent accuracy"))
    va.add_argument("--N", dest="N_list", default="4,16,64", help="comma-separated antenna counts")
    va.add_argument("--draws", type=int, default=1000)
    va.add_argument("--plans", type=int, default=50)
    sw = sub.add_parser("sweep", help="parameter sweep from a JSON spec")
    sw.add_argument("spec", help="sweep spec JSON")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", help="output path (default stdout)")
    sw.add_argument("--no-timing", action="store_true")
    sw.add_argument("--config", help="scenario config JSON overriding the sweep file's")
    sw.add_argument("--solver", help="override the sweep file's solver")
    return ap


def _dispatch(args):
    drop = ("wall_time",) if getattr(args, "no_timing", False) else ()
    if args.command == "generate":
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        sc = generate_scenario(cfg, 0 if args.seed is None else args.seed)
        text = json.dumps(scenario_to_dict(sc), indent=2) + "\n"
        if args.out is None or args.out == "-":
            sys.stdout.write(text)
        else:
            with open(args.out, "w") as fh:
                fh.write(text)
        return EXIT_OK
    if args.command == "sweep":
        data = _read_json(args.spec)
        if isinstance(data, dict):
            if args.config:
                data["config"] = load_config(args.config).to_dict()
            if args.solver:
                data["solver"] = args.solver
        spec = SweepSpec.from_dict(data)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        rows, agg = run_sweep(spec, args.jobs)
        buf = io.StringIO()
        write_csv(rows, buf, "run", drop)
        write_csv(agg, buf, "aggregate")
        if args.out is None or args.out == "-":
            sys.stdout.write(buf.getvalue())
        else:
            with open(args.out, "w", newline="") as fh:
                fh.write(buf.getvalue())
        return EXIT_OK
    sc = _scenario_from_args(args)
    if args.command == "validate-approx":
        try:
            N_list = [int(v) for v in args.N_list.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --N list: {args.N_list}") from exc
        rows = validate_approx(sc, N_list, args.draws, args.plans, _seed(sc))
        _emit(rows, args.out, "accuracy")
        return EXIT_OK
    if args.command == "schedule":
        row = run_schedule(sc, args.solver, args.oracle)
    elif args.command == "transmit":
        row = run_transmit(sc, args.solver, args.oracle)
    else:
        row = run_joint(sc, args.solver, args.oracle, args.trace)
    _emit([row], args.out, "result", drop)
    return EXIT_OK


def main(argv: Optional[list] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalLimitError, ConvergenceError, ResourceLimitError, ExtractionFail,
            CranError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
