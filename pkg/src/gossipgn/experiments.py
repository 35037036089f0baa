"""Experiment harness: wiring, repetition loop, metric CSVs, summaries.

Each repetition r runs with seed + r. Every output number flows through
repr(float(...)) so identical configs give byte-identical CSV files.
Metric rows exist for every (snapshot, update, agent); the exchange
column carries the cumulative gossip-exchange count so different
algorithms can be laid on a common communication axis.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .analysis import ConvergenceCertificate, build_certificate
from .config import ExperimentConfig
from .core import (
    BoxSet,
    ProblemConstants,
    SiteModel,
    centralized_gn_solve,
    centralized_gn_step,
    estimate_constants,
    stationarity_residual,
)
from .errors import GossipGnError, InvalidArgumentError
from .ggn import (
    DiffusionTrajectory,
    ExchangeSchedule,
    GgnConfig,
    GgnTrajectory,
    constant_steps,
    diffusion_baseline_run,
    diminishing_steps,
    ggn_run,
)
from .gossip import GossipConfig, Topology
from .psse import (
    GridModel,
    PowerState,
    build_grid_model,
    build_nlls_sites,
    flat_start_vector,
    load_case,
    load_true_state,
    make_box,
    measurement_count,
    mse_metrics,
    newton_power_flow,
    partition_sites,
    scale_loads,
    state_to_vector,
    streaming_snapshots,
)

CSV_COLUMNS = [
    "run_id", "snapshot", "update", "exchange", "agent", "val", "grad_contrib",
    "mse_v", "mse_theta", "max_disagreement", "descent_discrepancy",
    "error_to_reference",
]


@dataclass(frozen=True)
class ProblemSetup:
    grid: GridModel
    true_state: PowerState
    plan: "object"
    box: BoxSet
    x0: np.ndarray
    noise_floor: float
    m_total: int


def build_problem(config: ExperimentConfig) -> ProblemSetup:
    case = load_case(config.case_path)
    if config.load_scale != 1.0:
        case = scale_loads(case, config.load_scale)
    grid = build_grid_model(case)
    if config.true_state_path:
        true_state = load_true_state(config.true_state_path, grid.n_buses)
    else:
        true_state = newton_power_flow(grid)
    plan = partition_sites(grid, config.sites, config.partition)
    box = make_box(grid.n_buses, config.theta_max, config.v_max)
    x0 = flat_start_vector(grid)
    m_total = measurement_count(grid)
    return ProblemSetup(
        grid=grid, true_state=true_state, plan=plan, box=box, x0=x0,
        noise_floor=m_total * config.sigma2, m_total=m_total,
    )


def _gossip_config(config: ExperimentConfig) -> GossipConfig:
    proto = config.protocol
    return GossipConfig(
        protocol=proto.kind,
        n_agents=config.sites,
        beta=proto.beta,
        topology=Topology.full(config.sites),
        link_failure_prob=proto.link_failure_prob,
        comm_interval=proto.comm_interval,
    )


def _ggn_config(config: ExperimentConfig) -> GgnConfig:
    return GgnConfig(
        alpha=config.alpha,
        schedule=ExchangeSchedule(kind=config.exchanges.kind, base=config.exchanges.base),
        max_updates=config.max_updates,
        stop_tol=config.stop_tol,
        ridge=config.ridge,
    )


def _site_metrics(sites: list[SiteModel], x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent objective value and gradient-contribution norm at x[i]."""
    vals = np.empty(len(sites))
    grads = np.empty(len(sites))
    for i, site in enumerate(sites):
        res = np.asarray(site.eval_residual(x[i]), dtype=float)
        jac = np.asarray(site.eval_jacobian(x[i]), dtype=float)
        vals[i] = float(res @ res)
        grads[i] = float(np.linalg.norm(jac.T @ res))
    return vals, grads


def _max_pairwise(stack: np.ndarray) -> float:
    n = stack.shape[0]
    if n < 2:
        return 0.0
    best = 0.0
    for i in range(n):
        diffs = stack[i + 1 :] - stack[i]
        if diffs.size:
            best = max(best, float(np.max(np.linalg.norm(diffs, axis=1))))
    return best


def _rows_from_stacks(
    run_id: str,
    snapshot: int,
    sites: list[SiteModel],
    iterates: np.ndarray,
    exchange_marks: np.ndarray,
    discrepancies: np.ndarray | None,
    true_state: PowerState,
    slack_bus: int,
    x_ref: np.ndarray,
) -> list[list]:
    """One row per (update, agent) from an (K+1, I, N_u) iterate history."""
    rows = []
    n_steps = iterates.shape[0]
    for k in range(n_steps):
        stack = iterates[k]
        vals, grads = _site_metrics(sites, stack)
        mse_v, mse_th, _, _ = mse_metrics(stack, true_state, slack_bus)
        disagreement = _max_pairwise(stack)
        err_ref = np.linalg.norm(stack - x_ref, axis=1)
        for i in range(stack.shape[0]):
            disc = 0.0
            if discrepancies is not None and k >= 1:
                disc = float(discrepancies[k - 1][i])
            rows.append(
                [
                    run_id, snapshot, k, int(exchange_marks[k]), i,
                    float(vals[i]), float(grads[i]), float(mse_v[i]), float(mse_th[i]),
                    disagreement, disc, float(err_ref[i]),
                ]
            )
    return rows


def _centralized_trajectory(
    sites: list[SiteModel], box: BoxSet, x0: np.ndarray, alpha: float,
    max_updates: int, stop_tol: float,
) -> np.ndarray:
    x = np.asarray(x0, dtype=float)
    iterates = [x.copy()]
    for _ in range(max_updates):
        x_new = centralized_gn_step(sites, x, alpha, box)
        iterates.append(x_new.copy())
        if float(np.linalg.norm(x_new - x)) <= stop_tol:
            break
        x = x_new
    return np.stack(iterates)[:, None, :]  # (K+1, 1, N_u)


@dataclass
class RepetitionData:
    """In-memory record of one repetition for downstream analysis."""

    run_id: str
    seed: int
    trajectories: list  # one GgnTrajectory/DiffusionTrajectory/array per snapshot
    references: list[np.ndarray]
    reference_stationarities: list[float]
    sites_per_snapshot: list[list[SiteModel]]
    rows: list[list]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: ProblemSetup
    repetitions: list[RepetitionData]
    output_dir: Path
    rep_csv_paths: list[Path]
    mean_csv_path: Path
    summary_path: Path
    summary: dict


def _reference_solution(sites, box, x0) -> tuple[np.ndarray, float]:
    x_ref, converged = centralized_gn_solve(sites, box, x0, alpha=1.0, tol=1e-10, max_iter=80)
    stat = stationarity_residual(sites, x_ref)
    if not converged and stat > 1e-8:
        raise GossipGnError(
            f"reference solve did not reach stationarity (residual {stat:.3e})"
        )
    return x_ref, float(stat)


def _run_one_repetition(
    config: ExperimentConfig, problem: ProblemSetup, rep: int
) -> RepetitionData:
    seed_r = config.seed + rep
    run_id = f"r{rep:03d}"
    snapshots = streaming_snapshots(
        problem.grid, problem.true_state, problem.plan,
        config.sigma2, config.snapshots, seed_r,
    )
    slack = problem.grid.slack_bus
    rows: list[list] = []
    trajectories = []
    references = []
    stationarities = []
    sites_per_snapshot = []
    exchange_offset = 0
    x_start: np.ndarray = problem.x0

    for t, snap in enumerate(snapshots):
        sites = build_nlls_sites(problem.grid, problem.plan, snap)
        sites_per_snapshot.append(sites)
        x_ref, stat = _reference_solution(sites, problem.box, problem.x0)
        references.append(x_ref)
        stationarities.append(stat)

        if config.algorithm == "centralized":
            iterates = _centralized_trajectory(
                sites, problem.box, x_start,
                config.alpha, config.max_updates, config.stop_tol,
            )
            marks = exchange_offset + np.zeros(iterates.shape[0], dtype=int)
            rows += _rows_from_stacks(
                run_id, t, sites, iterates, marks, None,
                problem.true_state, slack, x_ref,
            )
            trajectories.append(iterates)
            x_start = iterates[-1, 0]
        elif config.algorithm == "ggn":
            rng = np.random.default_rng(seed_r * 1000003 + t)
            traj = ggn_run(
                sites, problem.box, _gossip_config(config), _ggn_config(config),
                x_start, rng=rng,
            )
            marks = exchange_offset + np.concatenate(
                [[0], np.cumsum(traj.exchange_counts)]
            )
            rows += _rows_from_stacks(
                run_id, t, sites, traj.iterates, marks, traj.discrepancies,
                problem.true_state, slack, x_ref,
            )
            trajectories.append(traj)
            exchange_offset = int(marks[-1])
            x_start = traj.iterates[-1]
        elif config.algorithm == "diffusion":
            rng = np.random.default_rng(seed_r * 1000003 + t)
            diff = config.diffusion
            schedule = (
                diminishing_steps(diff.step_scale)
                if diff.step_kind == "diminishing"
                else constant_steps(diff.step_scale)
            )
            traj = diffusion_baseline_run(
                sites, problem.box, _gossip_config(config), schedule,
                diff.total_exchanges, x_start, rng=rng,
            )
            marks = exchange_offset + np.arange(traj.iterates.shape[0])
            rows += _rows_from_stacks(
                run_id, t, sites, traj.iterates, marks, None,
                problem.true_state, slack, x_ref,
            )
            trajectories.append(traj)
            exchange_offset = int(marks[-1])
            x_start = traj.iterates[-1]
        else:
            raise InvalidArgumentError(f"unknown algorithm {config.algorithm!r}")

    return RepetitionData(
        run_id=run_id, seed=seed_r, trajectories=trajectories,
        references=references, reference_stationarities=stationarities,
        sites_per_snapshot=sites_per_snapshot, rows=rows,
    )


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(path: Path, rows: list[list], columns: list[str] = CSV_COLUMNS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def mean_rows(all_rows: list[list]) -> list[list]:
    """Average metric columns over repetitions, grouped by row key."""
    groups: dict[tuple, list[np.ndarray]] = {}
    for row in all_rows:
        key = tuple(row[1:5])
        groups.setdefault(key, []).append(np.asarray(row[5:], dtype=float))
    out = []
    for key, vals in groups.items():
        mean = np.mean(vals, axis=0)
        out.append(list(key) + [float(v) for v in mean])
    return out


def certificate_for_run(
    sites: list[SiteModel],
    box: BoxSet,
    trajectories: list,
    x_ref: np.ndarray,
    alpha: float,
    eta: float,
    schedule_kind: str,
    comm_interval: int = 1,
    xi: float = 0.25,
    n_samples: int = 24,
    rng_seed: int = 0,
    max_extra_points: int = 48,
) -> tuple[ProblemConstants, ConvergenceCertificate]:
    """Estimate constants over an envelope of the observed iterates.

    The sampling box is the coordinate-wise hull of every iterate and the
    reference point, slightly padded and clipped to the feasible box, so
    the resulting Lipschitz and spectral constants majorize what the
    recorded trajectories actually traversed. Iterates, the reference and
    segment midpoints enter the pairwise Lipschitz sweep directly.
    """
    points = [np.asarray(x_ref, dtype=float)]
    for traj in trajectories:
        iterates = traj.iterates if hasattr(traj, "iterates") else np.asarray(traj)
        points.extend(iterates.reshape(-1, iterates.shape[-1]))
    pts = np.stack(points)
    if pts.shape[0] > max_extra_points:
        pick = np.linspace(0, pts.shape[0] - 1, max_extra_points).astype(int)
        pick[0] = 0  # always keep the reference
        pts = pts[np.unique(pick)]
    midpoints = 0.5 * (pts + pts[0])
    extra = np.vstack([pts, midpoints])

    span = pts.max(axis=0) - pts.min(axis=0)
    pad = 0.05 * span + 1e-4
    lower = np.clip(pts.min(axis=0) - pad, box.lower, box.upper)
    upper = np.clip(pts.max(axis=0) + pad, box.lower, box.upper)
    env_box = BoxSet(lower=lower, upper=upper)

    pc = estimate_constants(
        sites, env_box, n_samples=n_samples, rng_seed=rng_seed,
        reference_x=np.asarray(x_ref, dtype=float), extra_points=extra,
    )
    cert = build_certificate(
        pc, n_agents=len(sites), n_unknowns=box.dim, eta=eta, alpha=alpha,
        xi=xi, schedule_kind=schedule_kind, comm_interval=comm_interval,
    )
    return pc, cert


def _summary_trailer(
    config: ExperimentConfig, problem: ProblemSetup, reps: list[RepetitionData],
) -> dict:
    last = reps[-1]
    final_stack = None
    traj = last.trajectories[-1]
    iterates = traj.iterates if hasattr(traj, "iterates") else np.asarray(traj)
    final_stack = iterates[-1]

    last_key_rows = [r for r in last.rows if r[1] == config.snapshots - 1]
    final_update = max(r[2] for r in last_key_rows)
    final_rows_all = []
    for rep in reps:
        rows_t = [r for r in rep.rows if r[1] == config.snapshots - 1]
        k_max = max(r[2] for r in rows_t)
        final_rows_all += [r for r in rows_t if r[2] == k_max]
    arr = np.asarray([r[5:] for r in final_rows_all], dtype=float)

    sites = last.sites_per_snapshot[-1]
    mean_final = final_stack.mean(axis=0)
    summary = {
        "algorithm": config.algorithm,
        "case": config.case_path,
        "n_buses": problem.grid.n_buses,
        "n_branches": problem.grid.n_branches,
        "n_sites": config.sites,
        "measurements_total": problem.m_total,
        "noise_floor": problem.noise_floor,
        "repetitions": config.repetitions,
        "seed": config.seed,
        "snapshots": config.snapshots,
        "alpha": config.alpha,
        "sigma2": config.sigma2,
        "final_update": final_update,
        "final_val_global_mean": float(
            arr[:, 0].sum() / len(reps)
        ),
        "final_grad_global_mean": float(arr[:, 1].sum() / len(reps)),
        "final_mse_v_mean": float(arr[:, 2].mean()),
        "final_mse_theta_mean": float(arr[:, 3].mean()),
        "final_max_disagreement_mean": float(arr[:, 4].mean()),
        "final_error_to_reference_mean": float(arr[:, 6].mean()),
        "reference_stationarity_max": float(
            max(max(rep.reference_stationarities) for rep in reps)
        ),
        "final_stationarity": stationarity_residual(sites, mean_final),
    }
    return summary


def _certificate_summary(
    config: ExperimentConfig, problem: ProblemSetup, reps: list[RepetitionData]
) -> dict:
    last = reps[-1]
    traj = last.trajectories[-1]
    eta = getattr(traj, "eta_observed", float("nan"))
    if config.algorithm == "centralized" or config.sites == 1 or not np.isfinite(eta):
        eta_for_cert = 0.5  # placeholder rate; single-agent certificates ignore it
    else:
        eta_for_cert = eta
    pc, cert = certificate_for_run(
        last.sites_per_snapshot[-1], problem.box, last.trajectories,
        last.references[-1], alpha=config.alpha, eta=eta_for_cert,
        schedule_kind=config.exchanges.kind,
        comm_interval=config.protocol.comm_interval,
        xi=config.certificate.xi, n_samples=config.certificate.n_samples,
        rng_seed=config.seed,
    )
    out = {"certificate.eta_observed": eta}
    for name in (
        "T1", "T2", "rho_min", "rho_max", "kappa", "alpha_lower", "C", "C1",
        "C2", "D", "lambda_eta_val", "L0", "ell_min", "lambda_infty", "xi",
        "radii_defined", "conditional", "estimated_constants",
    ):
        out[f"certificate.{name}"] = getattr(cert, name)
    for name in (
        "epsilon_max", "epsilon_min", "sigma_min", "sigma_max", "omega",
        "nu_delta", "nu_Delta", "rank_deficient_sample",
    ):
        out[f"constants.{name}"] = getattr(pc, name)
    return out


def _write_summary(path: Path, summary: dict) -> None:
    lines = []
    for key, value in summary.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, str):
            text = value
        elif isinstance(value, (int, np.integer)):
            text = str(int(value))
        else:
            text = repr(float(value))
        lines.append(f"{key}={text}")
    path.write_text("\n".join(lines) + "\n")


def resolve_output_dir(config: ExperimentConfig, env_override: str | None) -> Path:
    return Path(env_override) if env_override else Path(config.output_dir)


def run_experiment(
    config: ExperimentConfig, env_output_dir: str | None = None,
    with_certificate: bool = True,
) -> ExperimentResult:
    config.validate()
    t0 = time.perf_counter()
    problem = build_problem(config)
    out_dir = resolve_output_dir(config, env_output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    reps = [
        _run_one_repetition(config, problem, r) for r in range(config.repetitions)
    ]

    rep_paths = []
    for rep in reps:
        path = out_dir / f"metrics_{rep.run_id}.csv"
        write_metrics_csv(path, rep.rows)
        rep_paths.append(path)

    all_rows = [row for rep in reps for row in rep.rows]
    mean_path = out_dir / "metrics_mean.csv"
    write_metrics_csv(mean_path, mean_rows(all_rows), columns=CSV_COLUMNS[1:])

    summary = _summary_trailer(config, problem, reps)
    if with_certificate:
        summary.update(_certificate_summary(config, problem, reps))
    summary["wall_clock_s"] = time.perf_counter() - t0
    summary_path = out_dir / "summary.txt"
    _write_summary(summary_path, summary)

    return ExperimentResult(
        config=config, problem=problem, repetitions=reps, output_dir=out_dir,
        rep_csv_paths=rep_paths, mean_csv_path=mean_path,
        summary_path=summary_path, summary=summary,
    )


@dataclass
class SweepResult:
    p_values: list[float]
    runs: list[ExperimentResult]
    table_path: Path
    table_rows: list[dict]


def run_failure_sweep(
    config: ExperimentConfig, p_values: list[float], env_output_dir: str | None = None
) -> SweepResult:
    """Repeat the URE experiment across link-failure probabilities."""
    config.validate()
    if config.algorithm != "ggn" or config.protocol.kind != "ure":
        raise InvalidArgumentError("failure sweep requires algorithm=ggn, protocol=ure")
    base_dir = resolve_output_dir(config, env_output_dir)
    runs = []
    table = []
    for p in p_values:
        if not 0.0 <= p < 1.0:
            raise InvalidArgumentError(f"failure probability {p} outside [0, 1)")
        sub = replace(
            config,
            protocol=replace(config.protocol, link_failure_prob=float(p)),
            output_dir=str(base_dir / f"p_{p:g}"),
        )
        result = run_experiment(sub, with_certificate=False)
        runs.append(result)

        floor = result.problem.noise_floor
        last = result.repetitions[-1]
        final_rows = [r for r in last.rows if r[1] == config.snapshots - 1]
        k_max = max(r[2] for r in final_rows)
        finals = [r for r in final_rows if r[2] == k_max]
        vals = np.asarray([r[5] for r in finals], dtype=float)
        mses = np.asarray([r[7] for r in finals], dtype=float)
        disagreement = max(r[9] for r in finals)
        table.append(
            {
                "p": float(p),
                "final_val_max": float(vals.max()),
                "final_val_mean": float(vals.mean()),
                "final_mse_v_mean": float(mses.mean()),
                "final_mse_v_max": float(mses.max()),
                "agents_below_100x_floor": int(np.sum(vals < 100.0 * floor)),
                "n_agents": int(vals.size),
                "max_disagreement_final": float(disagreement),
                "all_finite": bool(np.all(np.isfinite(vals))),
            }
        )

    base_dir.mkdir(parents=True, exist_ok=True)
    table_path = base_dir / "degradation.csv"
    cols = list(table[0].keys()) if table else []
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in table:
            writer.writerow([_format_cell(row[c]) for c in cols])
    return SweepResult(
        p_values=[float(p) for p in p_values], runs=runs,
        table_path=table_path, table_rows=table,
    )


@dataclass
class ComparisonResult:
    ggn: ExperimentResult
    diffusion: ExperimentResult
    table_path: Path
    table_rows: list[dict]


def _global_curves(result: ExperimentResult) -> dict[tuple[int, int], tuple[float, float]]:
    """(snapshot, exchange) -> (sum of val over agents, sum of grad)."""
    rows = mean_rows([row for rep in result.repetitions for row in rep.rows])
    curves: dict[tuple[int, int], list[float]] = {}
    for row in rows:
        snapshot, update, exchange, agent = row[0], row[1], row[2], row[3]
        val, grad = row[4], row[5]
        slot = curves.setdefault((int(snapshot), int(exchange)), [0.0, 0.0])
        slot[0] += val
        slot[1] += grad
    return {k: (v[0], v[1]) for k, v in sorted(curves.items())}


def compare_algorithms(
    config_ggn: ExperimentConfig, config_diffusion: ExperimentConfig,
    env_output_dir: str | None = None,
) -> ComparisonResult:
    """Run both algorithms on the identical instance; tabulate by exchanges."""
    for field_name in ("case_path", "sigma2", "seed", "sites", "load_scale", "snapshots"):
        a, b = getattr(config_ggn, field_name), getattr(config_diffusion, field_name)
        if a != b:
            raise InvalidArgumentError(
                f"configs disagree on {field_name}: {a!r} vs {b!r}"
            )
    if config_ggn.algorithm != "ggn" or config_diffusion.algorithm != "diffusion":
        raise InvalidArgumentError("expected one ggn config and one diffusion config")

    out_dir = resolve_output_dir(config_ggn, env_output_dir)
    sub_ggn = replace(config_ggn, output_dir=str(out_dir / "ggn"))
    sub_diff = replace(config_diffusion, output_dir=str(out_dir / "diffusion"))
    res_ggn = run_experiment(sub_ggn, with_certificate=False)
    res_diff = run_experiment(sub_diff, with_certificate=False)

    table = []
    for label, res in (("ggn", res_ggn), ("diffusion", res_diff)):
        for (_, exchange), (val, grad) in _global_curves(res).items():
            table.append(
                {"exchange": exchange, "algorithm": label, "val": val, "grad": grad}
            )

    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "comparison.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exchange", "algorithm", "val", "grad"])
        for row in table:
            writer.writerow(
                [_format_cell(row["exchange"]), row["algorithm"],
                 _format_cell(row["val"]), _format_cell(row["grad"])]
            )
    return ComparisonResult(
        ggn=res_ggn, diffusion=res_diff, table_path=table_path, table_rows=table,
    )
