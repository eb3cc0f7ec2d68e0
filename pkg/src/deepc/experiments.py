"""Seeded benchmark experiments behind the ``deepc-bench`` command line.

Four experiment suites, each driven by an :class:`ExperimentConfig` and a
master seed:

``equivalence``
    Random controllable LTI systems; runs model-based MPC and the
    data-driven planner side by side on noiseless plants and reports the
    worst per-step input deviation (they must agree).
``figure8``
    Quadcopter tracking a figure-eight reference; regularized data-driven
    control and identify-then-MPC on identical data and noise seeds.
``step-stats``
    Repeated quadcopter step responses with fresh data per repetition;
    paired cost and violation-duration statistics for the two methods.
``reg-sweep``
    Average quadcopter cost over grids of the two regularization weights.

Every experiment is reproducible from (config, master seed): per-run seeds
are derived as ``SeedSequence([master, stream, repetition])`` where the
stream index is fixed per purpose, so adding repetitions never perturbs
earlier ones, and all raw CSV output is byte-identical across re-runs
(timing goes only into the summary text file, never into CSVs).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .behavioral import (
    Trajectory,
    is_persistently_exciting,
    min_data_length,
    partition_data,
    read_trajectory_csv,
    write_trajectory_csv,
)
from .controllers import (
    ControlProblem,
    DeepcController,
    InfeasibleStepError,
    MpcController,
    RegularizedDeepcController,
    closed_loop_cost,
    run_receding_horizon,
    solve_deepc,
    solve_mpc,
    solve_regularized_deepc,
)
from .ltisys import LtiPlant, random_controllable_system, read_statespace
from .qpcore import QpSettings
from .quadsim import DivergenceError, QuadParams, QuadPlant, collect_excitation_data
from .sysid import identify_full_state

# Fixed stream indices for the master-seed fan-out.  New purposes must be
# appended, never renumbered, or old results stop being reproducible.
_STREAM_DATA = 0  # excitation-data collection
_STREAM_PLANT = 1  # plant measurement noise during the controlled run
_STREAM_SYSTEM = 2  # random system draw (equivalence)
_STREAM_EXCITE = 3  # random input sequence for LTI data (equivalence)
_STREAM_WARMUP = 4  # warmup inputs seeding the initial window (equivalence)
_STREAM_REFERENCE = 5  # random constant reference (equivalence)

_KINDS = ("equivalence", "figure8", "step-stats", "reg-sweep", "collect", "solve")

_DEFAULT_REPS = {
    "equivalence": 10,
    "figure8": 1,
    "step-stats": 30,
    "reg-sweep": 8,
    "collect": 1,
    "solve": 1,
}
_DEFAULT_STEPS = {"figure8": 600, "step-stats": 30, "reg-sweep": 30}
_DEFAULT_LAM_G_GRID = (0.0, 1.0, 10.0, 100.0, 300.0, 1000.0, 10000.0)
_DEFAULT_LAM_Y_GRID = (1e2, 1e3, 1e4, 1e5, 1e6, 1e7)


@dataclass(frozen=True)
class ExperimentConfig:
    """Flat bundle of every knob an experiment reads.

    Quadcopter experiments share the case-study control problem (horizon
    30 at 0.1 s, position boxes, thrust boxes); ``q_diag``/``r_diag``
    override the stage-cost diagonals when set.  ``None`` means "use the
    per-experiment default".
    """

    kind: str
    seed: int = 0
    reps: int | None = None
    out: Path = Path("results")
    # control problem
    horizon: int = 30
    t_ini: int = 1
    lam_g: float = 30.0
    lam_y: float = 1e5
    u_min: float = 0.0
    u_max: float = 1.0
    pos_box: float = 3.0
    q_diag: tuple[float, ...] | None = None
    r_diag: tuple[float, ...] | None = None
    # data collection
    data_samples: int = 214
    noise_std: float | None = None
    excitation_band: float = 0.05
    # closed loop
    steps: int | None = None
    step_time: float = 1.0
    step_size: float = 1.0
    amplitude: float = 2.0
    period: float = 15.0
    # solver (quadcopter planners; the loops are robust to a loose relative
    # tolerance on the data-driven side, while the identified-model baseline
    # needs accurate plans to stay airborne at all)
    eps_abs: float = 1e-3
    eps_rel: float = 1e-5
    mpc_eps_rel: float = 3e-7
    max_iter: int = 20000
    # reg-sweep grids (empty tuple skips that sweep)
    lam_g_grid: tuple[float, ...] = _DEFAULT_LAM_G_GRID
    lam_y_grid: tuple[float, ...] = _DEFAULT_LAM_Y_GRID
    # file inputs for `solve`
    data: Path | None = None
    window: Path | None = None
    model: Path | None = None
    mode: str = "regularized"
    ref: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if self.reps is not None and self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")
        for path_field in ("data", "window", "model"):
            value = getattr(self, path_field)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{path_field} file not found: {value}")

    @property
    def repetitions(self) -> int:
        return self.reps if self.reps is not None else _DEFAULT_REPS[self.kind]

    @property
    def loop_steps(self) -> int:
        return self.steps if self.steps is not None else _DEFAULT_STEPS[self.kind]


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key=value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in out:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _parse_floats(value: str) -> tuple[float, ...]:
    items = [v.strip() for v in value.split(",")]
    return tuple(float(v) for v in items if v)


def config_from_mapping(kind: str, mapping: dict[str, str]) -> ExperimentConfig:
    """Build a config from parsed key=value pairs; unknown keys error."""
    mapping = dict(mapping)
    declared = mapping.pop("experiment", None)
    if declared is not None and declared != kind:
        raise ValueError(
            f"config declares experiment={declared!r} but {kind!r} was requested"
        )
    spec = {f.name: f for f in fields(ExperimentConfig)}
    kwargs: dict[str, object] = {"kind": kind}
    for key, value in mapping.items():
        if key not in spec or key == "kind":
            raise ValueError(f"unknown config key {key!r}")
        if key in ("q_diag", "r_diag", "lam_g_grid", "lam_y_grid", "ref"):
            kwargs[key] = _parse_floats(value)
        elif key in ("data", "window", "model", "out"):
            kwargs[key] = Path(value)
        elif key == "mode":
            kwargs[key] = value
        elif key in ("seed", "reps", "horizon", "t_ini", "data_samples",
                     "steps", "max_iter"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return ExperimentConfig(**kwargs)


def load_config(kind: str, path=None, **overrides) -> ExperimentConfig:
    """Config from an optional file plus keyword overrides (CLI flags)."""
    mapping = parse_config_text(Path(path).read_text()) if path else {}
    cfg = config_from_mapping(kind, mapping)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


@dataclass
class ExperimentReport:
    """Everything an experiment produced, plus its PASS verdict.

    ``runs`` holds one dict per run with deterministic values only (no
    timing); ``passed`` is ``None`` for experiments without a PASS
    condition.  ``aggregates`` carries medians/quartiles and solve-time
    statistics for the summary file.
    """

    kind: str
    runs: list[dict] = field(default_factory=list)
    passed: bool | None = None
    summary: list[str] = field(default_factory=list)
    aggregates: dict[str, float] = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if self.passed is None:
            return "DONE"
        return "PASS" if self.passed else "FAIL"


def _quartiles(values) -> tuple[float, float, float]:
    arr = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    if arr.size == 0:
        return (float("nan"),) * 3
    q1, q2, q3 = np.percentile(arr, [25, 50, 75])
    return float(q1), float(q2), float(q3)


def _solve_time_stats(records) -> dict[str, float]:
    times = [r.solve_ms for r in records if r.solve_ms > 0]
    if not times:
        return {}
    return {
        "solve_ms_median": float(np.median(times)),
        "solve_ms_max": float(np.max(times)),
        "solves": float(len(times)),
    }


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    """Deterministic cell text: repr for floats, str otherwise."""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def _write_runs_csv(path: Path, runs: list[dict]) -> None:
    if not runs:
        _write_csv(path, ["empty"], [])
        return
    header = list(runs[0].keys())
    rows = [[_fmt(run[key]) for key in header] for run in runs]
    _write_csv(path, header, rows)


def _write_steps_csv(path: Path, records) -> None:
    """Per-step closed-loop log without timing (keeps re-runs byte-identical)."""
    m = len(records[0].u)
    p = len(records[0].y)
    header = (
        ["step", "solve_status", "objective", "violation_count"]
        + [f"u{i + 1}" for i in range(m)]
        + [f"y{i + 1}" for i in range(p)]
    )
    rows = []
    for rec in records:
        row = [rec.step, rec.solve_status, repr(float(rec.objective)), rec.violation_count]
        row += [repr(float(v)) for v in rec.u]
        row += [repr(float(v)) for v in rec.y]
        rows.append(row)
    _write_csv(path, header, rows)


def write_report(report: ExperimentReport, out_dir) -> Path:
    """Write the raw runs CSV and the summary file; returns the summary path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slug = report.kind.replace("-", "_")
    _write_runs_csv(out / f"{slug}_runs.csv", report.runs)
    lines = [f"experiment={report.kind}"]
    lines += report.summary
    for key in sorted(report.aggregates):
        lines.append(f"{key}={report.aggregates[key]!r}")
    lines.append(f"RESULT: {report.verdict}")
    summary_path = out / f"{slug}_summary.txt"
    summary_path.write_text("\n".join(lines) + "\n")
    return summary_path


def _seed_int(master: int, stream: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, stream, rep]).generate_state(1)[0])


def _rng(master: int, stream: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([master, stream, rep]))


# ---------------------------------------------------------------------------
# equivalence
# ---------------------------------------------------------------------------


def _equivalence_problem(ss, cfg: ExperimentConfig) -> ControlProblem:
    q = np.diag(cfg.q_diag) if cfg.q_diag else np.eye(ss.p)
    r = np.diag(cfg.r_diag) if cfg.r_diag else 0.1 * np.eye(ss.m)
    return ControlProblem(
        horizon=10,
        t_ini=ss.n,
        Q=q,
        R=r,
        u_min=-1.0,
        u_max=1.0,
        y_min=-10.0,
        y_max=10.0,
    )


def run_equivalence(cfg: ExperimentConfig) -> ExperimentReport:
    """Closed-loop MPC vs data-driven planner on random noiseless systems.

    Both controllers face the same plant realization, warmup inputs, and
    reference; the run record keeps the worst per-step input deviation.
    Systems whose drawn excitation misses the required excitation order
    are recorded as ``pe-violation`` and excluded from the PASS set.
    """
    report = ExperimentReport(kind="equivalence")
    steps = 20
    deviations = []
    failures = 0
    solve_records = []
    for rep in range(cfg.repetitions):
        sys_rng = _rng(cfg.seed, _STREAM_SYSTEM, rep)
        n = int(sys_rng.integers(1, 5))
        m = int(sys_rng.integers(1, 3))
        p = int(sys_rng.integers(1, 3))
        ss = random_controllable_system(
            n, m, p, sys_rng, spectral_radius=0.95
        )
        cp = _equivalence_problem(ss, cfg)
        need = min_data_length(m, cp.t_ini, cp.horizon, n)
        samples = need + 10
        data_rng = _rng(cfg.seed, _STREAM_EXCITE, rep)
        u_data = data_rng.uniform(-1.0, 1.0, size=(samples, m))
        data_plant = LtiPlant(ss)
        y_data = np.vstack([data_plant.step(u) for u in u_data])
        run = {
            "system": rep,
            "n": n,
            "m": m,
            "p": p,
            "samples": samples,
            "status": "ok",
            "max_deviation": float("nan"),
        }
        pe_ok, _ = is_persistently_exciting(u_data, cp.t_ini + cp.horizon + n)
        if not pe_ok:
            run["status"] = "pe-violation"
            report.runs.append(run)
            continue
        traj = Trajectory(u=u_data, y=y_data)
        dm = partition_data(traj, cp.t_ini, cp.horizon)
        warm = _rng(cfg.seed, _STREAM_WARMUP, rep).uniform(
            -0.5, 0.5, size=(cp.t_ini, m)
        )
        reference = _rng(cfg.seed, _STREAM_REFERENCE, rep).uniform(-1.0, 1.0, size=p)
        settings = QpSettings(eps_abs=1e-8, max_iter=cfg.max_iter)
        try:
            out_mpc = run_receding_horizon(
                LtiPlant(ss),
                MpcController(ss, cp, settings=settings),
                cp,
                reference,
                steps=steps,
                warmup_inputs=warm,
            )
            out_dpc = run_receding_horizon(
                LtiPlant(ss),
                DeepcController(dm, cp, settings=settings),
                cp,
                reference,
                steps=steps,
                warmup_inputs=warm,
            )
        except (InfeasibleStepError, ValueError) as err:
            run["status"] = f"solver-failure:{type(err).__name__}"
            failures += 1
            report.runs.append(run)
            continue
        solve_records += out_mpc.records + out_dpc.records
        dev = max(
            float(np.max(np.abs(a.u - b.u)))
            for a, b in zip(out_mpc.records, out_dpc.records)
        )
        run["max_deviation"] = dev
        deviations.append(dev)
        report.runs.append(run)
    worst = max(deviations) if deviations else float("nan")
    report.passed = (
        failures == 0 and len(deviations) > 0 and worst <= 1e-5
    )
    report.summary = [
        f"systems={cfg.repetitions}",
        f"valid={len(deviations)}",
        f"pe_violations={sum(r['status'] == 'pe-violation' for r in report.runs)}",
        f"solver_failures={failures}",
        f"max_deviation={worst!r}",
        "tolerance=1e-05",
    ]
    report.aggregates = _solve_time_stats(solve_records)
    return report


# ---------------------------------------------------------------------------
# quadcopter experiments
# ---------------------------------------------------------------------------


def _quad_params(cfg: ExperimentConfig) -> QuadParams:
    if cfg.noise_std is None:
        return QuadParams()
    return QuadParams(noise_std=cfg.noise_std)


def _quad_problem(cfg: ExperimentConfig, lam_g=None, lam_y=None) -> ControlProblem:
    q = np.diag(cfg.q_diag) if cfg.q_diag else np.diag(
        [200.0, 200.0, 300.0] + [1.0] * 9
    )
    r = np.diag(cfg.r_diag) if cfg.r_diag else np.eye(4)
    box = cfg.pos_box
    y_min = np.concatenate([np.full(3, -box), np.full(9, -np.inf)])
    y_max = np.concatenate([np.full(3, box), np.full(9, np.inf)])
    return ControlProblem(
        horizon=cfg.horizon,
        t_ini=cfg.t_ini,
        Q=q,
        R=r,
        u_min=cfg.u_min,
        u_max=cfg.u_max,
        y_min=y_min,
        y_max=y_max,
        g_penalty=cfg.lam_g if lam_g is None else lam_g,
        slack_penalty=cfg.lam_y if lam_y is None else lam_y,
        constrain_first_output=False,
    )


def _quad_settings(cfg: ExperimentConfig, method: str = "deepc") -> QpSettings:
    eps_rel = cfg.mpc_eps_rel if method == "mpc" else cfg.eps_rel
    return QpSettings(eps_abs=cfg.eps_abs, eps_rel=eps_rel, max_iter=cfg.max_iter)


def _quad_run(cfg, cp, traj, method: str, plant_seed: int, reference) -> dict:
    """One closed-loop quadcopter run; failures become inf-cost records.

    The data-driven planner keeps its hard output boxes; the model-based
    baseline gets the same boxes as an exact one-norm penalty so an
    identification error that pushes the craft out of the box shows up as
    a measured violation instead of an aborted run.
    """
    params = _quad_params(cfg)
    plant = QuadPlant(params, rng=np.random.default_rng(plant_seed))
    if method == "deepc":
        dm = partition_data(traj, cp.t_ini, cp.horizon)
        controller = RegularizedDeepcController(dm, cp, settings=_quad_settings(cfg))
    elif method == "mpc":
        soft = cp.slack_penalty if cp.slack_penalty > 0 else 1e5
        cp = replace(cp, soft_output_penalty=soft)
        fit = identify_full_state(traj)
        controller = MpcController(
            fit.ss, cp, state_fn=plant.measure, settings=_quad_settings(cfg, "mpc")
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    warm = np.full((cp.t_ini, 4), params.hover_command)
    try:
        out = run_receding_horizon(
            plant, controller, cp, reference, steps=cfg.loop_steps, warmup_inputs=warm
        )
    except (InfeasibleStepError, DivergenceError) as err:
        return {
            "status": type(err).__name__,
            "cost": float("inf"),
            "violation_duration": float("inf"),
            "records": [],
        }
    cost = closed_loop_cost(out.trajectory, reference, cp)
    duration = params.dt * sum(r.violation_count > 0 for r in out.records)
    return {
        "status": "ok",
        "cost": float(cost),
        "violation_duration": float(duration),
        "records": out.records,
        "trajectory": out.trajectory,
    }


def _step_reference(cfg: ExperimentConfig) -> np.ndarray:
    ref = np.zeros((cfg.loop_steps, 12))
    at = int(round(cfg.step_time / QuadParams().dt))
    ref[at:, :3] = cfg.step_size
    return ref


def figure8_reference(cfg: ExperimentConfig) -> np.ndarray:
    """Planar figure-eight: x = A sin θ, y = A sin θ cos θ, constant z."""
    t = np.arange(cfg.loop_steps) * QuadParams().dt
    theta = 2.0 * np.pi * t / cfg.period
    ref = np.zeros((cfg.loop_steps, 12))
    ref[:, 0] = cfg.amplitude * np.sin(theta)
    ref[:, 1] = cfg.amplitude * np.sin(theta) * np.cos(theta)
    return ref


def _collect(cfg: ExperimentConfig, rep: int) -> tuple[Trajectory, int]:
    return collect_excitation_data(
        _quad_params(cfg),
        cfg.data_samples,
        band=cfg.excitation_band,
        seed=_seed_int(cfg.seed, _STREAM_DATA, rep),
    )


def run_step_stats(cfg: ExperimentConfig) -> ExperimentReport:
    """Paired step-response statistics, fresh data per repetition.

    Each repetition collects one excitation record, hands the same record
    and the same plant-noise seed to both methods, and logs realized cost
    and violation duration.  Aborted runs keep ``inf`` cost; pairs where
    either side aborted are excluded from the medians, while the per-pair
    violation comparison counts a completed run as beating an aborted one
    (equal durations fall back to the cheaper run).
    """
    report = ExperimentReport(kind="step-stats")
    cp = _quad_problem(cfg)
    reference = _step_reference(cfg)
    solve_records = []
    pairs = []
    for rep in range(cfg.repetitions):
        traj, _ = _collect(cfg, rep)
        plant_seed = _seed_int(cfg.seed, _STREAM_PLANT, rep)
        results = {}
        for method in ("deepc", "mpc"):
            res = _quad_run(cfg, cp, traj, method, plant_seed, reference)
            solve_records += res.get("records", [])
            results[method] = res
            report.runs.append(
                {
                    "rep": rep,
                    "method": method,
                    "status": res["status"],
                    "cost": res["cost"],
                    "violation_duration": res["violation_duration"],
                }
            )
        pairs.append((results["deepc"], results["mpc"]))

    surviving = [
        (d, m) for d, m in pairs if d["status"] == "ok" and m["status"] == "ok"
    ]
    med_deepc = _quartiles([d["cost"] for d, _ in surviving])[1]
    med_mpc = _quartiles([m["cost"] for _, m in surviving])[1]
    wins = 0
    for d, m in pairs:
        if d["status"] != "ok":
            continue
        if m["status"] != "ok" or d["violation_duration"] < m["violation_duration"]:
            wins += 1
        elif (
            d["violation_duration"] == m["violation_duration"]
            and d["cost"] < m["cost"]
        ):
            wins += 1
    need = math.ceil(0.6 * cfg.repetitions)
    medians_ok = (
        math.isfinite(med_deepc) and math.isfinite(med_mpc) and med_deepc <= med_mpc
    )
    report.passed = medians_ok and wins >= need
    q_d = _quartiles([d["cost"] for d, _ in surviving])
    q_m = _quartiles([m["cost"] for _, m in surviving])
    report.summary = [
        f"repetitions={cfg.repetitions}",
        f"surviving_pairs={len(surviving)}",
        f"deepc_failures={sum(d['status'] != 'ok' for d, _ in pairs)}",
        f"mpc_failures={sum(m['status'] != 'ok' for _, m in pairs)}",
        f"deepc_cost_quartiles={q_d[0]!r},{q_d[1]!r},{q_d[2]!r}",
        f"mpc_cost_quartiles={q_m[0]!r},{q_m[1]!r},{q_m[2]!r}",
        f"median_cost_deepc={med_deepc!r}",
        f"median_cost_mpc={med_mpc!r}",
        f"violation_wins={wins}",
        f"wins_needed={need}",
    ]
    report.aggregates = _solve_time_stats(solve_records)
    return report


def run_figure8(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """One figure-eight tracking run per method on identical seeds/data.

    When ``out_dir`` is given, also writes the reference, both closed-loop
    trajectories, and both per-step logs as CSV.
    """
    report = ExperimentReport(kind="figure8")
    cp = _quad_problem(cfg)
    reference = figure8_reference(cfg)
    traj, _ = _collect(cfg, 0)
    plant_seed = _seed_int(cfg.seed, _STREAM_PLANT, 0)
    solve_records = []
    results = {}
    for method in ("deepc", "mpc"):
        res = _quad_run(cfg, cp, traj, method, plant_seed, reference)
        results[method] = res
        solve_records += res.get("records", [])
        report.runs.append(
            {
                "method": method,
                "status": res["status"],
                "cost": res["cost"],
                "violation_duration": res["violation_duration"],
            }
        )
        if out_dir is not None and res["status"] == "ok":
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            write_trajectory_csv(res["trajectory"], out / f"figure8_{method}_traj.csv")
            _write_steps_csv(out / f"figure8_{method}_steps.csv", res["records"])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dt = QuadParams().dt
        rows = [
            [repr(float(k * dt))] + [repr(float(v)) for v in reference[k, :3]]
            for k in range(cfg.loop_steps)
        ]
        _write_csv(out / "figure8_reference.csv", ["t", "x", "y", "z"], rows)
    report.passed = all(res["status"] == "ok" for res in results.values())
    report.summary = [
        f"steps={cfg.loop_steps}",
        f"deepc_cost={results['deepc']['cost']!r}",
        f"mpc_cost={results['mpc']['cost']!r}",
        f"deepc_violation_s={results['deepc']['violation_duration']!r}",
        f"mpc_violation_s={results['mpc']['violation_duration']!r}",
    ]
    report.aggregates = _solve_time_stats(solve_records)
    return report


def run_reg_sweep(cfg: ExperimentConfig) -> ExperimentReport:
    """Average cost/violation over the two regularization-weight grids.

    The same repetition seeds are reused at every grid point, so points
    differ only in the weights.  A point's average covers its completed
    runs; a point with no completed runs averages to ``inf``.
    """
    report = ExperimentReport(kind="reg-sweep")
    reference = _step_reference(cfg)
    grid: list[tuple[str, float, float]] = []
    grid += [("lam_g", g, cfg.lam_y) for g in cfg.lam_g_grid]
    grid += [("lam_y", 300.0, y) for y in cfg.lam_y_grid]
    trajectories = [_collect(cfg, rep)[0] for rep in range(cfg.repetitions)]
    plant_seeds = [
        _seed_int(cfg.seed, _STREAM_PLANT, rep) for rep in range(cfg.repetitions)
    ]
    solve_records = []
    averages: dict[tuple[str, float, float], tuple[float, float, int]] = {}
    for sweep, lam_g, lam_y in grid:
        cp = _quad_problem(cfg, lam_g=lam_g, lam_y=lam_y)
        costs, durations, failed = [], [], 0
        for rep in range(cfg.repetitions):
            res = _quad_run(
                cfg, cp, trajectories[rep], "deepc", plant_seeds[rep], reference
            )
            solve_records += res.get("records", [])
            report.runs.append(
                {
                    "sweep": sweep,
                    "lam_g": lam_g,
                    "lam_y": lam_y,
                    "rep": rep,
                    "status": res["status"],
                    "cost": res["cost"],
                    "violation_duration": res["violation_duration"],
                }
            )
            if res["status"] == "ok":
                costs.append(res["cost"])
                durations.append(res["violation_duration"])
            else:
                failed += 1
        avg_cost = float(np.mean(costs)) if costs else float("inf")
        avg_dur = float(np.mean(durations)) if durations else float("inf")
        averages[(sweep, lam_g, lam_y)] = (avg_cost, avg_dur, failed)

    zero_cost = averages.get(("lam_g", 0.0, cfg.lam_y), (float("nan"),) * 3)[0]
    in_range = {
        g: averages[("lam_g", g, cfg.lam_y)][0]
        for g in cfg.lam_g_grid
        if 10.0 <= g <= 1e3
    }
    best_g = min(in_range, key=in_range.get) if in_range else float("nan")
    best_cost = in_range.get(best_g, float("nan"))
    if cfg.lam_g_grid and 0.0 in cfg.lam_g_grid and in_range:
        report.passed = bool(best_cost < zero_cost)
    report.summary = [
        f"repetitions={cfg.repetitions}",
        f"grid_points={len(grid)}",
        f"zero_lam_g_avg_cost={zero_cost!r}",
        f"best_lam_g={best_g!r}",
        f"best_lam_g_avg_cost={best_cost!r}",
    ]
    report.aggregates = _solve_time_stats(solve_records)
    return report


def write_sweep_points_csv(report: ExperimentReport, out_dir) -> Path:
    """Per-grid-point averages recomputed from the raw runs."""
    points: dict[tuple[str, float, float], list[dict]] = {}
    for run in report.runs:
        points.setdefault((run["sweep"], run["lam_g"], run["lam_y"]), []).append(run)
    rows = []
    for (sweep, lam_g, lam_y), runs in points.items():
        costs = [r["cost"] for r in runs if r["status"] == "ok"]
        durs = [r["violation_duration"] for r in runs if r["status"] == "ok"]
        rows.append(
            [
                sweep,
                repr(float(lam_g)),
                repr(float(lam_y)),
                repr(float(np.mean(costs)) if costs else float("inf")),
                repr(float(np.mean(durs)) if durs else float("inf")),
                str(sum(r["status"] != "ok" for r in runs)),
            ]
        )
    path = Path(out_dir) / "reg_sweep_points.csv"
    _write_csv(
        path,
        ["sweep", "lam_g", "lam_y", "avg_cost", "avg_violation_s", "failed_runs"],
        rows,
    )
    return path


# ---------------------------------------------------------------------------
# collect / solve
# ---------------------------------------------------------------------------


def run_collect(cfg: ExperimentConfig, out_dir) -> ExperimentReport:
    """Generate one excitation record and write it as a trajectory CSV."""
    report = ExperimentReport(kind="collect")
    traj, pe_order = _collect(cfg, 0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out / "excitation.csv")
    report.runs.append(
        {"samples": traj.samples, "pe_order": pe_order, "status": "ok"}
    )
    report.summary = [
        f"samples={traj.samples}",
        f"pe_order={pe_order}",
        f"band={cfg.excitation_band!r}",
        f"file=excitation.csv",
    ]
    return report


def run_solve(cfg: ExperimentConfig, out_dir) -> ExperimentReport:
    """One open-loop solve from files; writes the planned trajectory.

    ``data`` names the recorded trajectory CSV; the last ``t_ini`` rows of
    ``window`` (or of the data itself) form the initialization window.
    ``mode`` picks the planner: ``deepc``, ``regularized``, or ``mpc``
    (``mpc`` identifies a state-space fit from the data first unless
    ``model`` names a state-space file).
    """
    if cfg.data is None:
        raise ValueError("solve requires data=PATH in the config")
    traj = read_trajectory_csv(cfg.data)
    q = np.diag(cfg.q_diag) if cfg.q_diag else np.eye(traj.p)
    r = np.diag(cfg.r_diag) if cfg.r_diag else np.eye(traj.m)
    cp = ControlProblem(
        horizon=cfg.horizon,
        t_ini=cfg.t_ini,
        Q=q,
        R=r,
        u_min=cfg.u_min,
        u_max=cfg.u_max,
        g_penalty=cfg.lam_g,
        slack_penalty=cfg.lam_y,
    )
    window = read_trajectory_csv(cfg.window) if cfg.window else traj
    if window.samples < cfg.t_ini:
        raise ValueError("window shorter than t_ini")
    u_ini = window.u[-cfg.t_ini:]
    y_ini = window.y[-cfg.t_ini:]
    reference = np.asarray(
        cfg.ref if cfg.ref is not None else np.zeros(traj.p), dtype=float
    )
    settings = QpSettings(eps_abs=cfg.eps_abs, max_iter=cfg.max_iter)
    if cfg.mode == "mpc":
        ss = read_statespace(cfg.model) if cfg.model else identify_full_state(traj).ss
        from .ltisys import reconstruct_initial_state

        x_hat = reconstruct_initial_state(ss, u_ini, y_ini)
        result = solve_mpc(ss, x_hat, reference, cp, settings)
    else:
        dm = partition_data(traj, cfg.t_ini, cfg.horizon)
        if cfg.mode == "deepc":
            result = solve_deepc(dm, u_ini, y_ini, reference, cp, settings)
        elif cfg.mode == "regularized":
            result = solve_regularized_deepc(
                dm, u_ini, y_ini, reference, cp, settings
            )
        else:
            raise ValueError(f"unknown solve mode {cfg.mode!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = (
        ["step"]
        + [f"u{i + 1}" for i in range(traj.m)]
        + [f"y{i + 1}" for i in range(traj.p)]
    )
    rows = [
        [str(k)]
        + [repr(float(v)) for v in result.u[k]]
        + [repr(float(v)) for v in result.y[k]]
        for k in range(cfg.horizon)
    ]
    _write_csv(out / "plan.csv", header, rows)
    report = ExperimentReport(kind="solve")
    report.runs.append(
        {
            "mode": cfg.mode,
            "status": result.status,
            "objective": float(result.objective),
        }
    )
    report.passed = result.status == "optimal"
    report.summary = [
        f"mode={cfg.mode}",
        f"status={result.status}",
        f"objective={float(result.objective)!r}",
        "file=plan.csv",
    ]
    return report


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentReport:
    """Dispatch on ``cfg.kind``; writes outputs when ``out_dir`` is given."""
    out = Path(out_dir) if out_dir is not None else Path(cfg.out)
    if cfg.kind == "equivalence":
        report = run_equivalence(cfg)
    elif cfg.kind == "figure8":
        report = run_figure8(cfg, out_dir=out)
    elif cfg.kind == "step-stats":
        report = run_step_stats(cfg)
    elif cfg.kind == "reg-sweep":
        report = run_reg_sweep(cfg)
        write_sweep_points_csv(report, out)
    elif cfg.kind == "collect":
        report = run_collect(cfg, out)
    elif cfg.kind == "solve":
        report = run_solve(cfg, out)
    else:  # pragma: no cover - guarded by ExperimentConfig
        raise ValueError(cfg.kind)
    write_report(report, out)
    return report
