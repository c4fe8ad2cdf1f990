"""High-level service that runs scenario experiments and writes their results."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .channels import coherence_time, draw_static, jakes_track
from .dynamics import clamp_interior, integrate_ode, run_block_fading, run_on_channels
from .equilibrium import DEFAULT_TOL, ERGODIC_TOL, MAX_ITERATIONS, solve_ergodic, solve_static, sum_capacity
from .errors import StarConvexityError, StrictnessError, UndefinedCorrelationError
from .game import degeneracy_index, marginal_array, utility_array
from .metrics import (
    eql,
    evolutionary_index,
    general_certificate,
    instantaneous_exponent,
    kl_divergence,
    sre,
    strict_certificate,
    tracking_delay,
)
from .models import (
    ChannelState,
    ConvergenceCertificate,
    EquilibriumResult,
    FadingKind,
    FadingSpec,
    GameConfig,
    PowerProfile,
    Trajectory,
)
from .parsers import ExperimentKind, Scenario
from .repository import ResultRepository, channel_frame, trajectory_frame
from .utils import kmh_to_ms

logger = logging.getLogger(__name__)

SRE_OPTIMAL = 0.999
EQL_TARGET = 0.99
BOUND_SLACK = 1e-6
WARM_START_FLOOR = 1e-3
# realization label of tables averaged over every realization
ALL_REALIZATIONS = "all"


@dataclass(frozen=True)
class ExperimentInfo:
    kind: ExperimentKind
    figure: str
    required: Tuple[str, ...]
    description: str


CATALOG: Tuple[ExperimentInfo, ...] = (
    ExperimentInfo(
        ExperimentKind.PHASE_PORTRAIT,
        "Fig. 1",
        ("game", "dynamics.t_end"),
        "Replicator trajectories from random interior starts with per-user rates and exponents",
    ),
    ExperimentInfo(
        ExperimentKind.SRE_CDF,
        "Fig. 2a",
        ("game", "n_realizations"),
        "Sum-rate efficiency of the static equilibrium over random channel draws",
    ),
    ExperimentInfo(
        ExperimentKind.ERGODIC_SRE_VS_SNR,
        "Fig. 2b",
        ("game", "snr_sweep"),
        "Sum-rate efficiency of the ergodic equilibrium against the thermal SNR P_max / sigma^2",
    ),
    ExperimentInfo(
        ExperimentKind.EQL_OVER_TIME,
        "Fig. 3",
        ("game", "dynamics.n_steps", "user_counts"),
        "Equilibration level of discrete learning in static (Fig. 3a) or block fading (Fig. 3b)",
    ),
    ExperimentInfo(
        ExperimentKind.JAKES_TRACKING,
        "Figs. 4-5",
        ("game", "fading.kind = Jakes", "dynamics.n_steps", "velocities_kmh"),
        "Tracking delay of learning against the instantaneous equilibrium in Jakes fading",
    ),
    ExperimentInfo(
        ExperimentKind.CERTIFICATE_REPORT,
        "certificate report",
        ("game", "dynamics.t_end"),
        "Convergence certificate against the measured divergence decay",
    ),
)


def list_experiments() -> List[ExperimentInfo]:
    return list(CATALOG)


@dataclass(frozen=True)
class SolverOptions:
    tol: float = DEFAULT_TOL
    max_iterations: int = MAX_ITERATIONS


@dataclass
class RealizationOutput:
    index: int
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)
    record: Dict[str, Any] = field(default_factory=dict)


@dataclass
class RunReport:
    scenario: str
    output_dir: Path
    files: List[Path]
    summary: Dict[str, Any]


def _user_games(scenario: Scenario) -> List[GameConfig]:
    if scenario.user_counts:
        return [scenario.game_for(count) for count in scenario.user_counts]
    return [scenario.game]


def _solve(cfg: GameConfig, channels: ChannelState, options: SolverOptions, **kwargs: Any) -> EquilibriumResult:
    return solve_static(cfg, channels, options.tol, max_iterations=options.max_iterations, **kwargs)


def _solve_ergodic(cfg: GameConfig, spec: FadingSpec, options: SolverOptions) -> EquilibriumResult:
    return solve_ergodic(
        cfg, spec, max(options.tol, ERGODIC_TOL), max_iterations=options.max_iterations, jitter=True
    )


def certify(
    cfg: GameConfig, channels: ChannelState, equilibrium: EquilibriumResult, p0: PowerProfile
) -> Optional[ConvergenceCertificate]:
    """Strict certificate at a strict vertex, the general one otherwise; ``None`` if neither applies."""

    if equilibrium.is_vertex:
        try:
            return strict_certificate(cfg, channels, equilibrium, p0)
        except StrictnessError as exc:
            logger.debug("Vertex equilibrium is not strict: %s", exc)
    try:
        return general_certificate(cfg, channels, equilibrium, p0)
    except StarConvexityError as exc:
        logger.warning("No certificate: %s", exc)
        return None


def _rates_frame(
    trajectory: Trajectory, channels: ChannelState, cfg: GameConfig, equilibrium: EquilibriumResult, extra: Dict
) -> pd.DataFrame:
    exponents = instantaneous_exponent(trajectory, equilibrium)
    rows = []
    for step, (time, profile) in enumerate(zip(trajectory.times, trajectory.profiles)):
        rates = utility_array(profile.allocation, channels.gains, cfg)
        for k in range(cfg.num_users):
            series = exponents.per_user[k]
            exponent = math.nan if step == 0 or series is None else float(series[step - 1])
            rows.append({**extra, "step": step, "time": float(time), "user": k, "utility": float(rates[k]), "exponent": exponent})
    return pd.DataFrame(rows)


def _phase_portrait(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    cfg = scenario.game
    dynamics = scenario.dynamics
    channels = draw_static(scenario.fading_for(cfg, seed), cfg)
    equilibrium = _solve(cfg, channels, options)
    rng = np.random.default_rng(seed)
    output = RealizationOutput(index)
    starts = []
    for start in range(scenario.n_starts):
        p0 = PowerProfile.random_interior(cfg, rng)
        trajectory = integrate_ode(p0, channels, cfg, dynamics.t_end, dynamics.dt, dynamics.record_every)
        extra = {"realization": index, "start": start}
        output.frames[f"trajectory_s{start}"] = trajectory_frame(trajectory, cfg, extra)
        output.frames[f"rates_s{start}"] = _rates_frame(trajectory, channels, cfg, equilibrium, extra)
        certificate = certify(cfg, channels, equilibrium, p0)
        starts.append({"start": start, "certificate": None if certificate is None else certificate.to_dict()})
    output.record = {
        "equilibrium": equilibrium.to_dict(cfg),
        "degeneracy_index": degeneracy_index(cfg),
        "starts": starts,
    }
    return output


def _sre_cdf(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    output = RealizationOutput(index)
    rows = []
    for cfg in _user_games(scenario):
        channels = draw_static(scenario.fading_for(cfg, seed), cfg)
        equilibrium = _solve(cfg, channels, options)
        capacity = sum_capacity(cfg, channels, equilibrium)
        rows.append(
            {
                "realization": index,
                "step": 0,
                "users": cfg.num_users,
                "sre": sre(equilibrium.profile, channels, cfg, capacity),
                "capacity": capacity,
                "vertex": equilibrium.is_vertex,
            }
        )
        profile = Trajectory(times=np.zeros(1), profiles=(equilibrium.profile,))
        extra = {"realization": index, "users": cfg.num_users}
        output.frames[f"equilibrium_K{cfg.num_users}"] = trajectory_frame(profile, cfg, extra)
    output.record = {"rows": rows}
    return output


def _ergodic_sre(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    base = scenario.game
    draw = scenario.fading_for(base, seed).with_kind(FadingKind.STATIC)
    spec = draw.with_kind(FadingKind.GAUSSIAN_FAST).with_variance(draw_static(draw, base).gains)
    p_max = base.max_power[0]
    rows = []
    for step, rho in enumerate(scenario.snr_sweep or ()):
        cfg = base.with_noise(p_max / rho)
        equilibrium = _solve_ergodic(cfg, spec, options)
        capacity = sum_capacity(cfg, spec, equilibrium, jitter=True)
        rows.append(
            {
                "realization": index,
                "step": step,
                "snr": rho,
                "snr_db": 10.0 * math.log10(rho),
                "sre": sre(equilibrium.profile, spec, cfg, capacity, jitter=True),
                "capacity": capacity,
            }
        )
    frame = pd.DataFrame(rows)
    return RealizationOutput(index, frames={"sre": frame}, record={"rows": rows})


def _eql_over_time(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    dynamics = scenario.dynamics
    output = RealizationOutput(index)
    series: Dict[str, List[float]] = {}
    for cfg in _user_games(scenario):
        spec = scenario.fading_for(cfg, seed)
        p0 = PowerProfile.uniform(cfg)
        if spec.kind is FadingKind.STATIC:
            target: Any = draw_static(spec, cfg)
            equilibrium = _solve(cfg, target, options)
            trajectory = run_on_channels(
                p0, [target] * dynamics.n_steps, cfg, dynamics.schedule, dynamics.record_every
            )
        else:
            target = spec
            equilibrium = _solve_ergodic(cfg, spec, options)
            trajectory = run_block_fading(
                p0, cfg, spec, dynamics.schedule, dynamics.n_steps, record_every=dynamics.record_every
            )
        levels = [eql(profile, target, cfg, equilibrium, jitter=True) for profile in trajectory.profiles]
        series[str(cfg.num_users)] = levels
        output.frames[f"eql_K{cfg.num_users}"] = pd.DataFrame(
            {
                "realization": index,
                "users": cfg.num_users,
                "step": np.arange(len(trajectory)),
                "time": trajectory.times,
                "eql": levels,
            }
        )
    output.record = {"eql": series, "times": output.frames[next(iter(output.frames))]["time"].tolist()}
    return output


def _tracking_frame(
    learned: Sequence[PowerProfile], equilibria: Sequence[PowerProfile], cfg: GameConfig, period: float, extra: Dict
) -> pd.DataFrame:
    metrics = {
        f"equilibrium[{k},{alpha}]": np.array([q.allocation[k, alpha] for q in equilibria]) for k, alpha in cfg.links()
    }
    times = period * np.arange(len(learned))
    return trajectory_frame(Trajectory(times=times, profiles=tuple(learned), metrics=metrics), cfg, extra)


def _jakes_tracking(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    cfg = scenario.game
    n_steps = scenario.dynamics.n_steps
    output = RealizationOutput(index)
    delays: Dict[str, Optional[float]] = {}
    for velocity in scenario.velocities_kmh:
        spec = scenario.fading_for(cfg, seed, velocity)
        track = jakes_track(spec, cfg, n_steps)
        equilibria: List[PowerProfile] = []
        previous: Optional[PowerProfile] = None
        for state in track:
            initial = None if previous is None else clamp_interior(previous, cfg, WARM_START_FLOOR)
            previous = _solve(cfg, state, options, initial=initial).profile
            equilibria.append(previous)
        learned = run_on_channels(PowerProfile.uniform(cfg), track, cfg, scenario.dynamics.schedule)
        # p(n + 1) is the response to channel n
        response = learned.profiles[1:]
        try:
            delay: Optional[float] = tracking_delay(
                equilibria, response, spec.sample_period, scenario.tracked_link
            ).delay
        except UndefinedCorrelationError as exc:
            logger.warning("Realization %d at %g km/h: %s", index, velocity, exc)
            delay = None
        delays[f"{velocity:g}"] = delay
        extra = {"realization": index, "velocity_kmh": velocity}
        output.frames[f"tracking_v{velocity:g}"] = _tracking_frame(response, equilibria, cfg, spec.sample_period, extra)
        output.frames[f"channels_v{velocity:g}"] = channel_frame(track, cfg, extra)
    output.record = {"delays": delays}
    return output


def _certificate_report(scenario: Scenario, index: int, options: SolverOptions) -> RealizationOutput:
    seed = scenario.seed + index
    cfg = scenario.game
    dynamics = scenario.dynamics
    channels = draw_static(scenario.fading_for(cfg, seed), cfg)
    equilibrium = _solve(cfg, channels, options)
    p0 = PowerProfile.uniform(cfg)
    certificate = certify(cfg, channels, equilibrium, p0)
    trajectory = integrate_ode(p0, channels, cfg, dynamics.t_end, dynamics.dt, dynamics.record_every)
    divergence = np.array([kl_divergence(equilibrium.profile, p) for p in trajectory.profiles])
    exponent = np.concatenate([[math.nan], _total_exponent(trajectory, equilibrium)])
    index_values = [
        evolutionary_index(p, equilibrium, marginal_array(p.allocation, channels.gains, cfg), cfg).value
        for p in trajectory.profiles
    ]
    rate = certificate.c if certificate is not None else math.nan
    bound = divergence[0] * np.exp(-rate * trajectory.times)
    frame = pd.DataFrame(
        {
            "realization": index,
            "step": np.arange(len(trajectory)),
            "time": trajectory.times,
            "divergence": divergence,
            "bound": bound,
            "exponent": exponent,
            "evolutionary_index": index_values,
        }
    )
    tail = exponent[len(exponent) - max(1, (len(exponent) - 1) // 3):]
    finite_tail = tail[np.isfinite(tail)]
    record = {
        "equilibrium": equilibrium.to_dict(cfg),
        "certificate": None if certificate is None else certificate.to_dict(),
        "bound_holds": None if certificate is None else bool(np.all(divergence <= bound * (1.0 + BOUND_SLACK))),
        "tail_exponent": float(finite_tail.min()) if finite_tail.size else None,
    }
    return RealizationOutput(index, frames={"certificate": frame}, record=record)


def _total_exponent(trajectory: Trajectory, equilibrium: EquilibriumResult) -> np.ndarray:
    series = instantaneous_exponent(trajectory, equilibrium)
    if series.total is None:
        return np.full(len(trajectory) - 1, math.nan)
    return series.total


def _summarize_sre(scenario: Scenario, outputs: List[RealizationOutput]) -> Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]:
    table = pd.DataFrame([row for output in outputs for row in output.record["rows"]])
    summary = {}
    for users, group in table.groupby("users"):
        summary[str(users)] = {
            "fraction_optimal": float((group["sre"] > SRE_OPTIMAL).mean()),
            "mean_sre": float(group["sre"].mean()),
            "quantiles": {f"{q:g}": float(group["sre"].quantile(q)) for q in (0.1, 0.5, 0.9)},
        }
    return {"by_users": summary}, {"sre": table}


def _summarize_ergodic(scenario: Scenario, outputs: List[RealizationOutput]) -> Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]:
    table = pd.DataFrame([row for output in outputs for row in output.record["rows"]])
    means = table.groupby("step").agg(snr=("snr", "first"), snr_db=("snr_db", "first"), mean_sre=("sre", "mean"))
    return {"by_snr": means.reset_index().to_dict(orient="records")}, {"sre": table}


def _summarize_eql(scenario: Scenario, outputs: List[RealizationOutput]) -> Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]:
    times = outputs[0].record["times"]
    summary = {}
    rows = []
    for users in outputs[0].record["eql"]:
        mean = np.mean([output.record["eql"][users] for output in outputs], axis=0)
        reached = np.nonzero(mean >= EQL_TARGET)[0]
        summary[users] = {"first_step_at_target": int(times[reached[0]]) if reached.size else None, "final": float(mean[-1])}
        rows.extend(
            {"realization": ALL_REALIZATIONS, "users": int(users), "step": step, "time": times[step], "mean_eql": value}
            for step, value in enumerate(mean)
        )
    return {"by_users": summary, "target": EQL_TARGET}, {"mean_eql": pd.DataFrame(rows)}


def _summarize_tracking(scenario: Scenario, outputs: List[RealizationOutput]) -> Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]:
    summary = {}
    rows = []
    # delays are measured over the whole track, up to its last step
    last_step = scenario.dynamics.n_steps - 1
    for velocity in scenario.velocities_kmh:
        key = f"{velocity:g}"
        values = [output.record["delays"][key] for output in outputs]
        rows.extend(
            {"realization": output.index, "step": last_step, "velocity_kmh": velocity, "delay": value}
            for output, value in zip(outputs, values)
        )
        coherence = coherence_time(kmh_to_ms(velocity), scenario.fading.carrier_frequency)
        defined = [value for value in values if value is not None]
        median = float(np.median(defined)) if defined else None
        summary[key] = {
            "coherence_time": coherence,
            "median_delay": median,
            "mean_delay": float(np.mean(defined)) if defined else None,
            "median_fraction_of_coherence": None if median is None else median / coherence,
        }
    return {"by_velocity": summary}, {"delays": pd.DataFrame(rows)}


def _summarize_records(scenario: Scenario, outputs: List[RealizationOutput]) -> Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]:
    return {"realizations": [{"index": output.index, **output.record} for output in outputs]}, {}


Runner = Callable[[Scenario, int, SolverOptions], RealizationOutput]
Summarizer = Callable[[Scenario, List[RealizationOutput]], Tuple[Dict[str, Any], Dict[str, pd.DataFrame]]]

EXPERIMENTS: Dict[ExperimentKind, Tuple[Runner, Summarizer]] = {
    ExperimentKind.PHASE_PORTRAIT: (_phase_portrait, _summarize_records),
    ExperimentKind.SRE_CDF: (_sre_cdf, _summarize_sre),
    ExperimentKind.ERGODIC_SRE_VS_SNR: (_ergodic_sre, _summarize_ergodic),
    ExperimentKind.EQL_OVER_TIME: (_eql_over_time, _summarize_eql),
    ExperimentKind.JAKES_TRACKING: (_jakes_tracking, _summarize_tracking),
    ExperimentKind.CERTIFICATE_REPORT: (_certificate_report, _summarize_records),
}


@dataclass
class ExperimentService:
    repository: ResultRepository
    workers: int = 1
    options: SolverOptions = field(default_factory=SolverOptions)

    def realizations(self, scenario: Scenario) -> List[RealizationOutput]:
        runner, _ = EXPERIMENTS[scenario.experiment]
        task = partial(runner, scenario, options=self.options)
        indices = range(scenario.n_realizations)
        if self.workers > 1 and scenario.n_realizations > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as pool:
                outputs = list(pool.map(_call, [task] * len(indices), indices))
        else:
            outputs = [task(index) for index in indices]
        return sorted(outputs, key=lambda output: output.index)

    def run(self, scenario: Scenario) -> RunReport:
        logger.info(
            "Running %s (%s, %d realizations, seed %d)",
            scenario.name,
            scenario.experiment.value,
            scenario.n_realizations,
            scenario.seed,
        )
        outputs = self.realizations(scenario)
        for output in outputs:
            for name, frame in sorted(output.frames.items()):
                self.repository.write_realization(output.index, frame, name)
        _, summarize = EXPERIMENTS[scenario.experiment]
        summary, tables = summarize(scenario, outputs)
        for name, table in sorted(tables.items()):
            self.repository.write_table(name, table)
        summary = {"scenario": scenario.name, "experiment": scenario.experiment.value, **summary}
        self.repository.write_summary(summary)
        self.repository.write_manifest(
            scenario.source, scenario.seed, scenario.n_realizations, scenario.game, scenario.experiment.value
        )
        logger.info("Wrote results for %s to %s", scenario.name, self.repository.root)
        return RunReport(scenario.name, self.repository.root, self.repository.files(), summary)


def _call(task: Callable[[int], RealizationOutput], index: int) -> RealizationOutput:
    return task(index)
