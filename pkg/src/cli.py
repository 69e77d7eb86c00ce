"""
Command-line surface.

    nof1 simulate|estimate|gformula|diagnose|aggregate|validate \
        --config run.yaml --seed 7 --out results/

Every run writes report.json (deterministic for a given config and seed)
and run_metadata.json (timestamps, config digest, seed) to the output
directory, plus CSV tables and SVG graphics where a command produces
per-time series.
"""

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.config_io import Section, dump_kernels, load_kernels_file, load_scm, load_scm_file, read_yaml, write_yaml
from src.configuration import Configuration
from src.diagnostics import diagnose
from src.errors import ConfigError, EstimationError, Nof1Error, ValidationError
from src.estimate_basic import Estimate, t_test, tau_hat, tau_hat_estimate
from src.forward import InitialState
from src.gcomputation import (
    CovariateSpec,
    FittedModels,
    GComputationEstimator,
    GModelSpec,
    InitialConditions,
    InnerEstimator,
    IntervalMethod,
    KernelDPEstimator,
    fit_models,
    gcomputation_mc,
    parametric_bootstrap,
)
from src.gformula import GKernels, fit_kernels, observed_initial, ucate_series
from src.models import ModelFamily
from src.montecarlo import derive_rng
from src.panel import ColumnMapping, ingest, write_panel
from src.plots import emit_plot_data
from src.schedule import Design, Schedule, design_by_name
from src.scm import SCM, AdditiveSCM, DiscreteSCM, Regime, exact_counterfactual_means, simulate, true_ace
from src.series import aggregate_gformula, aggregate_tau, load_manifest, load_series, parallel_contrasts
from src.trajectory import Trajectory
from src.validation import SUITES, Scale, run_suites

logger = logging.getLogger("nof1.cli")

COMMANDS = ("simulate", "estimate", "gformula", "diagnose", "aggregate", "validate")
MAX_SEED = 2**64 - 1

Report = Dict[str, Any]


class ArgumentError(ValidationError):
    """Malformed command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise ArgumentError(f"{self.prog}: {message}")


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}")
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must lie in [0, 2^64 - 1], got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config's seed)")
    common.add_argument("--out", help="output directory (default: $NOF1_OUTPUT_DIR)")
    common.add_argument("--data", help="panel CSV, or a manifest CSV for aggregate")
    common.add_argument("--mapping", help='column mapping, e.g. "time=day,treatment=trt,outcome=score"')
    common.add_argument("--schedule", help='treatment schedule of the panel, e.g. "000000111111"')

    parser = _Parser(prog="nof1", description="Causal simulation and estimation for N-of-1 trials")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate trajectories from an SCM")
    sub.add_parser("estimate", parents=[common], help="mean-difference estimate, interval and Welch test")
    sub.add_parser("gformula", parents=[common], help="per-time effects by the g-formula or g-computation")
    sub.add_parser("diagnose", parents=[common], help="stationarity and constant-noise diagnostics")
    sub.add_parser("aggregate", parents=[common], help="population effects from a series of trials")
    validate = sub.add_parser("validate", parents=[common], help="run the acceptance suites")
    validate.add_argument("--suite", action="append", choices=sorted(SUITES), help="suite to run (repeatable)")
    validate.add_argument("--scale", choices=[s.value for s in Scale], help="study size (default quick)")
    return parser


@dataclass
class RunContext:
    """Everything a subcommand needs: parsed config, seed, output directory and settings."""
    command: str
    config: Section
    config_path: Optional[str]
    config_digest: str
    seed: Optional[int]
    out_dir: str
    data: Optional[str]
    mapping_text: Optional[str]
    schedule_text: Optional[str]
    settings: Configuration
    args: argparse.Namespace

    @classmethod
    def from_args(cls, args: argparse.Namespace, settings: Configuration) -> "RunContext":
        raw = b""
        doc: Any = {}
        if args.config:
            try:
                with open(args.config, "rb") as f:
                    raw = f.read()
            except OSError as e:
                raise ConfigError(args.config, f"cannot read: {e}")
            doc = read_yaml(args.config)
            if doc is None:
                doc = {}
        config = Section(doc, "")
        seed = args.seed
        if seed is None and config.has("seed"):
            seed = config.get_int("seed", minimum=0)
            if seed > MAX_SEED:
                raise ConfigError("seed", "must lie in [0, 2^64 - 1]")
        return cls(
            command=args.command,
            config=config,
            config_path=args.config,
            config_digest=hashlib.sha256(raw).hexdigest(),
            seed=seed,
            out_dir=args.out or settings.output_dir,
            data=args.data,
            mapping_text=args.mapping,
            schedule_text=args.schedule,
            settings=settings,
            args=args,
        )

    @property
    def level(self) -> float:
        level = self.config.get_float("level", self.settings.ci_level)
        if not 0.0 < level < 1.0:
            raise ConfigError("level", f"must lie in (0, 1), got {level}")
        return level

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("seed", f"{self.command} needs a seed (config key 'seed' or --seed)")
        return self.seed

    def section(self, name: str) -> Section:
        """The named config section, or an empty one when absent."""
        return self.config.section(name, required=False) or Section({}, name)

    def resolve(self, path: str) -> str:
        if os.path.isabs(path) or self.config_path is None:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.config_path)), path)

    def artifact(self, name: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, name)


def _mapping(ctx: RunContext, section: Section) -> ColumnMapping:
    if ctx.mapping_text:
        return ColumnMapping.parse(ctx.mapping_text)
    if not section.has("mapping"):
        return ColumnMapping()
    if isinstance(section.doc["mapping"], str):
        return ColumnMapping.parse(section.get_str("mapping"))
    spec = section.section("mapping")
    assert spec is not None
    rename = spec.section("rename", required=False)
    return ColumnMapping(
        time=spec.get_str("time", "time"),
        treatment=spec.get_str("treatment", "treatment"),
        outcome=spec.get_str("outcome", "outcome"),
        covariates=tuple(str(c) for c in spec.get_list("covariates", [])),
        rename={str(k): str(v) for k, v in rename.doc.items()} if rename is not None else {},
    )


def _data_path(ctx: RunContext, key: str = "file") -> str:
    if ctx.data:
        return ctx.data
    section = ctx.section("data")
    if not section.has(key):
        raise ConfigError(section.child_path(key), f"{ctx.command} needs input data (--data or data.{key})")
    return ctx.resolve(section.get_str(key))


def _load_trajectory(ctx: RunContext) -> Trajectory:
    section = ctx.section("data")
    text = ctx.schedule_text or (section.get_str("schedule") if section.has("schedule") else None)
    schedule = Schedule.from_string(text) if text else None
    path = _data_path(ctx)
    traj = ingest(path, _mapping(ctx, section), schedule=schedule, u_label=section.get_str("id", "") or None)
    logger.info("Loaded %s: t=%d, %d treated, %d control", path, traj.t, len(traj.arm(1)), len(traj.arm(0)))
    return traj


def _load_scm(ctx: RunContext, section: Section) -> SCM:
    if section.has("scm_file"):
        return load_scm_file(ctx.resolve(section.get_str("scm_file")))
    if section.has("scm"):
        return load_scm(section.doc["scm"], section.child_path("scm"))
    raise ConfigError(section.child_path("scm"), "an inline scm or an scm_file is required")


def _baseline(scm: SCM, section: Section) -> Union[str, int, float, None]:
    """The configured baseline: a level name or index for a discrete SCM, a shift for an additive one."""
    if not section.has("u"):
        return None if isinstance(scm, AdditiveSCM) else 0
    value = section.doc["u"]
    if isinstance(scm, AdditiveSCM):
        return section.get_float("u")
    if isinstance(value, str):
        return value
    return section.get_int("u", minimum=0)


def _float_list(section: Section, key: str) -> Optional[List[float]]:
    return section.get_array(key).tolist() if section.has(key) else None


def _jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


def _write_json(path: str, body: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        f.write(json.dumps(_jsonable(body), sort_keys=True, indent=2))
        f.write("\n")


def _estimate_records(estimates: Sequence[Estimate]) -> List[Dict[str, object]]:
    return [e.to_record() for e in estimates]


def run_simulate(ctx: RunContext) -> Tuple[Report, bool]:
    section = ctx.config.section("simulate")
    assert section is not None
    seed = ctx.require_seed()
    scm = _load_scm(ctx, section)
    t = section.get_int("t", minimum=1)
    n = section.get_int("n", 1, minimum=1)
    design: Optional[Design] = None
    schedule: Optional[Schedule] = None
    if section.has("design"):
        design = design_by_name(section.get_str("design"))
    else:
        schedule = Schedule.from_string(section.get_str("schedule"))

    rows = []
    for i in range(n):
        rng = derive_rng(seed, i)
        u = _baseline(scm, section)
        if isinstance(scm, DiscreteSCM) and not section.has("u"):
            u = int(rng.choice(len(scm.u_levels), p=scm.u_weights))
        unit_schedule = design.sample_schedule(rng) if design is not None else schedule
        assert unit_schedule is not None
        traj = simulate(scm, u, Regime.natural(unit_schedule), t, int(rng.integers(2**63 - 1)))
        name = f"trajectory_{i + 1:04d}.csv"
        write_panel(traj, ctx.artifact(name))
        rows.append({
            "id": f"{i + 1:04d}", "file": name, "schedule": str(unit_schedule),
            "u": traj.u_label if traj.u_label is not None else ("" if u is None else str(u)),
            "tau_hat": tau_hat(traj) if 0 < traj.a.sum() < t else float("nan"),
        })
    manifest = pd.DataFrame(rows)
    manifest.to_csv(ctx.artifact("manifest.csv"), index=False)
    logger.info("Simulated %d trajectories of length %d", n, t)

    truth: Dict[str, Any] = {}
    if isinstance(scm, DiscreteSCM):
        for index, label in enumerate(scm.u_levels):
            treated = exact_counterfactual_means(scm, index, Regime.always(1), t)
            control = exact_counterfactual_means(scm, index, Regime.always(0), t)
            truth[label] = (treated - control).tolist()
        truth["ace"] = [true_ace(scm, k) for k in range(1, t + 1)]
    else:
        truth["effect"] = scm.beta
    print(f"simulated {n} trajectories (t={t}) into {ctx.out_dir}")
    return {"trajectories": manifest.to_dict("records"), "true_effects": truth, "t": t}, True


def run_estimate(ctx: RunContext) -> Tuple[Report, bool]:
    traj = _load_trajectory(ctx)
    estimate = tau_hat_estimate(traj, ctx.level)
    report: Report = {
        "t": traj.t,
        "estimate": estimate.to_record(),
        "level_codings": {k: list(v) for k, v in traj.level_codings.items()},
    }
    try:
        test = t_test(traj)
        report["t_test"] = {"statistic": test.statistic, "df": test.df, "p_value": test.p_value,
                            "method": test.method}
        p_text = f"; Welch p = {test.p_value:.4g}"
    except EstimationError as e:
        logger.warning("Welch test skipped: %s", e)
        report["t_test"] = None
        p_text = ""
    if estimate.has_interval:
        print(f"tau_hat = {estimate.point:.3f} ({estimate.ci_low:.3f}, {estimate.ci_high:.3f}){p_text}")
    else:
        print(f"tau_hat = {estimate.point:.3f} (no interval){p_text}")
    return report, True


def _model_spec(section: Optional[Section], covariates: Sequence[str]) -> GModelSpec:
    if section is None:
        return GModelSpec.relaxed(covariates)
    family = ModelFamily(section.get_choice("family", [f.value for f in ModelFamily], ModelFamily.CATEGORICAL.value))
    smoothing = section.get_float("smoothing", 0.0)
    if not section.has("covariates") and not section.has("outcome_parents"):
        return GModelSpec.relaxed(covariates, family, smoothing)
    try:
        specs = []
        for i, item in enumerate(section.get_list("covariates", [])):
            cov = Section(item, f"{section.child_path('covariates')}[{i}]")
            specs.append(CovariateSpec(
                name=cov.get_str("name"),
                parents=tuple(str(p) for p in cov.get_list("parents", [])),
                period=cov.get_int("period", 1, minimum=1),
                deterministic=cov.get_bool("deterministic"),
                family=ModelFamily(cov.get_choice("family", [f.value for f in ModelFamily])) if cov.has("family") else None,
                domain=_domain(cov),
            ))
        return GModelSpec(
            tuple(str(p) for p in section.get_list("outcome_parents")), tuple(specs), family, smoothing,
            _domain(section, "outcome_domain"),
        )
    except ConfigError:
        raise
    except ValidationError as e:
        raise ConfigError(section.path, str(e))


def _domain(section: Section, key: str = "domain") -> Optional[Tuple[float, float]]:
    if not section.has(key):
        return None
    bounds = section.get_array(key)
    if bounds.shape != (2,) or bounds[0] > bounds[1]:
        raise ConfigError(section.child_path(key), "expected [low, high] with low <= high")
    return float(bounds[0]), float(bounds[1])


def _covariate_name(traj: Trajectory, section: Section) -> Optional[str]:
    if section.has("covariate"):
        return section.get_str("covariate")
    if len(traj.covariate_names) == 1:
        return traj.covariate_names[0]
    if traj.covariate_names:
        raise ConfigError(section.child_path("covariate"),
                          f"trajectory has covariates {list(traj.covariate_names)}; choose one for the kernels")
    return None


def _with_constant_covariate(traj: Trajectory) -> Trajectory:
    # kernel-based models always carry one covariate; a panel without one gets a single-level column
    return Trajectory(a=traj.a, y=traj.y, l=np.zeros((traj.t, 1)), covariate_names=("l",),
                      u_label=traj.u_label, schedule=traj.schedule)


def _bootstrap(
    ctx: RunContext,
    section: Section,
    models: FittedModels,
    traj: Trajectory,
    inner: InnerEstimator,
    point: np.ndarray,
) -> List[Estimate]:
    boot = section.section("bootstrap")
    assert boot is not None
    B = boot.get_int("B", minimum=2)
    method = IntervalMethod(boot.get_choice("method", [m.value for m in IntervalMethod], IntervalMethod.NORMAL.value))
    # the observed treatment sequence is one cycle of a schedule with q = t
    schedule = traj.schedule or Schedule(tuple(int(a) for a in traj.a))
    result = parametric_bootstrap(
        models, schedule, traj.t, B, inner, ctx.level, ctx.require_seed(), method, point,
        workers=ctx.settings.workers,
    )
    return result.estimates


def _gformula_from_data(ctx: RunContext, section: Section) -> Tuple[Report, List[Estimate]]:
    traj = _load_trajectory(ctx)
    method = section.get_choice("method", ("dp", "gcomputation"), "dp")
    smoothing = section.get_float("smoothing", 0.0)
    horizon = section.get_int("horizon", traj.t, minimum=2)
    bootstrapped = section.has("bootstrap")
    if bootstrapped and horizon != traj.t:
        raise ConfigError(section.child_path("horizon"), "bootstrap bands cover the observed horizon only")
    n1, n0 = len(traj.arm(1)), len(traj.arm(0))
    report: Report = {"method": method, "t": traj.t, "horizon": horizon}

    if method == "dp":
        covariate = _covariate_name(traj, section)
        kernels = fit_kernels(traj, smoothing, _float_list(section, "y_values"), _float_list(section, "l_values"),
                              covariate)
        write_yaml({"kernels": dump_kernels(kernels)}, ctx.artifact("kernels.yaml"))
        point = ucate_series(kernels, horizon, observed_initial(traj, kernels, covariate))
        if not bootstrapped:
            return report, [Estimate.point_only(v, ctx.level, n1, n0, "gformula-dp", time=k)
                            for k, v in zip(range(2, horizon + 1), point)]
        if covariate is None:
            traj, covariate = _with_constant_covariate(traj), "l"
        models = FittedModels.from_kernels(kernels, covariate, trajectory=traj)
        inner: InnerEstimator = KernelDPEstimator(smoothing, kernels.y_values.tolist(), kernels.l_values.tolist(),
                                                  covariate)
        return report, _bootstrap(ctx, section, models, traj, inner, point)

    spec = _model_spec(section.section("model", required=False), traj.covariate_names)
    models = fit_models(traj, spec)
    reps = section.get_int("reps", 10_000, minimum=1)
    result = gcomputation_mc(models, horizon, reps, ctx.require_seed(), block_size=ctx.settings.mc_block_size,
                             workers=ctx.settings.workers)
    report["reps"] = reps
    report["mc_se"] = result.mc_se.tolist()
    if not bootstrapped:
        return report, [Estimate.point_only(v, ctx.level, n1, n0, "gcomputation", time=int(k))
                        for k, v in zip(result.times, result.contrast)]
    boot = section.section("bootstrap")
    assert boot is not None
    inner_name = boot.get_choice("inner", ("gcomputation", "kernel-dp"), "gcomputation")
    if inner_name == "gcomputation":
        inner = GComputationEstimator(spec, boot.get_int("inner_reps", 500, minimum=1), ctx.settings.mc_block_size)
    else:
        inner = KernelDPEstimator(smoothing, covariate=_covariate_name(traj, section))
    return report, _bootstrap(ctx, section, models, traj, inner, result.contrast)


def _gformula_oracle(ctx: RunContext, section: Section) -> Tuple[Report, List[Estimate]]:
    """Known kernels (from an SCM or a kernel dump): exact recursion, optionally checked by g-computation."""
    t = section.get_int("t", minimum=1)
    if section.has("kernels_file"):
        kernels = load_kernels_file(ctx.resolve(section.get_str("kernels_file")))
        origin = section.section("initial")
        assert origin is not None
        initial = InitialState(origin.get_int("y", 0, minimum=0), origin.get_int("l", 0, minimum=0),
                               origin.get_int("a", 0), 0)
    else:
        loaded = _load_scm(ctx, section)
        if not isinstance(loaded, DiscreteSCM):
            raise ConfigError(section.child_path("scm"), "the g-formula needs a discrete SCM")
        u = _baseline(loaded, section)
        assert not isinstance(u, float) and u is not None
        kernels = GKernels.from_scm(loaded, u)
        initial = loaded.initial
    oracle = ucate_series(kernels, t, initial)
    report: Report = {"method": section.get_choice("method", ("dp", "gcomputation"), "dp"), "t": t,
                      "oracle": oracle.tolist()}
    times = range(initial.time + 1, t + 1)
    if report["method"] == "dp":
        return report, [Estimate.normal(v, 0.0, ctx.level, 1, 1, "gformula-dp/exact", time=k)
                        for k, v in zip(times, oracle)]

    reps = section.get_int("reps", 10_000, minimum=2)
    models = FittedModels.from_kernels(kernels)
    start = InitialConditions(
        {"y": float(kernels.y_values[initial.y]), "l": float(kernels.l_values[initial.l])},
        a=initial.a, time=initial.time,
    )
    result = gcomputation_mc(models, t, reps, ctx.require_seed(), start, block_size=ctx.settings.mc_block_size,
                             workers=ctx.settings.workers)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(result.mc_se > 0, (result.contrast - oracle) / result.mc_se, 0.0)
    report.update({"reps": reps, "mc_se": result.mc_se.tolist(), "max_abs_z": float(np.max(np.abs(z)))})
    return report, [Estimate.normal(v, se, ctx.level, reps, reps, "gcomputation/mc", time=int(k))
                    for k, v, se in zip(result.times, result.contrast, result.mc_se)]


def run_gformula(ctx: RunContext) -> Tuple[Report, bool]:
    section = ctx.section("gformula")
    if ctx.data or ctx.section("data").has("file"):
        report, estimates = _gformula_from_data(ctx, section)
    else:
        report, estimates = _gformula_oracle(ctx, section)
    report["effects"] = _estimate_records(estimates)
    emit_plot_data(estimates, ctx.out_dir, "effects", title="Effect by time point")
    print(f"{len(estimates)} per-time effects written to {ctx.out_dir}")
    return report, True


def run_diagnose(ctx: RunContext) -> Tuple[Report, bool]:
    traj = _load_trajectory(ctx)
    tol = ctx.section("diagnose").get_float("tol", 0.0)
    result = diagnose(traj, tol)
    frame = result.to_frame()
    frame.to_csv(ctx.artifact("diagnostics.csv"), index=False)
    report: Report = {
        "tests": frame.to_dict("records"),
        "constant_noise": {
            "passed": result.constant_noise.passed,
            "witnesses": {str(arm): list(pair) for arm, pair in result.constant_noise.witnesses.items()},
        },
        "skipped": result.skipped,
    }
    print(frame.to_string(index=False) if not frame.empty else "no test had enough observations")
    return report, True


def run_aggregate(ctx: RunContext) -> Tuple[Report, bool]:
    section = ctx.section("aggregate")
    mode = section.get_choice("mode", ("tau", "gformula", "parallel"), "tau")
    manifest_path = ctx.data or ctx.resolve(section.get_str("manifest"))
    mapping = _mapping(ctx, ctx.section("data"))
    trajs = load_series(manifest_path, mapping)
    ids = load_manifest(manifest_path)["id"].tolist()
    report: Report = {"mode": mode, "individuals": len(trajs)}

    if mode == "tau":
        taus = [tau_hat(traj) for traj in trajs]
        pd.DataFrame({"id": ids, "tau_hat": taus}).to_csv(ctx.artifact("individual_effects.csv"), index=False)
        estimate = aggregate_tau(taus, ctx.level)
        report["estimate"] = estimate.to_record()
        print(f"population effect = {estimate.point:.4f} ({estimate.ci_low:.4f}, {estimate.ci_high:.4f})")
        return report, True

    if mode == "parallel":
        estimates = parallel_contrasts(trajs, ctx.level)
    else:
        smoothing = section.get_float("smoothing", 0.0)
        horizon = section.get_int("horizon", min(traj.t for traj in trajs), minimum=2)
        series: List[np.ndarray] = []
        skipped: Dict[str, str] = {}
        for ident, traj in zip(ids, trajs):
            covariate = _covariate_name(traj, section)
            try:
                kernels = fit_kernels(traj, smoothing, _float_list(section, "y_values"),
                                      _float_list(section, "l_values"), covariate)
                series.append(ucate_series(kernels, horizon, observed_initial(traj, kernels, covariate)))
            except EstimationError as e:
                logger.warning("Individual %s skipped: %s", ident, e)
                skipped[str(ident)] = str(e)
        report["skipped"] = skipped
        estimates = aggregate_gformula(series, times=list(range(2, horizon + 1)), level=ctx.level)
    report["effects"] = _estimate_records(estimates)
    emit_plot_data(estimates, ctx.out_dir, "population_effects", title="Population effect by time point")
    print(f"{len(estimates)} population effects written to {ctx.out_dir}")
    return report, True


def run_validate(ctx: RunContext) -> Tuple[Report, bool]:
    section = ctx.section("validate")
    names = ctx.args.suite or [str(s) for s in section.get_list("suites", list(SUITES))]
    scale = Scale(ctx.args.scale or section.get_choice("scale", [s.value for s in Scale], Scale.QUICK.value))
    outcomes = run_suites(names, scale, ctx.require_seed())
    rows = [
        {"suite": o.name, "passed": o.passed, "detail": o.detail, "metrics": o.metrics}
        for o in outcomes
    ]
    for o in outcomes:
        print(f"{'PASS' if o.passed else 'FAIL'} {o.name}: {o.detail}")
    passed = all(o.passed for o in outcomes)
    # runtimes vary between runs and go to the metadata only
    return {"scale": scale.value, "suites": rows, "passed": passed}, passed


HANDLERS: Dict[str, Callable[[RunContext], Tuple[Report, bool]]] = {
    "simulate": run_simulate,
    "estimate": run_estimate,
    "gformula": run_gformula,
    "diagnose": run_diagnose,
    "aggregate": run_aggregate,
    "validate": run_validate,
}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand; returns 0 on success, 1 on invalid input or failed checks, 2 on estimation failure."""
    try:
        args = build_parser().parse_args(argv)
        settings = Configuration()
        ctx = RunContext.from_args(args, settings)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1

    started = _now()
    logger.info("Running %s (seed=%s, out=%s)", ctx.command, ctx.seed, ctx.out_dir)
    try:
        body, passed = HANDLERS[ctx.command](ctx)
    except ValidationError as e:
        logger.error("%s: invalid input: %s", ctx.command, e)
        return 1
    except EstimationError as e:
        logger.error("%s: estimation failed: %s", ctx.command, e)
        return 2
    except Nof1Error as e:
        logger.error("%s failed: %s", ctx.command, e)
        return 1

    report = {"command": ctx.command, "seed": ctx.seed, "config_digest": ctx.config_digest, "results": body}
    _write_json(ctx.artifact("report.json"), report)
    _write_json(ctx.artifact("run_metadata.json"), {
        "command": ctx.command,
        "seed": ctx.seed,
        "config": ctx.config_path,
        "config_digest": ctx.config_digest,
        "started_at": started,
        "finished_at": _now(),
        "workers": ctx.settings.workers,
        "mc_block_size": ctx.settings.mc_block_size,
    })
    logger.info("%s finished; report written to %s", ctx.command, ctx.out_dir)
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())
