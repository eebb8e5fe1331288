"""
Experiment runners: one per kind, each writing its tables and a result record
"""
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from . import stability as stab
from .artifacts import ArtifactWriter, ResultRecord, config_hash
from .base_dynamics import check_structure
from .config import ExperimentConfig
from .exceptions import ClassSViolation, ConfigurationError, HypothesisViolation
from .measures import AtomicMeasure, family_distance_linf
from .potentials import check_PM_membership, reduce_fiber_potential, ternary_skew_conditions
from .ruelle import compute_spectral_data, grid_centers, lasota_yorke_probe, normalized_apply
from .skew_transfer import (
    FIT_WINDOW,
    SkewSystem,
    check_fiber_conditions,
    equilibrium,
    orbit_family,
    regularity_check,
)
from .statistics import (
    DEGENERATE_RATIO,
    DEGENERATE_VARIANCE,
    birkhoff_cohomology_check,
    clt_sample,
    correlation,
    correlation_monte_carlo,
)
from .systems import base_observables, build_from_config, fiber_observables

logger = logging.getLogger(__name__)

NORMALIZATION_TOL = 1e-8
DECAY_R2 = 0.95
MC_STANDARD_ERRORS = 3.0


def structural_violations(system: SkewSystem) -> List[str]:
    """Hypotheses without which the leafwise operator is not well posed"""
    violations = []
    q = system.base.covering_count()
    if q >= system.base.degree:
        violations.append(f"(f2) q={q} >= deg={system.base.degree}")
    if system.beta >= 1.0:
        violations.append(f"(alpha L)^zeta = {system.beta:.4g} >= 1")
    return violations


def _require(system: SkewSystem):
    violations = structural_violations(system)
    if violations:
        raise HypothesisViolation(f"System {system.name} violates: {'; '.join(violations)}",
                                  violations=violations)


def _equilibrium(system: SkewSystem, cfg: ExperimentConfig, workers: int, initial_y: float = 0.0):
    tol = cfg.tolerances
    return equilibrium(system, AtomicMeasure.dirac(initial_y), tol=tol.equilibrium_tol,
                       n_max=tol.equilibrium_n_max, workers=workers)


def run_spectrum(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter, workers: int) -> ResultRecord:
    params = cfg.experiment.params
    method = params.get("method", "collocation")
    if method == "collocation":
        A, spec = system.A, system.spectral
    else:
        A, spec = compute_spectral_data(system.base, system.potential, system.N, method=method,
                                        tol=cfg.tolerances.eigen_tol, max_iter=cfg.tolerances.eigen_max_iter)
    normalization = float(np.max(np.abs(normalized_apply(spec, A, np.ones(spec.N)).values - 1.0)))
    ly = lasota_yorke_probe(spec, A, trials=params.get("ly_trials", 20), n_max=params.get("ly_n_max", 20),
                            zeta=system.zeta, seed=cfg.output.seed)
    structure = check_structure(system.base, params.get("structure_samples", 1000))

    x = grid_centers(spec.N)
    writer.write_csv("eigendata", ("x", "h", "nu", "m"),
                     zip(x, spec.h.values, spec.nu_weights, spec.m_weights))
    writer.write_json("spectrum", {"spectral": spec.to_dict(), "method": method,
                                   "normalization_error": normalization, "lasota_yorke": ly.to_dict(),
                                   "structure": structure.to_dict()})
    metrics = {"lambda": spec.lam, "pressure": spec.pressure, "normalization_error": normalization,
               "r_hat": ly.r_hat}
    flags = {"normalization": normalization <= NORMALIZATION_TOL, "lasota_yorke": not ly.red_flag}
    return _record(cfg, writer, workers, metrics=metrics, flags=flags)


def run_equilibrium(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter,
                    workers: int) -> ResultRecord:
    params = cfg.experiment.params
    _require(system)
    result = _equilibrium(system, cfg, workers, params.get("initial_y", 0.0))
    regularity = regularity_check(system, result.family, far_pairs=params.get("far_pairs", 10_000),
                                  seed=cfg.output.seed, workers=workers)
    metrics = {"equilibrium": result.to_dict(), "regularity": regularity.to_dict()}

    oracle_samples = params.get("oracle_samples", 0)
    if oracle_samples:
        leaves = params.get("oracle_leaves", 64)
        empirical = orbit_family(system, oracle_samples, leaves=leaves, seed=cfg.output.seed, workers=workers)
        metrics["orbit_oracle_distance"] = family_distance_linf(result.family.aggregate(leaves), empirical,
                                                                system.zeta, workers)

    writer.write_csv("equilibrium_trace", ("iteration", "distance"), enumerate(result.trace, start=1))
    if params.get("checkpoint", False):
        writer.track(result.family.to_csv(writer.directory / "equilibrium_leaves.csv"))
    writer.write_json("equilibrium", metrics)
    flags = {"converged": result.converged, "regularity": regularity.passed}
    if len(result.trace) >= FIT_WINDOW:
        flags["geometric_convergence"] = result.ratio < 1.0 and result.r2 > DECAY_R2
    return _record(cfg, writer, workers, metrics=metrics, flags=flags)


def run_decay(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter, workers: int) -> ResultRecord:
    params = cfg.experiment.params
    _require(system)
    result = _equilibrium(system, cfg, workers, params.get("initial_y", 0.0))
    psi = base_observables.build(params.get("psi", "cos2pi"), system)
    phi_obs = fiber_observables.build(params.get("phi_obs", "y_sin_abs"), system)
    floor = cfg.tolerances.correlation_floor
    series = correlation(system, result.family, psi, phi_obs, params.get("n_max", 25), floor=floor)

    writer.write_csv("correlation", ("n", "C"), series.to_rows())
    decayed = all(abs(c) <= floor for c in series.C_values)
    flags = {"converged": result.converged,
             "decay": decayed or (series.fitted_rate < 1.0 and series.fit_r2 > DECAY_R2)}
    metrics = {"correlation": series.to_dict()}

    mc_samples = params.get("mc_samples", 0)
    if mc_samples:
        mc_n_max = min(params.get("mc_n_max", 10), len(series.C_values) - 1)
        mc = correlation_monte_carlo(system, result.family, psi, phi_obs, mc_n_max, mc_samples,
                                     seed=cfg.output.seed, workers=workers)
        duality = np.asarray(series.C_values[: mc_n_max + 1])
        deviation = np.abs(duality - mc.C_values)
        writer.write_csv("correlation_monte_carlo", ("n", "C", "std_error", "C_duality"),
                         zip(range(mc_n_max + 1), mc.C_values, mc.std_errors, duality))
        flags["monte_carlo_agreement"] = bool(np.all(deviation <= MC_STANDARD_ERRORS * mc.std_errors + floor))
        metrics["monte_carlo"] = {"samples": mc.samples, "max_deviation_in_se": float(
            np.max(deviation / np.maximum(mc.std_errors, floor)))}
    writer.write_json("correlation", metrics)
    return _record(cfg, writer, workers, metrics=metrics, flags=flags)


def run_clt(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter, workers: int) -> ResultRecord:
    params = cfg.experiment.params
    _require(system)
    result = _equilibrium(system, cfg, workers, params.get("initial_y", 0.0))
    phi_obs = fiber_observables.build(params.get("phi_obs", "cos2pi_x"), system)
    report = clt_sample(system, result.family, phi_obs, n=params.get("n", 1000),
                        samples=params.get("samples", 10_000), seed=cfg.output.seed, workers=workers,
                        truncation=cfg.tolerances.variance_truncation,
                        degenerate_variance=params.get("degenerate_variance", DEGENERATE_VARIANCE),
                        degenerate_ratio=params.get("degenerate_ratio", DEGENERATE_RATIO))
    writer.write_json("clt", report.to_dict())
    return _record(cfg, writer, workers, metrics=report.to_dict(),
                   flags={"converged": result.converged, "clt": report.passed})


def _perturbation_family(system: SkewSystem, cfg: ExperimentConfig) -> stab.PerturbationFamily:
    params = cfg.experiment.params
    kind = params.get("family", "fiber_shift")
    deltas = tuple(params.get("deltas", stab.DEFAULT_DELTAS))
    if kind == "fiber_shift":
        return stab.fiber_shift(system, deltas=deltas)
    if kind == "base_shift":
        sc = cfg.system
        return stab.base_shift(system.fiber, l=system.base.degree, zeta=sc.zeta, N=sc.N, bins=sc.bins,
                               atom_cap=sc.atom_cap, deltas=deltas, epsilon_phi=sc.potential.epsilon_phi)
    if kind == "coefficient":
        fiber_params = cfg.system.fiber.params
        if cfg.system.fiber.builder != "piecewise_constant":
            raise ConfigurationError("the coefficient family needs the piecewise_constant fiber builder")
        alphas = fiber_params["alphas"]
        return stab.coefficient(system, alphas, params.get("directions", [1.0] * len(alphas)),
                                offsets=fiber_params.get("offsets"), deltas=deltas)
    return stab.constant(system, deltas=deltas)


def run_stability(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter,
                  workers: int) -> ResultRecord:
    params = cfg.experiment.params
    _require(system)
    family = _perturbation_family(system, cfg)
    tol = cfg.tolerances
    flags: Dict[str, bool] = {}
    metrics: Dict[str, object] = {"family": family.name, "kind": family.kind, "notes": family.notes}

    if params.get("admissibility", True):
        reports = [stab.check_admissibility(family, d, slack=tol.admissibility_slack) for d in family.deltas]
        writer.write_json("admissibility", [r.to_dict() for r in reports])
        flags["admissibility"] = all(r.passed for r in reports)

    curve = stab.stability_curve(family, tol=tol.equilibrium_tol, n_max=tol.equilibrium_n_max, workers=workers)
    writer.write_csv("stability_curve", ("delta", "distance", "R", "envelope", "C_hat"), curve.to_rows())
    metrics["curve"] = curve.to_dict()
    flags.update(monotone=curve.monotone, C_stable=curve.C_stable, within_coupling=curve.within_coupling)

    if params.get("uniform_constants", False):
        uniform = stab.uniform_constants_probe(family, curve, seed=cfg.output.seed, workers=workers)
        metrics["uniform_constants"] = uniform.to_dict()
        flags["uniform_constants"] = uniform.passed
    writer.write_json("stability", metrics)
    return _record(cfg, writer, workers, metrics=metrics, flags=flags)


def _fiber_constant_potential(system: SkewSystem) -> Callable:
    return lambda x, y: system.potential(x) + 0.0 * y


def run_verify(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter, workers: int) -> ResultRecord:
    """Every checkable hypothesis with its margin; raises HypothesisViolation after writing the dossier"""
    params = cfg.experiment.params
    structure = check_structure(system.base, params.get("structure_samples", 1000))
    membership = check_PM_membership(system.potential)
    fiber = check_fiber_conditions(system.fiber, system.base, system.zeta, params.get("fiber_samples", 64))
    q = system.base.covering_count()
    gap = system.gap_value
    dossier: Dict[str, object] = {
        "structure": structure.to_dict(), "membership": membership.to_dict(), "fiber": fiber.to_dict(),
        "gap_value": gap, "beta": system.beta, "D": system.D, "regularity_bound": system.regularity_bound,
    }
    checks = {
        "(f1)": structure.f1, "(f2)": q < system.base.degree, "(f3)": membership.passed, "(P2)": structure.p2,
        "(H1)": fiber.h1, "(H2)": fiber.h2, "gap": gap < 1.0, "(alpha L)^zeta < 1": system.beta < 1.0,
    }

    ternary_delta = params.get("ternary_delta")
    if ternary_delta is not None:
        ternary = ternary_skew_conditions(ternary_delta, sigma=system.base.sigma, zeta=system.zeta)
        dossier["ternary_skew"] = ternary.to_dict()
        checks["ternary skew lemma"] = ternary.passed

    fixed_fiber = params.get("fixed_fiber")
    if fixed_fiber is not None:
        try:
            reduce_fiber_potential(_fiber_constant_potential(system), fixed_fiber, system,
                                   tol=cfg.tolerances.fixed_fiber_tol)
            dossier["class_S"] = {"y0": fixed_fiber, "max_deviation": 0.0}
            checks["class S"] = True
        except ClassSViolation as e:
            dossier["class_S"] = {"y0": fixed_fiber, "max_deviation": e.max_deviation}
            checks["class S"] = False

    dossier["checks"] = checks
    writer.write_json("dossier", dossier)
    record = _record(cfg, writer, workers, metrics=dossier, flags=checks)
    violations = [name for name, ok in checks.items() if not ok]
    if violations:
        raise HypothesisViolation(f"Hypotheses violated: {', '.join(violations)}", violations=violations)
    return record


def run_cohomology(system: SkewSystem, cfg: ExperimentConfig, writer: ArtifactWriter,
                   workers: int) -> ResultRecord:
    params = cfg.experiment.params
    _require(system)
    phi_bar = fiber_observables.build(params.get("phi_bar", "potential_plus_y"), system)
    y0 = params.get("y0", 0.0)
    try:
        report = birkhoff_cohomology_check(system, phi_bar, y0, orbit_count=params.get("orbit_count", 16),
                                           ns=params.get("ns", (100, 1000, 10000)), seed=cfg.output.seed,
                                           fixed_fiber_tol=cfg.tolerances.fixed_fiber_tol)
    except ClassSViolation as e:
        raise HypothesisViolation(str(e), violations=["class S: G(x, y0) = y0"])
    writer.write_csv("cohomology", ["orbit", "initial_y"] + [f"delta_{n}" for n in report.ns],
                     ([k, y] + row for k, (y, row) in enumerate(zip(report.initial_y, report.deltas))))
    metrics = {"cohomology": report.to_dict()}
    flags = {"cohomology": report.passed}

    decay_n_max = params.get("decay_n_max", 0)
    if decay_n_max:
        reduced = reduce_fiber_potential(phi_bar, y0, system, tol=cfg.tolerances.fixed_fiber_tol)
        reduced_system = SkewSystem.build(system.base, system.fiber, reduced, N=system.N, bins=system.bins,
                                          atom_cap=system.atom_cap, tol=cfg.tolerances.eigen_tol,
                                          max_iter=cfg.tolerances.eigen_max_iter)
        result = _equilibrium(reduced_system, cfg, workers)
        series = correlation(reduced_system, result.family, base_observables.build("cos2pi", reduced_system),
                             fiber_observables.build("y_sin_abs", reduced_system), decay_n_max,
                             floor=cfg.tolerances.correlation_floor)
        writer.write_csv("reduced_correlation", ("n", "C"), series.to_rows())
        metrics["reduced_decay"] = series.to_dict()
        flags["reduced_decay"] = series.fitted_rate < 1.0
    writer.write_json("cohomology", metrics)
    return _record(cfg, writer, workers, metrics=metrics, flags=flags)


RUNNERS = {
    "spectrum": run_spectrum,
    "equilibrium": run_equilibrium,
    "decay": run_decay,
    "clt": run_clt,
    "stability": run_stability,
    "verify": run_verify,
    "cohomology": run_cohomology,
}


def _record(cfg: ExperimentConfig, writer: ArtifactWriter, workers: int, metrics: Dict[str, object],
            flags: Dict[str, bool]) -> ResultRecord:
    record = ResultRecord(experiment=cfg.experiment.kind, config_hash=config_hash(cfg.to_dict()),
                          seed=cfg.output.seed, workers=workers,
                          metrics=metrics, flags={k: bool(v) for k, v in flags.items()})
    writer.write_record(record)
    return record


def run_experiment(cfg: ExperimentConfig, workers: int = 1, out_dir: Optional[Path] = None) -> ResultRecord:
    """Build the system, run the configured experiment and write everything under out_dir"""
    kind = cfg.experiment.kind
    if kind not in RUNNERS:
        raise ConfigurationError(f"Unknown experiment kind '{kind}'")
    directory = Path(out_dir or cfg.output.directory)
    writer = ArtifactWriter(directory, cfg.output.formats)
    writer.track(cfg.write_resolved(directory))
    logger.info(f"Running {kind} experiment into {directory} with {workers} worker(s), seed {cfg.output.seed}")
    system = build_from_config(cfg)
    record = RUNNERS[kind](system, cfg, writer, workers)
    logger.info(f"{kind} finished: {'pass' if record.passed else 'fail'} {record.flags}")
    return record
