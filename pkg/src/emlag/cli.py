"""Command-line front end.

Exit codes: 0 success, 2 bad input file, 3 singular mass matrix or leaving
the saturation range during a run, 4 full-rank observability at a
zero-frequency steady state, 5 a validation suite failed, 6 energy drift
above the configured bound.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models
from .config import ConfigError, parse_machine, parse_run_config
from .dynamics import (
    DriveInput,
    IntegrationError,
    SingularMassMatrixError,
    SinusoidalVoltage,
    simulate,
    zero_state,
)
from .energy import audit_csv, audit_report, closed_form_magnetic_energy, magnetic_energy, power_balance_audit
from .observability import PropositionViolation, verify_prop1
from .wirtinger import DomainError

log = logging.getLogger("emlag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SINGULAR = 3
EXIT_PROPOSITION = 4
EXIT_VALIDATION = 5
EXIT_DRIFT = 6

# closed forms used by ``validate``; looked up at call time so they can be swapped
ORACLES = {
    "flux": lambda model, theta, currents: models.analytic_flux(model, theta, currents),
    "torque": lambda model, theta, currents: models.analytic_torque(model, theta, currents),
    "energy": lambda model, theta, currents: closed_form_magnetic_energy(model.kind, model.params, theta, currents),
}

VALIDATE_POINTS = 200
VALIDATE_TOL = 1e-9
PERIODICITY_TOL = 1e-12
BALANCE_T_END = 0.05
BALANCE_DT = 1e-5
BALANCE_BOUND = 1e-6


# ---------------------------------------------------------------------------
# validation suites


@dataclass(frozen=True)
class SuiteResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error <= self.tolerance

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name:<24} error={self.error:.3e} tol={self.tolerance:.0e}"


def relative_error(value, reference, floor_fraction: float = 1e-3) -> float:
    """Largest ``|value - reference|`` over ``max(|reference|, floor)``.

    The floor is ``floor_fraction`` times the RMS of the reference, so that
    points where the reference happens to cross zero do not dominate.
    """
    value = np.asarray(value)
    reference = np.asarray(reference)
    scale = np.sqrt(np.mean(np.abs(reference) ** 2))
    denom = np.maximum(np.abs(reference), floor_fraction * scale)
    if scale == 0.0:
        return float(np.max(np.abs(value - reference)))
    return float(np.max(np.abs(value - reference) / denom))


def random_points(model: models.MagneticLagrangianModel, n: int, rng: np.random.Generator):
    """``(theta, currents)`` with currents uniform in a box of half-width 5 A (PM) or 3 A (IM)."""
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    half = 5.0 if model.is_pm else 3.0
    currents = [rng.uniform(-half, half, n) + 1j * rng.uniform(-half, half, n) for _ in range(model.n_currents)]
    return theta, currents


def _ad_quantities(model, theta, currents):
    from .dynamics import _ad_pass

    x = models.coordinates(model, theta, currents)
    y = np.concatenate([x[:, -1:], np.zeros((x.shape[0], 1)), x[:, :-1]], axis=1)
    phi, tau, _, _ = _ad_pass(model, y)
    fluxes = [phi[:, 2 * k] + 1j * phi[:, 2 * k + 1] for k in range(model.n_currents)]
    return fluxes, tau


def suite_ad_vs_analytic(model, rng) -> list[SuiteResult]:
    theta, currents = random_points(model, VALIDATE_POINTS, rng)
    fluxes, tau = _ad_quantities(model, theta, currents)
    ref_flux = ORACLES["flux"](model, theta, currents)
    ref_tau = ORACLES["torque"](model, theta, currents)
    err_flux = max(relative_error(a, b) for a, b in zip(fluxes, ref_flux))
    return [
        SuiteResult("ad_flux_vs_analytic", err_flux, VALIDATE_TOL),
        SuiteResult("ad_torque_vs_analytic", relative_error(tau, ref_tau), VALIDATE_TOL),
    ]


def suite_legendre(model, rng) -> list[SuiteResult]:
    theta, currents = random_points(model, VALIDATE_POINTS, rng)
    h = magnetic_energy(model, theta, currents)
    ref = ORACLES["energy"](model, theta, currents)
    return [SuiteResult("legendre_vs_closed_form", relative_error(h, ref), VALIDATE_TOL)]


def suite_periodicity(model, rng) -> list[SuiteResult]:
    theta, currents = random_points(model, VALIDATE_POINTS, rng)
    shifted = theta + 2.0 * math.pi / model.params.n_p
    a = models.eval_lagrangian(model, theta, currents)
    b = models.eval_lagrangian(model, shifted, currents)
    return [SuiteResult("angle_periodicity", relative_error(b, a), PERIODICITY_TOL)]


def suite_power_balance(model, rng) -> list[SuiteResult]:
    drive = DriveInput(SinusoidalVoltage(20.0, 10.0), 0.5)
    traj = simulate(model, zero_state(model), drive, BALANCE_T_END, BALANCE_DT)
    audit = power_balance_audit(model, traj, drive)
    return [SuiteResult("power_balance", audit.relative_drift, BALANCE_BOUND)]


SUITES = (
    ("ad_vs_analytic", suite_ad_vs_analytic),
    ("legendre", suite_legendre),
    ("periodicity", suite_periodicity),
    ("power_balance", suite_power_balance),
)


def run_validation(model, seed: int = 0) -> list[SuiteResult]:
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for name, suite in SUITES:
        try:
            out += suite(model, rng)
        except (DomainError, SingularMassMatrixError, IntegrationError) as exc:
            out.append(SuiteResult(f"{name} ({type(exc).__name__})", math.inf, 0.0))
    return out


# ---------------------------------------------------------------------------
# commands


def _emit(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)


def _out_path(args, name: str) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write_partial(args, exc, name: str) -> None:
    traj = getattr(exc, "trajectory", None)
    if traj is not None and len(traj):
        path = _out_path(args, name)
        traj.write_csv(path)
        log.error("partial trajectory (%d rows) written to %s", len(traj), path)


def cmd_simulate(args) -> int:
    cfg = parse_run_config(args.path)
    name = cfg.output("trajectory", "trajectory.csv")
    try:
        traj = simulate(cfg.model, cfg.initial, cfg.drive, cfg.t_end, cfg.dt, cfg.backend)
    except (SingularMassMatrixError, DomainError, IntegrationError) as exc:
        log.error("%s", exc)
        _write_partial(args, exc, name)
        return EXIT_SINGULAR
    path = _out_path(args, name)
    traj.write_csv(path)
    _emit(args, f"wrote {len(traj)} samples to {path}\n")
    return EXIT_OK


def cmd_energy_audit(args) -> int:
    cfg = parse_run_config(args.path)
    try:
        traj = simulate(cfg.model, cfg.initial, cfg.drive, cfg.t_end, cfg.dt, cfg.backend)
    except (SingularMassMatrixError, DomainError, IntegrationError) as exc:
        log.error("%s", exc)
        _write_partial(args, exc, cfg.output("trajectory", "trajectory.csv"))
        return EXIT_SINGULAR
    result = power_balance_audit(cfg.model, traj, cfg.drive)
    _out_path(args, cfg.output("residual", "residual.csv")).write_text(audit_csv(result))
    report = audit_report(result, cfg.audit_bound)
    _out_path(args, cfg.output("summary", "audit.txt")).write_text(report)
    _emit(args, report)
    if not result.relative_drift <= cfg.audit_bound:
        log.error("relative energy drift %.3e exceeds bound %.3e", result.relative_drift, cfg.audit_bound)
        return EXIT_DRIFT
    return EXIT_OK


def cmd_observability(args) -> int:
    model = parse_machine(args.path)
    try:
        summary = verify_prop1(model, args.samples, args.seed)
        code = EXIT_OK
    except PropositionViolation as exc:
        log.error("%s", exc)
        summary, code = exc.summary, EXIT_PROPOSITION
    header = f"seed              {args.seed}\n"
    report = header + summary.text()
    _out_path(args, "observability_report.txt").write_text(report)
    _out_path(args, "observability_samples.txt").write_text(summary.machine_lines())
    _emit(args, report)
    return code


def cmd_validate(args) -> int:
    model = parse_machine(args.path)
    results = run_validation(model, args.seed)
    text = "".join(r.line() + "\n" for r in results)
    _out_path(args, "validate_report.txt").write_text(text)
    _emit(args, text)
    failed = [r.name for r in results if not r.passed]
    if failed:
        log.error("failed suites: %s", ", ".join(failed))
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "integrate a run config and write the trajectory CSV"),
    "observability": (cmd_observability, "rank tests at zero-frequency steady states of a machine"),
    "validate": (cmd_validate, "derivative, energy, periodicity and power-balance checks of a machine"),
    "energy-audit": (cmd_energy_audit, "simulate a run config and audit its power balance"),
}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--output-dir", default=d("."), help="directory for output files (default: .)")
    parser.add_argument("--seed", type=int, default=d(0), help="seed for random sweeps (PCG64, default 0)")
    parser.add_argument("--samples", type=int, default=d(20), help="samples per observability sweep (default 20)")
    parser.add_argument("--quiet", action="store_true", default=d(False), help="no report on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emlag", description="Lagrangian machine models: simulation, energy and observability.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        p.add_argument("path", help="run config" if name in ("simulate", "energy-audit") else "machine file")
    return parser


def _diagnostics() -> None:
    # one handler bound to the current stderr, so repeated in-process calls do not stack
    for h in list(log.handlers):
        log.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("emlag: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.WARNING)
    log.propagate = False


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _diagnostics()
    if args.samples < 1:
        log.error("--samples must be positive")
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command][0](args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
