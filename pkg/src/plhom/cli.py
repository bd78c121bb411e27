"""Command line harness: one subcommand per experiment surface.

All subcommands read a declarative YAML config (--config); --seed, --out
and --format override the config and emission defaults.  Exit status is 0
on success, 1 on a solver failure, 2 on a config error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .cell_grid import PeriodicGrid
from .cell_solver import effective_flux, solve_cell
from .domain_solver import DomainMesh, solve_homogenized, solve_oscillating
from .experiments import (
    ConfigError,
    ExperimentConfig,
    convergence_sweep,
    data_from_dict,
    emit_report,
    large_scale_experiment,
    section5_example,
    structure_verify,
)
from .flux_corrector import build_flux_corrector, validate_flux_corrector
from .flux_model import check_homogeneity
from .solvers import ConvergenceError
from .two_scale import TableLaw, build_corrector_table

__all__ = ["main"]


@dataclass(frozen=True)
class CellReport:
    xi: tuple
    residual: float
    energy: float
    iterations: int
    mu_final: float
    ahat: tuple
    config_hash: str
    seed: int


@dataclass(frozen=True)
class EffectiveReport:
    directions: tuple
    fluxes: tuple
    config_hash: str
    seed: int


@dataclass(frozen=True)
class FluxCorrReport:
    xi: tuple
    reconstruction_residual: float
    potential_divergence: float
    mean_defect: float
    antisymmetry_defect: float
    config_hash: str
    seed: int


@dataclass(frozen=True)
class SolveReport:
    kind: str
    eps: float
    residual: float
    iterations: int
    mu_final: float
    u_min: float
    u_max: float
    config_hash: str
    seed: int


def _parse_xi(text: str, dim: int) -> np.ndarray:
    try:
        xi = np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError as e:
        raise ConfigError(f"bad direction {text!r}: {e}") from None
    if xi.shape != (dim,):
        raise ConfigError(f"direction {text!r} has {xi.size} entries, need {dim}")
    return xi


def _directions(args, cfg: ExperimentConfig) -> list[np.ndarray]:
    if args.xi:
        return [_parse_xi(t, cfg.dim) for t in args.xi]
    return [np.eye(cfg.dim)[i] for i in range(cfg.dim)]


def _cell_pieces(cfg: ExperimentConfig, xi):
    model = cfg.model()
    grid = PeriodicGrid(cfg.dim, cfg.cell_n)
    chi = solve_cell(model, xi, grid, cfg.cell_cfg())
    return model, chi


def cmd_cell(cfg: ExperimentConfig, args) -> CellReport:
    xi = _directions(args, cfg)[0]
    model, chi = _cell_pieces(cfg, xi)
    ahat = effective_flux(model, chi)
    energy = chi.info["energy_traces"][-1][-1]
    print(
        f"corrector xi={tuple(map(float, xi))}: residual={chi.residual:.3e} "
        f"iterations={chi.iterations} energy={energy:.6g}"
    )
    return CellReport(
        xi=tuple(map(float, xi)),
        residual=float(chi.residual),
        energy=float(energy),
        iterations=int(chi.iterations),
        mu_final=float(chi.mu_final),
        ahat=tuple(float(v) for v in ahat),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
    )


def cmd_effective(cfg: ExperimentConfig, args) -> EffectiveReport:
    model = cfg.model()
    grid = PeriodicGrid(cfg.dim, cfg.cell_n)
    dirs, fluxes = [], []
    for xi in _directions(args, cfg):
        chi = solve_cell(model, xi, grid, cfg.cell_cfg())
        ahat = effective_flux(model, chi)
        dirs.append(tuple(float(v) for v in xi))
        fluxes.append(tuple(float(v) for v in ahat))
        print(f"xi={dirs[-1]} -> ahat={fluxes[-1]}")
    return EffectiveReport(
        directions=tuple(dirs),
        fluxes=tuple(fluxes),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
    )


def cmd_fluxcorr(cfg: ExperimentConfig, args) -> FluxCorrReport:
    xi = _directions(args, cfg)[0]
    model, chi = _cell_pieces(cfg, xi)
    fcs = build_flux_corrector(model, chi)
    rep = validate_flux_corrector(fcs)
    print(
        f"flux corrector xi={tuple(map(float, xi))}: reconstruction="
        f"{rep.reconstruction_residual:.3e} antisymmetry="
        f"{rep.antisymmetry_defect:.3e}"
    )
    return FluxCorrReport(
        xi=tuple(map(float, xi)),
        reconstruction_residual=rep.reconstruction_residual,
        potential_divergence=rep.potential_divergence,
        mean_defect=rep.mean_defect,
        antisymmetry_defect=rep.antisymmetry_defect,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
    )


def cmd_solve(cfg: ExperimentConfig, args) -> SolveReport:
    mesh = DomainMesh(cfg.dim, cfg.mesh_m * 2 ** max(cfg.k_list))
    g = data_from_dict(cfg.bc)
    F = data_from_dict(cfg.source)
    if args.homogenized:
        model = cfg.model()
        table = build_corrector_table(model, cfg.cell_n, cfg.n_dir, cfg.cell_cfg())
        sol = solve_homogenized(TableLaw(table), mesh, g, F, cfg.domain_cfg())
        kind, eps = "homogenized", 0.0
    else:
        eps = args.eps if args.eps is not None else 2.0 ** -min(cfg.k_list)
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"eps must lie in (0, 1), got {eps}")
        sol = solve_oscillating(cfg.model(), mesh, eps, g, F, cfg.domain_cfg())
        kind = "oscillating"
    print(
        f"{kind} solve: residual={sol.residual:.3e} "
        f"iterations={sol.iterations} range=[{sol.u.min():.6g}, {sol.u.max():.6g}]"
    )
    return SolveReport(
        kind=kind,
        eps=float(eps),
        residual=float(sol.residual),
        iterations=int(sol.iterations),
        mu_final=float(sol.mu_final),
        u_min=float(sol.u.min()),
        u_max=float(sol.u.max()),
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
    )


def cmd_sweep(cfg: ExperimentConfig, args):
    table = convergence_sweep(cfg)
    for row in table.rows:
        print(
            f"eps={row.eps:.6g} err_u={row.err_u_lp:.6e} "
            f"err_grad={row.err_grad_lp:.6e}"
        )
    if table.slope_u is not None:
        print(f"slope_u={table.slope_u:.3f}")
    if table.slope_grad is not None:
        print(f"slope_grad={table.slope_grad:.3f}")
    if table.aborted:
        print(f"sweep aborted: {table.abort_reason}", file=sys.stderr)
    return table


def cmd_verify(cfg: ExperimentConfig, args) -> object:
    hom = check_homogeneity(cfg.model(), seed=cfg.seed)
    print(f"homogeneity defect: {hom.max_defect:.3e}")
    rep = structure_verify(cfg)
    print(
        f"flux sandwich: mu0={rep.flux_mu0:.4g} mu1={rep.flux_mu1:.4g} "
        f"violations={rep.flux_violations} containment={rep.containment}"
    )
    print(
        f"effective sandwich: mu0={rep.effective_mu0:.4g} "
        f"mu1={rep.effective_mu1:.4g} coercivity={rep.effective_c0:.4g} "
        f"violations={rep.effective_violations}"
    )
    if rep.flux_violations or rep.effective_violations:
        raise ConvergenceError("structure verification found violations")
    return rep


def cmd_section5(cfg: ExperimentConfig, args) -> object:
    rep = section5_example(cfg)
    if cfg.dim == 1:
        print(
            f"ahat={rep.ahat[0]:.8g} oracle={rep.oracle:.8g} "
            f"rel_err={rep.oracle_rel_err:.3e}"
        )
    else:
        print(
            f"ansatz residual={rep.ansatz_residual:.3e} "
            f"direct residual={rep.direct_residual:.3e} "
            f"ahat_sum={rep.ahat_sum:.6g}"
        )
    return rep


def cmd_largescale(cfg: ExperimentConfig, args) -> object:
    rep = large_scale_experiment(cfg)
    for eps, s in zip(rep.eps_values, rep.slopes):
        print(f"eps={eps:.6g} decay slope={s:.3f}")
    print(f"worst slope={rep.worst_slope:.3f} (expected {rep.expected:g})")
    return rep


_HANDLERS = {
    "cell": cmd_cell,
    "effective": cmd_effective,
    "fluxcorr": cmd_fluxcorr,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "section5": cmd_section5,
    "largescale": cmd_largescale,
}

# sweep emission happens inside convergence_sweep (both formats, keyed
# off cfg.out); every other subcommand goes through the generic path
_SELF_EMITTING = {"sweep"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plhom",
        description="Periodic homogenization experiments for p-Laplace fluxes.",
    )
    parser.add_argument(
        "--version", action="version", version=f"plhom {__version__}"
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment config")
    common.add_argument("--seed", type=int, default=None, help="override seed")
    common.add_argument("--out", default=None, help="override output directory")
    common.add_argument(
        "--format", choices=("csv", "json"), default="csv",
        help="report format for --out emission",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "cell": "solve one cell corrector",
        "effective": "effective flux for a list of directions",
        "fluxcorr": "build and validate the flux corrector",
        "solve": "one oscillating or homogenized domain solve",
        "sweep": "convergence sweep across epsilon",
        "verify": "sample the structure inequalities",
        "section5": "separable-weight example with explicit ansatz",
        "largescale": "large-scale gradient decay slopes",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("cell", "effective", "fluxcorr"):
            p.add_argument(
                "--xi", action="append", default=None,
                help="direction, comma separated (repeatable for effective)",
            )
        if name == "solve":
            p.add_argument("--eps", type=float, default=None, help="period")
            p.add_argument(
                "--homogenized", action="store_true",
                help="solve the effective problem instead",
            )
    return parser


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_yaml(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        report = _HANDLERS[args.command](cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ConvergenceError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 1
    if cfg.out is not None and args.command not in _SELF_EMITTING:
        path = Path(cfg.out) / f"{args.command}.{args.format}"
        print(f"wrote {emit_report(report, args.format, path)}")
    if getattr(report, "aborted", False):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
