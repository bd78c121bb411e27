"""Experiment harness: configs, sweeps, verification reports, emission.

Everything here is plumbing around the numerical layers: a declarative
config (one YAML or dict document), deterministic seed derivation, the
convergence sweep measuring the first-order approximation error against
epsilon, structural sampling of the flux and effective-flux inequalities,
the separable-weight construction with its explicit corrector ansatz, the
large-scale gradient-decay experiment, and CSV/JSON report emission that
is byte-identical for identical configs.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .cell_grid import PeriodicGrid
from .cell_solver import effective_flux, effective_flux_1d_oracle, solve_cell
from .domain_solver import (
    DomainMesh,
    DomainSolveConfig,
    affine_data,
    constant_data,
    large_scale_decay,
    sine_product_data,
    solve_homogenized,
    solve_oscillating,
    zero_data,
)
from .flux_model import (
    FluxModel,
    check_monotonicity_growth,
    flux_given_weight,
    weight_from_dict,
)
from .solvers import CellSolveConfig, ConvergenceError, div_arr, l2_arr
from .two_scale import (
    TableLaw,
    admissible_tau,
    build_corrector_table,
    build_first_order_gradient,
    error_gradient_norm,
    error_solution_norm,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "derive_seed",
    "data_from_dict",
    "RateRow",
    "RateTable",
    "convergence_sweep",
    "StructureReport",
    "structure_verify",
    "SeparableReport",
    "section5_example",
    "DecaySweepReport",
    "large_scale_experiment",
    "emit_report",
]


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to CLI exit code 2)."""


def derive_seed(root: int, label: str) -> int:
    """Stable per-operation seed from a root seed and a text label."""
    digest = hashlib.sha256(f"{root}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


_CONFIG_DEFAULTS: dict = {
    "dim": None,
    "p": None,
    "weight": None,
    "k_list": [3, 4, 5],
    "mesh_m": 16,
    "cell_n": 256,
    "n_dir": 64,
    "tau": None,
    "theta": 0.5,
    "delta": 0.1,
    "vartheta": 0.5,
    "bc": {"kind": "zero"},
    "source": {"kind": "zero"},
    "lp": None,
    "tol": 1e-9,
    "max_iter": None,
    "mu_schedule": None,
    "seed": 0,
    "n_pairs": 10_000,
    "n_radii": 6,
    "record_timings": False,
    "out": None,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one experiment.

    All epsilon values are 2^-k for k in k_list; the sweep mesh has
    mesh_m * 2^max(k) intervals so every epsilon nests exactly.  A fixed
    seed makes every report byte-identical across reruns.
    """

    dim: int
    p: float
    weight: dict
    k_list: tuple = (3, 4, 5)
    mesh_m: int = 16
    cell_n: int = 256
    n_dir: int = 64
    tau: float | None = None
    theta: float = 0.5
    delta: float = 0.1
    vartheta: float = 0.5
    bc: dict = field(default_factory=lambda: {"kind": "zero"})
    source: dict = field(default_factory=lambda: {"kind": "zero"})
    lp: float | None = None
    tol: float = 1e-9
    max_iter: int | None = None
    mu_schedule: tuple | None = None
    seed: int = 0
    n_pairs: int = 10_000
    n_radii: int = 6
    record_timings: bool = False
    out: str | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        unknown = set(raw) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**_CONFIG_DEFAULTS, **raw}
        for key in ("dim", "p", "weight"):
            if merged[key] is None:
                raise ConfigError(f"config key '{key}' is required")
        if merged["dim"] not in (1, 2):
            raise ConfigError(f"dim must be 1 or 2, got {merged['dim']}")
        if not 1.0 < float(merged["p"]) <= 20.0:
            raise ConfigError(f"p must lie in (1, 20], got {merged['p']}")
        ks = merged["k_list"]
        if not ks or any(int(k) != k or k < 1 for k in ks):
            raise ConfigError(f"k_list must be positive integers, got {ks}")
        if not isinstance(merged["weight"], dict):
            raise ConfigError("weight must be a mapping")
        if merged["mesh_m"] < 4:
            raise ConfigError("mesh_m must be at least 4")
        merged["k_list"] = tuple(int(k) for k in ks)
        merged["p"] = float(merged["p"])
        if merged["mu_schedule"] is not None:
            merged["mu_schedule"] = tuple(float(m) for m in merged["mu_schedule"])
        try:
            return cls(**merged)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(raw)

    def canonical(self) -> dict:
        # Output location is presentation-only: the hash covers everything
        # that can change report content, not where the files land.
        d = asdict(self)
        d.pop("out")
        d["k_list"] = list(self.k_list)
        if d["mu_schedule"] is not None:
            d["mu_schedule"] = list(d["mu_schedule"])
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def epsilons(self) -> tuple:
        return tuple(2.0 ** -k for k in sorted(self.k_list))

    def model(self) -> FluxModel:
        try:
            weight = weight_from_dict(self.dim, self.weight)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"invalid weight spec: {e}") from e
        return FluxModel(p=self.p, weight=weight)

    def cell_cfg(self) -> CellSolveConfig:
        kw = {"tol": self.tol, "mu_schedule": self.mu_schedule}
        if self.max_iter is not None:
            kw["max_iter"] = self.max_iter
        return CellSolveConfig(**kw)

    def domain_cfg(self) -> DomainSolveConfig:
        kw = {"tol": self.tol, "mu_schedule": self.mu_schedule}
        if self.max_iter is not None:
            kw["max_iter"] = self.max_iter
        return DomainSolveConfig(**kw)

    def tau_value(self) -> float:
        if self.tau is not None:
            return float(self.tau)
        return admissible_tau(self.p, self.delta, self.theta).default

    def lp_value(self) -> float:
        return float(self.lp) if self.lp is not None else self.p


def data_from_dict(spec: dict):
    """Resolve a declarative boundary/source block to a callable preset."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"data spec must carry a 'kind': {spec}")
    kind = spec["kind"]
    try:
        if kind == "zero":
            return zero_data()
        if kind == "constant":
            return constant_data(float(spec["value"]))
        if kind == "affine":
            return affine_data(spec["coeffs"], float(spec.get("offset", 0.0)))
        if kind == "sine_product":
            return sine_product_data(float(spec.get("amplitude", 1.0)))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid data spec {spec}: {e}") from e
    raise ConfigError(f"unknown data kind '{kind}'")


# --------------------------------------------------------------- rate table


@dataclass(frozen=True)
class RateRow:
    eps: float
    h: float
    tau: float
    err_u_lp: float
    err_grad_lp: float
    runtime_s: float


@dataclass(frozen=True)
class RateTable:
    rows: tuple
    slope_u: float | None
    slope_grad: float | None
    residual_u: float | None
    residual_grad: float | None
    config_hash: str
    seed: int
    aborted: bool = False
    abort_reason: str = ""


def _fit_slope(eps, errs, floor):
    pts = [(e, r) for e, r in zip(eps, errs) if r > floor]
    if len(pts) < 3:
        return None, None
    x = np.log([e for e, _ in pts])
    y = np.log([r for _, r in pts])
    coef, res = np.polyfit(x, y, 1), None
    pred = np.polyval(coef, x)
    res = float(np.sqrt(np.mean((y - pred) ** 2)))
    return float(coef[0]), res


def convergence_sweep(cfg: ExperimentConfig) -> RateTable:
    """Solve the oscillating and homogenized problems across epsilon.

    The mesh is shared by all epsilon values (mesh_m * 2^max k intervals);
    the homogenized solve and the corrector table are built once.  Rows
    appear in increasing-k (decreasing epsilon) order.  A solver failure
    aborts the sweep and flags the partial table rather than raising.
    """
    model = cfg.model()
    ks = sorted(cfg.k_list)
    n_mesh = cfg.mesh_m * 2 ** max(ks)
    mesh = DomainMesh(cfg.dim, n_mesh)
    g = data_from_dict(cfg.bc)
    F = data_from_dict(cfg.source)
    tau = cfg.tau_value()
    lp = cfg.lp_value()
    tr = admissible_tau(cfg.p, cfg.delta, cfg.theta)
    if not tr.lo < tau < tr.hi:
        warnings.warn(
            f"tau={tau:g} outside the admissible interval "
            f"({tr.lo:g}, {tr.hi:g}); the rate guarantee does not apply",
            stacklevel=2,
        )
    rows = []
    aborted = False
    reason = ""
    try:
        table = build_corrector_table(model, cfg.cell_n, cfg.n_dir, cfg.cell_cfg())
        sol0 = solve_homogenized(TableLaw(table), mesh, g, F, cfg.domain_cfg())
    except ConvergenceError as e:
        aborted, reason, ks = True, f"setup: {e}", []
    for k in ks:
        eps = 2.0**-k
        t0 = time.perf_counter()
        try:
            sol_e = solve_oscillating(model, mesh, eps, g, F, cfg.domain_cfg())
            approx = build_first_order_gradient(table, sol0, eps, tau)
            err_u = error_solution_norm(sol_e, sol0, lp)
            err_g = error_gradient_norm(sol_e, approx, lp)
        except (ConvergenceError, ValueError) as e:
            aborted = True
            reason = f"k={k}: {e}"
            break
        dt = time.perf_counter() - t0 if cfg.record_timings else 0.0
        rows.append(
            RateRow(
                eps=eps,
                h=approx.h,
                tau=tau,
                err_u_lp=err_u,
                err_grad_lp=err_g,
                runtime_s=dt,
            )
        )
    floor = 10.0 * cfg.tol
    slope_u, res_u = _fit_slope(
        [r.eps for r in rows], [r.err_u_lp for r in rows], floor
    )
    slope_g, res_g = _fit_slope(
        [r.eps for r in rows], [r.err_grad_lp for r in rows], floor
    )
    table_out = RateTable(
        rows=tuple(rows),
        slope_u=slope_u,
        slope_grad=slope_g,
        residual_u=res_u,
        residual_grad=res_g,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
        aborted=aborted,
        abort_reason=reason,
    )
    if cfg.out is not None:
        emit_report(table_out, "csv", Path(cfg.out) / "sweep.csv")
        emit_report(table_out, "json", Path(cfg.out) / "sweep.json")
    return table_out


# --------------------------------------------------------- structure report


@dataclass(frozen=True)
class StructureReport:
    """Sampled inequality constants for the flux and the effective flux.

    flux_mu0 / flux_mu1 fit the pointwise two-sided monotonicity sandwich;
    containment records whether they land inside the weight bounds (within
    5 percent), which is exact only in the linear case.  effective_mu0 /
    effective_mu1 fit the same sandwich for the homogenized flux, while
    effective_c0 / effective_c1 fit the regime-specific halves: for p >= 2
    the coercivity line <dA, dxi> >= C0 |dxi|^p, for p <= 2 the growth
    line |dA| <= C2 |dxi|^((p-1)/(3-p)) (|xi|+|xi'|)^((p-1)(2-p)/(3-p)).
    Violation counts record sign failures of the monotonicity pairing.
    """

    p: float
    n_pairs: int
    flux_mu0: float
    flux_mu1: float
    flux_violations: int
    weight_mu0: float
    weight_mu1: float
    containment: bool
    effective_mu0: float
    effective_mu1: float
    effective_c0: float
    effective_c1: float
    effective_violations: int
    config_hash: str
    seed: int


def structure_verify(cfg: ExperimentConfig) -> StructureReport:
    """Sample the structural inequalities on the flux and the effective flux.

    The effective flux is evaluated through the direction table (degree
    p-1 homogeneity built in), so the sampled pairs exercise both the
    interpolation and the scaling law.
    """
    model = cfg.model()
    flux_rep = check_monotonicity_growth(
        model, n_pairs=cfg.n_pairs, seed=derive_seed(cfg.seed, "flux-pairs")
    )
    w = model.weight
    containment = (
        flux_rep.mu0_fit >= 0.95 * w.mu0_weight
        and flux_rep.mu1_fit <= 1.05 * w.mu1_weight
    )
    table = build_corrector_table(model, cfg.cell_n, cfg.n_dir, cfg.cell_cfg())
    rng = np.random.default_rng(derive_seed(cfg.seed, "effective-pairs"))
    d = cfg.dim
    xi = rng.standard_normal((d, cfg.n_pairs))
    xip = rng.standard_normal((d, cfg.n_pairs))
    keep = np.sqrt(np.sum((xi - xip) ** 2, axis=0)) > 1e-12
    xi, xip = xi[:, keep], xip[:, keep]
    a1 = table.effective(xi)
    a2 = table.effective(xip)
    dxi = xi - xip
    dn = np.sqrt(np.sum(dxi**2, axis=0))
    sn = np.sqrt(np.sum(xi**2, axis=0)) + np.sqrt(np.sum(xip**2, axis=0))
    mono = np.sum((a1 - a2) * dxi, axis=0)
    dA = np.sqrt(np.sum((a1 - a2) ** 2, axis=0))
    p = cfg.p
    tiny = 1e-300
    mu0_eff = mono / np.maximum(sn ** (p - 2.0) * dn**2, tiny)
    mu1_eff = dA / np.maximum(sn ** (p - 2.0) * dn, tiny)
    if p >= 2.0:
        c0 = mono / np.maximum(dn**p, tiny)
        c1 = dA / np.maximum(dn * sn ** (p - 2.0), tiny)
    else:
        c0 = mu0_eff
        expo = (p - 1.0) / (3.0 - p)
        cross = (p - 1.0) * (2.0 - p) / (3.0 - p)
        c1 = dA / np.maximum(dn**expo * sn**cross, tiny)
    violations = int(np.sum(mono <= 0.0))
    return StructureReport(
        p=p,
        n_pairs=int(xi.shape[1]),
        flux_mu0=flux_rep.mu0_fit,
        flux_mu1=flux_rep.mu1_fit,
        flux_violations=flux_rep.violations,
        weight_mu0=w.mu0_weight,
        weight_mu1=w.mu1_weight,
        containment=containment,
        effective_mu0=float(np.min(mu0_eff)),
        effective_mu1=float(np.max(mu1_eff)),
        effective_c0=float(np.min(c0)),
        effective_c1=float(np.max(c1)),
        effective_violations=violations,
        config_hash=cfg.config_hash(),
        seed=cfg.seed,
    )


# ----------------------------------------------------- separable example


@dataclass(frozen=True)
class SeparableReport:
    """Checks of the separable-weight construction.

    In one dimension the effective coefficient has a closed quadrature
    form; in two, a weight depending on y1 + y2 admits the explicit
    corrector ansatz N(y, xi) = (chi + sum y_k)(sum xi_k) - y . xi whose
    cell residual must match a direct solve, with the component sum of the
    effective direction bounded away from zero.
    """

    dim: int
    p: float
    ahat: tuple
    ahat_sum: float
    oracle: float | None
    oracle_rel_err: float | None
    ansatz_residual: float | None
    direct_residual: float | None
    config_hash: str


def section5_example(cfg: ExperimentConfig) -> SeparableReport:
    model = cfg.model()
    grid = PeriodicGrid(cfg.dim, cfg.cell_n)
    ccfg = cfg.cell_cfg()
    if cfg.dim == 1:
        cor = solve_cell(model, np.array([1.0]), grid, ccfg)
        ahat = effective_flux(model, cor)
        oracle = effective_flux_1d_oracle(model)
        rel = abs(ahat[0] - oracle) / abs(oracle)
        return SeparableReport(
            dim=1,
            p=cfg.p,
            ahat=tuple(float(v) for v in ahat),
            ahat_sum=float(ahat[0]),
            oracle=float(oracle),
            oracle_rel_err=float(rel),
            ansatz_residual=None,
            direct_residual=None,
            config_hash=cfg.config_hash(),
        )
    ones = np.ones(2)
    chi = solve_cell(model, ones, grid, ccfg)
    ahat = effective_flux(model, chi)
    # Ansatz gradient at direction xi: (grad chi + ones) (sum xi) - xi, so
    # the corrected field xi + grad N equals (grad chi + ones) (sum xi).
    xi = np.array([1.0, 0.0])
    P = chi.P.data * np.sum(xi)
    a_vals = model.weight.eval(grid.coords())
    A = flux_given_weight(a_vals, P, model.p, chi.mu_final)
    res_ansatz = l2_arr(div_arr(A, grid.n), grid)
    direct = solve_cell(model, xi, grid, ccfg)
    return SeparableReport(
        dim=2,
        p=cfg.p,
        ahat=tuple(float(v) for v in ahat),
        ahat_sum=float(np.sum(ahat)),
        oracle=None,
        oracle_rel_err=None,
        ansatz_residual=float(res_ansatz),
        direct_residual=float(direct.residual),
        config_hash=cfg.config_hash(),
    )


# ------------------------------------------------------- large-scale decay


@dataclass(frozen=True)
class DecaySweepReport:
    eps_values: tuple
    slopes: tuple
    worst_slope: float
    expected: float
    config_hash: str


def large_scale_experiment(cfg: ExperimentConfig) -> DecaySweepReport:
    """Fit the growth exponent of ball-averaged gradient mass across eps.

    For each epsilon, solves the oscillating problem and fits the slope of
    log integral_{B_r} |grad u|^p against log r over r in [2 eps, 1/4];
    uniform interior Lipschitz bounds make the mass scale like r^d.
    """
    if cfg.dim != 2:
        raise ConfigError("large-scale decay experiment needs dim = 2")
    model = cfg.model()
    g = data_from_dict(cfg.bc)
    F = data_from_dict(cfg.source)
    center = (0.5, 0.5)
    slopes = []
    eps_values = cfg.epsilons()
    for eps in eps_values:
        mesh = DomainMesh.nested(2, eps, cfg.mesh_m)
        sol = solve_oscillating(model, mesh, eps, g, F, cfg.domain_cfg())
        radii = np.geomspace(2.0 * eps, 0.25, cfg.n_radii)
        rep = large_scale_decay(sol, cfg.p, center, radii, eps)
        slopes.append(rep.slope)
    return DecaySweepReport(
        eps_values=eps_values,
        slopes=tuple(slopes),
        worst_slope=float(min(slopes)),
        expected=2.0,
        config_hash=cfg.config_hash(),
    )


# ------------------------------------------------------------- report files


_CSV_HEADER = "eps,h,tau,err_u_lp,err_grad_lp,runtime_s"


def _to_plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _fmt(x: float) -> str:
    return "%.12g" % x


def emit_report(report, fmt: str, path) -> Path:
    """Write a report to disk; returns the path written.

    Rate tables in CSV use exactly the columns eps,h,tau,err_u_lp,
    err_grad_lp,runtime_s; other reports flatten to key,value rows.  JSON
    carries the rows plus metadata (config hash, version, seed).  Identical
    configs produce byte-identical files.
    """
    path = Path(path)
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    if fmt == "csv":
        if isinstance(report, RateTable):
            lines = [_CSV_HEADER]
            for r in report.rows:
                lines.append(
                    ",".join(
                        _fmt(v)
                        for v in (
                            r.eps,
                            r.h,
                            r.tau,
                            r.err_u_lp,
                            r.err_grad_lp,
                            r.runtime_s,
                        )
                    )
                )
            text = "\n".join(lines) + "\n"
        else:
            plain = _to_plain(report)
            lines = ["key,value"]
            for k, v in plain.items():
                lines.append(f"{k},{json.dumps(v, sort_keys=True)}")
            text = "\n".join(lines) + "\n"
    else:
        meta = {"version": __version__, "kind": type(report).__name__}
        for key in ("config_hash", "seed"):
            val = getattr(report, key, None)
            if val is not None:
                meta[key] = val
        payload = {"meta": meta, "report": _to_plain(report)}
        text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise RuntimeError(f"cannot write report to {path}: {e}") from e
    return path
