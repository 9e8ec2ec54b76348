"""Command-line experiment runner.

    varembed fit|diagnose|dynamics|pca-check <config> [--out DIR] [--seed N] [--quiet]

``<config>`` is a TOML file or the name of a shipped preset (``diagnose``
takes the result JSON written by ``fit``). Exit codes: 0 success, 2 config
error, 3 optimization failure, 4 degenerate instance. Every file is written
only after the command's computation has finished.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    build_density,
    build_embedding,
    build_integration,
    build_optimizer,
    build_prior,
    load_config,
    parse_config,
    preset_names,
    tomllib,
)
from .dynamics import OdeState, compare_score_limit, integrate_el, reparameterized_flow
from .embedding import Basis1D, Linear, embedding_from_dict, injectivity_probe
from .errors import (
    ConfigError,
    DegenerateSpectrumError,
    IterateInvalid,
    OptimizationFailed,
    RankDeficientError,
)
from .models import MultivariateGaussian, TruncatedExponential
from .numerics.quadrature import MAX_ORDER
from .objective import IntegrationConfig, estimate_objective, finiteness_report
from .optimizer import best_trace, multi_restart_stats, run_restarts
from .pca import closed_form_objective, closed_form_solution, fixed_point_residual, principal_angles
from .svgplot import curve_overlay_svg
from .variational import el_residual, energy_conservation_report, mass_region_samples

EXIT_CONFIG, EXIT_OPTIMIZATION, EXIT_DEGENERATE = 2, 3, 4


class Outputs:
    """Files collected in memory and written together at the end."""

    def __init__(self):
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> str:
        self.files[name] = text
        return name

    def csv(self, name: str, writer) -> str:
        buf = io.StringIO()
        writer(buf)
        return self.add(name, buf.getvalue())

    def json(self, name: str, obj) -> str:
        return self.add(name, json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def flush(self, out_dir: Path) -> None:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (out_dir / name).write_text(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _csv_to(path_writer):
    """Adapt ``obj.to_csv(path)`` methods to an in-memory buffer."""

    def write(buf):
        with tempfile.TemporaryDirectory() as tmp:
            p = Path(tmp) / "x.csv"
            path_writer(p)
            buf.write(p.read_text())

    return write


def _write_rows(header, rows):
    def write(buf):
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])

    return write


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def _objective_tolerance(emb, prior, density, scheme: IntegrationConfig, est) -> float:
    if scheme.scheme == "monte-carlo":
        return float(est.stderr)
    # compare against the next rule up, or the one below at the top of the table
    other = 2 * scheme.order if 2 * scheme.order <= MAX_ORDER else scheme.order // 2
    try:
        finer = estimate_objective(emb, prior, density, IntegrationConfig(order=other)).value
    except IterateInvalid:
        return float("inf")
    return abs(finer - est.value)


def _curve_samples(emb, prior, n: int, mass: float = 0.99):
    lo, hi = prior.central_interval(mass)
    z = np.linspace(lo, hi, n)
    return z, emb.eval(z[:, None]).reshape(n, emb.D)


def run_fit(cfg: ExperimentConfig, out: Outputs) -> dict:
    density, prior = build_density(cfg), build_prior(cfg)
    emb0 = build_embedding(cfg)
    scheme, opt = build_integration(cfg), build_optimizer(cfg)
    start = time.perf_counter()
    traces = run_restarts(emb0, prior, density, opt, scheme)
    best = best_trace(traces)  # raises OptimizationFailed
    fitted = emb0.with_theta(best.final_theta)
    est = estimate_objective(fitted, prior, density, scheme)
    diag = cfg["diagnostics"]
    conservation = energy_conservation_report(fitted, prior, density, diag["samples"], diag["seed"], diag["mass"],
                                              diag["angular_mass"], diag["angular_center"])
    result = {
        "command": "fit",
        "version": __version__,
        "config": cfg.echo(),
        "embedding": fitted.to_dict(),
        "J": est.value,
        "J_tolerance": _objective_tolerance(fitted, prior, density, scheme, est),
        "integration_scheme": est.integration_scheme,
        "node_count": est.node_count,
        "optimizer": {**best.summary(), "restarts": multi_restart_stats(traces),
                      "restart_summaries": [t.summary() for t in traces]},
        "finiteness": finiteness_report(fitted, prior, scheme),
        "conservation": conservation.summary,
    }
    if fitted.d in (1, 2):
        probe = injectivity_probe(fitted, prior)
        result["injectivity"] = {"min_distance_ratio": probe["min_distance_ratio"],
                                 "suspected_self_intersections": len(probe["suspected_self_intersections"])}
    files = []
    if cfg["output"]["trace_csv"]:
        files.append(out.csv(f"{cfg.name}_trace.csv", _csv_to(best.to_csv)))
    files.append(out.csv(f"{cfg.name}_conservation.csv", _csv_to(conservation.to_csv)))
    if cfg["output"]["svg"] and fitted.d == 1 and fitted.D == 2:
        z, curve = _curve_samples(fitted, prior, cfg["output"]["curve_points"])
        files.append(out.add(f"{cfg.name}_overlay.svg", curve_overlay_svg(density, curve, cfg["output"]["svg_grid"])))
        files.append(out.csv(f"{cfg.name}_curve.csv", _write_rows(
            ["z [latent]", "phi0 [ambient]", "phi1 [ambient]"], [(zk, *pk) for zk, pk in zip(z, curve)])))
    result_name = f"{cfg.name}_result.json"
    result["files"] = sorted(files + [result_name])
    result["wall_clock_seconds"] = time.perf_counter() - start
    out.json(result_name, result)
    return result


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def _load_result(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"no such result file: {path}")
    try:
        result = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not a result file: {exc}") from exc
    if not isinstance(result, dict) or "embedding" not in result or "config" not in result:
        raise ConfigError(f"{path}: result has no fitted model (run 'varembed fit' first)")
    return result


def _config_from_echo(echo: dict, overrides: str | None) -> ExperimentConfig:
    """Rebuild a config from a result's echo, with keys from ``overrides`` replacing it."""
    merged = {k: dict(v) for k, v in echo.items() if isinstance(v, dict)}
    name = echo.get("name", "run")
    if overrides:
        if not Path(overrides).is_file():
            raise ConfigError(f"no such config file: {overrides}")
        text = Path(overrides).read_text()
        parse_config(text, overrides, name)  # strict checks with line numbers
        for section, keys in tomllib.loads(text).items():
            if isinstance(keys, dict):
                merged.setdefault(section, {}).update(keys)
    return parse_config(_to_toml(merged, name), "<result>", name)


def _to_toml(sections: dict, name: str) -> str:
    lines = [f"name = {json.dumps(name)}"]
    for section, keys in sections.items():
        lines.append(f"[{section}]")
        for k, v in keys.items():
            if v is not None:
                lines.append(f"{k} = {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def run_diagnose(result_path, overrides, out: Outputs) -> dict:
    result = _load_result(result_path)
    cfg = _config_from_echo(result["config"], overrides)
    density, prior = build_density(cfg), build_prior(cfg)
    try:
        emb = embedding_from_dict(result["embedding"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"{result_path}: cannot rebuild the fitted model: {exc}") from exc
    diag = cfg["diagnostics"]
    trace = energy_conservation_report(emb, prior, density, diag["samples"], diag["seed"], diag["mass"],
                                       diag["angular_mass"], diag["angular_center"])
    if emb.d == 1:
        lo, hi = prior.central_interval(diag["mass"])
        zs = np.linspace(lo, hi, diag["el_points"])[:, None]
    else:
        zs = mass_region_samples(prior, diag["el_points"], diag["seed"], diag["mass"])
    rows, rel, absolute = [], [], []
    for z in zs:
        try:
            r = el_residual(emb, prior, density, z)
        except RankDeficientError:
            rows.append((*z, *([float("nan")] * emb.D), float("nan"), float("nan")))
            rel.append(np.inf)
            absolute.append(np.inf)
            continue
        rows.append((*z, *r.residual, r.absolute, r.relative))
        rel.append(r.relative)
        absolute.append(r.absolute)
    header = [f"z{j} [latent]" for j in range(emb.d)] + [f"residual{i} [1/ambient]" for i in range(emb.D)]
    header += ["absolute [1/ambient]", "relative [ratio]"]

    checks = {
        "energy_relative_std": _check(trace.summary["energy"]["relative_std"], diag["energy_threshold"]),
        "el_residual_median": _check(float(np.median(rel)), diag["el_threshold"]),
    }
    if diag["angular"]:
        cv = trace.summary.get("angular_momentum", {}).get("cv", float("inf"))
        checks["angular_momentum_cv"] = _check(cv, diag["angular_threshold"])
    grad = result.get("optimizer", {}).get("final_grad_norm", float("inf"))
    summary = {
        "command": "diagnose",
        "result": str(result_path),
        "J": result.get("J"),
        "converged": bool(grad < diag["converged_grad_norm"]),
        "final_grad_norm": grad,
        "energy": trace.summary["energy"],
        "energy_plus_J": trace.summary["energy"]["mean"] + result.get("J", float("nan")),
        "el_residual": {"median_relative": float(np.median(rel)), "median_absolute": float(np.median(absolute)),
                        "max_relative": float(np.max(rel)), "points": len(zs)},
        "angular_momentum": trace.summary.get("angular_momentum"),
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }
    files = [
        out.csv(f"{cfg.name}_diagnose_conservation.csv", _csv_to(trace.to_csv)),
        out.csv(f"{cfg.name}_el_residual.csv", _write_rows(header, rows)),
    ]
    name = f"{cfg.name}_diagnose.json"
    summary["files"] = sorted(files + [name])
    out.json(name, summary)
    return summary


def _check(value: float, threshold: float) -> dict:
    return {"value": value, "threshold": threshold, "pass": bool(value < threshold)}


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------


def _endpoint(traj) -> np.ndarray:
    return np.concatenate([traj.phi[-1], traj.p[-1]]) if traj.p is not None else traj.phi[-1]


def run_dynamics(cfg: ExperimentConfig, out: Outputs) -> dict:
    density, prior = build_density(cfg), build_prior(cfg)
    dyn = cfg["dynamics"]
    if prior.latent_dim != 1:
        raise cfg.error("dynamics needs a one-dimensional prior", "prior", "dim")
    phi0 = np.asarray(dyn["phi0"])
    summary: dict = {"command": "dynamics", "config": cfg.echo(), "mode": dyn["mode"]}
    files = []
    if dyn["mode"] == "reparameterized":
        span = dyn["tau_span"]
        steps = dyn["steps"] or max(1, int(round(2000 * abs(span[1] - span[0]))))

        def integrate(n):
            return reparameterized_flow(phi0, span, n, density)
    else:
        span = dyn["z_span"]
        if dyn["p0"] is not None:
            p0 = np.asarray(dyn["p0"])
        elif isinstance(prior, TruncatedExponential):
            p0 = np.asarray(density.score(phi0)).reshape(-1) / prior.gamma
        else:
            raise cfg.error("p0 is required unless the prior is exponential", "dynamics", "p0")
        if len(p0) != len(phi0):
            raise cfg.error("p0 and phi0 differ in dimension", "dynamics", "p0")
        steps = dyn["steps"]

        def integrate(n):
            return integrate_el(OdeState(span[0], phi0, p0), span, n, prior, density)

    try:
        traj = integrate(steps)
    except ValueError as exc:
        raise cfg.error(str(exc), "dynamics", None) from exc
    summary["halt_reason"] = traj.halt_reason
    summary["points"] = len(traj.z)
    summary["endpoint"] = traj.phi[-1].tolist()
    if traj.p is not None:
        E = traj.energy(prior, density)
        summary["energy_drift"] = float(np.ptp(E))
        files.append(out.csv(f"{cfg.name}_trajectory.csv", _csv_to(lambda p: traj.to_csv(p, prior, density))))
    else:
        files.append(out.csv(f"{cfg.name}_trajectory.csv", _csv_to(traj.to_csv)))
    if dyn["convergence_check"]:
        n = len(traj.z) - 1
        ends = [_endpoint(integrate(k)) for k in (n, 2 * n, 4 * n)]
        d1, d2 = np.linalg.norm(ends[0] - ends[1]), np.linalg.norm(ends[1] - ends[2])
        summary["convergence"] = {"steps": [n, 2 * n, 4 * n], "shift_ratio": float(d1 / d2) if d2 > 0 else None,
                                  "shifts": [float(d1), float(d2)]}
    if isinstance(prior, TruncatedExponential) and dyn["mode"] == "el":
        cmp = compare_score_limit(phi0, prior.gamma, span, density, steps, p0, dyn["transient_constants"])
        summary["limit"] = cmp.summary
        files.append(out.csv(f"{cfg.name}_limit.csv", _csv_to(cmp.to_csv)))
    name = f"{cfg.name}_dynamics.json"
    summary["files"] = sorted(files + [name])
    out.json(name, summary)
    return summary


# ---------------------------------------------------------------------------
# pca-check
# ---------------------------------------------------------------------------


def run_pca_check(cfg: ExperimentConfig, out: Outputs) -> dict:
    density, prior = build_density(cfg), build_prior(cfg)
    if not isinstance(density, MultivariateGaussian) or cfg["prior"]["kind"] != "gaussian":
        raise cfg.error("pca-check needs a gaussian density and a gaussian prior", "density", "kind")
    Sigma, d, sigma0 = density.covariance, prior.latent_dim, prior.sigma0
    sol = closed_form_solution(Sigma, d, sigma0)  # raises DegenerateSpectrumError on a tie
    J_closed = closed_form_objective(Sigma, d)
    scheme = build_integration(cfg)
    offset = density.mean
    J_closed_quadrature = estimate_objective(Linear.from_matrix(sol.A, offset), prior, density, scheme).value

    emb0 = build_embedding(cfg)
    if cfg["embedding"]["origin"] is None:
        emb0 = _with_offset(emb0, offset)
    traces = run_restarts(emb0, prior, density, build_optimizer(cfg), scheme)
    best = best_trace(traces)
    fitted = emb0.with_theta(best.final_theta)
    J_fit = estimate_objective(fitted, prior, density, scheme).value
    tol = cfg["pca"]
    if isinstance(fitted, Basis1D):
        C = fitted.params["C"]
        A = (C[1] / fitted.scale).reshape(-1, 1)
        norms = np.linalg.norm(C, axis=1)
        ratio = float(np.max(norms[2:]) / norms[1]) if len(norms) > 2 else 0.0
    else:
        A = fitted.params["A"]
        ratio = None
    angles = principal_angles(A, sol.eigenvectors[:, :d])
    sv = np.sort(np.linalg.svd(A, compute_uv=False))[::-1]
    target = np.sqrt(sol.eigenvalues[:d])
    sv_err = np.abs(sigma0 * sv - target) / target
    fp = fixed_point_residual(A, Sigma, sigma0)
    checks = {
        "max_principal_angle": _check(float(angles.max()), tol["angle_tol"]),
        "max_singular_value_rel_err": _check(float(sv_err.max()), tol["singular_value_tol"]),
        "fixed_point_residual": _check(fp, tol["fixed_point_tol"]),
        "objective_gap": _check(abs(J_fit - J_closed), tol["objective_tol"]),
        "closed_form_quadrature_gap": _check(abs(J_closed_quadrature - J_closed), tol["objective_tol"]),
    }
    if ratio is not None:
        checks["higher_order_coefficient_ratio"] = _check(ratio, tol["coefficient_ratio_tol"])
    verdict = {
        "command": "pca-check",
        "config": cfg.echo(),
        "closed_form": sol.to_dict(),
        "J_closed_form": J_closed,
        "J_closed_form_quadrature": J_closed_quadrature,
        "J_fit": J_fit,
        "embedding": fitted.to_dict(),
        "principal_angles": angles.tolist(),
        "singular_value_rel_err": sv_err.tolist(),
        "optimizer": {**best.summary(), "restarts": multi_restart_stats(traces)},
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }
    files = [out.csv(f"{cfg.name}_trace.csv", _csv_to(best.to_csv))]
    name = f"{cfg.name}_pca_check.json"
    verdict["files"] = sorted(files + [name])
    out.json(name, verdict)
    return verdict


def _with_offset(emb, offset):
    params = emb.params
    key = {"linear": "b", "perceptron": "b_out"}.get(emb.family)
    if key is None:
        params["C"][0] = offset
    else:
        params[key] = np.asarray(offset, dtype=float)
    return emb.with_theta(emb.flatten(params))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varembed", description="Fit and analyze variational embeddings.")
    p.add_argument("--version", action="version", version=f"varembed {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext, target in (
        ("fit", "optimize an embedding", "config file or preset name"),
        ("diagnose", "conservation and stationarity checks on a fitted model", "result JSON from fit"),
        ("dynamics", "integrate the one-dimensional stationarity dynamics", "config file or preset name"),
        ("pca-check", "compare a Gaussian fit against the closed-form optimum", "config file or preset name"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("target", help=target)
        sp.add_argument("--out", default=None, help="output directory (default: runs/<name>)")
        sp.add_argument("--seed", type=int, default=None, help="override optimizer.seed")
        sp.add_argument("--quiet", action="store_true", help="print nothing on success")
        if name == "diagnose":
            sp.add_argument("--config", default=None, help="TOML file overriding [diagnostics] keys")
    sub.add_parser("presets", help="list shipped presets")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return 0
    out = Outputs()
    try:
        if args.command == "diagnose":
            summary = run_diagnose(args.target, args.config, out)
            name = Path(args.target).stem.removesuffix("_result")
            verdict = "pass" if summary["pass"] else "FAIL " + ", ".join(
                k for k, c in summary["checks"].items() if not c["pass"])
            message = f"diagnose {name}: {verdict}"
        else:
            require = ("density", "prior", "dynamics") if args.command == "dynamics" else ("density", "prior")
            cfg = load_config(args.target, require)
            if args.seed is not None:
                cfg = cfg.with_seed(args.seed)
            name = cfg.name
            if args.command == "fit":
                res = run_fit(cfg, out)
                message = f"fit {name}: J = {res['J']:.10g} +/- {res['J_tolerance']:.2g} ({res['optimizer']['status']})"
            elif args.command == "dynamics":
                res = run_dynamics(cfg, out)
                message = f"dynamics {name}: {res['points']} points" + (
                    f", halted: {res['halt_reason']}" if res["halt_reason"] else "")
            else:
                res = run_pca_check(cfg, out)
                message = f"pca-check {name}: {'pass' if res['pass'] else 'FAIL'}"
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OptimizationFailed as exc:
        print(f"optimization failed: {exc}", file=sys.stderr)
        for cause in exc.causes:
            print(f"  {cause}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    except DegenerateSpectrumError as exc:
        print(f"degenerate instance: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    out_dir = Path(args.out) if args.out else Path("runs") / name
    out.flush(out_dir)
    _say(args, message)
    _say(args, f"wrote {len(out.files)} files to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
