"""Command-line driver.

Subcommands: simulate, density, estimate-spectral, fit-discrete,
fit-normal, select-J, accuracy-table, diagnose. Every run writes a JSON
manifest with the arguments, seeds and package version so it can be
replayed bit for bit with --replay.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (StableModelParams, as_generator, simulate_mvstable,
                   univariate_ml_fit)
from .gfun import QuadConfig, marginal_density_mc
from .mcmc import geweke_diagnostic, log_marginal_likelihood
from .pipeline import garch_filter, ingest_csv, median_scale, write_matrix_csv
from .samplers import run_mcmc_discrete, run_mcmc_normal
from .spectral import (DiscreteMeasure, NormalMeasureApprox, build_cf_system,
                       build_scale_system, measure_from_json, measure_to_json,
                       sigma_beta_cloud_batch, solve_gamma, CFSystem)
from .sphere import gaussian_normalized_grid, hit_and_run_sphere, uniform_sphere

MANIFEST_VERSION = 1


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, args: dict,
                    outputs: dict) -> None:
    manifest = {"manifest_version": MANIFEST_VERSION,
                "package_version": __version__,
                "command": command,
                "args": args,
                "outputs": outputs}
    payload = json.dumps(manifest, indent=2, sort_keys=True)
    manifest["config_hash"] = hashlib.sha256(payload.encode()).hexdigest()
    with open(outdir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_measure(spec: str):
    p = Path(spec)
    text = p.read_text() if p.exists() else spec
    return measure_from_json(text)


def _prepare_data(args) -> tuple[np.ndarray, float]:
    series = ingest_csv(args.data, date_column=args.date_column)
    if getattr(args, "garch", True):
        series = garch_filter(series)
    if getattr(args, "median_scale", True):
        series = median_scale(series)
    return series.values, series.scale_factor


def _cmd_simulate(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    measure = _load_measure(args.measure)
    zeta = np.asarray(json.loads(args.zeta), dtype=float) \
        if args.zeta else np.zeros(measure.d)
    params = StableModelParams(args.alpha, zeta, measure)
    x = simulate_mvstable(params, args.n, args.seed)
    sample_path = outdir / "sample.csv"
    write_matrix_csv(sample_path, x, [f"x{i+1}" for i in range(x.shape[1])])
    _write_manifest(outdir, "simulate", vars(args) | {"func": None},
                    {"sample": _sha256(sample_path)})
    print(f"wrote {sample_path} ({args.n} x {measure.d})")


def _cmd_density(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    measure = _load_measure(args.measure)
    d = measure.d if isinstance(measure, DiscreteMeasure) else args.d
    zeta = np.asarray(json.loads(args.zeta), dtype=float) \
        if args.zeta else np.zeros(d)
    direction = np.asarray(json.loads(args.direction), dtype=float) \
        if args.direction else np.eye(d)[0]
    direction = direction / np.linalg.norm(direction)
    params = StableModelParams(args.alpha, zeta, measure)
    ts = np.linspace(args.lo, args.hi, args.points)
    quad = QuadConfig(nodes_per_interval=args.quad_nodes)
    dens = [marginal_density_mc(zeta + t * direction, params,
                                n_sphere=args.n_sphere, config=quad,
                                seed=args.seed) for t in ts]
    out_path = outdir / "density.csv"
    write_matrix_csv(out_path, np.column_stack([ts, dens]), ["t", "density"])
    _write_manifest(outdir, "density", vars(args) | {"func": None},
                    {"density": _sha256(out_path)})
    print(f"wrote {out_path}")


def _cmd_estimate_spectral(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data, scale = _prepare_data(args)
    n, d = data.shape
    rng = as_generator(args.seed)
    atoms = gaussian_normalized_grid(d, args.j_atoms, rng).points
    if args.mode == "cf":
        tau = gaussian_normalized_grid(d, 10 * args.j_atoms, rng).points
        system = build_cf_system(atoms, tau, args.alpha, args.ridge,
                                 data=data, rescale=False)
        gamma_hat, cov = solve_gamma(system)
        cond = system.condition_number
    else:
        t_grid = uniform_sphere(d, 10 * args.j_atoms, rng).points
        sig_hats = np.empty(t_grid.shape[0])
        alpha_hats = np.empty(t_grid.shape[0])
        for i, t in enumerate(t_grid):
            fit = univariate_ml_fit(data @ t, polish=False)
            sig_hats[i] = fit.sigma
            alpha_hats[i] = fit.alpha
        a_mat, b_vec = build_scale_system(t_grid, atoms,
                                          float(np.mean(alpha_hats)),
                                          sig_hats)
        system = CFSystem(design=a_mat, response=b_vec, ridge=args.ridge,
                          noise_scale=None, tau_grid=t_grid)
        gamma_hat, cov = solve_gamma(system)
        cond = system.condition_number
    result = {"gamma_hat": gamma_hat.tolist(), "atoms": atoms.tolist(),
              "condition_number": cond, "scale_factor": scale,
              "total_mass": float(np.sum(np.clip(gamma_hat, 0, None)))}
    out_path = outdir / "spectral.json"
    out_path.write_text(json.dumps(result, indent=2))
    _write_manifest(outdir, "estimate-spectral", vars(args) | {"func": None},
                    {"spectral": _sha256(out_path)})
    print(f"wrote {out_path}")


def _run_fit(args, kind: str):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data, scale = _prepare_data(args)
    burn = "auto" if args.burn_in == "auto" else int(args.burn_in)
    if kind == "discrete":
        trace = run_mcmc_discrete(
            data, args.j_atoms, burn_in=burn, n_main=args.draws,
            thin=args.thin, seed=args.seed, ridge=args.ridge,
            verbose=args.verbose)
    else:
        trace = run_mcmc_normal(
            data, burn_in=burn, n_main=args.draws, thin=args.thin,
            seed=args.seed, mc_size=args.mc_size, verbose=args.verbose)
    trace_path = outdir / "trace.ndjson"
    trace.to_ndjson(trace_path)
    summary = trace.summary()
    summary["data_scale_factor"] = scale
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2))
    _write_manifest(outdir, f"fit-{kind}", vars(args) | {"func": None},
                    {"trace": _sha256(trace_path)})
    print(json.dumps(summary, indent=2))
    print(f"wrote {trace_path}")


def _cmd_select_j(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    data, scale = _prepare_data(args)
    results = []
    for j in args.j_list:
        trace = run_mcmc_discrete(
            data, j, burn_in=int(args.burn_in), n_main=args.draws,
            thin=args.thin, seed=args.seed, ridge=args.ridge,
            verbose=args.verbose)
        ev = _trace_evidence(trace, data, args.seed)
        results.append({"J": j, "log_evidence": ev,
                        "alpha_mean": float(trace.alpha.mean())})
        print(f"J={j}: log evidence {ev:.2f}")
    best = max(results, key=lambda r: r["log_evidence"])
    for r in results:
        r["bayes_factor_vs_first"] = float(
            np.exp(r["log_evidence"] - results[0]["log_evidence"]))
    table_path = outdir / "select_j.json"
    table_path.write_text(json.dumps(
        {"results": results, "selected_J": best["J"]}, indent=2))
    _write_manifest(outdir, "select-J", vars(args) | {"func": None},
                    {"table": _sha256(table_path)})
    print(f"selected J = {best['J']}; wrote {table_path}")


def _trace_evidence(trace, data, seed, n_sphere: int = 600) -> float:
    """Laplace-Metropolis evidence of a discrete-model trace.

    The latent directions are integrated observation by observation through
    the Monte Carlo sphere marginal at the posterior mean.
    """
    draws = trace.param_matrix()

    def log_post_at(theta_bar):
        alpha = float(np.clip(theta_bar[0], 0.05, 2.0))
        d = trace.zeta.shape[1]
        zeta = theta_bar[1:1 + d]
        gamma = np.clip(theta_bar[1 + d:], 1e-10, None)
        atoms_bar = trace.atoms.mean(axis=0)
        atoms_bar = atoms_bar / np.linalg.norm(atoms_bar, axis=1,
                                               keepdims=True)
        measure = DiscreteMeasure(atoms_bar, gamma)
        params = StableModelParams(alpha, zeta, measure)
        ll = 0.0
        for x in data:
            ll += np.log(max(marginal_density_mc(
                x, params, n_sphere=n_sphere, seed=seed), 1e-300))
        return ll

    return log_marginal_likelihood(draws, log_post_at)


def _cmd_accuracy_table(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in args.m_list:
        err = accuracy_cell(args.d, args.alpha, m, args.n_directions,
                            args.seed, args.m_reference)
        rows.append([args.d, args.alpha, m, err])
        print(f"d={args.d} alpha={args.alpha} M={m}: "
              f"median abs error {err:.6f}")
    out_path = outdir / "accuracy.csv"
    write_matrix_csv(out_path, np.asarray(rows),
                     ["d", "alpha", "M", "median_abs_error"])
    _write_manifest(outdir, "accuracy-table", vars(args) | {"func": None},
                    {"table": _sha256(out_path)})
    print(f"wrote {out_path}")


def accuracy_cell(d: int, alpha: float, m: int, n_directions: int = 1000,
                  seed=0, m_reference: int = 10 ** 6) -> float:
    """Median absolute error of the M-draw estimate of sigma(s)^alpha.

    The estimator averages |<s, c>|^alpha over sphere-normalised Gaussian
    draws; the reference uses m_reference draws. Directions are uniform on
    the sphere. Chunked so the d=50 cell stays within memory.
    """
    rng = as_generator(seed)
    dirs = uniform_sphere(d, n_directions, rng).points
    measure = NormalMeasureApprox(0.0, 1.0, mc_size=max(m, 10))
    from .spectral import sample_normal_cloud

    cloud_small = sample_normal_cloud(
        NormalMeasureApprox(0.0, 1.0, mc_size=m), d, rng)
    est, _ = sigma_beta_cloud_batch(dirs, cloud_small, alpha)

    ref = np.zeros(n_directions)
    done = 0
    chunk = max(1, int(2e7 // n_directions))
    while done < m_reference:
        take = min(chunk, m_reference - done)
        cloud = sample_normal_cloud(
            NormalMeasureApprox(0.0, 1.0, mc_size=take), d, rng)
        ref += np.abs(dirs @ cloud.T) ** alpha @ np.ones(take)
        done += take
    ref /= m_reference
    return float(np.median(np.abs(est - ref)))


def _cmd_diagnose(args):
    path = Path(args.trace)
    recs = [json.loads(line) for line in path.read_text().splitlines()
            if line.strip()]
    if not recs:
        raise SystemExit("empty trace file")
    series = {"alpha": np.array([r["alpha"] for r in recs]),
              "log_post": np.array([r["log_post"] for r in recs])}
    d = len(recs[0]["zeta"])
    for i in range(d):
        series[f"zeta_{i+1}"] = np.array([r["zeta"][i] for r in recs])
    if "gamma" in recs[0]:
        series["total_mass"] = np.array([sum(r["gamma"]) for r in recs])
    else:
        series["omega"] = np.array([r["omega"] for r in recs])
    out = {}
    for name, x in series.items():
        row = {"mean": float(np.mean(x)), "sd": float(np.std(x))}
        try:
            row["geweke_z"] = float(geweke_diagnostic(x))
        except ValueError as exc:
            row["geweke_z_error"] = str(exc)
        lag = min(50, x.size // 4)
        xc = x - x.mean()
        denom = float(np.sum(xc * xc))
        row["acf_lag50"] = float(np.sum(xc[lag:] * xc[:-lag]) / denom) \
            if denom > 0 else None
        out[name] = row
    if "accept_flags" in recs[0]:
        flags = np.array([r["accept_flags"] for r in recs])
        out["accept_rates_recorded"] = [float(f) for f in flags.mean(axis=0)]
    print(json.dumps(out, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvstable",
        description="Bayesian inference for multivariate stable "
                    "distributions via one-dimensional projections")
    parser.add_argument("--replay", metavar="MANIFEST",
                        help="re-run the command recorded in a manifest")
    sub = parser.add_subparsers(dest="command")

    def add_common_fit(p):
        p.add_argument("--data", required=True, help="CSV of price levels")
        p.add_argument("--date-column", default=None)
        p.add_argument("--no-garch", dest="garch", action="store_false",
                       help="skip the AR(1)-GARCH(1,1) filter")
        p.add_argument("--no-median-scale", dest="median_scale",
                       action="store_false")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("simulate", help="draw from a discrete-measure model")
    p.add_argument("--measure", required=True,
                   help="measure JSON (file or literal)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--zeta", default=None, help="JSON vector")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("density", help="marginal density along a ray")
    p.add_argument("--measure", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--zeta", default=None)
    p.add_argument("--d", type=int, default=2,
                   help="dimension (normal-approx measures only)")
    p.add_argument("--direction", default=None, help="JSON vector")
    p.add_argument("--lo", type=float, default=-8.0)
    p.add_argument("--hi", type=float, default=8.0)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--n-sphere", type=int, default=2000)
    p.add_argument("--quad-nodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_density)

    p = sub.add_parser("estimate-spectral",
                       help="spectral weights by CF or scale-function system")
    add_common_fit(p)
    p.add_argument("--j-atoms", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--ridge", type=float, default=0.01)
    p.add_argument("--mode", choices=("cf", "scale"), default="cf")
    p.set_defaults(func=_cmd_estimate_spectral)

    p = sub.add_parser("fit-discrete", help="discrete-approximation MCMC")
    add_common_fit(p)
    p.add_argument("--j-atoms", type=int, required=True)
    p.add_argument("--burn-in", default="5000")
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--ridge", type=float, default=0.01)
    p.set_defaults(func=lambda a: _run_fit(a, "discrete"))

    p = sub.add_parser("fit-normal", help="normal-approximation MCMC")
    add_common_fit(p)
    p.add_argument("--burn-in", default="5000")
    p.add_argument("--draws", type=int, default=20000)
    p.add_argument("--thin", type=int, default=10)
    p.add_argument("--mc-size", type=int, default=5000)
    p.set_defaults(func=lambda a: _run_fit(a, "normal"))

    p = sub.add_parser("select-J",
                       help="evidence-based choice of the atom count")
    add_common_fit(p)
    p.add_argument("--j-list", type=int, nargs="+", required=True)
    p.add_argument("--burn-in", default="2000")
    p.add_argument("--draws", type=int, default=4000)
    p.add_argument("--thin", type=int, default=4)
    p.add_argument("--ridge", type=float, default=0.01)
    p.set_defaults(func=_cmd_select_j)

    p = sub.add_parser("accuracy-table",
                       help="Monte Carlo accuracy of the projection scale")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--m-list", dest="m_list", type=int, nargs="+",
                   required=True)
    p.add_argument("--n-directions", type=int, default=1000)
    p.add_argument("--m-reference", type=int, default=10 ** 6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_accuracy_table)

    p = sub.add_parser("diagnose", help="Geweke/acceptance/ACF of a trace")
    p.add_argument("--trace", required=True, help="NDJSON trace file")
    p.set_defaults(func=_cmd_diagnose)

    return parser


def main(argv=None) -> int:
    if "MVSTABLE_THREADS" in os.environ:
        os.environ.setdefault("OMP_NUM_THREADS",
                              os.environ["MVSTABLE_THREADS"])
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.replay:
        manifest = json.loads(Path(args.replay).read_text())
        stored = dict(manifest["args"])
        stored.pop("func", None)
        stored.pop("replay", None)
        rebuilt = [manifest["command"]]
        for key, val in stored.items():
            if val is None or val is False or key == "command":
                continue
            flag = "--" + key.replace("_", "-")
            if key == "j_list" or key == "m_list":
                rebuilt.append(flag)
                rebuilt.extend(str(v) for v in val)
            elif val is True:
                if key in ("garch", "median_scale"):
                    continue  # defaults
                rebuilt.append(flag)
            else:
                rebuilt.extend([flag, str(val)])
        for key in ("garch", "median_scale"):
            if stored.get(key) is False:
                rebuilt.append("--no-" + key.replace("_", "-"))
        args = parser.parse_args(rebuilt)
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
