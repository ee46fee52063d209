"""Command-line front end.

Subcommands: simulate, distribution, mlp, extract-mlp, time-to-max, verify.
Every run writes a manifest recording the effective parameters, and
re-running a subcommand from its manifest reproduces the outputs
byte-identically regardless of worker count.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import update
from .concurrence import (ConcurrencePdf, c_max, c_of_readout, c_readout_symmetric,
                          concurrence_path, histogram_grid, pdf_mass, prob_zero)
from .ensemble import (Ensemble, extract_branch_mlps, generate_ensemble,
                       partition_branches, time_to_max_histogram)
from .io import (dump_json, read_ensemble_csv, write_branch_paths_csv,
                 write_ensemble_csv, write_grid_csv, write_histogram_csv,
                 write_path_csv, write_pdf_csv, write_scan_csv,
                 write_trajectory_csv)
from .mlp import (HamiltonianState, StepFailureError, default_scan_grid,
                  find_mlp_branches, full_parity_concurrence, full_parity_lambda,
                  full_parity_path, full_parity_rhs, integrate_hamiltonian,
                  integrate_state, likelihood_scan, symmetric_high_branch_path)
from .model import (ConfigError, MeasConfig, XState, build_meas_config,
                    load_config, random_xstate)

#: Characteristic measurement times of the three reference setups (us).
PRESETS = {
    "weak": {"tau_m": 2.10, "eta_m": 0.22, "gamma": 0.5, "dt": 0.01, "T": 1.6},
    "medium": {"tau_m": 0.60, "eta_m": 0.22, "gamma": 0.5, "dt": 0.01, "T": 1.6},
    "strong": {"tau_m": 0.36, "eta_m": 0.22, "gamma": 0.5, "dt": 0.01, "T": 1.6},
}
DEFAULT_SEED = 12345
DEFAULT_N_TRAJ = 1000

_CONFIG_FLAGS = ("dv1", "dv2", "dv3", "dv4", "tau_m", "eta_m", "gamma", "dt", "T")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="halfparity",
        description="Two-qubit half-parity measurement: trajectories, "
                    "concurrence statistics and most likely paths.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("--preset", choices=sorted(PRESETS),
                       help="named parameter set (tau_m = 2.10/0.60/0.36 us)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--from-manifest", dest="from_manifest",
                       help="replay the effective parameters of a previous run")
        p.add_argument("--outdir", "-o", default=".", help="output directory")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes (outputs do not depend on this)")
        for key in _CONFIG_FLAGS:
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=float,
                           help=f"override config key {key}")
        p.add_argument("--seed", type=int, help="ensemble RNG seed")
        p.add_argument("--n-traj", dest="n_traj", type=int,
                       help="number of trajectories")

    p = sub.add_parser("simulate", help="generate Monte Carlo trajectories")
    add_common(p)
    p.add_argument("--split", action="store_true",
                   help="one CSV per trajectory instead of a traj_id column")

    p = sub.add_parser("distribution", help="analytic concurrence distribution")
    add_common(p)
    p.add_argument("--bin", type=float, default=0.015, help="concurrence bin width")
    p.add_argument("--t-start", type=float, default=0.0)
    p.add_argument("--t-stop", type=float, help="defaults to T")
    p.add_argument("--t-step", type=float, help="defaults to dt")
    p.add_argument("--pdf-times", default="0.3,0.8,1.4",
                   help="comma list of times for full density curves")
    p.add_argument("--normalize", action="store_true",
                   help="scale each time slice by its maximum (presentation mode)")

    p = sub.add_parser("mlp", help="most-likely-path branches from a likelihood scan")
    add_common(p)
    p.add_argument("--scan-points", type=int, default=161)
    p.add_argument("--t0", type=float, default=0.0,
                   help="re-initialization time for transient handling")

    p = sub.add_parser("extract-mlp", help="experimental-style paths from an ensemble")
    add_common(p)
    p.add_argument("--input", help="trajectory CSV (generated from config when absent)")
    p.add_argument("--k-select", dest="k_select", type=int, default=100)

    p = sub.add_parser("time-to-max", help="time-to-maximum-concurrence histogram")
    add_common(p)
    p.add_argument("--input", help="trajectory CSV (generated from config when absent)")
    p.add_argument("--bin", type=float, default=0.1, help="time bin width (us)")

    p = sub.add_parser("verify", help="run the numerical self-check suite")
    add_common(p)
    return parser


def _effective_params(args) -> dict:
    """Assemble the effective parameter mapping: preset < file < flags."""
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        if manifest.get("subcommand") != args.subcommand:
            raise ConfigError(
                f"manifest records subcommand {manifest.get('subcommand')!r}, "
                f"not {args.subcommand!r}")
        given = [k for k in _CONFIG_FLAGS + ("seed", "n_traj")
                 if getattr(args, k, None) is not None]
        if given or args.preset or args.config:
            raise ConfigError(f"--from-manifest cannot be combined with config "
                              f"overrides: {given or [args.preset or args.config]}")
        return dict(manifest["params"])
    params: dict = {}
    if args.preset:
        params.update(PRESETS[args.preset])
    if args.config:
        params.update(load_config(args.config))
    for key in _CONFIG_FLAGS + ("seed", "n_traj"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
            if key == "tau_m":
                for dv_key in ("dv1", "dv2", "dv3", "dv4"):
                    params.pop(dv_key, None)
    params.setdefault("seed", DEFAULT_SEED)
    params.setdefault("n_traj", DEFAULT_N_TRAJ)
    # subcommand-specific knobs live in the same mapping so replay is complete
    extra_keys = {
        "simulate": ("split",),
        "distribution": ("bin", "t_start", "t_stop", "t_step", "pdf_times", "normalize"),
        "mlp": ("scan_points", "t0"),
        "extract-mlp": ("input", "k_select"),
        "time-to-max": ("input", "bin"),
        "verify": (),
    }[args.subcommand]
    for key in extra_keys:
        if key not in params:
            params[key] = getattr(args, key)
    return params


def _config_from_params(params: dict) -> MeasConfig:
    mapping = {k: params[k] for k in
               ("dv1", "dv2", "dv3", "dv4", "tau_m", "eta_m", "gamma", "dt", "T",
                "seed", "n_traj") if k in params}
    cfg, _ = build_meas_config(mapping)
    return cfg


def _write_manifest(outdir: Path, subcommand: str, params: dict,
                    outputs: list[str], started: float) -> None:
    manifest = {
        "subcommand": subcommand,
        "params": params,
        "outputs": sorted(outputs),
        "version": __version__,
        "duration_s": time.perf_counter() - started,
    }
    dump_json(outdir / "manifest.json", manifest)


def _ensemble_for(params: dict, cfg: MeasConfig, workers: int) -> Ensemble:
    if params.get("input"):
        return read_ensemble_csv(params["input"])
    return generate_ensemble(XState.product_x(), cfg, int(params["n_traj"]),
                             int(params["seed"]), workers=workers)


# --- subcommands ---------------------------------------------------------------

def _cmd_simulate(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    ens = generate_ensemble(XState.product_x(), cfg, int(params["n_traj"]),
                            int(params["seed"]), workers=workers)
    outputs = []
    if params.get("split"):
        for i in range(ens.n_traj):
            name = f"traj_{i:05d}.csv"
            write_trajectory_csv(outdir / name, ens.trajectory(i))
            outputs.append(name)
    else:
        write_ensemble_csv(outdir / "trajectories.csv", ens)
        outputs.append("trajectories.csv")
    return outputs


def _cmd_distribution(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    x0 = XState.product_x()
    t_stop = params["t_stop"] if params.get("t_stop") else cfg.T
    t_step = params["t_step"] if params.get("t_step") else cfg.dt
    times = np.round(np.arange(params["t_start"], t_stop + 0.5 * t_step, t_step), 12)
    grid = histogram_grid(x0, cfg, times, params["bin"],
                          normalize=bool(params.get("normalize")))
    outputs = ["distribution_grid.csv", "distribution_summary.json"]
    write_grid_csv(outdir / "distribution_grid.csv", grid.times, grid.edges, grid.mass)
    summary = {
        "bin": params["bin"],
        "times": [float(t) for t in times],
        "c_max": [float(c_max(t, cfg)) if t > 0.0 else 0.0 for t in times],
        "prob_zero": [float(prob_zero(t, x0, cfg)) if t > 0.0 else None for t in times],
    }
    dump_json(outdir / "distribution_summary.json", summary)
    pdf_times = params.get("pdf_times") or ""
    if isinstance(pdf_times, str):
        pdf_times = [float(tok) for tok in pdf_times.split(",") if tok.strip()]
    for t in pdf_times:
        if t <= 0.0 or t > t_stop + 1e-9:
            raise ConfigError(f"pdf time {t} outside (0, {t_stop}]")
        dist = ConcurrencePdf(t, cfg, x0)
        cs = np.linspace(0.0, dist.c_max, 401)[1:-1]
        name = f"pdf_t{t:g}.csv"
        write_pdf_csv(outdir / name, cs, dist.density(cs))
        outputs.append(name)
    return outputs


def _cmd_mlp(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    x0 = XState.product_x()
    vs = default_scan_grid(cfg, cfg.T, int(params["scan_points"]))
    vs, values = likelihood_scan(x0, cfg, cfg.T, vs, t0=params["t0"])
    branches = find_mlp_branches(x0, cfg, cfg.T, v_grid=vs, t0=params["t0"])
    outputs = ["mlp_scan.csv", "mlp_branches.json"]
    write_scan_csv(outdir / "mlp_scan.csv", vs, values)
    records = [{"branch": b.branch, "v_opt": b.v_opt, "log_like": b.log_like,
                "t_peak": b.t_peak} for b in branches]
    dump_json(outdir / "mlp_branches.json", records)
    for b in branches:
        name = f"mlp_branch_{b.branch}.csv"
        write_path_csv(outdir / name, b.as_trajectory())
        outputs.append(name)
    return outputs


def _cmd_extract_mlp(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    ens = _ensemble_for(params, cfg, workers)
    part = partition_branches(ens)
    paths = extract_branch_mlps(ens, int(params["k_select"]), partition=part)
    write_branch_paths_csv(outdir / "extracted_paths.csv", paths)
    summary = {
        name: {
            "n_members": int(part.members[name].size),
            "weight": part.members[name].size / ens.n_traj,
            "medoid": part.medoids[name],
            "t_peak": float(paths[name].times[int(np.argmax(paths[name].concurrences))]),
        }
        for name in sorted(paths)
    }
    dump_json(outdir / "extracted_summary.json", summary)
    return ["extracted_paths.csv", "extracted_summary.json"]


def _cmd_time_to_max(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    ens = _ensemble_for(params, cfg, workers)
    hist = time_to_max_histogram(ens, params["bin"])
    write_histogram_csv(outdir / "time_to_max.csv", hist.edges, hist.mass)
    summary = {
        "bin": params["bin"],
        "n_traj": ens.n_traj,
        "never_entangled": hist.never_entangled,
        "mode_bins": hist.modes(),
    }
    dump_json(outdir / "time_to_max_summary.json", summary)
    return ["time_to_max.csv", "time_to_max_summary.json"]


# --- verification suite ----------------------------------------------------------

def _check_update_composition(cfg: MeasConfig, gen) -> tuple[bool, str]:
    from .bayes import step
    worst = 0.0
    for _ in range(300):
        x = random_xstate(gen)
        n = int(gen.integers(1, 7))
        vs = gen.uniform(cfg.dv[0] - 3.0, cfg.dv[3] + 3.0, n)
        folded = x
        for v in vs:
            folded = step(folded, v, cfg)
        direct = update(x, float(vs.mean()), n * cfg.dt, cfg)
        a, b = folded.to_array(), direct.to_array()
        worst = max(worst, float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-30))))
    return worst < 1e-10, f"max rel err {worst:.2e}"


def _check_zero_readout_path(cfg: MeasConfig) -> tuple[bool, str]:
    x0 = XState.product_x()
    times, states = integrate_state(x0, 0.0, cfg)
    closed = symmetric_high_branch_path(x0, cfg, times)
    err_state = float(np.max(np.abs(states - closed)))
    err_bound = float(np.max(np.abs(concurrence_path(states)[1:] - c_max(times[1:], cfg))))
    ok = err_state < 1e-8 and err_bound < 1e-8
    return ok, f"state err {err_state:.2e}, bound err {err_bound:.2e}"


def _check_readout_constancy(cfg: MeasConfig, gen) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(3):
        h0 = HamiltonianState(XState.product_x(), gen.uniform(-1.0, 1.0, 5))
        path = integrate_hamiltonian(h0, cfg)
        worst = max(worst, float(np.max(np.abs(path.v - path.v[0]))))
        hvals = path.hamiltonian_values(cfg)
        scale = max(1e-12, float(np.max(np.abs(hvals))))
        worst_h = float(np.max(np.abs(hvals - hvals[0]))) / scale
        worst = max(worst, worst_h)
    return worst < 1e-6, f"max drift {worst:.2e}"


def _check_parity_roundtrips(gen) -> tuple[bool, str]:
    from scipy.integrate import solve_ivp
    worst = 0.0
    for _ in range(25):
        x0 = random_xstate(gen)
        lam = float(gen.uniform(-2.0, 2.0))
        gamma = float(gen.uniform(0.0, 1.0))
        times, closed = full_parity_path(x0, lam, gamma, 1.6, 0.05)
        sol = solve_ivp(lambda t, y: full_parity_rhs(y, lam, gamma), (0.0, 1.6),
                        x0.to_array(), t_eval=times, method="DOP853",
                        rtol=1e-11, atol=1e-13)
        worst = max(worst, float(np.max(np.abs(sol.y.T - closed))))
        x_o0 = x0.x2 + x0.x3
        x_of = float(closed[-1, 1] + closed[-1, 2])
        lam_back = full_parity_lambda(x_o0, x_of, times[-1])
        worst = max(worst, abs(lam_back - lam))
        if x0.x5 > 0.0 and x0.x1 * x0.x4 > 0.0:
            t_border = 1.0
            lam_border = math.log(x0.x5 / math.sqrt(x0.x1 * x0.x4)) / t_border - gamma
            worst = max(worst, float(full_parity_concurrence(x0, lam_border, gamma, t_border)))
    return worst < 1e-8, f"max err {worst:.2e}"


def _check_concurrence_identity(cfg: MeasConfig, gen) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(300):
        x0 = random_xstate(gen)
        t = float(gen.uniform(0.05, 2.0))
        v = float(gen.uniform(cfg.dv[0] - 3.0, cfg.dv[3] + 3.0))
        ct = c_of_readout(v, t, x0, cfg)
        post = update(x0, v, t, cfg)
        ref = 2.0 * (post.x5 - math.sqrt(max(post.x1 * post.x4, 0.0)))
        worst = max(worst, abs(ct - ref) / max(abs(ref), 1e-30))
    x0 = XState.product_x()
    sym_err = 0.0
    for t in (0.2, 0.8, 1.5):
        vs = np.linspace(cfg.dv[0] - 2, cfg.dv[3] + 2, 41)
        sym_err = max(sym_err, float(np.max(np.abs(
            c_of_readout(vs, t, x0, cfg) - c_readout_symmetric(vs, t, cfg)))))
    ok = worst < 1e-10 and sym_err < 1e-12
    return ok, f"identity rel {worst:.2e}, closed form abs {sym_err:.2e}"


def _check_pdf_normalization(cfg: MeasConfig) -> tuple[bool, str]:
    x0 = XState.product_x()
    total = pdf_mass(0.8, x0, cfg) + prob_zero(0.8, x0, cfg)
    return abs(total - 1.0) < 1e-4, f"mass {total:.8f}"


def run_verification() -> list[tuple[str, bool, str]]:
    cfg, _ = build_meas_config(dict(PRESETS["medium"]))
    gen = np.random.default_rng(424242)
    checks = [
        ("update-composition", lambda: _check_update_composition(cfg, gen)),
        ("zero-readout-closed-form", lambda: _check_zero_readout_path(cfg)),
        ("optimal-readout-constancy", lambda: _check_readout_constancy(cfg, gen)),
        ("parity-meter-roundtrips", lambda: _check_parity_roundtrips(gen)),
        ("concurrence-readout-identity", lambda: _check_concurrence_identity(cfg, gen)),
        ("pdf-normalization", lambda: _check_pdf_normalization(cfg)),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crashed run
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append((name, ok, detail))
    return results


class VerificationFailure(RuntimeError):
    """At least one numerical self-check did not pass."""


def _cmd_verify(params: dict, cfg: MeasConfig, outdir: Path, workers: int) -> list[str]:
    results = run_verification()
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
    dump_json(outdir / "verify_report.json",
              [{"check": n, "ok": ok, "detail": d} for n, ok, d in results])
    if not all(ok for _, ok, _ in results):
        raise VerificationFailure("one or more checks failed")
    return ["verify_report.json"]


_COMMANDS = {
    "simulate": _cmd_simulate,
    "distribution": _cmd_distribution,
    "mlp": _cmd_mlp,
    "extract-mlp": _cmd_extract_mlp,
    "time-to-max": _cmd_time_to_max,
    "verify": _cmd_verify,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        params = _effective_params(args)
        cfg = _config_from_params(params) if args.subcommand != "verify" \
            else _config_from_params(dict(PRESETS["medium"], seed=0, n_traj=1))
        outdir = Path(args.outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        outputs = _COMMANDS[args.subcommand](params, cfg, outdir, args.workers)
        _write_manifest(outdir, args.subcommand, params, outputs, started)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (StepFailureError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
