"""Command-line driver: parse a run configuration, dispatch to the solvers,
write one CSV per run plus a JSON metadata sidecar.

Exit codes: 0 success, 1 input or I/O error, 2 loss-rate blow-up detected
(truncated data is still written).  Flags win over --config file entries
(plain key=value lines, # comments); every numeric field is validated by the
target module before dispatch.
"""
from __future__ import annotations

import argparse
import json
import math
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, analysis, kernels, mckv, particles, perturbation
from . import closed_form as cf
from . import heat_potential as hp
from .kernels import GridSpec

_DEFAULTS = {
    "alpha": 0.0,
    "z": 0.5,
    "t_end": 1.0,
    "steps": 1000,
    "particles": 100_000,
    "seed": 12345,
    "x_points": 400,
    "t_slice": None,  # defaults to t_end
    "g_max": 1e6,
    "rescale": None,
    "recovery": 0.9,
    "sigma": 0.08,
    "interbank_fraction": "eu",
}

_CASTS = {
    "alpha": float,
    "z": float,
    "t_end": float,
    "steps": int,
    "particles": int,
    "seed": int,
    "x_points": int,
    "t_slice": float,
    "g_max": float,
    "rescale": float,
    "recovery": float,
    "sigma": float,
    "interbank_fraction": str,
    "output": str,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mvloss",
        description="Loss rate, cumulative loss and transition density of a "
        "mean-field diffusion absorbed at a boundary.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, *opts):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--output", default=None, help=f"CSV path (default {name}.csv)")
        p.add_argument("--config", default=None, help="key=value config file; flags win")
        for opt in opts:
            flag = "--" + opt.replace("_", "-")
            if opt == "rescale":
                p.add_argument(flag, default=None, help="target total mass for the rescaled correction")
            elif opt == "interbank_fraction":
                p.add_argument(flag, default=None, help="fraction in [0,1) or preset eu/canada/us")
            else:
                p.add_argument(flag, default=None)
        return p

    add("solve", "coupled feedback solve", "alpha", "z", "t_end", "steps", "g_max")
    add("perturb", "first-order expansion", "alpha", "z", "t_end", "steps", "rescale")
    add("particles", "particle-system benchmark", "alpha", "z", "t_end", "steps", "particles", "seed")
    add("density", "transition density slice", "alpha", "z", "t_end", "steps", "x_points", "t_slice", "g_max")
    add("moments", "conditional default-time moments", "alpha", "z", "t_end", "steps", "g_max")
    add("convergence", "self-convergence order at N, 2N, 4N", "alpha", "z", "t_end", "steps")
    add("compare", "feedback solve vs particle benchmark", "alpha", "z", "t_end", "steps", "particles", "seed")
    add("calibrate-alpha", "interaction strength from balance-sheet parameters",
        "recovery", "sigma", "interbank_fraction")
    add("lemma1-check", "three-form agreement of the derivative identity")
    return parser


def _read_config(path: str) -> dict:
    cfg = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line is not key=value: {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _CASTS:
            raise ValueError(f"unknown config key {key!r}")
        cfg[key] = value
    return cfg


def _resolve(args: argparse.Namespace) -> dict:
    """Merge CLI > config > defaults and cast every field."""
    cfg = _read_config(args.config) if args.config else {}
    resolved = {}
    for key, default in _DEFAULTS.items():
        if not hasattr(args, key):
            continue
        raw = getattr(args, key)
        if raw is None:
            raw = cfg.get(key, default)
        if raw is None:
            resolved[key] = None
        else:
            resolved[key] = _CASTS[key](raw)
    resolved["output"] = args.output or cfg.get("output") or f"{args.command}.csv"
    return resolved


def _write_csv(path: str, header: list[str], rows) -> int:
    def fmt(v) -> str:
        return f"{v:.17g}" if isinstance(v, float) else str(v)

    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
            count += 1
    return count


def _write_meta(output: str, command: str, params: dict, started: float,
                blow_up=None, rows: int = 0, exit_status: int = 0, extra: dict | None = None):
    meta = {
        "command": command,
        "inputs": {k: v for k, v in params.items() if k != "output"},
        "output": params.get("output"),
        "rows": rows,
        "wall_time_s": time.perf_counter() - started,
        "versions": {
            "mvloss": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "blow_up": asdict(blow_up) if blow_up is not None else None,
        "exit_status": exit_status,
    }
    if extra:
        meta.update(extra)
    with open(f"{output}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _grid(params) -> GridSpec:
    return GridSpec(params["t_end"], params["steps"])


def _solve_command(params):
    spec = mckv.ProblemSpec(params["alpha"], params["z"], _grid(params))
    path = mckv.solve(spec, g_max=params["g_max"])
    t = path.times
    rows = zip(t.tolist(), path.nu.tolist(), path.g.tolist(), path.L.tolist())
    return ["t", "nu", "g", "L"], rows, path.blow_up, {}


def _perturb_command(params):
    grid = _grid(params)
    alpha, z = params["alpha"], params["z"]
    rescale = params["rescale"] is not None
    sol = perturbation.assemble(alpha, grid, z, rescale=rescale, target_mass=params["rescale"])
    nu1_arr, _, _ = perturbation.correction_arrays(grid, z)
    t = grid.nodes[1:]
    nu = cf.nu0(t, z) + alpha * nu1_arr
    low = np.concatenate(([0.0], sol.g_assembled))
    loss = np.cumsum((low[1:] + low[:-1]) * 0.5 * grid.delta)
    rows = zip(t.tolist(), nu.tolist(), sol.g_assembled.tolist(), loss.tolist())
    return ["t", "nu", "g", "L"], rows, None, {"rescaled": sol.rescaled, "scale": sol.scale}


def _particles_command(params):
    run = particles.ParticleRun(
        n_particles=params["particles"],
        n_steps=params["steps"],
        seed=params["seed"],
        alpha=params["alpha"],
        z=params["z"],
        t_end=params["t_end"],
    )
    run = particles.simulate(run)
    rows = zip(run.times.tolist(), run.L_hat.tolist(), run.stderr.tolist())
    return ["t", "L_hat", "stderr"], rows, None, {"workers": run.workers, "bridge": run.bridge}


def _density_command(params):
    grid = _grid(params)
    spec = mckv.ProblemSpec(params["alpha"], params["z"], grid)
    path = mckv.solve(spec, g_max=params["g_max"])
    if len(path.g) == 0:
        return ["x", "p"], [], path.blow_up, {"t_slice_node": 0}
    t_slice = params["t_slice"] if params["t_slice"] is not None else params["t_end"]
    node = int(round(t_slice / grid.delta))
    node = max(1, min(node, len(path.g)))
    x = hp.default_x_grid(params["z"], params["t_end"], params["x_points"])
    p = mckv.density_slice(path, spec, x, node)
    rows = zip(x.tolist(), p.tolist())
    return ["x", "p"], rows, path.blow_up, {"t_slice_node": node, "t_slice_time": node * grid.delta}


def _moments_command(params):
    grid = _grid(params)
    spec = mckv.ProblemSpec(params["alpha"], params["z"], grid)
    path = mckv.solve(spec, g_max=params["g_max"])
    if len(path.g) < 2:
        return ["alpha", "T", "mass", "cond_mean", "cond_var"], [], path.blow_up, {}
    eff_grid = grid
    if path.blow_up is not None:
        eff_grid = GridSpec(grid.delta * len(path.g), len(path.g))
    res = analysis.conditional_moments(path.g, eff_grid, alpha=params["alpha"])
    rows = [(params["alpha"], res.horizon, res.total_mass, res.cond_mean, res.cond_var)]
    return ["alpha", "T", "mass", "cond_mean", "cond_var"], rows, path.blow_up, {}


def _convergence_command(params):
    grid = _grid(params)
    sols = []
    for factor in (1, 2, 4):
        spec = mckv.ProblemSpec(params["alpha"], params["z"], grid.refined(factor))
        sol = mckv.solve(spec, g_max=params["g_max"] if "g_max" in params else 1e6)
        if sol.blow_up is not None:
            return ["alpha", "T", "order"], [], sol.blow_up, {}
        sols.append(sol)
    order = analysis.convergence_order(*sols)
    d1 = float(np.max(np.abs(sols[0].g - sols[1].g[1::2])))
    d2 = float(np.max(np.abs(sols[1].g - sols[2].g[1::2])))
    rows = [(params["alpha"], params["t_end"], order, d1, d2)]
    return ["alpha", "T", "order", "gap_coarse", "gap_fine"], rows, None, {}


def _compare_command(params):
    grid = _grid(params)
    spec = mckv.ProblemSpec(params["alpha"], params["z"], grid)
    path = mckv.solve(spec)
    run = particles.simulate(
        particles.ParticleRun(
            n_particles=params["particles"],
            n_steps=params["steps"],
            seed=params["seed"],
            alpha=params["alpha"],
            z=params["z"],
            t_end=params["t_end"],
        )
    )
    k = min(len(path.L), run.n_steps)
    t = path.times[:k]
    rows = zip(t.tolist(), path.L[:k].tolist(), run.L_hat[:k].tolist(), run.stderr[:k].tolist())
    return ["t", "L_volterra", "L_hat", "stderr"], rows, path.blow_up, {}


def _calibrate_command(params):
    frac = params["interbank_fraction"]
    if isinstance(frac, str) and frac.lower() in analysis.INTERBANK_PRESETS:
        frac = analysis.INTERBANK_PRESETS[frac.lower()]
    else:
        frac = float(frac)
    bank = analysis.BankSystemParams(
        recovery_rate=params["recovery"], asset_volatility=params["sigma"], interbank_fraction=frac
    )
    alpha = analysis.alpha_from_bank_params(bank)
    rows = [(alpha, bank.gamma, bank.lambda0)]
    return ["alpha", "gamma", "lambda0"], rows, None, {}


def _lemma1_command(params):
    quad_n = 4096
    t = 1.0
    pairs = {
        "exp_decay": (
            lambda a, b: np.exp(-(a - b)),
            lambda b: np.asarray(b, dtype=float),
            lambda a, b: -np.exp(-(a - b)),
        ),
        "damped_ramp": (
            lambda a, b: kernels.xi_kernel(a, b, 0.3 * (a - b)),
            lambda b: np.sin(np.asarray(b, dtype=float)),
            None,
        ),
    }
    rows = []
    worst = 0.0
    for name, (xi, nu, xi_t) in pairs.items():
        lhs = kernels.lemma1_lhs(xi, nu, t, quad_n)
        f1 = kernels.lemma1_rhs_form1(xi, nu, t, quad_n, xi_t)
        f2 = kernels.lemma1_rhs_form2(xi, nu, t, quad_n, xi_t)
        dev = max(abs(lhs - f1), abs(lhs - f2))
        worst = max(worst, dev)
        rows.append((name, t, lhs, f1, f2, dev))
    status = 0 if worst <= 1e-4 else 1
    return ["pair", "t", "lhs", "rhs_form1", "rhs_form2", "max_abs_dev"], rows, None, {
        "max_abs_dev": worst,
        "check_status": status,
    }


_COMMANDS = {
    "solve": _solve_command,
    "perturb": _perturb_command,
    "particles": _particles_command,
    "density": _density_command,
    "moments": _moments_command,
    "convergence": _convergence_command,
    "compare": _compare_command,
    "calibrate-alpha": _calibrate_command,
    "lemma1-check": _lemma1_command,
}


def main(argv=None) -> int:
    started = time.perf_counter()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        params = _resolve(args)
        header, rows, blow_up, extra = _COMMANDS[args.command](params)
        exit_status = 2 if blow_up is not None else int(extra.get("check_status", 0))
        count = _write_csv(params["output"], header, rows)
        _write_meta(params["output"], args.command, params, started, blow_up, count, exit_status, extra)
        return exit_status
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
