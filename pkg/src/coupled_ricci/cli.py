"""Command line interface.

Verbs: run, validate, oracle, list-scenarios.  Exit codes: 0 success,
1 configuration error, 2 outer iteration budget exhausted, 3 inner
solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .config import RunConfig, build_run_config, load_config_file
from .errors import OracleIntractable, ParseError, ValidationError
from .functionals import ding
from .grid import write_field
from .iteration import run
from .oracle import oracle_ding_descent, oracle_fixed_point
from .scenarios import DESCRIPTIONS, PRESETS, get_preset, preset_names

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_MAX_OUTER = 2
EXIT_INNER_FAILURE = 3


def _resolve_config(ref: str, overrides: dict | None = None) -> RunConfig:
    """Load a preset by name or a JSON config by path, then apply overrides."""
    if ref in PRESETS:
        data = get_preset(ref)
        name = ref
    else:
        if not os.path.exists(ref):
            raise ParseError(
                f"{ref!r} is neither a preset name nor an existing config "
                f"file (presets: {', '.join(preset_names())})"
            )
        data = load_config_file(ref)
        name = os.path.splitext(os.path.basename(ref))[0]
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return build_run_config(data, name=name)


def _summary_value(value):
    value = float(value)
    return value if np.isfinite(value) else None


def _write_run_outputs(out_dir, cfg: RunConfig, state) -> None:
    os.makedirs(out_dir, exist_ok=True)
    state.ledger.to_csv(os.path.join(out_dir, "ledger.csv"))

    rows = state.ledger.rows
    final_d = rows[-1]["D"] if rows else float("nan")
    summary = {
        "mode": cfg.mode,
        "lambda": cfg.lam,
        "n": cfg.n,
        "N": cfg.N,
        "k": cfg.k,
        "steps": state.step,
        "converged": bool(state.converged),
        "reason": state.reason,
        "final_D": _summary_value(final_d),
        "final_rho_max": _summary_value(state.final_rho_max),
        "wall_ms": round(state.wall_ms, 3),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")

    grid = cfg.grid
    fields = {}
    for i in range(cfg.k):
        write_field(os.path.join(out_dir, f"psi_{i + 1}.field"), grid, state.psis[i])
        fields[f"psi_{i + 1}"] = [
            float(v) for v in state.psis[i].ravel(order="C")
        ]
    with open(os.path.join(out_dir, "fields.json"), "w") as fh:
        json.dump(fields, fh)
        fh.write("\n")

    rho_cols = [name for name in state.ledger.columns if name.startswith("rho_max_")]
    with open(os.path.join(out_dir, "ding.dat"), "w") as fh:
        fh.write("# step D\n")
        for row in rows:
            fh.write("%d %.17g\n" % (row["step"], row["D"]))
    with open(os.path.join(out_dir, "residual.dat"), "w") as fh:
        fh.write("# step rho_max\n")
        for row in rows:
            worst = max(row[name] for name in rho_cols)
            fh.write("%d %.17g\n" % (row["step"], worst))


def cmd_run(args) -> int:
    overrides = {
        "out": args.out,
        "max_outer": args.max_outer,
        "tol_fixed_point": args.tol,
    }
    if args.mode is not None:
        overrides["mode"] = {"gs": "gauss_seidel", "jacobi": "jacobi"}[args.mode]
    cfg = _resolve_config(args.config, overrides)
    geom = cfg.geometry()
    state = run(geom, cfg.iteration_config(), init=cfg.init)
    out_dir = cfg.out or f"cri-out-{cfg.name}"
    _write_run_outputs(out_dir, cfg, state)
    print(
        f"{cfg.name}: {state.reason} after {state.step} steps "
        f"(outputs in {out_dir})"
    )
    if state.converged:
        return EXIT_OK
    if state.reason == "max_outer":
        return EXIT_MAX_OUTER
    return EXIT_INNER_FAILURE


def cmd_validate(args) -> int:
    cfg = _resolve_config(args.config)
    print(
        f"OK: lambda={cfg.lam} n={cfg.n} N={cfg.N} k={cfg.k} "
        f"mode={cfg.mode} f={cfg.f_spec!r}"
    )
    return EXIT_OK


def _downsample_config(cfg: RunConfig, target_n: int = 8) -> RunConfig:
    """Shrink a config onto a coarse grid the dense reference can handle.

    A coarse size of 8 per axis keeps even 2-d problems at the dense
    limit of 64 points.
    """
    coarse_n = min(cfg.N, target_n)
    if cfg.N % coarse_n:
        raise OracleIntractable(
            f"grid N={cfg.N} is not divisible by the coarse size {coarse_n}"
        )
    stride = cfg.N // coarse_n
    data = {
        "cri_config": 1,
        "name": cfg.name + "-coarse",
        "lambda": cfg.lam,
        "n": cfg.n,
        "N": coarse_n,
        "k": cfg.k,
        "A": [mat.tolist() for mat in cfg.A],
        "tol_fixed_point": cfg.tol_fixed_point,
        "tol_inner": cfg.tol_inner,
        "max_outer": cfg.max_outer,
        "mode": cfg.mode,
        "norm_mode": cfg.norm_mode,
    }
    if cfg.f_spec and cfg.f_spec != "<data>":
        data["f"] = cfg.f_spec
    else:
        sl = (slice(None, None, stride),) * cfg.n
        data["f"] = [float(v) for v in cfg.f[sl].ravel(order="C")]
    return build_run_config(data, name=data["name"])


def compare_oracle(geom, engine_psis, oracle_psis, oracle_d) -> dict:
    """Sup-norm discrepancies after matching the sup normalization."""
    errs = []
    for i in range(geom.k):
        a = engine_psis[i] - engine_psis[i].max()
        b = oracle_psis[i] - oracle_psis[i].max()
        errs.append(float(np.abs(a - b).max()))
    d_err = abs(ding(geom, engine_psis) - oracle_d)
    return {"psi_sup_err": errs, "D_err": float(d_err)}


def cmd_oracle(args) -> int:
    cfg = _resolve_config(args.config)
    coarse = _downsample_config(cfg)
    geom = coarse.geometry()
    state = run(geom, coarse.iteration_config())
    if not state.converged:
        print(f"engine did not converge on the coarse problem: {state.reason}")
        return (
            EXIT_MAX_OUTER if state.reason == "max_outer" else EXIT_INNER_FAILURE
        )
    psis_ref, _cs, d_ref, newton_iters = oracle_fixed_point(geom)
    report = compare_oracle(geom, state.psis, psis_ref, d_ref)
    report["N"] = coarse.N
    report["oracle_newton_iterations"] = newton_iters
    _psis_desc, d_desc, trace, descent_iters = oracle_ding_descent(geom)
    report["descent_D_err"] = float(abs(d_desc - d_ref))
    report["descent_iterations"] = descent_iters
    report["descent_monotone"] = bool(
        all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
    )
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.json"), "w") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_list_scenarios(_args) -> int:
    width = max(len(name) for name in preset_names())
    for name in preset_names():
        print(f"{name:<{width}}  {DESCRIPTIONS.get(name, '')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cri",
        description="Coupled Ricci iteration on the discrete torus.",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run a scenario or config file")
    p_run.add_argument("config", help="preset name or path to a JSON config")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--max-outer", type=int, dest="max_outer",
                       help="override the outer iteration budget")
    p_run.add_argument("--mode", choices=["gs", "jacobi"],
                       help="override the sweep mode")
    p_run.add_argument("--tol", type=float,
                       help="override the fixed-point tolerance")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="validate a config and exit")
    p_val.add_argument("config", help="preset name or path to a JSON config")
    p_val.set_defaults(func=cmd_validate)

    p_orc = sub.add_parser(
        "oracle", help="cross-check the engine against the dense reference"
    )
    p_orc.add_argument("config", help="preset name or path to a JSON config")
    p_orc.add_argument("--out", help="directory for report.json")
    p_orc.set_defaults(func=cmd_oracle)

    p_ls = sub.add_parser("list-scenarios", help="list built-in presets")
    p_ls.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print("configuration invalid:", file=sys.stderr)
        for violation in exc.violations:
            print(f"  - {violation}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, OracleIntractable, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
