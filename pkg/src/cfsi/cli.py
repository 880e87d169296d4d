"""Command-line entry point ``cfsi``.

Exit status is 0 on success.  Failures print one line
``error: <kind>: <message>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, expand_sweep, parse_config, render_config


def _read_config(path: str):
    text = Path(path).read_text() if path != "-" else sys.stdin.read()
    return parse_config(text)


def cmd_mesh(args) -> int:
    from .mesh import generate_benchmark_mesh, save_mesh, validate_mesh

    geom = _read_config(args.config).geometry if args.config else None
    mesh = generate_benchmark_mesh(geom, args.level)
    save_mesh(mesh, args.out)
    q = validate_mesh(mesh)
    solid = int((mesh.region == 1).sum())
    print(f"vertices={mesh.n_vertices} triangles={mesh.n_triangles} solid={solid} "
          f"min_angle_deg={q.min_angle * 180 / 3.141592653589793:.2f}")
    return 0


def _run_one(config, out_dir) -> str | None:
    from .timeloop import run_simulation

    return run_simulation(config, out_dir).failure


def cmd_run(args) -> int:
    config = _read_config(args.config)
    failure = _run_one(config, args.out)
    if failure:
        print(f"error: step-failure: {failure}", file=sys.stderr)
        return 3
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    config = _read_config(args.config)
    runs = expand_sweep(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.cfg").write_text(render_config(config))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {label: pool.submit(_run_one, cfg, out / label) for label, cfg in runs}
            failures = {label: f.result() for label, f in futures.items()}
    else:
        failures = {label: _run_one(cfg, out / label) for label, cfg in runs}
    for label in failures:
        print(f"{label}: {'ok' if failures[label] is None else 'FAILED ' + failures[label]}")
    bad = [k for k, v in failures.items() if v]
    if bad:
        print(f"error: step-failure: {len(bad)} of {len(runs)} runs failed", file=sys.stderr)
        return 3
    return 0


def cmd_verify(args) -> int:
    from .verification import REFERENCE_G, REFERENCE_PARAMS, format_table, poiseuille_study

    params = REFERENCE_PARAMS
    G = REFERENCE_G
    for item in args.params or []:
        key, _, val = item.partition("=")
        key = key.strip()
        if key == "G":
            G = float(val)
        elif key in {"mu", "mu_r", "lambda1", "rho_f", "micro_inertia"}:
            params = replace(params, **{key: float(val)})
            if key == "rho_f":
                params = replace(params, rho_s=float(val))
        else:
            raise ConfigError(f"unknown verification parameter {key!r}")
    meshes = [tuple(int(v) for v in m.split("x")) for m in args.meshes.split(",")]
    print(format_table(poiseuille_study(params, G, meshes)))
    return 0


def cmd_profile(args) -> int:
    from .output import extract_line_profile, load_state, profile_from_vtk, read_vtk_snapshot, write_profile_csv

    src = Path(args.snapshot)
    if src.suffix == ".npz":
        mesh, state = load_state(src)
        prof = extract_line_profile(mesh, state, args.x, args.n)
    elif src.suffix == ".vtk":
        prof = profile_from_vtk(read_vtk_snapshot(src), args.x, args.n)
    else:
        raise ValueError(f"unsupported snapshot type {src.suffix!r} (expected .npz or .vtk)")
    write_profile_csv(prof, args.out)
    print(f"wrote {args.out} ({int(prof.present.sum())} of {args.n} samples inside the domain)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfsi", description="Micropolar fluid-structure interaction solver")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate the benchmark mesh")
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="take geometry from this config file")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("run", help="run one simulation")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every combination of the config's sweep.* keys")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs (default 1)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="verification studies")
    p.add_argument("study", choices=["poiseuille"])
    p.add_argument("--params", nargs="*", metavar="KEY=VALUE",
                   help="override mu, mu_r, lambda1, rho_f, micro_inertia or G")
    p.add_argument("--meshes", default="40x10,80x20", help="comma-separated NXxNY list")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("profile", help="sample a vertical line from a state dump or VTK snapshot")
    p.add_argument("snapshot")
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_profile)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
