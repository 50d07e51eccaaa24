"""Command line interface.

Exit codes: 0 success or convergence, 2 no convergence, 3 bad input,
4 resource cap exceeded, 5 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .diffusion import TRACE_COLUMNS, Flux, RunConfig, euler_run, run_batch
from .errors import DomainError, InputError, NumericError, ResourceError
from .gibbs import ising_lattice, weak_consistency_residual
from .hypergraph import format_region
from .modelfile import (format_beliefs, format_trace, parse_model, read_text, write_atomic)
from .oracle import exact_marginals
from .singularity import count_stationary, level_grid, singular_sweep, softest_direction

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_INPUT, EXIT_RESOURCE, EXIT_NUMERIC = 0, 2, 3, 4, 5
UNSTABLE_MARGIN = 1e-4


def parse_grid(text: str) -> list[float]:
    """``"a,b,c"`` or ``"start:stop:count"`` (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            return [float(x) for x in np.linspace(float(start), float(stop), int(count))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise InputError(f"cannot read grid {text!r}") from None


def _emit(text: str, path: str | None, out) -> None:
    if path:
        write_atomic(path, text)
    else:
        out.write(text)


def _load(path: str):
    return parse_model(read_text(path)).build()


def _csv(kind, header, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# kikuchi {kind} v1\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(x if isinstance(x, str) else repr(float(x)) if isinstance(x, float) else str(x)
                           for x in row) + "\n")
    return buf.getvalue()


def cmd_close(args, out) -> int:
    model = parse_model(read_text(args.model))
    C = model.complex()
    coef = C.K.bethe_coefficients()
    out.write(f"regions {len(C.K)} dimension {C.K.dimension}\n")
    for a in C.K.regions:
        out.write(f"{format_region(a)} c={coef[a]}\n")
    return EXIT_OK


def _run_config(args) -> RunConfig:
    return RunConfig(flux=Flux(args.flux), step=args.step, max_time=args.max_time, beta=args.beta,
                     energy=args.energy, grad_tol=args.grad_tol, trace_every=args.trace_every,
                     renormalize=args.renormalize)


def cmd_run(args, out) -> int:
    C, h = _load(args.model)
    traj = euler_run(C, h, h, _run_config(args))
    if args.trace:
        write_atomic(args.trace, format_trace(traj.rows, TRACE_COLUMNS))
    if args.beliefs:
        write_atomic(args.beliefs, format_beliefs(C, traj.beliefs))
    last = traj.final
    out.write(f"status {traj.status} iterations {traj.iterations} t {last.t:g} "
              f"grad_norm {last.grad_norm:.3e} residual {last.consistency_residual:.3e} "
              f"weak_residual {weak_consistency_residual(C, traj.beliefs):.3e}\n")
    if traj.converged and not traj.faithful:
        out.write("warning: converged gradient but beliefs are not consistent\n")
    return EXIT_OK if traj.converged else EXIT_NOT_CONVERGED


def _bench_cell(job):
    L, batch, seed, beta, step, max_time, flux = job
    C, hs = ising_lattice(L, np.random.default_rng(seed), batch=batch)
    res = run_batch(C, hs, RunConfig(flux=flux, step=step, max_time=max_time, beta=beta))
    median = float(np.median(res.iterations[res.converged])) if res.converged.any() else float("nan")
    # saturated pair beliefs: 1 - tanh(beta) falls near the 1e-5 level around beta = 6
    unstable = int(1.0 - math.tanh(beta) < UNSTABLE_MARGIN)
    return (beta, step, float(res.converged.mean()), float(res.diverged.mean()), median, unstable)


def cmd_bench(args, out) -> int:
    if args.lattice < 2 or args.batch < 1:
        raise InputError("lattice side must be at least 2 and batch at least 1")
    jobs = [(args.lattice, args.batch, args.seed, b, s, args.max_time, args.flux)
            for b in parse_grid(args.betas) for s in parse_grid(args.steps)]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_bench_cell, jobs))
    else:
        rows = [_bench_cell(j) for j in jobs]
    text = _csv("bench", ["beta", "step", "converged_fraction", "diverged_fraction", "median_iterations",
                          "unstable"], rows)
    _emit(text, args.out, out)
    return EXIT_OK


def cmd_singular(args, out) -> int:
    C, h = _load(args.model)
    config = RunConfig(flux=Flux(args.flux), step=args.step, max_time=args.max_time)
    points, crossings = singular_sweep(C, h, parse_grid(args.betas), config, bracket=args.bracket)
    rng = np.random.default_rng(args.seed)
    rows = [(p.beta, p.status, p.chi, p.corank,
             count_stationary(C, h, p.beta, args.starts, rng, config) if args.starts else "")
            for p in points]
    _emit(_csv("singular", ["beta", "status", "chi_at_one", "corank", "n_stationary"], rows), args.out, out)
    for c in crossings:
        sys.stderr.write(f"sign change of chi(1) in [{c.lower:.6f}, {c.upper:.6f}]\n")
    return EXIT_OK


def cmd_levels(args, out) -> int:
    C, h = _load(args.model)
    betas, offsets = parse_grid(args.betas), parse_grid(args.offsets)
    if args.direction == "soft":
        # weakest boundary mode of the linearisation at the first grid temperature
        traj = euler_run(C, h, h, RunConfig(beta=betas[0], step=0.5, max_time=400.0))
        if not traj.converged:
            raise NumericError(f"no convergence at beta {betas[0]} while choosing the soft direction")
        direction = softest_direction(C, traj.beliefs)
    else:
        try:
            direction = int(args.direction)
        except ValueError:
            raise InputError(f"direction must be an integer or 'soft', got {args.direction!r}") from None
    grid = level_grid(C, h, betas, offsets, direction)
    rows = [(b, s, grid[i, j]) for i, b in enumerate(betas) for j, s in enumerate(offsets)]
    _emit(_csv("levels", ["beta", "offset", "bethe_free_energy"], rows), args.out, out)
    return EXIT_OK


def cmd_marginals(args, out) -> int:
    C, h = _load(args.model)
    p = exact_marginals(C, h, args.beta)
    _emit(format_beliefs(C, p), args.out, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kikuchi", description="Belief diffusions on hypergraphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("close", help="print the intersection closure and counting numbers")
    p.add_argument("model")
    p.set_defaults(func=cmd_close)

    p = sub.add_parser("run", help="integrate a diffusion from the model potentials")
    p.add_argument("model")
    p.add_argument("--flux", choices=[f.value for f in Flux], default="gbp")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--max-time", type=float, default=100.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--energy", type=float, default=None, help="target mean energy (adiabatic run)")
    p.add_argument("--grad-tol", type=float, default=1e-10)
    p.add_argument("--trace-every", type=int, default=1)
    p.add_argument("--renormalize", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--trace", help="write the trace CSV here")
    p.add_argument("--beliefs", help="write the final beliefs here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="convergence fractions on random lattice spin glasses")
    p.add_argument("--lattice", type=int, default=10)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--betas", default="0.5:4:8")
    p.add_argument("--steps", default="0.5,1")
    p.add_argument("--max-time", type=float, default=100.0)
    p.add_argument("--flux", choices=[f.value for f in Flux], default="gbp")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("singular", help="sweep inverse temperatures and locate singular beliefs")
    p.add_argument("model")
    p.add_argument("--betas", default="0.1:2:20")
    p.add_argument("--flux", choices=[f.value for f in Flux], default="gbp")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--max-time", type=float, default=400.0)
    p.add_argument("--bracket", type=float, default=1e-3)
    p.add_argument("--starts", type=int, default=0, help="random restarts for counting stationary beliefs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_singular)

    p = sub.add_parser("levels", help="Bethe free energy on a (beta, boundary offset) grid")
    p.add_argument("model")
    p.add_argument("--betas", default="0.1:2:20")
    p.add_argument("--offsets", default="-2:2:21")
    p.add_argument("--direction", default="0",
                   help="1-field coordinate index, or 'soft' for the weakest linearised mode")
    p.add_argument("--out")
    p.set_defaults(func=cmd_levels)

    p = sub.add_parser("marginals", help="exact marginals by enumeration")
    p.add_argument("model")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_marginals)
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args, out)
    except (InputError, DomainError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except ResourceError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_RESOURCE
    except (NumericError, FloatingPointError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
