"""Command line interface: ``prescribed-ricci {spectrum,solve,verify,converge}``.

Configuration is an INI file read with :mod:`configparser`. Sections may be
dotted (``[problem.target]``); every key has a fixed type. Example::

    [geometry]
    kind = hyperbolic_slab
    resolution = 8, 8, 17
    fd_order = 4

    [problem]
    family = ricci
    lambda_shift = 1.0

    [problem.target]
    kind = manufactured
    hstar = conformal_bump
    amplitude = 3e-4

    [solver]
    method = chord
    tol = 1e-9

Exit codes: 0 success, 1 config error, 2 hypothesis violation, 3 solver
divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import warnings

import numpy as np

from . import assembly as asm
from . import io
from . import operators as op
from . import oracles as orc
from . import solvers as sv
from . import tensor_core as tc
from .grid import GridError, ModelGeometry, build_grid

EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_DIVERGENCE, EXIT_VERIFY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def _floats(text):
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _float_or_background(text):
    return None if text.strip().lower() == "background" else float(text)


def _resolution_list(text):
    return [_ints(chunk) for chunk in text.split(";") if chunk.strip()]


# section -> key -> (type, default)
SCHEMA = {
    "geometry": {
        "kind": (str, "flat_slab"),
        "n": (int, 3),
        "interval": (_floats, None),
        "periods": (_floats, None),
        "resolution": (_ints, (8, 8, 17)),
        "fd_order": (int, 4),
    },
    "problem": {
        "family": (str, "ricci"),
        "lambda_shift": (float, 1.0),
        "kappa": (float, 0.0),
        "a": (float, 0.5),
    },
    "problem.target": {
        "kind": (str, "zero"),
        "epsilon": (float, 1e-3),
        "hstar": (str, "conformal_bump"),
        "amplitude": (float, 3e-4),
        "frequency": (int, 1),
        "tangential": (int, 0),
        "file": (str, None),
    },
    "problem.boundary": {
        "mean_curvature_a": (_float_or_background, None),
        "mean_curvature_b": (_float_or_background, None),
        "gamma_file": (str, None),
    },
    "solver": {
        "method": (str, "chord"),
        "tol": (float, 1e-9),
        "max_iter": (int, 50),
        "epsilon_cap": (float, 1e-2),
        "check_margins": (_bool, True),
        "margin": (float, 1e-6),
        "gauge_tol": (float, 1e-6),
    },
    "spectrum": {"k": (int, 6)},
    "verify": {"order_slack": (float, 1.5), "exact_tol": (float, 1e-9), "flip_mean_curvature": (_bool, False)},
    "converge": {"quantity": (str, "curvature"), "resolutions": (_resolution_list, [(8, 8, 9), (8, 8, 17), (8, 8, 33)])},
    "report": {"output": (str, "output"), "formats": (str, "csv,json")},
}


def load_config(path=None, text=None) -> dict:
    """Parse and type-check a config; unknown sections or keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        if text is not None:
            parser.read_string(text)
        elif path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"config file not found: {path}")
            parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in parser.items(sec):
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            conv = SCHEMA[sec][key][0]
            try:
                cfg[sec][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{sec}.{key}: {exc}") from exc
    fam = cfg["problem"]["family"]
    if fam not in op.FAMILIES:
        raise ConfigError(f"problem.family: unknown family {fam!r}")
    if cfg["solver"]["method"] not in ("chord", "newton_krylov"):
        raise ConfigError("solver.method must be chord or newton_krylov")
    n = cfg["geometry"]["n"]
    a = cfg["problem"]["a"]
    if n > 2 and abs(a + 1.0 / (n - 2)) < 1e-12:
        raise ConfigError("problem.a = -1/(n-2) is excluded")
    return cfg


def make_context(cfg, resolution=None):
    geo_cfg = cfg["geometry"]
    try:
        geo = ModelGeometry(geo_cfg["kind"], geo_cfg["interval"], geo_cfg["periods"], geo_cfg["n"])
        grid = build_grid(geo, resolution or geo_cfg["resolution"], geo_cfg["fd_order"])
    except GridError as exc:
        raise ConfigError(f"geometry: {exc}") from exc
    p = cfg["problem"]
    return op.OperatorContext(grid, lam_shift=p["lambda_shift"], kappa=p["kappa"], a=p["a"])


def make_problem(cfg, ctx):
    """Build the ``ProblemSpec`` (and exact solution when known) from the config."""
    fam = cfg["problem"]["family"]
    tgt = cfg["problem.target"]
    cap = cfg["solver"]["epsilon_cap"]
    kind = tgt["kind"]
    exact = None
    if kind == "manufactured":
        mp = orc.build_manufactured(ctx, fam, tgt["hstar"], tgt["amplitude"], tgt["frequency"], tgt["tangential"], cap)
        spec, exact = mp.spec, mp.hstar
    else:
        target = None
        if kind == "conformal_scaling":
            if fam != "ricci" or ctx.lam != 0:
                raise ConfigError("problem.target.kind = conformal_scaling needs family ricci on a flat background")
            eps = tgt["epsilon"]
            target = eps * ctx.g
            exact = eps / ctx.lam_shift * ctx.g
        elif kind == "file":
            if not tgt["file"]:
                raise ConfigError("problem.target.file is required for kind = file")
            target = io.read_sym_field(tgt["file"], ctx.n, ctx.grid.shape)
        elif kind != "zero":
            raise ConfigError(f"problem.target.kind: unknown value {kind!r}")
        spec = sv.ProblemSpec(ctx, fam, target=target, epsilon_cap=cap)
        if kind == "conformal_scaling":
            spec.mean_curvature = np.zeros(ctx.grid.shape)
        elif kind == "zero":
            exact = np.zeros((ctx.n, ctx.n) + ctx.grid.shape)
    bnd = cfg["problem.boundary"]
    for face, key in ((0, "mean_curvature_a"), (-1, "mean_curvature_b")):
        if bnd[key] is not None:
            spec.mean_curvature[..., face] = bnd[key]
    if bnd["gamma_file"]:
        m = ctx.n - 1
        full = io.read_sym_field(bnd["gamma_file"], m, ctx.grid.shape[:-1] + (2,))
        spec.gamma = sv._boundary_to_full(full, ctx.grid, spec.gamma)
    return spec, exact


def _output_dir(cfg, args):
    out = args.output or cfg["report"]["output"]
    os.makedirs(out, exist_ok=True)
    return out


def cmd_spectrum(cfg, args):
    ctx = make_context(cfg)
    fam = cfg["problem"]["family"]
    ctx.check_family(fam)
    k = cfg["spectrum"]["k"]
    out = _output_dir(cfg, args)
    ops, crit = asm.spectral_operators(ctx, fam)
    rows = []
    for name, A in ops.items():
        if k <= 0:
            continue
        try:
            eig = asm.smallest_eigenvalues(A, k=k, shift=crit)
        except asm.SpectrumError:
            continue
        for i, (mu, r) in enumerate(zip(eig.values, eig.residuals)):
            rows.append([name, i, repr(float(mu.real)), repr(float(mu.imag)), repr(float(r))])
    io.write_eigenvalues(rows, os.path.join(out, "eigenvalues.csv"))
    margins = asm.spectral_margin(ctx, fam, k=max(k, 1), margin=cfg["solver"]["margin"])
    io.write_json(margins, os.path.join(out, "margins.json"))
    if margins["flagged"] and not args.override_margins:
        print("spectral hypothesis violated (critical value too close to the spectrum)", file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def cmd_solve(cfg, args):
    ctx = make_context(cfg)
    fam = cfg["problem"]["family"]
    ctx.check_family(fam)
    out = _output_dir(cfg, args)
    margins = None
    if cfg["solver"]["check_margins"]:
        margins = asm.spectral_margin(ctx, fam, margin=cfg["solver"]["margin"])
        if margins["flagged"] and not args.override_margins:
            io.write_json({"error": "spectral hypothesis violated", "spectral_margins": margins}, os.path.join(out, "solve_report.json"))
            print("spectral hypothesis violated; use --override-margins to proceed", file=sys.stderr)
            return EXIT_HYPOTHESIS
    spec, exact = make_problem(cfg, ctx)
    s = cfg["solver"]
    kw = {"tol": s["tol"], "max_iter": s["max_iter"]}
    try:
        h, report = sv.solve(spec, s["method"], **kw)
    except sv.DivergenceError as exc:
        rep = exc.report.to_dict() if exc.report else {}
        rep["error"] = str(exc)
        io.write_json(rep, os.path.join(out, "solve_report.json"))
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    report.spectral_margins = margins
    if exact is not None:
        report.extra["h_error_sup"] = tc.sup_norm(h - exact, ctx.g)
    report.extra["amplitude"] = spec.amplitude
    io.write_json(report.to_dict(), os.path.join(out, "solve_report.json"))
    io.write_sym_field(h, os.path.join(out, "solution.csv"))
    if not report.converged:
        print("solver did not converge within max_iter", file=sys.stderr)
        return EXIT_DIVERGENCE
    if report.gauge_boundary_sup > max(10 * s["tol"], 1e-10) or report.gauge_sup > s["gauge_tol"] + 10 * report.geometric_residual:
        print("gauge elimination check failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def run_verify(cfg):
    """Identity suite on the configured grid and its radial refinement."""
    res = cfg["geometry"]["resolution"]
    fine = tuple(res[:-1]) + (2 * res[-1] - 1,)
    flip = cfg["verify"]["flip_mean_curvature"]
    a = cfg["problem"]["a"]
    coarse = orc.identity_suite(make_context(cfg, res), a=a, flip_mean_curvature=flip)
    refined = orc.identity_suite(make_context(cfg, fine), a=a, flip_mean_curvature=flip)
    p = cfg["geometry"]["fd_order"]
    checks = {}
    for name, val in coarse.items():
        fval = refined.get(name, float("nan"))
        exact = name in orc.EXACT_IDENTITIES
        order = float(orc.observed_orders([val, fval], [res[-1], fine[-1]])[0]) if val > 0 and fval > 0 else float("nan")
        if exact:
            ok = max(val, fval) <= cfg["verify"]["exact_tol"]
        else:
            floor = fval <= cfg["verify"]["exact_tol"]
            ok = floor or (fval < val and order >= p - cfg["verify"]["order_slack"])
        checks[name] = {"kind": "exact" if exact else "fd", "residual": val, "residual_refined": fval, "order": order, "pass": bool(ok)}
    return {"resolutions": [list(res), list(fine)], "checks": checks, "all_pass": all(c["pass"] for c in checks.values())}


def cmd_verify(cfg, args):
    out = _output_dir(cfg, args)
    report = run_verify(cfg)
    io.write_json(report, os.path.join(out, "verify.json"))
    return EXIT_OK if report["all_pass"] else EXIT_VERIFY


def run_converge(cfg):
    resolutions = cfg["converge"]["resolutions"]
    quantity = cfg["converge"]["quantity"]
    p = cfg["geometry"]["fd_order"]
    try:
        orc.check_nested(resolutions)
    except ValueError as exc:
        raise ConfigError(f"converge.resolutions: {exc}") from exc
    if quantity == "curvature":

        def err(r):
            ctx = make_context(cfg, r)
            return orc.background_residuals(ctx)["einstein"]

    elif quantity == "solve":

        def err(r):
            ctx = make_context(cfg, r)
            spec, exact = make_problem(cfg, ctx)
            if exact is None:
                raise ConfigError("converge.quantity = solve needs a target with a known solution")
            h, _ = sv.solve(spec, cfg["solver"]["method"], tol=cfg["solver"]["tol"], max_iter=cfg["solver"]["max_iter"])
            return tc.sup_norm(h - exact, ctx.g)

    else:
        raise ConfigError(f"converge.quantity: unknown value {quantity!r}")
    return quantity, orc.convergence_study(err, resolutions, fd_order=p)


def cmd_converge(cfg, args):
    out = _output_dir(cfg, args)
    quantity, table = run_converge(cfg)
    rows = []
    for i, (r, e) in enumerate(zip(table["resolutions"], table["errors"])):
        order = table["orders"][i - 1] if i > 0 else ""
        rows.append([quantity, "x".join(str(x) for x in r), repr(e), order if order == "" else repr(order)])
    io.write_table(["quantity", "resolution", "error", "order"], rows, os.path.join(out, "convergence.csv"))
    return EXIT_OK


COMMANDS = {"spectrum": cmd_spectrum, "solve": cmd_solve, "verify": cmd_verify, "converge": cmd_converge}


def build_parser():
    parser = argparse.ArgumentParser(prog="prescribed-ricci", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", metavar="PATH", help="INI configuration file")
    parser.add_argument("--override-margins", action="store_true", help="proceed even if a spectral margin is flagged")
    parser.add_argument("--output", metavar="DIR", help="output directory (overrides report.output)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (op.HypothesisError, tc.MetricError) as exc:
        print(f"hypothesis violation: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except asm.LinearSolveError as exc:
        print(f"linear solve failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())
