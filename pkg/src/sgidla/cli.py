"""Command line entry point: ``sgidla <group> <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import secrets
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

from .errors import DomainError, NumericError, ResourceError, SGError
from .gasket import ORIGIN, GraphFamily, Side, Vertex, ball, ball_volume, oracle_audit

log = logging.getLogger("sgidla")

EXIT_USAGE, EXIT_DOMAIN, EXIT_NUMERIC, EXIT_RESOURCE = 2, 3, 4, 5


def version_tag() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    version: str = field(default_factory=version_tag)
    wall_clock_s: float = 0.0
    digests: dict = field(default_factory=dict)

    def add_file(self, path: str | Path) -> None:
        data = Path(path).read_bytes()
        self.digests[str(path)] = hashlib.sha256(data).hexdigest()

    def add_text(self, name: str, text: str) -> None:
        self.digests[name] = hashlib.sha256(text.encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


# --- helpers ----------------------------------------------------------------


def _side_label(v: Vertex) -> str:
    if v.is_origin:
        return "o"
    return "R" if v.side is Side.RIGHT else "L"


def _csv(header: list, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _vertex(text: str) -> Vertex:
    try:
        return Vertex.parse(text)
    except (ValueError, KeyError) as exc:
        raise DomainError(f"cannot parse vertex address {text!r}: {exc}") from None


def _seed(args) -> int:
    if args.seed is None:
        args.seed = secrets.randbits(63)
        log.warning("no --seed given; using %d (recorded in the manifest)", args.seed)
    return args.seed


def _family(args) -> GraphFamily:
    return GraphFamily.from_name(args.family)


# --- subcommand handlers ------------------------------------------------------
# each returns the text to emit


def cmd_graph_volume(args) -> str:
    return f"{ball_volume(_family(args), args.n)}\n"


def cmd_graph_ball(args) -> str:
    fam = _family(args)
    b = ball(fam, ORIGIN, args.n)
    if args.emit == "svg":
        from .render import render_ball

        return render_ball(b)
    rows = [
        (_side_label(v), v.a, v.b, d, int(v in b.inner_boundary)) for v, d in b.dist.items()
    ]
    return _csv(["side", "a", "b", "dist_to_center", "is_inner_boundary"], rows)


def cmd_graph_check(args) -> str:
    r = oracle_audit(args.level)
    return _json(
        {
            "level": r.level,
            "vertices": r.vertices,
            "edges": r.edges,
            "mismatches": r.mismatches,
            "vertex_mismatches": [list(p) for p in r.vertex_mismatches[:20]],
            "edge_mismatches": [[list(p), list(q)] for p, q in r.edge_mismatches[:20]],
        }
    )


def cmd_walk_exit_time(args) -> str:
    from .walk import RngStream, estimate_exit_time

    seed = _seed(args)
    start = _vertex(args.x)
    mean, se = estimate_exit_time(_family(args), start, args.n, args.trials, RngStream(seed), threads=args.threads)
    return _json({"mean": mean, "stderr": se, "trials": args.trials, "seed": seed})


def cmd_walk_hit(args) -> str:
    from .walk import RngStream, estimate_hit_probability

    seed = _seed(args)
    p, se = estimate_hit_probability(
        _family(args), _vertex(args.x), _vertex(args.z), args.n, args.trials, RngStream(seed), threads=args.threads
    )
    return _json({"mean": p, "stderr": se, "trials": args.trials, "seed": seed})


def cmd_green_table(args) -> str:
    from .green import green

    g = green(_family(args), args.n, _vertex(args.z))
    return _csv(["side", "a", "b", "value"], [(_side_label(v), v.a, v.b, _fmt(x)) for v, x in g.values.items()])


def cmd_green_exit(args) -> str:
    from .green import expected_exit_time_exact

    sol = expected_exit_time_exact(_family(args), args.n)
    return _csv(["side", "a", "b", "value"], [(_side_label(v), v.a, v.b, _fmt(x)) for v, x in sol.as_dict().items()])


def cmd_green_harnack(args) -> str:
    from .green import harnack_ratio

    seed = _seed(args)
    r = harnack_ratio(_family(args), _vertex(args.x), args.n, args.samples, seed, args.law)
    return _json({"max_ratio": r.max_ratio, "samples": args.samples, "excluded": r.excluded, "seed": seed, "law": args.law})


def _parse_mass(text: str, family: GraphFamily, n: int | None) -> float:
    if text.startswith("auto:"):
        if text != "auto:bn":
            raise DomainError(f"unknown mass shorthand {text!r}")
        if n is None:
            raise DomainError("--mass auto:bn needs --n")
        return float(ball_volume(family, n))
    try:
        m = float(text)
    except ValueError:
        raise DomainError(f"cannot parse mass {text!r}") from None
    if not m >= 0:
        raise DomainError("mass must be non-negative")
    return m


def cmd_sandpile_run(args) -> str:
    from .sandpile import SandState, ToppleSchedule, stabilize

    fam = _family(args)
    state = SandState.point_mass(fam, _parse_mass(args.mass, fam, args.n))
    out = stabilize(state, ToppleSchedule.from_name(args.schedule), tol=args.tol)
    if args.emit == "svg":
        from .render import render_sandpile

        return render_sandpile(out)
    t = out.table
    rows = [
        (_side_label(t.vertices[i]), t.vertices[i].a, t.vertices[i].b, _fmt(out.mass[i]), _fmt(out.odometer[i]))
        for i in range(len(t))
        if out.mass[i] > 0 or out.odometer[i] > 0
    ]
    return _csv(["side", "a", "b", "mass", "odometer"], rows)


def cmd_sandpile_audit(args) -> str:
    from .sandpile import closed_form_audit

    rep = closed_form_audit(args.k, family=_family(args))
    args._failed = not rep.passed
    return "\n".join(rep.lines()) + "\n"


def cmd_idla_grow(args) -> str:
    from .idla import grow, radii
    from .walk import RngStream

    seed = _seed(args)
    fam = _family(args)
    cl = grow(fam, ball_volume(fam, args.n), RngStream(seed))
    if args.emit == "svg":
        from .render import render_cluster

        return render_cluster(cl)
    r = radii(cl)
    log.info("r_in=%d r_out=%d", r.r_in, r.r_out)
    return _csv(["side", "a", "b", "settle_order"], [(_side_label(v), v.a, v.b, i) for i, v in enumerate(cl.settle_order())])


def cmd_idla_ml(args) -> str:
    from .idla import exact_counters, ltilde_estimate, ml_counters_batch
    from .walk import RngStream

    seed = _seed(args)
    fam = _family(args)
    z = _vertex(args.z)
    c = ml_counters_batch(fam, args.n, z, args.trials, RngStream(seed, 0))
    lt, lt_se = ltilde_estimate(fam, args.n, z, args.trials, RngStream(seed, 1))
    ex = exact_counters(fam, args.n, z)
    outside = ~c.z_occupied
    sd = lambda x: float(x.std(ddof=1) / len(x) ** 0.5) if len(x) > 1 else 0.0  # noqa: E731
    return _json(
        {
            "n": args.n,
            "z": str(z),
            "trials": args.trials,
            "seed": seed,
            "M_mean": float(c.M.mean()),
            "M_stderr": sd(c.M),
            "L_mean": float(c.L.mean()),
            "L_stderr": sd(c.L),
            "Ltilde_mean": lt,
            "Ltilde_stderr": lt_se,
            "exact_M": ex.expected_m,
            "exact_Ltilde": ex.expected_ltilde,
            "z_outside_runs": int(outside.sum()),
            "invariant_M_eq_L_when_outside": bool((c.M[outside] == c.L[outside]).all()),
        }
    )


def cmd_idla_abelian(args) -> str:
    from .idla import abelian_test

    seed = _seed(args)
    r = abelian_test(_family(args), args.n, args.runs, seed)
    args._failed = r.pvalue < args.alpha
    return _json(
        {
            "n": args.n,
            "runs": args.runs,
            "seed": seed,
            "statistic": r.statistic,
            "pvalue": r.pvalue,
            "dof": r.dof,
            "alpha": args.alpha,
            "passed": r.pvalue >= args.alpha,
            "categories": [str(c) for c in r.categories],
            "direct": r.direct_counts.astype(int).tolist(),
            "stopped": r.stopped_counts.astype(int).tolist(),
        }
    )


def cmd_sweep_run(args) -> str:
    from .fluctuations import SweepConfig, rows_to_csv, sweep

    if args.config:
        cfg = SweepConfig.from_json(Path(args.config).read_text())
    else:
        cfg = SweepConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads_given:
        cfg.threads = args.threads
    if args.family_given:
        cfg.family = args.family
    if args.no_timing:
        cfg.timing = False
    args._config = cfg.to_dict()
    args.seed = cfg.seed
    return rows_to_csv(sweep(cfg, progress=lambda r: log.info("n=%d trial=%d done", r.n, r.trial)))


def cmd_sweep_fit(args) -> str:
    from .fluctuations import fit_exponent, rows_from_csv

    rows = rows_from_csv(Path(args.input).read_text())
    r = fit_exponent(rows, args.field, args.stat)
    return _json({"field": args.field, "stat": args.stat, "slope": r.slope, "intercept": r.intercept, "r2": r.r2, "flagged": r.flagged})


def cmd_sweep_lbg(args) -> str:
    from .fluctuations import lbg_tail_check

    seed = _seed(args)
    r = lbg_tail_check(args.N, args.p, args.gamma, args.trials, seed)
    return _json(
        {
            "N": r.N,
            "p": r.p,
            "gamma": r.gamma,
            "trials": r.trials,
            "seed": seed,
            "frequency": r.frequency,
            "bound": r.bound,
            "wilson": list(r.wilson),
            "passed": r.passed,
        }
    )


def cmd_sweep_annulus(args) -> str:
    from .fluctuations import annulus_audit

    return _json(asdict(annulus_audit(args.m, args.k, _family(args))))


def cmd_render(args) -> str:
    from .render import RenderSpec, render

    fam = _family(args)
    spec = RenderSpec(width=args.width, height=args.height)
    if args.kind == "ball":
        return render(ball(fam, ORIGIN, args.n), spec)
    if args.kind == "sandpile":
        from .sandpile import ball_mass_state, stabilize

        return render(stabilize(ball_mass_state(fam, args.n)), spec)
    from .idla import grow, grow_stopped
    from .walk import RngStream

    seed = _seed(args)
    b = ball_volume(fam, args.n)
    if args.kind == "cluster":
        return render(grow(fam, b, RngStream(seed)), spec)
    return render(grow_stopped(fam, None, [ORIGIN] * b, args.n, RngStream(seed)), spec)


# --- parser -------------------------------------------------------------------


def _global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    d = (lambda v: v) if top else (lambda v: argparse.SUPPRESS)
    p.add_argument("--seed", type=int, default=d(None), help="master seed (generated and recorded if omitted)")
    p.add_argument("--threads", type=int, default=d(os.cpu_count() or 1))
    p.add_argument("--family", choices=["doubled", "one-sided", "nine-copy"], default=d("doubled"))
    p.add_argument("--out", default=d(None), help="write output here instead of stdout")
    p.add_argument("--manifest", default=d(None), help="manifest path (default <out>.manifest.json)")
    p.add_argument("-v", "--verbose", action="count", default=d(0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgidla", description="IDLA and divisible sandpile on Sierpinski gasket graphs")
    _global_flags(parser, True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, False)
    groups = parser.add_subparsers(dest="group", required=True)

    def sub(group, name, func, help_=None):
        p = group.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    g = groups.add_parser("graph", help="graph construction").add_subparsers(dest="command", required=True)
    p = sub(g, "volume", cmd_graph_volume, "print |B_o(n)|")
    p.add_argument("--n", type=int, required=True)
    p = sub(g, "ball", cmd_graph_ball, "export B_o(n)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--emit", choices=["csv", "svg"], default="csv")
    p = sub(g, "check", cmd_graph_check, "neighbour oracle vs recursion")
    p.add_argument("--level", type=int, required=True)

    w = groups.add_parser("walk", help="random walk estimates").add_subparsers(dest="command", required=True)
    p = sub(w, "exit-time", cmd_walk_exit_time)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--x", default="o")
    p = sub(w, "hit", cmd_walk_hit)
    p.add_argument("--z", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--x", default="o")

    gr = groups.add_parser("green", help="exact Dirichlet solves").add_subparsers(dest="command", required=True)
    p = sub(gr, "table", cmd_green_table)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--emit", choices=["csv"], default="csv")
    p = sub(gr, "exit", cmd_green_exit)
    p.add_argument("--n", type=int, required=True)
    p = sub(gr, "harnack", cmd_green_harnack)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--x", default="o")
    p.add_argument("--law", choices=["uniform", "dirichlet", "constant"], default="uniform")

    s = groups.add_parser("sandpile", help="divisible sandpile").add_subparsers(dest="command", required=True)
    p = sub(s, "run", cmd_sandpile_run)
    p.add_argument("--mass", default="auto:bn", help="total mass at the origin, or auto:bn")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--schedule", choices=["parallel", "priority", "cycle"], default="parallel")
    p.add_argument("--emit", choices=["csv", "svg"], default="csv")
    p = sub(s, "audit", cmd_sandpile_audit)
    p.add_argument("--k", type=int, required=True)

    i = groups.add_parser("idla", help="internal DLA").add_subparsers(dest="command", required=True)
    p = sub(i, "grow", cmd_idla_grow)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--emit", choices=["csv", "svg"], default="csv")
    p = sub(i, "ml", cmd_idla_ml)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--z", required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p = sub(i, "abelian-test", cmd_idla_abelian)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--runs", type=int, default=10_000)
    p.add_argument("--alpha", type=float, default=1e-3)

    sw = groups.add_parser("sweep", help="fluctuation experiments").add_subparsers(dest="command", required=True)
    p = sub(sw, "run", cmd_sweep_run)
    p.add_argument("--config", default=None, help="JSON file with sweep settings")
    p.add_argument("--no-timing", action="store_true", help="write runtime_ms=0 for byte-stable output")
    p = sub(sw, "fit", cmd_sweep_fit)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--field", choices=["inner_defect", "outer_excess"], default="inner_defect")
    p.add_argument("--stat", choices=["max", "mean"], default="max")
    p = sub(sw, "lbg", cmd_sweep_lbg)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--trials", type=int, default=100_000)
    p = sub(sw, "annulus", cmd_sweep_annulus)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)

    p = groups.add_parser("render", parents=[common], help="SVG pictures")
    p.set_defaults(func=cmd_render)
    p.add_argument("--kind", choices=["ball", "cluster", "stopped", "sandpile"], default="cluster")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--width", type=int, default=800)
    p.add_argument("--height", type=int, default=800)
    return parser


def _error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def dispatch(argv: list | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.threads_given = "--threads" in argv
    args.family_given = "--family" in argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    name = " ".join(x for x in (args.group, getattr(args, "command", None)) if x)
    t0 = time.perf_counter()
    try:
        text = args.func(args)
    except DomainError as exc:
        return _error("domain", exc, EXIT_DOMAIN)
    except NumericError as exc:
        return _error("numeric", exc, EXIT_NUMERIC)
    except ResourceError as exc:
        return _error("resource", exc, EXIT_RESOURCE)
    except SGError as exc:
        return _error("error", exc, 1)
    except OSError as exc:
        return _error("io", exc, EXIT_RESOURCE)
    skip = {"func", "out", "manifest", "verbose", "threads_given", "family_given", "_failed", "_config"}
    config = getattr(args, "_config", None) or {k: v for k, v in vars(args).items() if k not in skip}
    manifest = RunManifest(name, config, args.seed, wall_clock_s=round(time.perf_counter() - t0, 3))
    if args.out:
        Path(args.out).write_text(text)
        manifest.add_file(args.out)
    else:
        sys.stdout.write(text)
        manifest.add_text("stdout", text)
    mpath = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if mpath:
        Path(mpath).write_text(manifest.to_json())
    return 1 if getattr(args, "_failed", False) else 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
