"""Command line entry point ``band-edge-lab``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import harness
from .anomaly import band_edge_expansion, classify
from .fokker_planck import groundstate, parabolic_coefficients
from .model import anderson_model, load_model
from .pruefer import simulate
from .transfer import band_edges, edge_data

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _model(args):
    return load_model(args.model) if args.model else anderson_model()


def _write(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _range(text):
    a, b = text.split(":")
    return float(a), float(b)


def cmd_edges(args):
    m = _model(args)
    rows = []
    for E_b, _ in band_edges(m.background, _range(args.range)):
        e = edge_data(m.background, m.disorder, E_b, seed=args.seed)
        rows.append((e.E_b, e.edge_sign, e.x, e.x_sigma_m2, e.inward))
    _write(args.out, _csv(["E_b", "edge_sign", "x", "x_sigma_m2", "inward"], rows))
    return EXIT_PASS


def cmd_classify(args):
    m = _model(args)
    e = edge_data(m.background, m.disorder, args.edge, seed=args.seed)
    exp = band_edge_expansion(args.eps * e.canonical_epsx, e.x_sigma_m2, Fraction(args.eta))
    rec = classify(exp).as_dict()
    rec.update({"E_b": e.E_b, "eta": args.eta, "eps": args.eps})
    _write(args.out, json.dumps(rec, indent=2) + "\n")
    return EXIT_PASS


def cmd_simulate(args):
    m = _model(args).with_lambda(args.lam)
    st = simulate(m, args.E, int(float(args.steps)), burn_in=args.burn_in,
                  replicas=args.replicas, seed=args.seed, threads=args.threads,
                  observables={})
    rows = [("gamma", st.gamma, st.gamma_err), ("R", st.R, st.R_err),
            ("ids", st.ids, st.ids_err)]
    for k, (val, err) in st.birkhoff.items():
        rows += [(f"{k}_re", val.real, err), (f"{k}_im", val.imag, err)]
    out = Path(args.out or "stats.csv")
    _write(out, _csv(["quantity", "value", "stderr"], rows))
    hist_rows = zip(st.bin_edges[:-1], st.bin_edges[1:], st.histogram.tolist())
    _write(out.with_name("hist.csv"), _csv(["bin_lo", "bin_hi", "count"], hist_rows))
    for f in st.flags:
        print(f"warning: {f}", file=sys.stderr)
    return EXIT_PASS


def cmd_groundstate(args):
    p, q = parabolic_coefficients(args.epsx, args.m2)
    gs = groundstate(p, q, n_grid=args.grid)
    if gs.kind == "dirac":
        print(f"dirac groundstate at theta={gs.theta_hat!r}", file=sys.stderr)
        return EXIT_PASS
    _write(args.out or "rho.csv", _csv(["theta", "rho"], zip(gs.theta, gs.rho)))
    print(json.dumps({"case": gs.case.tag, "C": gs.C}), file=sys.stderr)
    return EXIT_PASS


def _spec(args):
    lams = tuple(float(x) for x in args.lambdas.split(","))
    return harness.RegimeSpec(args.regime, Fraction(args.eta), args.eps, lams,
                              int(float(args.steps)), args.burn_in, args.replicas, args.seed)


def cmd_scaling(args):
    m = _model(args)
    e = edge_data(m.background, m.disorder, args.edge, seed=args.seed)
    rep = harness.run_scaling(_spec(args), m, e, threads=args.threads)
    out = Path(args.out or "scaling")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep.as_dict(), indent=2, default=str) + "\n")
    rows = [(r["lambda"], r.get("gamma", ""), r.get("gamma_err", ""), r.get("ids", ""),
             r.get("ids_err", ""), r["status"]) for r in rep.rows]
    (out / "rows.csv").write_text(
        _csv(["lambda", "gamma", "gamma_stderr", "ids", "ids_stderr", "status"], rows))
    for name, v in rep.verdicts.items():
        state = "n/a" if v["pass"] is None else ("PASS" if v["pass"] else "FAIL")
        print(f"{name}: {state} value={v['value']} target={v['target']}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_density_compare(args):
    m = _model(args)
    e = edge_data(m.background, m.disorder, args.edge, seed=args.seed)
    spec = harness.RegimeSpec("parabolic", Fraction(4, 3), args.eps, (args.lam,),
                              int(float(args.steps)), args.burn_in, args.replicas, args.seed)
    spec.check(e)
    G = harness.simulation_basis("parabolic", e, args.lam, spec.eta, args.eps)
    st = simulate(m.with_lambda(args.lam), spec.energy(e, args.lam), spec.n_steps,
                  burn_in=args.burn_in, replicas=args.replicas, seed=args.seed, basis=G,
                  threads=args.threads)
    gs = groundstate(*parabolic_coefficients(args.eps * e.canonical_epsx, e.x_sigma_m2))
    tv = harness.compare_density(st.histogram, gs, st.bin_edges)
    rec = {"lambda": args.lam, "eps": args.eps, "tv": tv, "tol": args.tol, "pass": tv <= args.tol}
    _write(args.out, json.dumps(rec, indent=2) + "\n")
    return EXIT_PASS if rec["pass"] else EXIT_FAIL


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON file (default: Anderson model)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None)
    common.add_argument("--threads", type=int, default=1)

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--steps", default="1e6", help="unit cells per replica")
    mc.add_argument("--burn-in", type=int, default=None)
    mc.add_argument("--replicas", type=int, default=8)

    ap = argparse.ArgumentParser(prog="band-edge-lab")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edges", parents=[common], help="band edges of the background")
    p.add_argument("--range", default="-3:3")
    p.set_defaults(func=cmd_edges)

    p = sub.add_parser("classify", parents=[common], help="anomaly type at a band edge")
    p.add_argument("--edge", type=float, required=True)
    p.add_argument("--eta", default="1")
    p.add_argument("--eps", type=float, required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("simulate", parents=[common, mc], help="Pruefer phase Monte Carlo")
    p.add_argument("--E", type=float, required=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("groundstate", parents=[common], help="parabolic stationary density")
    p.add_argument("--epsx", type=float, required=True)
    p.add_argument("--m2", type=float, required=True)
    p.add_argument("--grid", type=int, default=4096)
    p.set_defaults(func=cmd_groundstate)

    p = sub.add_parser("scaling", parents=[common, mc], help="lambda sweep with verdicts")
    p.add_argument("--edge", type=float, required=True)
    p.add_argument("--regime", choices=harness.REGIMES, required=True)
    p.add_argument("--eta", default="1")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--lambdas", default="0.1,0.05,0.025,0.0125")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("density-compare", parents=[common, mc],
                       help="phase histogram against the parabolic groundstate")
    p.add_argument("--edge", type=float, required=True)
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=0.1)
    p.set_defaults(func=cmd_density_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
