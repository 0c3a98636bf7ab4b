"""End-to-end acceptance runs; each test emits one PASS/FAIL line."""
import math
from fractions import Fraction

import numpy as np
import pytest

from bandedge.fokker_planck import (expectation, groundstate, parabolic_coefficients,
                                    weak_form_residual)
from bandedge.harness import (RegimeSpec, compare_density, free_ids, ids_oracle, measure,
                              run_scaling, simulation_basis, theory_prediction)
from bandedge.model import ModelInstance, PeriodicBackground, DisorderSpec, anderson_model
from bandedge.pruefer import simulate
from bandedge.singular_ode import classify, residual_max, solve
from bandedge.transfer import band_edges, cell_transfer, edge_data

from test_singular_ode import LIBRARY, problem
from test_transfer import conj_residual, log_residual

pytestmark = pytest.mark.slow

PI = math.pi
THREADS = 4
STEPS = 10**7


@pytest.fixture(scope="module")
def upper():
    m = anderson_model()
    return m, edge_data(m.background, m.disorder, 2.0)


def test_c1_thouless(report):
    lam = 0.1
    st = simulate(anderson_model(lam), 1.0, STEPS, seed=1, threads=THREADS)
    target = lam**2 / 18
    err = abs(st.gamma - target) / target
    ok = report("C1 Thouless", err <= 0.10,
                f"gamma={st.gamma:.4e} target={target:.4e} rel.err={err:.3f}")
    assert ok


def _scaling_line(rep):
    parts = []
    for k, v in rep.verdicts.items():
        if v.get("pass") is None:
            parts.append(f"{k}={v['value']} (report only)")
        else:
            parts.append(f"{k}={v['value']:.4g} vs {v['target']:.4g} "
                         f"[{'ok' if v['pass'] else 'off'}]")
    return "; ".join(parts)


def test_c2_elliptic(upper, report):
    m, e = upper
    spec = RegimeSpec("elliptic", 1, -1.0, (0.1, 0.05, 0.025, 0.0125), n_steps=STEPS, seed=2)
    rep = run_scaling(spec, m, e, threads=THREADS)
    ok = rep.passed and set(rep.verdicts) == {"beta", "B", "alpha", "A"}
    assert report("C2 elliptic", ok, _scaling_line(rep))


def test_c3_hyperbolic(upper, report):
    m, e = upper
    spec = RegimeSpec("hyperbolic", 1, 1.0, (0.1, 0.05, 0.025, 0.0125), n_steps=STEPS, seed=3)
    rep = run_scaling(spec, m, e, threads=THREADS)
    ids = rep.fits["ids"]
    detail = (_scaling_line(rep) + f"; IDS deficit {['%.2e' % d for d in ids['deficit']]}"
              f" decreasing={ids['decreasing_in_lambda']}")
    ok = rep.verdicts["beta"]["pass"] and rep.verdicts["B"]["pass"]
    assert report("C3 hyperbolic", ok, detail)


def test_c4_parabolic(upper, report):
    m, e = upper
    N0 = free_ids(m, e.E_b)
    lines, ok = [], True
    row = 0
    for eps in (-1.0, 0.0, 1.0):
        spec = RegimeSpec("parabolic", Fraction(4, 3), eps, n_steps=STEPS, seed=4)
        pred = theory_prediction(spec, e, m.L)
        for lam in (1e-2, 1e-3):
            r = measure(spec, m, e, lam, N0, row, THREADS)
            row += 1
            s = lam ** (2 / 3)
            eB = abs(r["gamma"] / s - pred.B) / pred.B
            eA = abs(r["dids"] / s - pred.A) / abs(pred.A)
            good = eB <= 0.10 and eA <= 0.15
            ok &= good
            lines.append(f"eps={eps:+.0f} lam={lam:.0e}: B {r['gamma'] / s:.4g}/{pred.B:.4g}"
                         f" A {r['dids'] / s:.4g}/{pred.A:.4g}{'' if good else ' [off]'}")
    assert report("C4 parabolic", ok, "; ".join(lines))


def test_c5_groundstate(upper, report):
    p, q = parabolic_coefficients(0.0, 1 / 3)
    gs = groundstate(p, q)
    z = gs.case.zeros[0]
    checks = {
        "norm": abs(gs.integral() - 1) <= 1e-8,
        "nonneg": bool(gs.rho.min() >= 0),
        "weak": weak_form_residual(p, q, gs) <= 1e-5,
        "boundary": abs(gs.value(PI / 2) - gs.C / z.qt) <= 1e-6 and z.qt == pytest.approx(2),
    }
    m, e = upper
    lam = 1e-3
    G = simulation_basis("parabolic", e, lam, Fraction(4, 3), 0.0)
    st = simulate(m.with_lambda(lam), e.E_b, STEPS, seed=5, basis=G, threads=THREADS)
    tv = compare_density(st.histogram, gs, st.bin_edges)
    checks["tv"] = tv <= 0.1
    ok = all(checks.values())
    assert report("C5 groundstate", ok,
                  f"{', '.join(k for k, v in checks.items() if v)} ok; TV={tv:.4f}")


def test_c6_ids_oracle(report):
    points = [(0.0, 0.5), (1.2, 0.2), (-0.7, 1.0), (2.0, 0.1), (-2.0, 0.1), (1.97, 0.05)]
    worst = 0.0
    for i, (E, lam) in enumerate(points):
        m = anderson_model(lam)
        st = simulate(m, E, 10**6, seed=60 + i, threads=THREADS)
        worst = max(worst, abs(st.ids - ids_oracle(m, E, 10**5, seed=70 + i)))
    assert report("C6 IDS oracle", worst <= 3e-3, f"max |ids - sturm| = {worst:.2e}")


def test_c7_singular_ode(report):
    ok = True
    worst = 0.0
    for entry in LIBRARY:
        pr = problem(entry)
        lab = classify(pr)
        ok &= lab.case == entry[4]
        ok &= (lab.free_params_left, lab.free_params_right) == entry[5]
        sol = solve(pr, params=entry[6], grid=2001)
        res = residual_max(pr, sol)
        worst = max(worst, res)
        exact = entry[7](sol.x)
        far = ~sol.guard & (np.abs(sol.x) >= 0.1)
        ok &= bool(np.all(np.abs(sol.y[far] - exact[far])
                          <= 1e-8 * np.abs(exact[far]) + 1e-300))
    ok &= worst <= 1e-7
    assert report("C7 singular ODE suite", ok,
                  f"{len(LIBRARY)} problems, max residual {worst:.1e}")


def test_c8_normal_forms(report):
    rng = np.random.default_rng(11)
    worst_conj, n = 0.0, 0
    while n < 100:
        bg = PeriodicBackground(rng.uniform(0.5, 2.0, 3), rng.uniform(-1, 1, 3))
        edges = band_edges(bg, (-6, 6))
        if not edges:
            continue
        E_b = edges[int(rng.integers(len(edges)))][0]
        m = ModelInstance(bg, DisorderSpec.anderson(3), 0.0)
        d, r, _, _ = conj_residual(cell_transfer(m, np.zeros(6), E_b).value)
        worst_conj = max(worst_conj, d, r)
        n += 1
    m = anderson_model()
    lam = 1e-4
    ratio = 0.0
    for E_b in (2.0, -2.0):
        e = edge_data(m.background, m.disorder, E_b)
        for eps in (-1.0, 0.0, 1.0):
            for v in (-0.9, 0.4):
                sig = np.array([0.0, v])
                r2 = log_residual(e, m, sig, lam, 4 / 3, eps, 2 / 3, 1 / 3, 2 / 3)
                ratio = max(ratio, r2 / lam)
        for eps in (-1.0, 1.0):
            r1 = log_residual(e, m, np.array([0.0, 0.5]), lam, 1.0, eps, 0.5, 0.5, 0.5)
            ratio = max(ratio, r1 / lam)
    ok = worst_conj <= 1e-10 and ratio <= 10
    assert report("C8 normal forms", ok,
                  f"jordan residual {worst_conj:.1e}; log residual / lam <= {ratio:.2f}")


def test_c9_invariant_measures(upper, report):
    m, e = upper
    lam = 1e-3
    G = simulation_basis("elliptic", e, lam, 1, -1.0)
    st = simulate(m.with_lambda(lam), e.E_b - lam, STEPS, seed=9, basis=G, threads=THREADS)
    i2, i4 = abs(st.birkhoff["e2"][0]), abs(st.birkhoff["e4"][0])
    G = simulation_basis("hyperbolic", e, lam, 1, 1.0)
    st = simulate(m.with_lambda(lam), e.E_b + lam, STEPS, seed=10, basis=G, threads=THREADS)
    centers = 0.5 * (st.bin_edges[:-1] + st.bin_edges[1:])
    near = np.abs(centers - PI / 2) <= 0.2
    mass = st.histogram[near].sum() / st.histogram.sum()
    ok = i2 <= 0.05 and i4 <= 0.05 and mass >= 0.9
    assert report("C9 invariant measures", ok,
                  f"|I(e2)|={i2:.3f} |I(e4)|={i4:.3f}; hyperbolic mass near pi/2 = {mass:.3f}")
