import math

import numpy as np
import pytest
from scipy.linalg import logm

from bandedge.model import DisorderSpec, ModelInstance, PeriodicBackground, anderson_model
from bandedge.transfer import (TransferError, band_edges, cell_transfer, edge_data,
                               is_unimodular, jordan_basis, rescaled_transfer, site_transfer,
                               x_sigma)


def test_site_transfer_examples():
    assert np.array_equal(site_transfer(2, 1, 0), [[2, -1], [1, 0]])
    assert np.array_equal(site_transfer(0, 1, 0), [[0, -1], [1, 0]])
    T = site_transfer(1, 2, 1)
    assert np.allclose(T, [[0, -2], [0.5, 0]]) and np.linalg.det(T) == pytest.approx(1)
    with pytest.raises(TransferError):
        site_transfer(0, 0, 0)


def test_cell_transfer_anderson():
    m = anderson_model(0.0)
    j = cell_transfer(m, [0, 0], 0.7, jet="E")
    assert np.allclose(j.value, [[0.7, -1], [1, 0]])
    assert np.allclose(j.d, [[1, 0], [0, 0]])
    m = anderson_model(0.3)
    assert np.trace(cell_transfer(m, [0, 0.4], 2.0).value) == pytest.approx(2 - 0.3 * 0.4)


def test_cell_transfer_period_two():
    m = ModelInstance(PeriodicBackground((1, 1), (0, 0)), DisorderSpec.anderson(2), 0.0)
    E = 0.37
    assert np.allclose(cell_transfer(m, np.zeros(4), E).value, [[E * E - 1, -E], [E, -1]])


def random_model(rng, L=None, lam=None):
    L = L or int(rng.integers(1, 4))
    bg = PeriodicBackground(rng.uniform(0.5, 2.0, L), rng.uniform(-1, 1, L))
    dis = DisorderSpec(tuple(rng.uniform(-0.3, 0.3, L)), tuple(rng.uniform(-1, 1, L)))
    return ModelInstance(bg, dis, rng.uniform(0, 0.2) if lam is None else lam)


def test_jets_match_finite_differences():
    rng = np.random.default_rng(5)
    h = 1e-6
    for _ in range(1000):
        m = random_model(rng)
        sig = rng.uniform(-1, 1, 2 * m.L)
        E = rng.uniform(-3, 3)
        jE = cell_transfer(m, sig, E, jet="E")
        fd = (cell_transfer(m, sig, E + h).value - cell_transfer(m, sig, E - h).value) / (2 * h)
        assert np.allclose(jE.d, fd, rtol=1e-5, atol=1e-5 * np.abs(fd).max())
        jl = cell_transfer(m, sig, E, jet="lambda")
        fd = (cell_transfer(m.with_lambda(m.lam + h), sig, E).value
              - cell_transfer(m.with_lambda(m.lam - h), sig, E).value) / (2 * h)
        assert np.allclose(jl.d, fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))
        assert is_unimodular(jE.value)


def test_band_edges_anderson():
    edges = band_edges(PeriodicBackground((1.0,), (0.0,)), (-3, 3))
    assert [(round(E, 12), s) for E, s in edges] == [(-2.0, -1), (2.0, 1)]
    assert band_edges(PeriodicBackground((1.0,), (0.0,)), (0.5, 1.5)) == []


def test_band_edges_period_two_touching():
    edges, touching = band_edges(PeriodicBackground((1, 1), (0, 0)), (-3, 3),
                                 return_touching=True)
    assert np.allclose([E for E, _ in edges], [-2, 2], atol=1e-10)
    assert len(touching) == 1 and abs(touching[0][0]) < 1e-7


def test_band_edges_tile_interval():
    bg = PeriodicBackground((1.0, 0.6, 1.3), (0.2, -0.5, 0.1))
    edges = [E for E, _ in band_edges(bg, (-4, 4))]
    from bandedge.transfer import background_trace
    for a, b in zip(edges, edges[1:]):
        mids = np.linspace(a, b, 7)[1:-1]
        signs = np.sign(np.abs(background_trace(bg, mids)) - 2)
        assert len(set(signs)) == 1


def conj_residual(T):
    N, s = jordan_basis(T)
    sign = 1.0 if np.trace(T) > 0 else -1.0
    J = sign * np.array([[1.0, s], [0.0, 1.0]])
    return abs(np.linalg.det(N) - 1), np.abs(N @ T @ np.linalg.inv(N) - J).max(), N, s


def test_jordan_examples():
    d, r, N, s = conj_residual(np.array([[2.0, -1.0], [1.0, 0.0]]))
    assert d < 1e-12 and r < 1e-12 and s == -1
    d, r, N, s = conj_residual(np.array([[1.0, 1.0], [0.0, 1.0]]))
    assert np.allclose(N, np.eye(2)) and s == 1
    d, r, N, s = conj_residual(np.array([[-2.0, -1.0], [1.0, 0.0]]))
    assert d < 1e-10 and r < 1e-10
    with pytest.raises(TransferError):
        jordan_basis(-np.eye(2))


def test_jordan_random_band_edge_families():
    rng = np.random.default_rng(11)
    done = 0
    while done < 100:
        bg = PeriodicBackground(rng.uniform(0.5, 2.0, 3), rng.uniform(-1, 1, 3))
        edges = band_edges(bg, (-6, 6))
        if not edges:
            continue
        E_b = edges[int(rng.integers(len(edges)))][0]
        m = ModelInstance(bg, DisorderSpec.anderson(3), 0.0)
        jet = cell_transfer(m, np.zeros(6), E_b, jet="E")
        assert abs(np.trace(jet.d)) > 1e-10
        d, r, _, _ = conj_residual(jet.value)
        assert d <= 1e-10 and r <= 1e-10
        done += 1


def test_edge_data_anderson():
    m = anderson_model()
    e = edge_data(m.background, m.disorder, 2.0)
    assert (e.x, e.inward, e.edge_sign) == (1.0, -1, 1)
    assert e.x_sigma_m2 == pytest.approx(1 / 3)
    sig = np.array([[0.0, 0.7], [0.0, -0.2]])
    assert np.allclose(x_sigma(e, m.disorder, sig), -sig[:, 1])
    e = edge_data(m.background, m.disorder, -2.0)
    assert (e.x, e.inward) == (1.0, 1)


def test_edge_data_hopping_disorder_fd():
    bg = PeriodicBackground((1.0,), (0.0,))
    dis = DisorderSpec((1.0,), (0.0,))
    e = edge_data(bg, dis, 2.0)
    h = 1e-5
    for s in (0.3, -0.8):
        sig = np.array([s, 0.0])
        tr = lambda lam: np.trace(cell_transfer(ModelInstance(bg, dis, lam), sig, 2.0).value)
        # one-sided, second order (the coupling cannot go negative)
        fd = (-3 * tr(0.0) + 4 * tr(h) - tr(2 * h)) / (2 * h)
        assert x_sigma(e, dis, sig)[0] == pytest.approx(fd, rel=1e-6)


def test_edge_data_errors():
    bg = PeriodicBackground((1.0,), (0.0,))
    with pytest.raises(TransferError):
        edge_data(bg, DisorderSpec.anderson(1), 1.0)
    with pytest.raises(TransferError):
        edge_data(bg, DisorderSpec((0.0,), (0.0,)), 2.0)
    bg2 = PeriodicBackground((1, 1), (0, 0))
    with pytest.raises(TransferError):
        edge_data(bg2, DisorderSpec.anderson(2), 0.0)


def test_trace_conjugation_invariance():
    rng = np.random.default_rng(2)
    T = np.array([[2.0, -1.0], [1.0, 0.0]])
    N, _ = jordan_basis(T)
    for _ in range(20):
        m = random_model(rng, L=1, lam=0.1)
        A = cell_transfer(m, rng.uniform(-1, 1, 2), rng.uniform(-2, 2)).value
        assert np.trace(N @ A @ np.linalg.inv(N)) == pytest.approx(np.trace(A), abs=1e-10)


def log_residual(edge, model, sig, lam, eta, eps, delta, kick_exp, drift_exp):
    """``log(+-M)`` minus the two leading normal-form terms."""
    M = rescaled_transfer(edge, model, sig, lam, eta, eps, delta)
    Lg = np.real(logm(edge.edge_sign * M))
    s = edge.jordan_sign
    xs = float(x_sigma(edge, model.disorder, sig)[0])
    lead = (lam**kick_exp * np.array([[0, 0], [edge.edge_sign * s * xs, 0]])
            + lam**drift_exp * np.array([[0, s], [edge.edge_sign * s * eps * edge.x, 0]]))
    return np.abs(Lg - lead).max()


@pytest.mark.parametrize("E_b", [2.0, -2.0])
def test_second_order_normal_form_log(E_b):
    m = anderson_model()
    e = edge_data(m.background, m.disorder, E_b)
    lam = 1e-4
    for eps in (-1.0, 0.0, 1.0):
        for v in (-0.9, 0.4):
            r = log_residual(e, m, np.array([0.0, v]), lam, 4 / 3, eps, 2 / 3, 1 / 3, 2 / 3)
            assert r <= 10 * lam


def test_first_order_normal_form_log():
    m = anderson_model()
    e = edge_data(m.background, m.disorder, 2.0)
    lam = 1e-4
    r = log_residual(e, m, np.zeros(2), lam, 1.0, 0.0, 0.5, 0.5, 0.5)
    assert r <= 10 * lam
    for v in (-0.7, 0.5):
        r = log_residual(e, m, np.array([0.0, v]), lam, 1.0, -1.0, 0.5, 0.5, 0.5)
        assert r <= 10 * lam


def test_normal_form_log_period_three():
    rng = np.random.default_rng(4)
    bg = PeriodicBackground((1.0, 0.7, 1.4), (0.3, -0.4, 0.0))
    m = ModelInstance(bg, DisorderSpec((0.2, 0.0, 0.1), (1.0, 0.5, -0.3)), 0.0)
    lam = 1e-4
    for E_b, _ in band_edges(bg, (-5, 5)):
        e = edge_data(bg, m.disorder, E_b)
        sig = rng.uniform(-1, 1, 6)
        # residual scale absorbs the size of the background coefficients
        scale = max(1.0, abs(e.x), float(np.abs(e.N).max()) ** 2)
        r = log_residual(e, m, sig, lam, 4 / 3, 0.5, 2 / 3, 1 / 3, 2 / 3)
        assert r <= 10 * lam * scale**2


def test_rescaled_limit_and_guards():
    m = anderson_model()
    e = edge_data(m.background, m.disorder, 2.0)
    M = rescaled_transfer(e, m, np.array([0.0, 0.5]), 1e-6, 1.0, 0.0, 0.5)
    # the Jordan entry is exactly lam**(1/2) = 1e-3
    assert np.abs(M - np.eye(2)).max() <= 1e-3 * (1 + 1e-9)
    with pytest.raises(TransferError):
        rescaled_transfer(e, m, np.zeros(2), 1e-3, 1.0, 0.0, 1.0)
    with pytest.raises(TransferError, match="out of range"):
        rescaled_transfer(e, m, np.array([0.0, 1.0]), 1e14, 1.0, 0.0, 0.9)
