import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmh import circuits as cz
from qmh.experiments import ReducedWalk, degeneracy_check, discriminant_walk_check, walk_phases_on_span
from qmh.markov import build_ising, discriminant, gibbs_distribution, mh_kernel, spectral_gap
from qmh.sim import SimulationCapError
from qmh.walks import (EncodedSubspace, LinearOperatorHandle, PartialIsometryHandle, WalkSpace,
                       boxtimes_from_circuits, dual_walk, eigenphase_decomposition, hermitianize,
                       penalise, qubitized_walk, reference_boxtimes, seed_input, spectral_report,
                       swap_in_layout, synthetic_spue_of_discriminant, target_input)

VARPHI = 1.0472


def rand_unit(dim, rng):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def test_dilation_of_identity():
    U, box = synthetic_spue_of_discriminant(np.eye(3))
    assert np.allclose(U.matrix, np.block([[np.eye(3), np.zeros((3, 3))], [np.zeros((3, 3)), -np.eye(3)]]))


def test_dilation_rejects_bad_input():
    with pytest.raises(ValueError):
        synthetic_spue_of_discriminant(np.array([[0, 1], [0, 0]], float))
    with pytest.raises(ValueError):
        synthetic_spue_of_discriminant(2 * np.eye(2))


@pytest.mark.parametrize("name", ["dw", "ising4"])
def test_discriminant_walk_eigenpairs(name, request):
    inst = request.getfixturevalue(name)
    pi = gibbs_distribution(inst).probs
    D = discriminant(mh_kernel(inst), pi).matrix
    U, box = synthetic_spue_of_discriminant(D)
    Bd = box.dense()
    assert np.max(np.abs(Bd.T @ U.matrix @ Bd - D)) < 1e-12
    assert np.max(np.abs(U.matrix.T @ U.matrix - np.eye(2 * len(pi)))) < 1e-12
    W = qubitized_walk(U, box)
    top = Bd @ np.sqrt(pi)
    assert np.max(np.abs(W(top) - top)) < 1e-10
    chk = discriminant_walk_check(inst)
    assert chk["phase_error"] < 1e-9 and chk["gap_error"] < 1e-9
    assert chk["gap"] >= chk["sqrt_delta"]


def test_zero_eigenvalue_gives_quarter_turns():
    U, box = synthetic_spue_of_discriminant(np.diag([0.0, 1.0]))
    ph = spectral_report(qubitized_walk(U, box)).eigenphases
    assert np.sum(np.abs(np.abs(ph) - math.pi / 2) < 1e-12) == 2


@pytest.mark.parametrize("beta", [0.1, 0.5, 1.0, 2.0, 4.0])
def test_gap_over_beta_grid(beta):
    inst = build_ising(2, beta=beta)
    chk = discriminant_walk_check(inst)
    delta, lam2 = spectral_gap(mh_kernel(inst))
    assert chk["gap"] == pytest.approx(math.acos(lam2), abs=1e-9)
    assert chk["gap"] >= math.sqrt(delta)


def test_hermitianize_singular_values():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    A /= np.linalg.norm(A, 2) * 1.01
    # PUE of A via a unitary dilation with box_L = box_R = first block
    # Halmos dilation [[A, (I-AA^*)^{1/2}], [(I-A^*A)^{1/2}, -A^*]]
    import scipy.linalg as sl
    U = np.block([[A, sl.sqrtm(np.eye(4) - A @ A.conj().T)], [sl.sqrtm(np.eye(4) - A.conj().T @ A), -A.conj().T]])
    assert np.max(np.abs(U.conj().T @ U - np.eye(8))) < 1e-10
    E = np.vstack([np.eye(4), np.zeros((4, 4))])
    Ubar, box = hermitianize(U, E, E)
    Bb = box.dense()
    Abar = Bb.conj().T @ Ubar.matrix @ Bb
    assert np.max(np.abs(Abar - Abar.conj().T)) < 1e-12
    ev = np.sort(np.linalg.eigvalsh(Abar))
    sv = np.linalg.svd(A, compute_uv=False)
    assert np.max(np.abs(ev - np.sort(np.concatenate([sv, -sv])))) < 1e-10
    with pytest.raises(ValueError):
        hermitianize(U, E, np.eye(3))


def test_hermitianize_scalar_identity():
    Ubar, box = hermitianize(np.eye(1), np.eye(1), np.eye(1))
    Bb = box.dense()
    assert np.allclose(Bb.conj().T @ Ubar.matrix @ Bb, [[0, 1], [1, 0]])


def test_spectral_report_identity_and_cap():
    rep = spectral_report(np.eye(4), np.ones(4))
    assert rep.zero_multiplicity == 4 and math.isnan(rep.angular_gap)
    d = json.loads(rep.to_json())
    assert set(d) == {"eigenphases", "angular_gap", "zero_multiplicity", "target_overlap"}
    assert d["angular_gap"] is None and d["target_overlap"] == pytest.approx(1)
    with pytest.raises(SimulationCapError):
        spectral_report(np.eye(8), dense_cap=4)


@pytest.fixture(scope="module")
def rw_grid(dw2):
    return ReducedWalk(dw2, VARPHI)


@pytest.fixture(scope="module")
def rw_ising(ising2):
    return ReducedWalk(ising2, VARPHI)


def test_degeneracy_lifting(rw_grid):
    d = degeneracy_check(rw_grid)
    assert d["ker_W"] > 1
    assert d["ker_V"] == 1
    assert d["target_residual"] < 1e-9


@pytest.mark.parametrize("which", ["rw_grid", "rw_ising"])
def test_target_fixed_for_several_phases(which, request):
    rw = request.getfixturevalue(which)
    inst = rw.instance
    sub = EncodedSubspace(inst)
    for phi in (0.5, VARPHI, 2.0):
        V = sub.walk_matrix(phi)
        assert np.max(np.abs(V @ rw.target - rw.target)) < 1e-9
    assert np.max(np.abs(sub.walk_matrix(VARPHI) - rw.V)) < 1e-10


@pytest.mark.parametrize("which", ["rw_grid", "rw_ising"])
def test_handles_are_unitary(which, request):
    rw = request.getfixturevalue(which)
    rng = np.random.default_rng(7)
    for M in (rw.W, rw.V):
        h = LinearOperatorHandle.from_matrix(M)
        for _ in range(100):
            v = rand_unit(M.shape[0], rng)
            assert abs(np.linalg.norm(h(v)) - 1) < 1e-10


def test_circuit_backed_encoding_and_walk(dw2):
    lay = cz.walk_layout(dw2)
    box = boxtimes_from_circuits(dw2, lay)
    rng = np.random.default_rng(2)
    space = WalkSpace(dw2, lay)
    t = target_input(dw2)
    out = box.apply(t)
    assert abs(np.linalg.norm(out) - 1) < 1e-12
    # projector is Hermitian and idempotent on random vectors
    u, v = rand_unit(lay.dim, rng), rand_unit(lay.dim, rng)
    assert abs(np.vdot(u, box.projector(v)) - np.vdot(box.projector(u), v)) < 1e-10
    assert np.max(np.abs(box.projector(box.projector(v)) - box.projector(v))) < 1e-10
    W = dual_walk(box, swap_in_layout(lay), lay.dim)
    assert np.max(np.abs(W(out) - out)) < 1e-9
    for _ in range(5):
        v = rand_unit(lay.dim, rng)
        assert abs(np.linalg.norm(W(v)) - 1) < 1e-10
    V = penalise(W, box, VARPHI)
    assert np.max(np.abs(V(out) - out)) < 1e-9
    assert penalise(W, box, 0.0) is W
    with pytest.raises(ValueError):
        penalise(W, box, -1.0)


@pytest.mark.parametrize("name", ["dw2", "ising2", "dw", "ising4"])
def test_encoded_subspace_phases(name, request):
    inst = request.getfixturevalue(name)
    sub = EncodedSubspace(inst)
    G = sub.G
    assert np.max(np.abs(G - G.T)) < 1e-12
    ev = np.linalg.eigvalsh(G)
    assert ev.min() >= -1 - 1e-12 and ev.max() <= 1 + 1e-12
    assert np.sum(np.abs(ev - 1) < 1e-9) == 1  # one fixed point inside the encoded range
    t = target_input(inst)
    assert np.max(np.abs(G @ t - t)) < 1e-12


@pytest.mark.parametrize("name", ["dw2", "ising2"])
def test_span_phases_match_dense(name, request):
    inst = request.getfixturevalue(name)
    rw = ReducedWalk(inst, VARPHI)
    th, _ = eigenphase_decomposition(rw.V)
    k = walk_phases_on_span(EncodedSubspace(inst).G, VARPHI)
    dist = [np.min(np.abs(np.angle(np.exp(1j * (t - th))))) for t in k]
    assert max(dist) < 1e-9


@pytest.mark.parametrize("name", ["dw2", "ising2"])
def test_power_sums_match_dense_walk(name, request):
    inst = request.getfixturevalue(name)
    sub = EncodedSubspace(inst)
    V = sub.walk_matrix(VARPHI)
    psi = sub.B @ seed_input(inst)
    acc, v = np.zeros_like(psi), psi.copy()
    got = {m: (s, w) for m, s, w in sub.power_sums(seed_input(inst), [1, 2, 3], VARPHI)}
    for j in range(8):
        acc += v
        v = V @ v
        if j + 1 in (2, 4, 8):
            m = int(math.log2(j + 1))
            ref = acc / (j + 1)
            assert np.max(np.abs(got[m][0] - ref)) < 1e-12
            assert got[m][1] == pytest.approx(np.vdot(ref, ref).real, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 5.0))
def test_property_target_in_span_is_fixed(beta):
    inst = build_ising(2, beta=beta)
    sub = EncodedSubspace(inst)
    t = target_input(inst)
    a, b = sub.step(t, np.zeros_like(t), VARPHI)
    assert np.max(np.abs(sub.vector(a, b) - sub.vector(t, 0 * t))) < 1e-10


def test_reference_encoding_is_isometry(ising4):
    B = reference_boxtimes(ising4)
    BtB = (B.T @ B).toarray()
    assert np.max(np.abs(BtB - np.eye(B.shape[1]))) < 1e-12


def test_partial_isometry_dense():
    E = np.vstack([np.eye(2), np.zeros((2, 2))])
    h = PartialIsometryHandle(2, 4, lambda v: E @ v, lambda w: E.T @ w)
    assert np.array_equal(h.dense(), E)
    assert np.allclose(h.projector(np.ones(4)), [1, 1, 0, 0])
