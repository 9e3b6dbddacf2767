import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmh import circuits as cz
from qmh.markov import acceptance_matrix, build_double_well, build_ising, gibbs_distribution
from qmh.sim import (Circuit, Phase, RegisterLayout, Statevector, X, circuit_to_matrix,
                     marginal_distribution, postselect, run)
from qmh.walks import (WalkSpace, circuit_on_walk_space, reference_boxtimes, seed_input,
                       target_input)

VARPHI = 1.0472


def oracle_layout(instance):
    n = instance.n_bits
    return RegisterLayout((("x", n), ("y", n), ("c", cz.coin_width(instance)),
                           ("d", cz.scratch_width(instance))))


def run_ot(instance, x):
    lay = oracle_layout(instance)
    out = run(cz.build_ot(instance, lay), Statevector.basis(lay, x=x))
    return lay, out


@pytest.mark.parametrize("x", range(16))
def test_grid_proposal_oracle(dw, x):
    lay, out = run_ot(dw, x)
    amps = out.amplitudes
    want = {lay.basis_index(x=x, y=y): 0.5 for y in dw.neighbors[x]}
    got = {int(k): amps[k] for k in np.flatnonzero(np.abs(amps) > 1e-12)}
    assert set(got) == set(want)
    assert all(abs(got[k] - 0.5) < 1e-12 for k in got)  # ancillas clean, amplitudes 1/2


def test_grid_oracle_origin_neighbours(dw):
    lay, out = run_ot(dw, 0)
    p = marginal_distribution(out, "y")
    targets = {i + 4 * j for i, j in [(1, 0), (3, 0), (0, 1), (0, 3)]}
    assert set(np.flatnonzero(p > 1e-12)) == targets
    assert np.allclose(p[list(targets)], 0.25)
    # wraparound from i = 3
    lay, out = run_ot(dw, 3)
    assert marginal_distribution(out, "y")[0] == pytest.approx(0.25)


def test_grid_oracle_needs_scratch(dw):
    lay = RegisterLayout((("x", 4), ("y", 4), ("c", 2), ("d", 0)))
    with pytest.raises(cz.LayoutError):
        cz.build_ot_grid(lay)


@pytest.mark.parametrize("x", [0, 5, 9, 15])
def test_ising_proposal_oracle(ising4, x):
    lay, out = run_ot(ising4, x)
    amps = out.amplitudes
    nz = np.flatnonzero(np.abs(amps) > 1e-12)
    assert sorted(nz.tolist()) == sorted(lay.basis_index(x=x, y=x ^ (1 << k)) for k in range(4))
    assert np.allclose(amps[nz], 0.5, atol=1e-12)
    assert marginal_distribution(out, "c")[0] == pytest.approx(1.0, abs=1e-12)


def test_ising_coin_width_rule():
    with pytest.raises(cz.LayoutError):
        cz.coin_width(build_ising(3))
    assert cz.coin_width(build_ising(2)) == 1


def test_reduced_grid_oracle(dw2):
    for x in range(4):
        lay, out = run_ot(dw2, x)
        nz = np.flatnonzero(np.abs(out.amplitudes) > 1e-12)
        assert sorted(nz.tolist()) == sorted(lay.basis_index(x=x, y=y) for y in dw2.neighbors[x])
        assert np.allclose(out.amplitudes[nz], math.sqrt(0.5))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 15), st.integers(0, 15))
def test_property_oracle_inverse_cleans_ancillas(x, y0):
    # any valid input (y=c=d=0) maps back under the inverse; other y values are
    # just shifted copies and must stay normalised
    dw = build_double_well(4)
    lay = oracle_layout(dw)
    C = cz.build_ot(dw, lay)
    psi = Statevector.basis(lay, x=x, y=y0)
    out = run(C, psi)
    assert abs(out.norm() - 1) < 1e-12
    assert np.allclose(run(C.inverse(), out).amplitudes, psi.amplitudes, atol=1e-12)


def acceptance_layout(instance):
    n = instance.n_bits
    return RegisterLayout((("x", n), ("y", n), ("z", n), ("xc", n), ("a", 1)))


def test_acceptance_oracle_amplitudes(dw):
    lay = acceptance_layout(dw)
    A = acceptance_matrix(dw)
    C = cz.build_acceptance(dw, lay, starred=True)
    uphill = [(x, y) for x, y in dw.edges() if dw.energies[y] - dw.energies[x] == 1]
    flat = [(x, y) for x, y in dw.edges() if A[x, y] == 1]
    for x, y in uphill[:3] + flat[:3]:
        out = run(C, Statevector.basis(lay, x=x, y=y, z=x))
        p1 = marginal_distribution(out, "a")[1]
        assert p1 == pytest.approx(A[x, y], abs=1e-10)
        if A[x, y] == 1:
            # accepted branch moved z onto y
            assert abs(out.amplitudes[lay.basis_index(x=x, y=y, z=y, a=1)]) == pytest.approx(1)
    x, y = uphill[0]
    assert marginal_distribution(run(C, Statevector.basis(lay, x=x, y=y, z=x)), "a")[1] == pytest.approx(
        math.exp(-1), abs=1e-10)
    # guard: z != x leaves the state alone
    psi = Statevector.basis(lay, x=x, y=y, z=(x + 1) % 16)
    assert np.allclose(run(C, psi).amplitudes, psi.amplitudes)
    # non-edge: zero acceptance, identity
    non = next(v for v in range(16) if v not in dw.neighbors[0] and v != 0)
    psi = Statevector.basis(lay, x=0, y=non, z=0)
    assert np.allclose(run(C, psi).amplitudes, psi.amplitudes)


def test_acceptance_angle_values(dw):
    ang = cz.acceptance_angles(dw)
    A = acceptance_matrix(dw)
    for (x, y), th in ang.items():
        assert math.sin(th / 2) ** 2 == pytest.approx(A[x, y], abs=1e-14)
    assert any(th == pytest.approx(math.pi) for th in ang.values())


@pytest.fixture(scope="module", params=["dw2", "ising2"])
def reduced(request):
    inst = request.getfixturevalue(request.param)
    lay = cz.walk_layout(inst)
    space = WalkSpace(inst, lay)
    B = cz.build_boxtimes(inst, lay)
    Bref = reference_boxtimes(inst, space).toarray()
    return inst, lay, space, B, Bref


def embed(space, lay, v):
    full = np.zeros(lay.dim, dtype=complex)
    full[space.to_layout_indices(lay)] = v
    return full


def test_boxtimes_matches_matrix_elements(reduced):
    inst, lay, space, B, Bref = reduced
    Bc = circuit_on_walk_space(B, space, lay)
    emb = space.input_to_layout_indices(lay)
    inpos = np.searchsorted(space.to_layout_indices(lay), emb)
    assert np.array_equal(space.to_layout_indices(lay)[inpos], emb)
    assert np.max(np.abs(Bc[:, inpos] - Bref)) < 1e-12
    assert np.max(np.abs(Bref.T @ Bref - np.eye(space.in_dim))) < 1e-10
    Pi = Bref @ Bref.T
    assert np.max(np.abs(Pi @ Pi - Pi)) < 1e-10


def test_walk_matches_dense_definition(reduced):
    inst, lay, space, B, Bref = reduced
    W = circuit_on_walk_space(cz.build_walk(inst, lay, B), space, lay)
    assert np.max(np.abs(W.conj().T @ W - np.eye(space.dim))) < 1e-10  # no leakage out of the block
    S = np.eye(space.dim)[space.swap_perm]
    ref = (2 * Bref @ Bref.T - np.eye(space.dim)) @ S
    assert np.max(np.abs(W - ref)) < 1e-9
    t = Bref @ target_input(inst)
    assert np.max(np.abs(W @ (W @ t) - t)) < 1e-9
    Pi = Bref @ Bref.T
    assert np.linalg.norm(Pi @ W - W @ Pi, 2) > 0.01


def test_penalty_operator(reduced):
    inst, lay, space, B, Bref = reduced
    assert len(cz.build_penalty(inst, lay, 0.0, B)) == 0
    Pen = circuit_on_walk_space(cz.build_penalty(inst, lay, VARPHI, B), space, lay)
    Pi = Bref @ Bref.T
    ref = Pi + np.exp(1j * VARPHI) * (np.eye(space.dim) - Pi)
    assert np.max(np.abs(Pen - ref)) < 1e-10
    t = Bref @ target_input(inst)
    assert np.max(np.abs(Pen @ t - t)) < 1e-12
    rng = np.random.default_rng(0)
    v = rng.normal(size=space.dim) + 0j
    v -= Pi @ v
    assert np.max(np.abs(Pen @ v - np.exp(1j * VARPHI) * v)) < 1e-10


def test_fused_penalised_walk(reduced):
    inst, lay, space, B, Bref = reduced
    fused = circuit_on_walk_space(cz.build_penalised_walk(inst, lay, VARPHI, True, B), space, lay)
    plain = circuit_on_walk_space(cz.build_penalised_walk(inst, lay, VARPHI, False, B), space, lay)
    assert np.max(np.abs(fused - plain)) < 1e-10


def test_builder_round_trips(reduced):
    inst, lay, space, B, Bref = reduced
    rng = np.random.default_rng(1)
    psi = rng.normal(size=lay.dim) + 1j * rng.normal(size=lay.dim)
    psi = Statevector(psi / np.linalg.norm(psi), lay)
    for C in (B, cz.build_walk(inst, lay, B), cz.build_decoding(inst, lay), cz.build_seed(inst, lay, B),
              cz.build_penalised_walk(inst, lay, VARPHI, boxtimes=B)):
        back = run(C.inverse(), run(C, psi))
        assert np.max(np.abs(back.amplitudes - psi.amplitudes)) < 1e-10


def test_decoding_gives_pi(reduced):
    inst, lay, space, B, Bref = reduced
    t = embed(space, lay, Bref @ target_input(inst))
    out = run(cz.build_decoding(inst, lay), Statevector(t, lay))
    pi = gibbs_distribution(inst).probs
    assert np.max(np.abs(marginal_distribution(out, "x") - pi)) < 1e-10
    for r in ("y", "z", "xc", "a", "c"):
        assert marginal_distribution(out, r)[0] == pytest.approx(1, abs=1e-10)
    assert marginal_distribution(out, "b")[0] == pytest.approx(0.5, abs=1e-10)


def test_seed_state(reduced):
    inst, lay, space, B, Bref = reduced
    s = cz.seed_state(inst, lay, B)
    ref = embed(space, lay, Bref @ seed_input(inst))
    assert np.max(np.abs(s.amplitudes - ref)) < 1e-12
    v = s.amplitudes[space.to_layout_indices(lay)]
    Pi = Bref @ Bref.T
    assert np.max(np.abs(Pi @ v - v)) < 1e-10
    t = Bref @ target_input(inst)
    assert abs(np.vdot(t, v)) ** 2 > 0


def test_seed_edge_amplitudes(dw):
    lay = oracle_layout(dw)
    from qmh.sim import CircuitBuilder, H
    cb = CircuitBuilder(lay.n_qubits)
    for q in lay.qubits("x"):
        cb.add(H(q))
    out = run(cb.build() + cz.build_ot(dw, lay), Statevector.basis(lay)).amplitudes
    nz = np.flatnonzero(np.abs(out) > 1e-12)
    assert nz.size == 64 and np.allclose(np.abs(out[nz]), 1 / 8)


def test_full_layout_sizes(dw, ising4):
    assert cz.walk_layout(dw).n_qubits == 23
    assert cz.walk_layout(ising4).n_qubits == 21
    assert cz.walk_layout(dw, 4).n_qubits == 27
    assert cz.walk_layout(dw, 1).n_qubits == 24


def toy_qpe_layout(m):
    return RegisterLayout((("s", 1), ("p", m)))


@pytest.mark.parametrize("m", [1, 2, 3])
def test_qpe_exact_phases(m):
    lay = toy_qpe_layout(m)
    V = Circuit(lay.n_qubits, (Phase(0, 2 * math.pi / 2**m),))
    qpe = cz.build_qpe(V, lay)
    out = run(qpe, Statevector.basis(lay, s=0))
    assert marginal_distribution(out, "p")[0] == pytest.approx(1, abs=1e-12)
    out = run(qpe, Statevector.basis(lay, s=1))
    assert marginal_distribution(out, "p")[1] == pytest.approx(1, abs=1e-12)


def test_qpe_needs_phase_register():
    lay = RegisterLayout((("s", 1),))
    with pytest.raises(cz.LayoutError):
        cz.build_qpe(Circuit(1, ()), lay)


def test_semiclassical_examples():
    lay = toy_qpe_layout(1)
    q = lay.qubits("p")[0]
    V = Circuit(lay.n_qubits, (Phase(0, math.pi),))  # eigenphases 0 and pi
    psi = Statevector(np.array([1, 1, 0, 0], complex) / math.sqrt(2), lay)
    out, prob, rounds = cz.run_semiclassical_qpe(V, 1, psi, q)
    assert prob == pytest.approx(0.5, abs=1e-12) and rounds == pytest.approx([0.5])
    assert np.allclose(out.amplitudes, [1, 0, 0, 0])
    out, prob, rounds = cz.run_semiclassical_qpe(V, 3, Statevector.basis(lay), q)
    assert prob == pytest.approx(1) and rounds == pytest.approx([1, 1, 1])


@pytest.mark.parametrize("m", [1, 2, 3])
def test_semiclassical_matches_coherent_toy(m):
    lay_c = toy_qpe_layout(m)
    rng = np.random.default_rng(m)
    theta = rng.uniform(0, 2 * math.pi)
    a = rng.normal(size=2) + 1j * rng.normal(size=2)
    a /= np.linalg.norm(a)
    coh = np.zeros(lay_c.dim, complex)
    coh[:2] = a
    Vc = Circuit(lay_c.n_qubits, (Phase(0, theta), X(0), Phase(0, 0.3), X(0)))
    out, pc = postselect(run(cz.build_qpe(Vc, lay_c), Statevector(coh, lay_c)), lay_c.qubits("p"), "0" * m)
    lay_s = toy_qpe_layout(1)
    semi = np.zeros(4, complex)
    semi[:2] = a
    Vs = Circuit(2, Vc.gates)
    res, ps, _ = cz.run_semiclassical_qpe(Vs, m, Statevector(semi, lay_s), 1)
    assert ps == pytest.approx(pc, abs=1e-12)
    assert np.max(np.abs(res.amplitudes[:2] - out.amplitudes[:2])) < 1e-12


def test_circuit_text_export(dw2):
    lay = cz.walk_layout(dw2)
    txt = cz.build_boxtimes(dw2, lay).to_text()
    lines = txt.splitlines()
    assert lines and all(len(l.split()) == 5 for l in lines)
    assert {l.split()[0] for l in lines} <= {"X", "H", "RY", "SWAP", "P"}


def test_ot_matrix_is_isometric_on_clean_inputs(dw2):
    lay = oracle_layout(dw2)
    M = circuit_to_matrix(cz.build_ot(dw2, lay))
    cols = [lay.basis_index(x=x) for x in range(4)]
    sub = M[:, cols]
    assert np.max(np.abs(sub.conj().T @ sub - np.eye(4))) < 1e-10
