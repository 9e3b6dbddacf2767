"""Gate-level oracles, walk, penalty, phase estimation and decoding circuits.

Register order (least significant first): x, y, z, xc, b, a, c, d, flag, p.
``(x, y)`` hold the input edge, ``(z, xc)`` the second edge register, ``b``
selects between the two encodings, ``a`` carries the acceptance amplitude,
``c`` is the proposal coin, ``d`` the direction scratch and ``flag`` the
membership bit used by the penalty.  ``p`` is the phase register.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .markov import ProblemInstance, acceptance_matrix
from .sim import (Circuit, CircuitBuilder, EmptyPostselectionError, H, Phase, RY,
                  RegisterLayout, SUB, SWAP, Statevector, X, apply_gate, postselect,
                  run, run_rows, DEFAULT_SIM_CAP)


class LayoutError(ValueError):
    pass


# layouts ---------------------------------------------------------------------

def coin_width(instance: ProblemInstance) -> int:
    if instance.kind == "double-well":
        return 2 if instance.grid_side > 2 else 1
    n = instance.n_spins
    w = int(round(math.log2(n)))
    if 2**w != n:
        raise LayoutError(f"spin count {n} is not a power of two; a uniform coin needs log2(n) qubits")
    return w


def scratch_width(instance: ProblemInstance) -> int:
    return coin_width(instance) if instance.kind == "double-well" else 0


def walk_layout(instance: ProblemInstance, phase_qubits: int = 0,
                sim_cap: int = DEFAULT_SIM_CAP) -> RegisterLayout:
    n = instance.n_bits
    regs = (("x", n), ("y", n), ("z", n), ("xc", n), ("b", 1), ("a", 1),
            ("c", coin_width(instance)), ("d", scratch_width(instance)), ("flag", 1),
            ("p", phase_qubits))
    return RegisterLayout(regs, sim_cap)


def _pattern(qubits: Sequence[int], value: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return tuple(qubits), tuple((value >> k) & 1 for k in range(len(qubits)))


def _copy(cb: CircuitBuilder, src: Sequence[int], dst: Sequence[int], controls=(), pol=()):
    for s, d in zip(src, dst):
        cb.add(X(d, (s,) + tuple(controls), (1,) + tuple(pol)))


def _swap_regs(cb: CircuitBuilder, r1: Sequence[int], r2: Sequence[int], controls=(), pol=()):
    for a, b in zip(r1, r2):
        cb.add(SWAP(a, b, controls, pol))


def _increment(cb: CircuitBuilder, reg: Sequence[int], controls, pol, sign: int):
    """Add ``sign`` (+1/-1) modulo 2**len(reg); carries ripple through MCX gates."""
    k = len(reg)
    for top in range(k - 1, -1, -1):
        lower = tuple(reg[:top])
        lp = (1 if sign > 0 else 0,) * top
        cb.add(X(reg[top], lower + tuple(controls), lp + tuple(pol)))


# proposal oracles --------------------------------------------------------------

def build_ot_grid(layout: RegisterLayout, src: str = "x", dst: str = "y",
                  instance: ProblemInstance | None = None) -> Circuit:
    """Torus proposal: |s>|0>|0>|0> -> sum_{t in N(s)} |s>|t>/2 with coin and scratch clean."""
    if not layout.has("d"):
        raise LayoutError("grid proposal oracle needs the scratch register d")
    S, D, C, Dd = (layout.qubits(r) for r in (src, dst, "c", "d"))
    k = len(S) // 2
    si, sj, di, dj = S[:k], S[k:], D[:k], D[k:]
    cb = CircuitBuilder(layout.n_qubits, f"OT[{src}->{dst}]")
    _copy(cb, S, D)
    for q in C:
        cb.add(H(q))
    if len(C) == 1:
        # 2x2 torus: +1 and -1 coincide, the coin only picks the axis
        cb.add(X(di[0], (C[0],), (0,)), X(dj[0], (C[0],), (1,)))
        cb.add(X(Dd[0], (dj[0], sj[0]), (1, 0)), X(Dd[0], (dj[0], sj[0]), (0, 1)))
        cb.add(X(C[0], (Dd[0],)))
        cb.add(X(Dd[0], (dj[0], sj[0]), (0, 1)), X(Dd[0], (dj[0], sj[0]), (1, 0)))
        return cb.build()
    # coin |c0 c1>: c0 picks the axis (0: i, 1: j), c1 the sign (0: +1, 1: -1)
    for axis, reg in ((0, di), (1, dj)):
        for sgn_bit, sign in ((0, +1), (1, -1)):
            _increment(cb, reg, (C[0], C[1]), (axis, sgn_bit), sign)
    # direction scratch: after dst ^= src the moved axis is visible in bit 0,
    # and the sign is (xor bit 1) ^ (source bit 0)
    body = CircuitBuilder(layout.n_qubits)
    _copy(body, S, D)
    body.add(X(Dd[0], (dj[0],)))
    body.add(X(Dd[1], (di[1], Dd[0]), (1, 0)), X(Dd[1], (si[0], Dd[0]), (1, 0)))
    body.add(X(Dd[1], (dj[1], Dd[0]), (1, 1)), X(Dd[1], (sj[0], Dd[0]), (1, 1)))
    body = body.build()
    cb.extend(body)
    cb.add(X(C[0], (Dd[0],)), X(C[1], (Dd[1],)))
    cb.extend(body.inverse())
    return cb.build()


def build_ot_ising(layout: RegisterLayout, src: str = "x", dst: str = "y",
                   instance: ProblemInstance | None = None) -> Circuit:
    """Single-spin-flip proposal; coin value k flips spin k."""
    S, D, C = (layout.qubits(r) for r in (src, dst, "c"))
    n = len(S)
    if 2 ** len(C) != n:
        raise LayoutError(f"coin of width {len(C)} cannot address {n} spins uniformly")
    cb = CircuitBuilder(layout.n_qubits, f"OT[{src}->{dst}]")
    _copy(cb, S, D)
    for q in C:
        cb.add(H(q))
    for k in range(n):
        ctl, pol = _pattern(C, k)
        cb.add(X(D[k], ctl, pol))
    # dst ^ src is one-hot at the flipped spin; fold its index back into the coin
    _copy(cb, S, D)
    for j, cq in enumerate(C):
        for k in range(n):
            if (k >> j) & 1:
                cb.add(X(cq, (D[k],)))
    _copy(cb, S, D)
    return cb.build()


def build_ot(instance: ProblemInstance, layout: RegisterLayout, src="x", dst="y") -> Circuit:
    if instance.kind == "double-well":
        return build_ot_grid(layout, src, dst)
    return build_ot_ising(layout, src, dst)


# acceptance --------------------------------------------------------------------

def acceptance_angles(instance: ProblemInstance) -> dict[tuple[int, int], float]:
    A = acceptance_matrix(instance)
    if np.any(A < -1e-15) or np.any(A > 1 + 1e-15):
        raise ValueError("acceptance probabilities outside [0, 1]")
    return {(x, y): 2.0 * math.asin(math.sqrt(min(1.0, A[x, y])))
            for x, y in instance.edges() if A[x, y] > 0}


def _rotation_core(instance, layout) -> list:
    """Edge-pattern-controlled R_y on ``a``, guarded by z == x.

    The guard is folded into the control pattern (z must equal the same state
    as x), which realises the equality condition without a comparator qubit.
    """
    Xr, Yr, Zr = (layout.qubits(r) for r in ("x", "y", "z"))
    a = layout.qubits("a")[0]
    gates = []
    for (p, q), theta in acceptance_angles(instance).items():
        c1, p1 = _pattern(Xr, p)
        c2, p2 = _pattern(Yr, q)
        c3, p3 = _pattern(Zr, p)
        gates.append(RY(a, theta, c1 + c2 + c3, p1 + p2 + p3))
    return gates


def build_acceptance(instance: ProblemInstance, layout: RegisterLayout, starred: bool) -> Circuit:
    """Acceptance oracle for the plain (``starred=False``) or starred encoding.

    Plain: expects z = t (proposed head) and xc = x; the rotation reads the
    edge (x, t) and afterwards z holds t on acceptance, x on rejection.
    Starred: expects z = x, rotates by A(x, y) and on acceptance moves z to y.
    """
    Yr, Zr, XCr, Xr = (layout.qubits(r) for r in ("y", "z", "xc", "x"))
    a = layout.qubits("a")[0]
    cb = CircuitBuilder(layout.n_qubits, "OA*" if starred else "OA")
    if starred:
        cb.add(*_rotation_core(instance, layout))
        _copy(cb, Xr, Zr, (a,), (1,))
        _copy(cb, Yr, Zr, (a,), (1,))
    else:
        _swap_regs(cb, Zr, XCr)
        _swap_regs(cb, Yr, XCr)
        cb.add(*_rotation_core(instance, layout))
        _swap_regs(cb, Yr, XCr)
        _swap_regs(cb, Zr, XCr, (a,), (1,))
    return cb.build()


# encodings -------------------------------------------------------------------

def build_square(instance, layout) -> Circuit:
    """Plain encoding: |x,y>|0> -> sum_t |x,y> (sqrt(TA)|t,x,1> + sqrt(T(1-A))|x,t,0>)."""
    cb = CircuitBuilder(layout.n_qubits, "box")
    _copy(cb, layout.qubits("x"), layout.qubits("xc"))
    cb.extend(build_ot(instance, layout, "xc", "z"))
    cb.extend(build_acceptance(instance, layout, starred=False))
    return cb.build()


def build_square_star(instance, layout) -> Circuit:
    """Starred encoding: |x,y>|0> -> sqrt(A)|y,s,1> sqrt(T(y,s)) + sqrt(1-A)|x,s,0> sqrt(T(x,s))."""
    cb = CircuitBuilder(layout.n_qubits, "box*")
    _copy(cb, layout.qubits("x"), layout.qubits("z"))
    cb.extend(build_acceptance(instance, layout, starred=True))
    cb.extend(build_ot(instance, layout, "z", "xc"))
    return cb.build()


def build_boxtimes(instance, layout) -> Circuit:
    b = layout.qubits("b")[0]
    return (build_square_star(instance, layout).controlled((b,), (0,))
            + build_square(instance, layout).controlled((b,), (1,)))


def _membership_phase(layout, theta) -> Circuit:
    """Phase e^{i theta} on every state whose encoding ancillas are not all zero."""
    anc = sum((layout.qubits(r) for r in ("z", "xc", "a", "c", "d")), ())
    f = layout.qubits("flag")[0]
    test = X(f, anc, (0,) * len(anc))
    cb = CircuitBuilder(layout.n_qubits, "membership")
    cb.add(test, X(f), Phase(f, theta), X(f), test)
    return cb.build()


def build_penalty(instance, layout, varphi: float, boxtimes: Circuit | None = None) -> Circuit:
    """Pi + e^{i varphi} (I - Pi) with Pi the projector onto the encoded subspace."""
    if varphi % (2 * math.pi) == 0:
        return Circuit(layout.n_qubits, (), "penalty")
    B = boxtimes if boxtimes is not None else build_boxtimes(instance, layout)
    return B.inverse() + _membership_phase(layout, varphi) + B


def build_swap_walk(layout) -> Circuit:
    """X on b followed by the exchange (x, y) <-> (z, xc)."""
    cb = CircuitBuilder(layout.n_qubits, "XS")
    cb.add(X(layout.qubits("b")[0]))
    _swap_regs(cb, layout.qubits("x"), layout.qubits("z"))
    _swap_regs(cb, layout.qubits("y"), layout.qubits("xc"))
    return cb.build()


def build_walk(instance, layout, boxtimes: Circuit | None = None) -> Circuit:
    """(2 Pi - I)(X (x) S); the reflection is the membership phase at pi."""
    B = boxtimes if boxtimes is not None else build_boxtimes(instance, layout)
    return build_swap_walk(layout) + B.inverse() + _membership_phase(layout, math.pi) + B


def build_penalised_walk(instance, layout, varphi: float, fused: bool = True,
                         boxtimes: Circuit | None = None) -> Circuit:
    """Penalty after walk.  ``fused`` merges the two B^dag..B sandwiches into one,
    since both phases are diagonal in the same basis (phase pi + varphi outside)."""
    B = boxtimes if boxtimes is not None else build_boxtimes(instance, layout)
    if not fused:
        return build_walk(instance, layout, B) + build_penalty(instance, layout, varphi, B)
    return (build_swap_walk(layout) + B.inverse()
            + _membership_phase(layout, math.pi + varphi) + B)


# state preparation and decoding ------------------------------------------------

def build_seed(instance, layout, boxtimes: Circuit | None = None) -> Circuit:
    """|0> -> B |+> sum_x |x> sum_y sqrt(T(x,y)) |y> / sqrt|E|."""
    cb = CircuitBuilder(layout.n_qubits, "seed")
    cb.add(H(layout.qubits("b")[0]))
    for q in layout.qubits("x"):
        cb.add(H(q))
    cb.extend(build_ot(instance, layout, "x", "y"))
    cb.extend(boxtimes if boxtimes is not None else build_boxtimes(instance, layout))
    return cb.build()


def seed_state(instance, layout, boxtimes: Circuit | None = None) -> Statevector:
    if 2**instance.n_bits != instance.state_count:
        raise LayoutError("state count must fill the register")
    psi = Statevector.basis(layout)
    return run(build_seed(instance, layout, boxtimes), psi, inplace=True)


def build_decoding(instance, layout) -> Circuit:
    """b=0 swap of the edge registers, inverse plain encoding, inverse proposal."""
    b = layout.qubits("b")[0]
    cb = CircuitBuilder(layout.n_qubits, "decode")
    _swap_regs(cb, layout.qubits("x"), layout.qubits("z"), (b,), (0,))
    _swap_regs(cb, layout.qubits("y"), layout.qubits("xc"), (b,), (0,))
    cb.extend(build_square(instance, layout).inverse())
    cb.extend(build_ot(instance, layout, "x", "y").inverse())
    return cb.build()


# phase estimation ----------------------------------------------------------------

def build_qft(qubits: Sequence[int], n_qubits: int) -> Circuit:
    """QFT |j> -> sum_k e^{2 pi i jk/2^m} |k> / 2^{m/2}, qubits[0] least significant."""
    m = len(qubits)
    cb = CircuitBuilder(n_qubits, "qft")
    for hi in range(m - 1, -1, -1):
        cb.add(H(qubits[hi]))
        for lo in range(hi - 1, -1, -1):
            cb.add(Phase(qubits[hi], math.pi / 2 ** (hi - lo), (qubits[lo],)))
    for k in range(m // 2):
        cb.add(SWAP(qubits[k], qubits[m - 1 - k]))
    return cb.build()


def build_qpe(V: Circuit, layout: RegisterLayout) -> Circuit:
    """Hadamards, controlled V^(2^k) on phase qubit k, inverse QFT."""
    P = layout.qubits("p") if layout.has("p") else ()
    if not P:
        raise LayoutError("layout has no phase register")
    cb = CircuitBuilder(layout.n_qubits, "qpe")
    for q in P:
        cb.add(H(q))
    for k, q in enumerate(P):
        cb.add(SUB(V, (q,), (1,), power=2**k))
    cb.extend(build_qft(P, layout.n_qubits).inverse())
    return cb.build()


def run_semiclassical_qpe(V: Circuit, m: int, state: Statevector, qubit: int,
                          inplace: bool = False, cache: dict | None = None
                          ) -> tuple[Statevector, float, list[float]]:
    """Recycled single-ancilla estimation under all-zero postselection.

    Round k (from m-1 down to 0) is H, controlled V^(2^k), H, then projection of
    the ancilla onto |0>.  With every outcome fixed to 0 the feed-forward phase
    corrections are all trivial and are left out.  Returns the final state, the
    total branch weight and the per-round weights.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    psi = state if inplace else state.copy()
    cache = {} if cache is None else cache
    rounds = []
    for k in range(m - 1, -1, -1):
        step = Circuit(psi.n_qubits, (H(qubit), SUB(V, (qubit,), (1,), power=2**k), H(qubit)))
        run_rows(step, psi, cache)
        psi, pr = postselect(psi, (qubit,), (0,), inplace=True)
        rounds.append(pr)
    return psi, float(np.prod(rounds)), rounds
