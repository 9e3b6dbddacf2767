"""Operator handles, qubitized walks, the penalised walk and spectral reports.

Two realisations of the edge encoding live here.  ``boxtimes_from_circuits``
wraps the gate-level circuits; ``reference_boxtimes`` writes the same map down
from its matrix elements.  The latter also drives ``EncodedSubspace``, which
runs the walk on the span of the encoding and its swapped image.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .markov import (ProblemInstance, acceptance_matrix, dual_stationary,
                     gibbs_distribution)
from .sim import (Circuit, DEFAULT_DENSE_CAP, RegisterLayout, SimulationCapError,
                  run_array, run_batch)

log = logging.getLogger(__name__)

PHASE_TOL = 1e-8
NO_GAP = float("nan")  # sentinel when every eigenphase is zero


@dataclass(frozen=True)
class LinearOperatorHandle:
    dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    matrix: np.ndarray | None = None
    adjoint_apply: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    @classmethod
    def from_matrix(cls, M: np.ndarray, name: str = "") -> "LinearOperatorHandle":
        M = np.asarray(M, dtype=np.complex128)
        return cls(M.shape[0], lambda v: M @ v, M, lambda v: M.conj().T @ v, name)

    @classmethod
    def from_circuit(cls, circuit: Circuit, name: str = "") -> "LinearOperatorHandle":
        inv = circuit.inverse()
        return cls(1 << circuit.n_qubits,
                   lambda v: run_array(circuit, np.array(v, dtype=np.complex128)),
                   None,
                   lambda v: run_array(inv, np.array(v, dtype=np.complex128)),
                   name or circuit.name)

    def dense(self, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        if self.dim > dense_cap:
            raise SimulationCapError(
                f"dimension {self.dim} exceeds dense cap {dense_cap}; use a reduced instance")
        return np.column_stack([self.apply(e) for e in np.eye(self.dim, dtype=np.complex128)])

    @property
    def adjoint(self) -> "LinearOperatorHandle":
        if self.adjoint_apply is None:
            raise ValueError("adjoint not available")
        M = None if self.matrix is None else self.matrix.conj().T
        return LinearOperatorHandle(self.dim, self.adjoint_apply, M, self.apply, self.name + "^dag")


@dataclass(frozen=True)
class PartialIsometryHandle:
    domain_dim: int
    codomain_dim: int
    apply: Callable[[np.ndarray], np.ndarray]
    adjoint_apply: Callable[[np.ndarray], np.ndarray]
    matrix: np.ndarray | sp.spmatrix | None = None

    def projector(self, v: np.ndarray) -> np.ndarray:
        return self.apply(self.adjoint_apply(v))

    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            M = self.matrix
            return M.toarray() if sp.issparse(M) else M
        return np.column_stack([self.apply(e) for e in np.eye(self.domain_dim, dtype=np.complex128)])


@dataclass
class SpectralReport:
    eigenphases: np.ndarray
    angular_gap: float
    zero_multiplicity: int
    target_overlap: float | None = None

    def to_json(self) -> str:
        gap = None if math.isnan(self.angular_gap) else self.angular_gap
        return json.dumps({"eigenphases": [float(t) for t in self.eigenphases],
                           "angular_gap": gap,
                           "zero_multiplicity": self.zero_multiplicity,
                           "target_overlap": self.target_overlap})


# discriminant-level walk ----------------------------------------------------

def synthetic_spue_of_discriminant(D: np.ndarray) -> tuple[LinearOperatorHandle, PartialIsometryHandle]:
    """Block dilation [[D, R], [R, -D]] with R = sqrt(I - D^2) and |x> -> |x>|0>."""
    D = np.asarray(D, dtype=float)
    if np.max(np.abs(D - D.T)) > 1e-12:
        raise ValueError("D must be symmetric")
    ev, Q = np.linalg.eigh(D)
    if np.max(np.abs(ev)) > 1 + 1e-12:
        raise ValueError("||D||_2 > 1: rescale before encoding")
    # snap +-1 so that R vanishes exactly there; sqrt(1 - (1 - eps)^2) ~ 1e-8 otherwise
    ev = np.where(np.abs(np.abs(ev) - 1) < 1e-12, np.sign(ev), ev)
    R = (Q * np.sqrt(np.clip(1 - ev**2, 0, None))) @ Q.T
    U = np.block([[D, R], [R, -D]])
    n = D.shape[0]
    E = np.vstack([np.eye(n), np.zeros((n, n))])
    box = PartialIsometryHandle(n, 2 * n, lambda v: E @ v, lambda w: E.T @ w, E)
    return LinearOperatorHandle.from_matrix(U, "U"), box


def qubitized_walk(U: LinearOperatorHandle, box: PartialIsometryHandle) -> LinearOperatorHandle:
    """(2 box box^dag - I) U."""
    def apply(v):
        w = U(v)
        return 2 * box.projector(w) - w
    M = None
    if U.matrix is not None:
        B = box.dense()
        M = (2 * B @ B.conj().T - np.eye(U.dim)) @ U.matrix
    return LinearOperatorHandle(U.dim, apply, M, None, "walk")


def hermitianize(U: np.ndarray, box_left: np.ndarray, box_right: np.ndarray
                 ) -> tuple[LinearOperatorHandle, PartialIsometryHandle]:
    """Ubar = (|0><0| U + |1><1| U^dag)(X (x) I), boxbar = |0><0| boxL + |1><1| boxR."""
    U = np.asarray(U, dtype=np.complex128)
    if box_left.shape != box_right.shape or box_left.shape[0] != U.shape[0]:
        raise ValueError("encoding isometries must share a codomain matching U")
    n = U.shape[0]
    Z = np.zeros_like(U)
    Ubar = np.block([[Z, U], [U.conj().T, Z]])
    k = box_left.shape[1]
    Zb = np.zeros((n, k))
    Bbar = np.block([[box_left, Zb], [Zb, box_right]]).astype(np.complex128)
    box = PartialIsometryHandle(2 * k, 2 * n, lambda v: Bbar @ v, lambda w: Bbar.conj().T @ w, Bbar)
    return LinearOperatorHandle.from_matrix(Ubar, "Ubar"), box


# edge encoding -------------------------------------------------------------

class WalkSpace:
    """Registers x, y, z, xc, b, a with coin, scratch and flag at zero.

    Reduced index ``x + N y + N^2 z + N^3 xc + N^4 b + 2 N^4 a``; encoding
    inputs are indexed ``x + N y + N^2 b``.
    """

    def __init__(self, instance: ProblemInstance, layout: RegisterLayout | None = None):
        self.instance = instance
        self.N = N = instance.state_count
        self.dim = 4 * N**4
        self.in_dim = 2 * N**2
        self.layout = layout
        r = np.arange(self.dim)
        x, y, z, xc = r % N, (r // N) % N, (r // N**2) % N, (r // N**3) % N
        b, a = (r // N**4) % 2, r // (2 * N**4)
        self.swap_perm = self.index(z, xc, x, y, 1 - b, a)  # X on b and (x,y) <-> (z,xc)
        self._coords = (x, y, z, xc, b, a)

    def index(self, x, y, z, xc, b, a):
        N = self.N
        return x + N * y + N**2 * z + N**3 * xc + N**4 * b + 2 * N**4 * a

    def to_layout_indices(self, layout: RegisterLayout | None = None) -> np.ndarray:
        L = layout or self.layout
        x, y, z, xc, b, a = self._coords
        return ((x << L.offset("x")) | (y << L.offset("y")) | (z << L.offset("z"))
                | (xc << L.offset("xc")) | (b << L.offset("b")) | (a << L.offset("a")))

    def input_to_layout_indices(self, layout: RegisterLayout | None = None) -> np.ndarray:
        L = layout or self.layout
        k = np.arange(self.in_dim)
        N = self.N
        return ((k % N) << L.offset("x")) | (((k // N) % N) << L.offset("y")) | ((k // N**2) << L.offset("b"))

    def swap(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        out[self.swap_perm] = v
        return out

    def decoded_marginal(self, v: np.ndarray) -> np.ndarray:
        """Register-x marginal after the b=0 swap of edge registers."""
        N = self.N
        t = np.abs(np.asarray(v).reshape(2, 2, N, N, N, N)) ** 2  # a, b, xc, z, y, x
        p = t[:, 1].sum(axis=(0, 1, 2, 3)) + t[:, 0].sum(axis=(0, 1, 3, 4))
        return p / p.sum()


def reference_boxtimes(instance: ProblemInstance, space: WalkSpace | None = None) -> sp.csc_matrix:
    """Encoding matrix on the reduced walk space, written from its matrix elements."""
    space = space or WalkSpace(instance)
    N = instance.state_count
    T = instance.proposal_matrix()
    A = acceptance_matrix(instance)
    rows, cols, vals = [], [], []

    def put(col, x, y, z, xc, b, a, val):
        if val != 0:
            rows.append(space.index(x, y, z, xc, b, a))
            cols.append(col)
            vals.append(val)

    for x in range(N):
        for y in range(N):
            c0 = x + N * y
            c1 = c0 + N * N
            for t in range(N):
                put(c1, x, y, t, x, 1, 1, math.sqrt(T[x, t] * A[x, t]))
                put(c1, x, y, x, t, 1, 0, math.sqrt(T[x, t] * (1 - A[x, t])))
                put(c0, x, y, x, t, 0, 0, math.sqrt((1 - A[x, y]) * T[x, t]))
                put(c0, x, y, y, t, 0, 1, math.sqrt(A[x, y] * T[y, t]))
    M = sp.coo_matrix((vals, (rows, cols)), shape=(space.dim, space.in_dim))
    return M.tocsc()


def target_input(instance: ProblemInstance) -> np.ndarray:
    """|+> (x) sqrt(nu) on the encoding input space."""
    pi = gibbs_distribution(instance).probs
    nu = dual_stationary(pi, instance.proposal_matrix()).probs
    s = np.sqrt(nu) / math.sqrt(2)
    return np.concatenate([s, s]).astype(np.complex128)


def seed_input(instance: ProblemInstance) -> np.ndarray:
    """|+> (x) uniform-over-x with sqrt(T) rows (uniform over directed edges here)."""
    N = instance.state_count
    T = instance.proposal_matrix()
    s = np.sqrt(T.T.reshape(-1) / N) / math.sqrt(2)  # index x + N y
    return np.concatenate([s, s]).astype(np.complex128)


def boxtimes_from_circuits(instance: ProblemInstance, layout: RegisterLayout,
                           circuit: Circuit | None = None) -> PartialIsometryHandle:
    """Encoding driven by the gate-level circuits; inputs embed with zero ancillas."""
    from .circuits import build_boxtimes  # local import keeps module layering flat

    if layout.has("p"):
        raise ValueError("encoding acts on the system layout; drop the phase register")
    for r in ("x", "y", "z", "xc", "b", "a"):
        if not layout.has(r):
            raise ValueError(f"layout lacks register {r}")
    if layout.width("x") != instance.n_bits:
        raise ValueError("register width does not match the instance")
    C = circuit if circuit is not None else build_boxtimes(instance, layout)
    Cinv = C.inverse()
    space = WalkSpace(instance, layout)
    emb = space.input_to_layout_indices(layout)
    dim = layout.dim

    def apply(v):
        w = np.zeros(dim, dtype=np.complex128)
        w[emb] = v
        return run_array(C, w)

    def adjoint(w):
        return run_array(Cinv, np.array(w, dtype=np.complex128))[emb]

    return PartialIsometryHandle(space.in_dim, dim, apply, adjoint)


def dual_walk(box: PartialIsometryHandle, swap: Callable[[np.ndarray], np.ndarray],
              dim: int) -> LinearOperatorHandle:
    """(2 box box^dag - I)(X (x) S) given the encoding and the swap action."""
    def apply(v):
        w = swap(np.asarray(v, dtype=np.complex128))
        return 2 * box.projector(w) - w
    return LinearOperatorHandle(dim, apply, None, None, "W")


def penalise(walk: LinearOperatorHandle, box: PartialIsometryHandle, varphi: float) -> LinearOperatorHandle:
    """(Pi + e^{i varphi}(I - Pi)) walk."""
    if varphi == 0:
        log.warning("penalty phase 0: the walk is returned unchanged and its degeneracy is not lifted")
        return walk
    if not 0 < varphi < 2 * math.pi:
        raise ValueError("varphi must lie in (0, 2 pi)")
    ph = np.exp(1j * varphi)

    def apply(v):
        w = walk(v)
        pw = box.projector(w)
        return pw + ph * (w - pw)
    return LinearOperatorHandle(walk.dim, apply, None, None, "V")


def swap_in_layout(layout: RegisterLayout) -> Callable[[np.ndarray], np.ndarray]:
    from .circuits import build_swap_walk
    C = build_swap_walk(layout)
    return lambda v: run_array(C, np.array(v, dtype=np.complex128))


def circuit_on_walk_space(circuit: Circuit, space: WalkSpace, layout: RegisterLayout) -> np.ndarray:
    """Dense matrix of a circuit compressed to the reduced walk space."""
    idx = space.to_layout_indices(layout)
    if space.dim * layout.dim > 2**28:
        raise SimulationCapError("walk-space compression too large for a dense build")
    block = np.zeros((space.dim, layout.dim), dtype=np.complex128)
    block[np.arange(space.dim), idx] = 1.0
    run_batch(circuit, block)
    return block[:, idx].T.copy()


class EncodedSubspace:
    """Walk dynamics on span(Im B, XS Im B) in coefficient form.

    A state B alpha + XS B beta is stored as (alpha, beta).  With
    G = B^dag XS B the swap is (alpha, beta) -> (beta, alpha), the projector is
    (alpha, beta) -> (alpha + G beta, 0), so the penalised walk reads
    (alpha, beta) -> ((1 + e^{i phi}) G alpha + beta, -e^{i phi} alpha).
    """

    def __init__(self, instance: ProblemInstance):
        self.instance = instance
        self.space = WalkSpace(instance)
        self.B = reference_boxtimes(instance, self.space)
        self._G = self._gram()

    def _gram(self) -> np.ndarray:
        B = self.B
        # (XS B)[swap_perm[r], :] = B[r, :]
        inv = np.empty_like(self.space.swap_perm)
        inv[self.space.swap_perm] = np.arange(self.space.dim)
        XB = B.tocsr()[inv]
        G = (B.conj().T @ XB).toarray()
        return np.real_if_close(G)

    @property
    def G(self) -> np.ndarray:
        return self._G

    def step(self, alpha, beta, varphi):
        e = np.exp(1j * varphi)
        Ga = self._G @ alpha
        return (1 + e) * Ga + beta, -e * alpha

    def vector(self, alpha, beta) -> np.ndarray:
        return self.B @ alpha + self.space.swap(self.B @ beta)

    def power_sums(self, psi_in: np.ndarray, ms, varphi: float):
        """Yield (m, state, weight) for the normalised average of V^j psi, j < 2^m."""
        ms = sorted(set(int(m) for m in ms))
        alpha = np.asarray(psi_in, dtype=np.complex128).copy()
        beta = np.zeros_like(alpha)
        sa, sb = np.zeros_like(alpha), np.zeros_like(alpha)
        j = 0
        for m in ms:
            while j < 2**m:
                sa += alpha
                sb += beta
                alpha, beta = self.step(alpha, beta, varphi)
                j += 1
            v = self.vector(sa, sb) / 2**m
            w = float(np.vdot(v, v).real)
            yield m, v, w

    def walk_matrix(self, varphi: float) -> np.ndarray:
        """Dense penalised walk on the reduced walk space (reduced instances only)."""
        space = self.space
        if space.dim > DEFAULT_DENSE_CAP:
            raise SimulationCapError("walk space above dense cap")
        Bd = self.B.toarray()
        Pi = Bd @ Bd.conj().T
        S = np.zeros((space.dim, space.dim))
        S[space.swap_perm, np.arange(space.dim)] = 1.0
        W = (2 * Pi - np.eye(space.dim)) @ S
        return (Pi + np.exp(1j * varphi) * (np.eye(space.dim) - Pi)) @ W


def eigenphase_decomposition(M: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenphases and an orthonormal eigenbasis of a normal matrix (complex Schur)."""
    T, Z = scipy.linalg.schur(np.asarray(M, dtype=np.complex128), output="complex")
    return np.angle(np.diag(T)), Z


def spectral_report(operator: LinearOperatorHandle | np.ndarray, target: np.ndarray | None = None,
                    dense_cap: int = DEFAULT_DENSE_CAP, phase_tol: float = PHASE_TOL) -> SpectralReport:
    M = operator if isinstance(operator, np.ndarray) else operator.dense(dense_cap)
    if M.shape[0] > dense_cap:
        raise SimulationCapError(f"dimension {M.shape[0]} above dense cap {dense_cap}; use a reduced instance")
    th, Z = eigenphase_decomposition(M)
    th = np.where(th <= -math.pi + 1e-15, math.pi, th)  # keep phases in (-pi, pi]
    zero = np.abs(th) <= phase_tol
    nonzero = np.abs(th[~zero])
    gap = float(nonzero.min()) if nonzero.size else NO_GAP
    overlap = None
    if target is not None:
        t = np.asarray(target, dtype=np.complex128)
        t = t / np.linalg.norm(t)
        overlap = float(np.sum(np.abs(Z[:, zero].conj().T @ t) ** 2))
    order = np.argsort(th)
    return SpectralReport(th[order], gap, int(zero.sum()), overlap)
