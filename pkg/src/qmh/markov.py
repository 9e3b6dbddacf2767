"""Problem instances, Metropolis-Hastings kernels and their edge-space duals.

States are integers.  For the grid the index is ``i + L*j`` (coordinate bits
least-significant first); for spin chains bit ``k`` of the index is
``(1 - sigma_k) / 2``.  Edge-space objects are indexed by ``x + |E| * y`` so
that they line up with the ``x`` / ``y`` registers of the circuit layout.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


@dataclass(frozen=True)
class ProblemInstance:
    kind: str  # "double-well" | "ising"
    energies: np.ndarray
    beta: float
    neighbors: tuple[tuple[int, ...], ...]
    minima: tuple[int, ...] = ()
    grid_side: int | None = None
    n_spins: int | None = None

    def __post_init__(self):
        n = len(self.energies)
        if len(self.neighbors) != n:
            raise ValueError("neighbour table does not cover the state space")
        for x, nbrs in enumerate(self.neighbors):
            if not nbrs:
                raise ValueError(f"state {x} has no neighbours")
            if x in nbrs:
                raise ValueError(f"state {x} proposes itself")
            for y in nbrs:
                if x not in self.neighbors[y]:
                    raise ValueError(f"neighbour relation not symmetric at ({x}, {y})")

    @property
    def state_count(self) -> int:
        return len(self.energies)

    @property
    def n_bits(self) -> int:
        """Qubits per state register."""
        return max(1, int(np.ceil(np.log2(self.state_count))))

    @property
    def temperature(self) -> float:
        return 1.0 / self.beta

    def proposal_matrix(self) -> np.ndarray:
        n = self.state_count
        T = np.zeros((n, n))
        for x, nbrs in enumerate(self.neighbors):
            T[x, list(nbrs)] = 1.0 / len(nbrs)
        return T

    def edges(self) -> list[tuple[int, int]]:
        return [(x, y) for x, nbrs in enumerate(self.neighbors) for y in nbrs]

    def coords(self, x: int) -> tuple[int, int]:
        if self.grid_side is None:
            raise ValueError("not a grid instance")
        return x % self.grid_side, x // self.grid_side

    def spins(self, x: int) -> np.ndarray:
        if self.n_spins is None:
            raise ValueError("not a spin instance")
        return np.array([1 - 2 * ((x >> k) & 1) for k in range(self.n_spins)])


def _is_power_of_two(k: int) -> bool:
    return k >= 1 and (k & (k - 1)) == 0


def double_well_energy(i: int, j: int, wells=((0, 1), (3, 3))) -> float:
    return float(min((i - a) ** 2 + (j - b) ** 2 for a, b in wells))


def reduced_grid_wells(side: int) -> tuple[tuple[int, int], tuple[int, int]]:
    """Default well centres: (0,1) and (L-1,L-1), or the anti-diagonal on the 2x2 torus.

    On the 2x2 torus the default pair would be adjacent with equal energy, and
    the swap symmetry along that row gives the dual pair a second singular
    value 1 (two fixed points of the walk inside the encoded range).
    """
    if side == 2:
        return ((0, 1), (1, 0))
    return ((0, 1), (side - 1, side - 1))


def build_double_well(grid_side: int = 4, temperature: float = 1.0, wells=None) -> ProblemInstance:
    """Two quadratic wells on an ``L x L`` torus.

    Proposals wrap around; the energy does not.
    """
    if grid_side < 2 or not _is_power_of_two(grid_side):
        raise ValueError(f"grid side must be a power of two >= 2, got {grid_side}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    L = grid_side
    wells = tuple(tuple(w) for w in (wells or reduced_grid_wells(L)))
    if any(not (0 <= a < L and 0 <= b < L) for a, b in wells):
        raise ValueError("well centres must lie on the grid")
    idx = lambda i, j: (i % L) + L * (j % L)
    energies = np.array([double_well_energy(x % L, x // L, wells) for x in range(L * L)])
    neighbors = []
    for x in range(L * L):
        i, j = x % L, x // L
        cand = [idx(i + 1, j), idx(i - 1, j), idx(i, j + 1), idx(i, j - 1)]
        neighbors.append(tuple(dict.fromkeys(cand)))  # dedupe on the 2x2 torus
    minima = tuple(idx(a, b) for a, b in wells)
    return ProblemInstance("double-well", energies, 1.0 / temperature, tuple(neighbors),
                           minima, grid_side=L)


def ising_energy(spins: Sequence[int], J: float = 1.0, h: float = 0.0) -> float:
    s = np.asarray(spins)
    return float(-J * np.sum(s[:-1] * s[1:]) - h * np.sum(s))


def build_ising(n_spins: int = 4, J: float = 1.0, h: float = 0.0, beta: float = 1.0) -> ProblemInstance:
    """Open 1D Ising chain with single-spin-flip proposals (flip k <-> bit k)."""
    if n_spins < 2:
        raise ValueError("need at least two spins")
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    n = 2**n_spins
    spins = [np.array([1 - 2 * ((x >> k) & 1) for k in range(n_spins)]) for x in range(n)]
    energies = np.array([ising_energy(s, J, h) for s in spins])
    neighbors = tuple(tuple(x ^ (1 << k) for k in range(n_spins)) for x in range(n))
    ground = float(energies.min())
    minima = tuple(int(x) for x in np.flatnonzero(energies == ground))
    return ProblemInstance("ising", energies, float(beta), neighbors, minima, n_spins=n_spins)


@dataclass(frozen=True)
class Distribution:
    probs: np.ndarray
    Z: float | None = None

    def __post_init__(self):
        p = self.probs
        if np.any(p < -ROW_TOL) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("not a probability vector")

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)

    def __len__(self) -> int:
        return len(self.probs)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["state", "value"])
            for k, v in enumerate(self.probs):
                w.writerow([k, f"{v:.17g}"])


@dataclass(frozen=True)
class StochasticKernel:
    matrix: np.ndarray
    label: str = "P"
    stochastic: bool = field(default=True)

    def __post_init__(self):
        M = self.matrix
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("kernel must be square")
        if self.stochastic:
            if np.any(M < -ROW_TOL) or np.any(M > 1 + ROW_TOL):
                raise ValueError(f"kernel {self.label} has entries outside [0, 1]")
            if np.max(np.abs(M.sum(axis=1) - 1.0)) > ROW_TOL:
                raise ValueError(f"kernel {self.label} rows do not sum to 1")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "col", "value"])
            for (r, c), v in np.ndenumerate(self.matrix):
                if v != 0:
                    w.writerow([r, c, f"{v:.17g}"])


def gibbs_distribution(instance: ProblemInstance) -> Distribution:
    E = instance.energies
    w = np.exp(-instance.beta * (E - E.min()))
    Z_shifted = w.sum()
    Z = float(Z_shifted * np.exp(-instance.beta * E.min()))
    return Distribution(w / Z_shifted, Z)


def mh_acceptance(instance: ProblemInstance, x: int, y: int) -> float:
    if y not in instance.neighbors[x]:
        raise ValueError(f"({x}, {y}) is not a proposal edge")
    T = instance.proposal_matrix()
    dE = instance.energies[y] - instance.energies[x]
    # general Hastings ratio; reduces to min(1, exp(-beta dE)) for symmetric T
    return float(min(1.0, np.exp(-instance.beta * dE) * T[y, x] / T[x, y]))


def acceptance_matrix(instance: ProblemInstance) -> np.ndarray:
    """A(x, y) on proposal edges, zero elsewhere."""
    n = instance.state_count
    A = np.zeros((n, n))
    for x, y in instance.edges():
        A[x, y] = mh_acceptance(instance, x, y)
    return A


def mh_kernel(instance: ProblemInstance) -> StochasticKernel:
    T = instance.proposal_matrix()
    P = T * acceptance_matrix(instance)
    np.fill_diagonal(P, 0.0)
    np.fill_diagonal(P, 1.0 - P.sum(axis=1))
    return StochasticKernel(P, "P")


def discriminant(kernel: StochasticKernel, pi) -> StochasticKernel:
    p = np.asarray(pi, dtype=float)
    if np.any(p <= 0):
        raise ValueError("stationary distribution must be strictly positive")
    s = np.sqrt(p)
    D = s[:, None] * kernel.matrix / s[None, :]
    if np.max(np.abs(D - D.T)) > 1e-12:
        raise ValueError("kernel is not reversible with respect to pi")
    return StochasticKernel(0.5 * (D + D.T), "D", stochastic=False)


def stationary_of(kernel: StochasticKernel) -> np.ndarray:
    """Left Perron vector of a stochastic kernel, normalised to sum 1."""
    w, v = np.linalg.eig(kernel.matrix.T)
    k = int(np.argmin(np.abs(w - 1.0)))
    p = np.real(v[:, k])
    return p / p.sum()


def spectral_gap(kernel: StochasticKernel, pi=None) -> tuple[float, float]:
    """Return ``(delta, lambda2)`` from a symmetric eigensolve of the discriminant.

    ``lambda2`` is the largest eigenvalue once the leading 1 is removed (signed);
    ``delta`` uses the largest remaining modulus.  Without ``pi`` the stationary
    vector is recovered from the kernel first; a non-reversible kernel is
    rejected in either case.
    """
    if kernel.size == 1:
        return 1.0, 0.0
    if pi is None:
        pi = stationary_of(kernel)
    D = discriminant(kernel, pi).matrix
    rest = np.linalg.eigvalsh(D)[:-1]  # ascending, drop the top eigenvalue 1
    return float(1.0 - np.max(np.abs(rest))), float(rest[-1])


def edge_index(x: int, y: int, n: int) -> int:
    return x + n * y


def dual_kernels(instance: ProblemInstance) -> tuple[StochasticKernel, StochasticKernel, StochasticKernel]:
    """Dual proposal, acceptance and MH kernels on E x E (index ``x + |E| y``)."""
    n = instance.state_count
    T = instance.proposal_matrix()
    A = acceptance_matrix(instance)
    N = n * n
    TT = np.zeros((N, N))
    AA = np.zeros((N, N))
    for x in range(n):
        for y in range(n):
            e = edge_index(x, y, n)
            for t in range(n):
                TT[e, edge_index(x, t, n)] = T[x, t]
            a = A[x, y]
            AA[e, edge_index(y, x, n)] += a
            AA[e, e] += 1.0 - a
    return (StochasticKernel(TT, "T_dual"), StochasticKernel(AA, "A_dual"),
            StochasticKernel(TT @ AA, "P_dual"))


def dual_stationary(pi, T: np.ndarray) -> Distribution:
    p = np.asarray(pi, dtype=float)
    nu = p[:, None] * T  # nu[x, y]
    return Distribution(nu.T.reshape(-1))  # flatten with x fastest


def classical_chain_sample(kernel: StochasticKernel, x0: int, steps: int, seed: int) -> np.ndarray:
    if steps < 0:
        raise ValueError("steps must be non-negative")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(kernel.matrix, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(steps)
    traj = np.empty(steps + 1, dtype=np.int64)
    traj[0] = x = x0
    for k in range(steps):
        x = int(np.searchsorted(cdf[x], u[k], side="right"))
        traj[k + 1] = x
    return traj
