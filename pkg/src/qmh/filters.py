"""Phase-estimation filtering and the end-to-end sampling pipeline.

Three interchangeable filters are offered: coherent phase estimation with an
m-qubit phase register, the recycled single-ancilla variant, and the power
sum (1/2^m) sum_j V^j which both of them reduce to under all-zero
postselection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import circuits as cz
from .markov import ProblemInstance
from .sim import (Circuit, EmptyPostselectionError, Statevector, compile_circuit,
                  marginal_distribution, postselect, run_rows, DEFAULT_SIM_CAP,
                  SimulationCapError)
from .walks import EncodedSubspace, LinearOperatorHandle, seed_input

MODES = ("coherent", "semiclassical", "oracle")
DEFAULT_VARPHI = 1.0472


def dirichlet_weight(phi: float, m: int) -> float:
    """sin(2^{m-1} phi) / (2^m sin(phi/2)), equal to 1 at phi = 0."""
    if m < 1:
        raise ValueError("m must be at least 1")
    s = math.sin(phi / 2)
    if abs(s) < 1e-300:
        # removable singularity: limit of the ratio, sign follows cos(2^{m-1} phi)/cos(phi/2)
        return math.cos(2 ** (m - 1) * phi) / math.cos(phi / 2)
    return math.sin(2 ** (m - 1) * phi) / (2**m * s)


def survival_probability(alpha: float, phi: float, m: int) -> float:
    if abs(alpha) > 1 + 1e-12:
        raise ValueError("|alpha| must not exceed 1")
    return alpha**2 * dirichlet_weight(phi, m) ** 2


def required_precision(delta: float) -> int:
    """Smallest m with 2 pi / 2^m <= sqrt(delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if delta > 1:
        raise ValueError("delta must not exceed 1")
    m = max(1, math.ceil(math.log2(2 * math.pi / math.sqrt(delta))))
    while 2 * math.pi / 2 ** (m - 1) <= math.sqrt(delta) and m > 1:  # guard float rounding
        m -= 1
    while 2 * math.pi / 2**m > math.sqrt(delta):
        m += 1
    return m


def power_sum_filter(V: LinearOperatorHandle, psi0: np.ndarray, m: int) -> tuple[np.ndarray, float]:
    """Normalised (1/2^m) sum_{j<2^m} V^j psi0 and its squared norm."""
    if m < 1:
        raise ValueError("m must be at least 1")
    v = np.array(psi0, dtype=np.complex128)
    acc = v.copy()
    for _ in range(2**m - 1):
        v = V(v)
        acc += v
    acc /= 2**m
    w = float(np.vdot(acc, acc).real)
    if w < 1e-14:
        raise EmptyPostselectionError(f"filtered branch weight {w:.3e}")
    return acc / math.sqrt(w), w


@dataclass(frozen=True)
class FilterSpec:
    m: int
    varphi: float = DEFAULT_VARPHI
    mode: str = "coherent"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not 0 <= self.varphi < 2 * math.pi:
            raise ValueError("varphi must lie in [0, 2 pi)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class PipelineResult:
    instance: str
    mode: str
    m: int
    varphi: float
    penalised: bool
    p_X: np.ndarray
    success_probability: float
    round_probs: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = {"instance": self.instance, "mode": self.mode, "m": self.m, "varphi": self.varphi,
             "penalised": self.penalised, "success_probability": self.success_probability,
             "p_X": [float(v) for v in self.p_X], "round_probs": [float(v) for v in self.round_probs]}
        if self.metrics:
            d["metrics"] = self.metrics
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def instance_label(instance: ProblemInstance) -> str:
    if instance.kind == "double-well":
        return f"double-well(L={instance.grid_side},T={instance.temperature:g})"
    return f"ising(n={instance.n_spins},beta={instance.beta:g})"


class CircuitPipeline:
    """Gate-level circuits for one instance and penalty phase, built once."""

    def __init__(self, instance: ProblemInstance, varphi: float, penalised: bool = True,
                 sim_cap: int = DEFAULT_SIM_CAP):
        self.instance = instance
        self.varphi = varphi if penalised else 0.0
        self.sim_cap = sim_cap
        self.layout = cz.walk_layout(instance, 0, sim_cap)
        self.boxtimes = cz.build_boxtimes(instance, self.layout)
        self.V = cz.build_penalised_walk(instance, self.layout, self.varphi, boxtimes=self.boxtimes)
        self.seed = cz.build_seed(instance, self.layout, self.boxtimes)
        self.decode = cz.build_decoding(instance, self.layout)
        self._cache: dict = {}
        self._compiled: dict = {}

    def compiled(self, name: str):
        if name not in self._compiled:
            self._compiled[name] = compile_circuit(getattr(self, name))
        return self._compiled[name]

    def seed_state(self) -> np.ndarray:
        psi = np.zeros(self.layout.dim, dtype=np.complex128)
        psi[0] = 1.0
        return self.compiled("seed").apply(psi)

    def decoded_marginal(self, psi: np.ndarray) -> np.ndarray:
        out = self.compiled("decode").apply(np.array(psi, dtype=np.complex128))
        return marginal_distribution(Statevector(out, self.layout), "x")

    def V_handle(self) -> LinearOperatorHandle:
        comp = self.compiled("V")
        return LinearOperatorHandle(self.layout.dim, lambda v: comp.apply(np.array(v, dtype=np.complex128)),
                                    name="V")

    def _row_cache(self):
        # share the compiled walk with run_rows so it is compiled once
        self._cache.setdefault(id(self.V), (self.V, self.compiled("V")))
        return self._cache

    def coherent(self, m: int):
        layout = cz.walk_layout(self.instance, m, self.sim_cap)
        n_sys = self.layout.n_qubits
        full = np.zeros((1 << m, 1 << n_sys), dtype=np.complex128)
        full[0] = self.seed_state()
        state = Statevector(full.reshape(-1), layout)
        V = Circuit(layout.n_qubits, self.V.gates, "V")
        qpe = cz.build_qpe(V, layout)
        cache = self._row_cache()
        cache[id(V)] = (V, self.compiled("V"))
        run_rows(qpe, state, cache)
        state, prob = postselect(state, layout.qubits("p"), (0,) * m, inplace=True)
        psi = state.amplitudes.reshape(1 << m, -1)[0].copy()
        del state, full
        return psi, prob, []

    def semiclassical(self, m: int):
        layout = cz.walk_layout(self.instance, 1, self.sim_cap)
        full = np.zeros((2, self.layout.dim), dtype=np.complex128)
        full[0] = self.seed_state()
        state = Statevector(full.reshape(-1), layout)
        V = Circuit(layout.n_qubits, self.V.gates, "V")
        cache = self._row_cache()
        cache[id(V)] = (V, self.compiled("V"))
        q = layout.qubits("p")[0]
        state, prob, rounds = cz.run_semiclassical_qpe(V, m, state, q, inplace=True, cache=cache)
        return state.amplitudes.reshape(2, -1)[0].copy(), prob, rounds

    def oracle(self, m: int):
        psi, w = power_sum_filter(self.V_handle(), self.seed_state(), m)
        return psi, w, []


def run_pipeline(instance: ProblemInstance, filt: FilterSpec, penalised: bool = True,
                 engine: str = "auto", sim_cap: int = DEFAULT_SIM_CAP,
                 pipeline: CircuitPipeline | None = None) -> PipelineResult:
    """Seed, filter, postselect, decode; returns p_X and the branch weight.

    ``engine`` only matters for the oracle mode: ``"circuit"`` iterates the
    gate-level walk, ``"subspace"`` the matrix-element encoding restricted to
    its invariant span (fast enough for long sweeps).  ``"auto"`` picks the
    subspace form.
    """
    varphi = filt.varphi if penalised else 0.0
    label = instance_label(instance)
    if filt.mode == "oracle" and engine in ("auto", "subspace"):
        sub = EncodedSubspace(instance)
        (_, v, w), = sub.power_sums(seed_input(instance), [filt.m], varphi)
        if w < 1e-14:
            raise EmptyPostselectionError(f"filtered branch weight {w:.3e}")
        return PipelineResult(label, filt.mode, filt.m, varphi, penalised,
                              sub.space.decoded_marginal(v), w)
    if filt.mode == "coherent":
        needed = cz.walk_layout(instance, 0, 64).n_qubits + filt.m
        if needed > sim_cap:
            raise SimulationCapError(
                f"coherent mode needs {needed} qubits (cap {sim_cap}); use --mode semiclassical")
    pl = pipeline if pipeline is not None else CircuitPipeline(instance, varphi, True, sim_cap)
    if abs(pl.varphi - varphi) > 0:
        raise ValueError("pipeline was built for a different penalty phase")
    psi, w, rounds = getattr(pl, filt.mode)(filt.m)
    return PipelineResult(label, filt.mode, filt.m, varphi, penalised,
                          pl.decoded_marginal(psi), w, rounds)


def subspace_sweep(instance: ProblemInstance, ms, varphi: float, sub: EncodedSubspace | None = None):
    """p_X and success probability for several m from one power-sum pass."""
    sub = sub or EncodedSubspace(instance)
    out = {}
    for m, v, w in sub.power_sums(seed_input(instance), ms, varphi):
        if w < 1e-14:
            raise EmptyPostselectionError(f"filtered branch weight {w:.3e} at m={m}")
        out[m] = (sub.space.decoded_marginal(v), w)
    return out
