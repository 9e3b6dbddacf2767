"""Exact statevector simulation over named register layouts.

Qubit ``q`` is bit ``q`` of the flat amplitude index.  Registers are laid out in
declaration order, least-significant qubit first inside each register.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_SIM_CAP = 28
DEFAULT_DENSE_CAP = 2**14
EMPTY_BRANCH_TOL = 1e-14
MAGIC = b"QMHSV1"


class SimulationCapError(RuntimeError):
    """Requested state does not fit under the configured qubit cap."""


class EmptyPostselectionError(RuntimeError):
    """Postselected branch has (numerically) zero weight."""


@dataclass(frozen=True)
class RegisterLayout:
    registers: tuple[tuple[str, int], ...]
    sim_cap: int = DEFAULT_SIM_CAP

    def __post_init__(self):
        names = [r for r, _ in self.registers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate register names in {names}")
        if any(w < 0 for _, w in self.registers):
            raise ValueError("register widths must be non-negative")
        if self.n_qubits > self.sim_cap:
            raise SimulationCapError(
                f"layout needs {self.n_qubits} qubits, cap is {self.sim_cap}")

    @property
    def n_qubits(self) -> int:
        return sum(w for _, w in self.registers)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def width(self, name: str) -> int:
        return dict(self.registers)[name]

    def has(self, name: str) -> bool:
        return name in dict(self.registers) and self.width(name) > 0

    def offset(self, name: str) -> int:
        off = 0
        for r, w in self.registers:
            if r == name:
                return off
            off += w
        raise KeyError(f"no register named {name!r}")

    def qubits(self, name: str) -> tuple[int, ...]:
        off = self.offset(name)
        return tuple(range(off, off + self.width(name)))

    def layout_hash(self) -> bytes:
        text = ",".join(f"{r}:{w}" for r, w in self.registers)
        return hashlib.sha256(text.encode()).digest()[:8]

    def basis_index(self, **values: int) -> int:
        """Flat index of the basis state with the given register values (others 0)."""
        k = 0
        for name, v in values.items():
            if v < 0 or v >= (1 << self.width(name)):
                raise ValueError(f"value {v} does not fit register {name}")
            k |= v << self.offset(name)
        return k

    def register_values(self, name: str, index: np.ndarray | int) -> np.ndarray | int:
        return (index >> self.offset(name)) & ((1 << self.width(name)) - 1)

    def extend(self, name: str, width: int) -> "RegisterLayout":
        return replace(self, registers=self.registers + ((name, width),))


KINDS = ("X", "H", "P", "RY", "SWAP", "SUB")


@dataclass(frozen=True)
class Gate:
    kind: str
    targets: tuple[int, ...] = ()
    controls: tuple[int, ...] = ()
    polarity: tuple[int, ...] = ()  # 1 = closed (fires on |1>), 0 = open
    angle: float | None = None
    sub: "Circuit | None" = None
    power: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind}")
        if len(self.polarity) != len(self.controls):
            raise ValueError("one polarity per control")
        if set(self.targets) & set(self.controls):
            raise ValueError(f"targets {self.targets} overlap controls {self.controls}")
        if len(set(self.controls)) != len(self.controls):
            raise ValueError("repeated control qubit")
        need = {"X": 1, "H": 1, "P": 1, "RY": 1, "SWAP": 2, "SUB": 0}[self.kind]
        if len(self.targets) != need:
            raise ValueError(f"{self.kind} takes {need} targets")
        if self.kind == "SWAP" and self.targets[0] == self.targets[1]:
            raise ValueError("SWAP targets must differ")
        if self.kind in ("P", "RY") and (self.angle is None or not np.isfinite(self.angle)):
            raise ValueError(f"{self.kind} needs a finite angle")
        if self.kind == "SUB" and (self.sub is None or self.power < 0):
            raise ValueError("SUB needs a subcircuit and a non-negative power")

    def qubits(self) -> set[int]:
        q = set(self.targets) | set(self.controls)
        if self.sub is not None:
            for g in self.sub.gates:
                q |= g.qubits()
        return q

    def inverse(self) -> "Gate":
        if self.kind in ("P", "RY"):
            return replace(self, angle=-self.angle)
        if self.kind == "SUB":
            return replace(self, sub=self.sub.inverse())
        return self

    def with_controls(self, controls: Sequence[int], polarity: Sequence[int]) -> "Gate":
        return replace(self, controls=self.controls + tuple(controls),
                       polarity=self.polarity + tuple(polarity))


# gate constructors -----------------------------------------------------------

def _ctl(controls, polarity):
    controls = tuple(controls)
    polarity = (1,) * len(controls) if polarity is None else tuple(int(p) for p in polarity)
    return controls, polarity


def X(t, controls=(), polarity=None) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("X", (t,), c, p)


def H(t, controls=(), polarity=None) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("H", (t,), c, p)


def Phase(t, theta, controls=(), polarity=None) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("P", (t,), c, p, float(theta))


def RY(t, theta, controls=(), polarity=None) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("RY", (t,), c, p, float(theta))


def SWAP(t1, t2, controls=(), polarity=None) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("SWAP", (t1, t2), c, p)


def SUB(circuit, controls=(), polarity=None, power=1) -> Gate:
    c, p = _ctl(controls, polarity)
    return Gate("SUB", (), c, p, sub=circuit, power=int(power))


@dataclass(frozen=True)
class Circuit:
    n_qubits: int
    gates: tuple[Gate, ...] = ()
    name: str = ""

    def __post_init__(self):
        for g in self.gates:
            bad = [q for q in g.qubits() if q < 0 or q >= self.n_qubits]
            if bad:
                raise IndexError(f"gate {g.kind} touches qubits {bad} outside 0..{self.n_qubits - 1}")

    def __add__(self, other: "Circuit") -> "Circuit":
        if other.n_qubits != self.n_qubits:
            raise ValueError("circuit widths differ")
        return Circuit(self.n_qubits, self.gates + other.gates, self.name)

    def __len__(self) -> int:
        return len(self.gates)

    def inverse(self) -> "Circuit":
        return Circuit(self.n_qubits, tuple(g.inverse() for g in reversed(self.gates)),
                       self.name + "^-1" if self.name else "")

    def controlled(self, controls: Sequence[int], polarity: Sequence[int] | None = None) -> "Circuit":
        c, p = _ctl(controls, polarity)
        return Circuit(self.n_qubits, tuple(g.with_controls(c, p) for g in self.gates), self.name)

    def flat(self, controls=(), polarity=()) -> Iterator[Gate]:
        """Yield primitive gates with subcircuits expanded into extra controls."""
        for g in self.gates:
            if g.kind == "SUB":
                c = tuple(controls) + g.controls
                p = tuple(polarity) + g.polarity
                for _ in range(g.power):
                    yield from g.sub.flat(c, p)
            elif controls:
                yield g.with_controls(controls, polarity)
            else:
                yield g

    def to_text(self) -> str:
        lines = []
        for g in self.flat():
            ang = "-" if g.angle is None else f"{g.angle:.17g}"
            tg = ",".join(map(str, g.targets))
            cs = ",".join(map(str, g.controls)) or "-"
            ps = ",".join(map(str, g.polarity)) or "-"
            lines.append(f"{g.kind} {tg} {cs} {ps} {ang}")
        return "\n".join(lines) + ("\n" if lines else "")


class CircuitBuilder:
    """Mutable gate accumulator; ``build`` freezes it into a Circuit."""

    def __init__(self, n_qubits: int, name: str = ""):
        self.n_qubits = n_qubits
        self.name = name
        self._gates: list[Gate] = []

    def add(self, *gates: Gate) -> "CircuitBuilder":
        self._gates.extend(gates)
        return self

    def extend(self, circuit: Circuit) -> "CircuitBuilder":
        self._gates.extend(circuit.gates)
        return self

    def build(self) -> Circuit:
        return Circuit(self.n_qubits, tuple(self._gates), self.name)


# statevector -----------------------------------------------------------------

@dataclass
class Statevector:
    amplitudes: np.ndarray
    layout: RegisterLayout | None = None
    n_qubits: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.amplitudes)
        n = int(a.size).bit_length() - 1
        if a.ndim != 1 or (1 << n) != a.size:
            raise ValueError("amplitude vector length must be a power of two")
        if self.layout is not None and self.layout.n_qubits != n:
            raise ValueError("amplitude length does not match the layout")
        self.amplitudes = a.astype(np.complex128, copy=False)
        self.n_qubits = n

    @classmethod
    def basis(cls, layout: RegisterLayout, **values: int) -> "Statevector":
        a = np.zeros(layout.dim, dtype=np.complex128)
        a[layout.basis_index(**values)] = 1.0
        return cls(a, layout)

    def copy(self) -> "Statevector":
        return Statevector(self.amplitudes.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def inner(self, other: "Statevector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def dump(self, path) -> None:
        """Binary dump: 16-byte header then little-endian (re, im) doubles."""
        h = self.layout.layout_hash() if self.layout is not None else b"\0" * 8
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<H", self.n_qubits) + h)
            fh.write(self.amplitudes.astype("<c16").tobytes())

    @classmethod
    def load(cls, path, layout: RegisterLayout | None = None) -> "Statevector":
        with open(path, "rb") as fh:
            head = fh.read(16)
            if head[:6] != MAGIC:
                raise ValueError("not a statevector dump")
            (n,) = struct.unpack("<H", head[6:8])
            if layout is not None and head[8:16] != layout.layout_hash():
                raise ValueError("dump was written for a different layout")
            a = np.frombuffer(fh.read(), dtype="<c16")
        if a.size != 1 << n:
            raise ValueError("truncated statevector dump")
        return cls(a.astype(np.complex128), layout)


def _index(n, controls, polarity):
    idx = [slice(None)] * n
    for c, p in zip(controls, polarity):
        idx[n - 1 - c] = p
    return idx


def _apply_primitive(t: np.ndarray, n: int, g: Gate) -> None:
    """In-place action of a primitive gate on the rank-n tensor view ``t``."""
    idx = _index(n, g.controls, g.polarity)
    if g.kind == "SWAP":
        a, b = g.targets
        i01, i10 = list(idx), list(idx)
        i01[n - 1 - a], i01[n - 1 - b] = 0, 1
        i10[n - 1 - a], i10[n - 1 - b] = 1, 0
        v, w = t[(*i01, ...)], t[(*i10, ...)]  # ellipsis keeps 0-d views writable
        tmp = v.copy()
        v[...] = w
        w[...] = tmp
        return
    q = g.targets[0]
    i0, i1 = list(idx), list(idx)
    i0[n - 1 - q], i1[n - 1 - q] = 0, 1
    v0, v1 = t[(*i0, ...)], t[(*i1, ...)]
    if g.kind == "X":
        tmp = v0.copy()
        v0[...] = v1
        v1[...] = tmp
    elif g.kind == "P":
        v1 *= np.exp(1j * g.angle)
    elif g.kind == "H":
        s = np.sqrt(0.5)
        a = v0 + v1
        v1 -= v0
        v1 *= -s
        a *= s
        v0[...] = a
    elif g.kind == "RY":
        c, s = np.cos(g.angle / 2), np.sin(g.angle / 2)
        a = v0.copy()
        v0 *= c
        v0 -= s * v1
        v1 *= c
        v1 += s * a
    else:  # pragma: no cover
        raise ValueError(g.kind)


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Apply ``gate`` in place (the caller owns ``state``) and return it."""
    n = state.n_qubits
    bad = [q for q in gate.qubits() if q < 0 or q >= n]
    if bad:
        raise IndexError(f"qubits {bad} out of range for {n}-qubit state")
    t = state.amplitudes.reshape((2,) * n) if n else state.amplitudes
    if gate.kind == "SUB":
        for g in Circuit(n, (gate,)).flat():
            _apply_primitive(t, n, g)
    else:
        _apply_primitive(t, n, gate)
    return state


def run(circuit: Circuit, state: Statevector, inplace: bool = False) -> Statevector:
    if circuit.n_qubits != state.n_qubits:
        raise ValueError(f"circuit acts on {circuit.n_qubits} qubits, state has {state.n_qubits}")
    out = state if inplace else state.copy()
    n = out.n_qubits
    t = out.amplitudes.reshape((2,) * n)
    for g in circuit.flat():
        _apply_primitive(t, n, g)
    return out


def run_array(circuit: Circuit, amps: np.ndarray) -> np.ndarray:
    """Apply ``circuit`` in place to a raw amplitude array."""
    n = circuit.n_qubits
    t = amps.reshape((2,) * n)
    for g in circuit.flat():
        _apply_primitive(t, n, g)
    return amps


def postselect(state: Statevector, qubits: Sequence[int], outcome: Sequence[int] | str,
               inplace: bool = False) -> tuple[Statevector, float]:
    """Project onto ``qubits == outcome`` and renormalise; returns (state, weight)."""
    if isinstance(outcome, str):
        outcome = [int(ch) for ch in outcome]
    if len(outcome) != len(qubits):
        raise ValueError("outcome length must match qubit list")
    n = state.n_qubits
    out = state if inplace else state.copy()
    t = out.amplitudes.reshape((2,) * n)
    for q, o in zip(qubits, outcome):
        idx = [slice(None)] * n
        idx[n - 1 - q] = 1 - int(o)
        t[tuple(idx)] = 0.0
    prob = float(np.vdot(out.amplitudes, out.amplitudes).real)
    if prob < EMPTY_BRANCH_TOL:
        raise EmptyPostselectionError(f"postselection branch weight {prob:.3e}")
    out.amplitudes /= np.sqrt(prob)
    return out, prob


def marginal_distribution(state: Statevector, register: str | Sequence[int]) -> np.ndarray:
    """Probability of each value of a register (or explicit qubit list)."""
    if isinstance(register, str):
        if state.layout is None:
            raise ValueError("named register needs a layout")
        qubits = state.layout.qubits(register)
    else:
        qubits = tuple(register)
    n = state.n_qubits
    probs = (np.abs(state.amplitudes) ** 2).reshape((2,) * n)
    keep = [n - 1 - q for q in qubits]
    others = tuple(ax for ax in range(n) if ax not in keep)
    m = probs.sum(axis=others)  # remaining axes in ascending axis order
    order = sorted(keep)
    # reorder so that qubits[0] is the least significant bit of the value
    perm = [order.index(ax) for ax in reversed(keep)]
    m = np.transpose(m, perm).reshape(-1)
    return m / m.sum()


def circuit_to_matrix(circuit: Circuit, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
    dim = 1 << circuit.n_qubits
    if dim > dense_cap:
        raise SimulationCapError(f"dimension {dim} exceeds dense cap {dense_cap}")
    # row k of the block is basis state k; all columns are run at once
    return run_batch(circuit, np.eye(dim, dtype=np.complex128)).T.copy()


def run_batch(circuit: Circuit, block: np.ndarray) -> np.ndarray:
    """Apply ``circuit`` in place to every row of a (k, 2**n) block."""
    n = circuit.n_qubits
    if block.ndim != 2 or block.shape[1] != 1 << n:
        raise ValueError("block must have shape (k, 2**n)")
    t = block.reshape((block.shape[0],) + (2,) * n)
    for g in circuit.flat():
        _apply_primitive(t, n + 1, g)  # leading batch axis is never addressed
    return block


def basis_columns(apply, dim: int, columns: Iterable[int] | None = None) -> np.ndarray:
    cols = range(dim) if columns is None else list(columns)
    out = np.zeros((dim, len(cols)), dtype=np.complex128)
    for j, k in enumerate(cols):
        e = np.zeros(dim, dtype=np.complex128)
        e[k] = 1.0
        out[:, j] = apply(e)
    return out


# compiled execution ------------------------------------------------------------

def _permute_indices(idx: np.ndarray, g: Gate) -> None:
    """Classical action of an X/SWAP gate on an array of basis indices (in place)."""
    one = idx.dtype.type(1)
    if g.controls:
        fire = np.ones(idx.shape, dtype=bool)
        for c, p in zip(g.controls, g.polarity):
            fire &= ((idx >> c) & one) == p
    else:
        fire = None
    if g.kind == "X":
        flip = one << g.targets[0]
        if fire is None:
            idx ^= flip
        else:
            idx[fire] ^= flip
    else:
        a, b = g.targets
        diff = ((idx >> a) ^ (idx >> b)) & one
        sel = diff.astype(bool) if fire is None else (diff.astype(bool) & fire)
        idx[sel] ^= (one << a) | (one << b)


@dataclass(frozen=True)
class CompiledCircuit:
    """Gate list with runs of basis permutations fused into single gathers.

    ``ops`` holds either ``("gather", src)`` meaning ``new = old[src]`` or
    ``("gate", Gate)`` for a primitive that mixes amplitudes.
    """
    n_qubits: int
    ops: tuple

    def apply(self, amps: np.ndarray) -> np.ndarray:
        n = self.n_qubits
        t = amps.reshape((2,) * n)
        for kind, op in self.ops:
            if kind == "gather":
                amps[:] = amps[op]
            else:
                _apply_primitive(t, n, op)
        return amps


def compile_circuit(circuit: Circuit, min_run: int = 2) -> CompiledCircuit:
    n = circuit.n_qubits
    dtype = np.int32 if n < 31 else np.int64
    ops: list = []
    pending: list[Gate] = []

    def flush():
        if len(pending) >= min_run:
            src = np.arange(1 << n, dtype=dtype)
            for g in reversed(pending):  # every X / SWAP is its own inverse
                _permute_indices(src, g)
            ops.append(("gather", src))
        else:
            ops.extend(("gate", g) for g in pending)
        pending.clear()

    for g in circuit.flat():
        if g.kind in ("X", "SWAP"):
            pending.append(g)
        else:
            flush()
            ops.append(("gate", g))
    flush()
    return CompiledCircuit(n, tuple(ops))


def _row_split(g: Gate):
    """For a SUB gate whose controls all sit above its body, return the body width."""
    body = set()
    for h in g.sub.gates:
        body |= h.qubits()
    s = max(body) + 1 if body else 0
    return s if g.controls and min(g.controls) >= s else None


def run_rows(circuit: Circuit, state: Statevector, cache: dict | None = None) -> Statevector:
    """Run in place, executing controlled subcircuits row by row.

    A SUB gate whose controls lie above every qubit its body touches acts on the
    rows of the ``(2**(n-s), 2**s)`` reshaped state selected by the control
    pattern; the body is compiled once at width ``s``.  Other gates run as usual.
    The result equals ``run`` exactly up to floating-point summation order.
    """
    n = state.n_qubits
    cache = {} if cache is None else cache
    amps = state.amplitudes
    t = amps.reshape((2,) * n)
    for g in circuit.gates:
        s = _row_split(g) if g.kind == "SUB" else None
        if s is None:
            for h in Circuit(n, (g,)).flat():
                _apply_primitive(t, n, h)
            continue
        key = id(g.sub)
        if key not in cache:
            cache[key] = (g.sub, compile_circuit(Circuit(s, g.sub.gates)))
        comp = cache[key][1]
        rows = amps.reshape(-1, 1 << s)
        r = np.arange(rows.shape[0]) << s
        sel = np.ones(rows.shape[0], dtype=bool)
        for c, p in zip(g.controls, g.polarity):
            sel &= ((r >> c) & 1) == p
        for k in np.flatnonzero(sel):
            for _ in range(g.power):
                comp.apply(rows[k])
    return state
