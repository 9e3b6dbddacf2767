"""Distribution metrics and spin-chain observables."""
from __future__ import annotations

from collections import defaultdict
from typing import Callable, Mapping, Sequence

import numpy as np

from .markov import ProblemInstance


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distributions have different lengths {p.shape} and {q.shape}")
    return p, q


def fidelity(p, q) -> float:
    """Classical (Bhattacharyya) fidelity (sum sqrt(p q))^2."""
    p, q = _pair(p, q)
    bc = np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)))
    return float(min(1.0, bc**2))


def tv_distance(p, q) -> float:
    p, q = _pair(p, q)
    return float(0.5 * np.sum(np.abs(p - q)))


def basin_states(instance: ProblemInstance, r: int = 1) -> list[int]:
    """States within L-infinity distance r of a minimum; balls do not wrap."""
    if instance.grid_side is None:
        raise ValueError("basin mass is defined on grid instances only")
    if r < 0:
        raise ValueError("radius must be non-negative")
    out = []
    for x in range(instance.state_count):
        i, j = instance.coords(x)
        if any(max(abs(i - mi), abs(j - mj)) <= r for mi, mj in map(instance.coords, instance.minima)):
            out.append(x)
    return out


def basin_mass(p, instance: ProblemInstance, r: int = 1) -> float:
    p = np.asarray(p, dtype=float)
    return float(p[basin_states(instance, r)].sum())


def expectation(p, observable: Mapping[int, float] | Sequence[float] | Callable[[int], float]) -> float:
    p = np.asarray(p, dtype=float)
    if callable(observable):
        vals = np.array([observable(x) for x in range(len(p))], dtype=float)
    elif isinstance(observable, Mapping):
        vals = np.array([observable[x] for x in range(len(p))], dtype=float)
    else:
        vals = np.asarray(observable, dtype=float)
    if vals.shape != p.shape:
        raise ValueError("observable and distribution cover different spaces")
    return float(np.dot(p, vals))


def observables_ising(instance: ProblemInstance) -> dict[str, np.ndarray]:
    if instance.kind != "ising":
        raise ValueError("spin observables need an Ising instance")
    S = np.array([instance.spins(x) for x in range(instance.state_count)])
    walls = np.sum(S[:, :-1] != S[:, 1:], axis=1)
    return {"energy": instance.energies.copy(),
            "magnetization": S.sum(axis=1).astype(float),
            "domain_walls": walls.astype(float)}


def energy_sector_mass(p, instance: ProblemInstance, decimals: int = 9) -> dict[float, float]:
    """Probability mass per distinct energy level, keyed by ascending level."""
    p = np.asarray(p, dtype=float)
    acc: dict[float, float] = defaultdict(float)
    for x, e in enumerate(instance.energies):
        acc[round(float(e), decimals) + 0.0] += p[x]
    return dict(sorted(acc.items()))
