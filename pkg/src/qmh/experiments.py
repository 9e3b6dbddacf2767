"""Experiment drivers behind the command-line interface.

Every driver returns plain data (rows plus result dictionaries); writing files
is left to ``write_csv`` / ``write_results`` so the same functions back the
scripts, the CLI and the test-suite.
"""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import circuits as cz
from .config import ExperimentConfig
from .filters import (CircuitPipeline, FilterSpec, PipelineResult, instance_label,
                      run_pipeline, subspace_sweep)
from .markov import (ProblemInstance, build_double_well, build_ising, discriminant,
                     dual_kernels, dual_stationary, gibbs_distribution, mh_kernel,
                     spectral_gap)
from .metrics import (basin_mass, energy_sector_mass, expectation, fidelity,
                      observables_ising, tv_distance)
from .sim import Statevector, circuit_to_matrix, marginal_distribution, run
from .walks import (EncodedSubspace, PHASE_TOL, WalkSpace, circuit_on_walk_space,
                    eigenphase_decomposition, qubitized_walk, reference_boxtimes,
                    seed_input, spectral_report, synthetic_spue_of_discriminant,
                    target_input)


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def write_results(path, command: str, cfg: ExperimentConfig, results: list[dict], extra: dict | None = None):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "config": cfg.as_dict(), "results": results}
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


# spectra on the invariant subspace ----------------------------------------------

def walk_phases_on_span(G: np.ndarray, varphi: float, tol: float = 1e-12) -> np.ndarray:
    """Eigenphases of the penalised walk on span(Im B, XS Im B).

    For each eigenvalue g of G = B^dag XS B with |g| < 1 the walk acts on a
    two-dimensional block with characteristic polynomial
    l^2 - (1 + e^{i varphi}) g l + e^{i varphi}; for g = +-1 the block
    collapses to the single eigenvalue g.
    """
    e = np.exp(1j * varphi)
    out = []
    for g in np.linalg.eigvalsh(G):
        if abs(abs(g) - 1) < tol:
            out.append(np.angle(np.sign(g) + 0j))
        else:
            out.extend(np.angle(np.roots([1, -(1 + e) * g, e])))
    return np.sort(np.array(out))


def angular_gap(phases: np.ndarray, tol: float = PHASE_TOL) -> float:
    nz = np.abs(phases[np.abs(phases) > tol])
    return float(nz.min()) if nz.size else float("nan")


@dataclass
class SpectralSummary:
    delta: float
    lambda2: float
    gap_discriminant_walk: float
    gap_W: float
    gap_V: float

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


def spectral_summary(instance: ProblemInstance, varphi: float, sub: EncodedSubspace | None = None) -> SpectralSummary:
    P = mh_kernel(instance)
    pi = gibbs_distribution(instance).probs
    delta, lam2 = spectral_gap(P, pi)
    sub = sub or EncodedSubspace(instance)
    return SpectralSummary(delta, lam2, math.acos(max(-1.0, min(1.0, lam2))),
                           angular_gap(walk_phases_on_span(sub.G, 0.0)),
                           angular_gap(walk_phases_on_span(sub.G, varphi)))


# double well ------------------------------------------------------------------

DW_HEADER = ("m", "penalised", "fidelity", "tv_distance", "basin_mass", "success_probability")


def _dw_row(res: PipelineResult, instance, pi) -> tuple:
    F, tv, bm = fidelity(res.p_X, pi), tv_distance(res.p_X, pi), basin_mass(res.p_X, instance, 1)
    res.metrics.update({"fidelity": F, "tv_distance": tv, "basin_mass": bm})
    return (res.m, res.penalised, F, tv, bm, res.success_probability)


def cmd_doublewell(cfg: ExperimentConfig, log: Callable[[str], None] = lambda s: None):
    instance = build_double_well(cfg.grid_side, cfg.temperature)
    pi = gibbs_distribution(instance).probs
    rows, results = [], []
    pipeline = None
    if cfg.mode != "oracle":
        pipeline = CircuitPipeline(instance, cfg.varphi if cfg.penalised else 0.0, True, cfg.sim_cap)
    for m in cfg.m:
        res = run_pipeline(instance, FilterSpec(m, cfg.varphi, cfg.mode), cfg.penalised,
                           sim_cap=cfg.sim_cap, pipeline=pipeline)
        rows.append(_dw_row(res, instance, pi))
        results.append(res.as_dict())
        log(" ".join(fmt(v) for v in rows[-1]))
    if cfg.compare_unpenalised:
        mode = "oracle" if cfg.mode == "coherent" else cfg.mode
        pl = None if mode == "oracle" else CircuitPipeline(instance, 0.0, True, cfg.sim_cap)
        res = run_pipeline(instance, FilterSpec(5, cfg.varphi, mode), False, sim_cap=cfg.sim_cap, pipeline=pl)
        rows.append(_dw_row(res, instance, pi))
        results.append(res.as_dict())
        log(" ".join(fmt(v) for v in rows[-1]))
    return rows, results


# ising -----------------------------------------------------------------------

def ising_levels(instance: ProblemInstance) -> list[float]:
    return list(energy_sector_mass(np.zeros(instance.state_count), instance).keys())


def ising_header(instance: ProblemInstance) -> tuple[str, ...]:
    lv = [f"mass_E{int(e):+d}" if float(e).is_integer() else f"mass_E{e:+g}" for e in ising_levels(instance)]
    return ("beta", "m", "fidelity", "energy", "energy_gibbs", "magnetization_error",
            "domain_wall_error", *lv, "success_probability", "resolved")


def _ising_point(args):
    beta, cfg_d = args
    cfg = ExperimentConfig(**{**cfg_d, "m": tuple(cfg_d["m"]), "beta": tuple(cfg_d["beta"])})
    instance = build_ising(cfg.n_spins, cfg.J, cfg.h, beta)
    pi = gibbs_distribution(instance).probs
    obs = observables_ising(instance)
    varphi = cfg.varphi if cfg.penalised else 0.0
    sub = EncodedSubspace(instance)
    spec = spectral_summary(instance, cfg.varphi, sub)
    gap = spec.gap_V if cfg.penalised else spec.gap_W
    if cfg.mode == "oracle":
        out = subspace_sweep(instance, cfg.m, varphi, sub)
        res_list = [PipelineResult(instance_label(instance), "oracle", m, varphi, cfg.penalised, *out[m])
                    for m in cfg.m]
    else:
        pl = CircuitPipeline(instance, varphi, True, cfg.sim_cap)
        res_list = [run_pipeline(instance, FilterSpec(m, cfg.varphi, cfg.mode), cfg.penalised,
                                 sim_cap=cfg.sim_cap, pipeline=pl) for m in cfg.m]
    gibbs = {k: expectation(pi, v) for k, v in obs.items()}
    gibbs_sectors = energy_sector_mass(pi, instance)
    rows, results = [], []
    for res in res_list:
        p = res.p_X
        E = expectation(p, obs["energy"])
        sectors = energy_sector_mass(p, instance)
        resolved = 2 * math.pi / 2**res.m <= gap
        row = (beta, res.m, fidelity(p, pi), E, gibbs["energy"],
               abs(expectation(p, obs["magnetization"]) - gibbs["magnetization"]),
               abs(expectation(p, obs["domain_walls"]) - gibbs["domain_walls"]),
               *sectors.values(), res.success_probability, resolved)
        res.metrics.update({"beta": beta, "fidelity": row[2], "energy": E, "energy_gibbs": gibbs["energy"],
                            "magnetization_error": row[5], "domain_wall_error": row[6],
                            "sector_mass": {fmt(k): v for k, v in sectors.items()},
                            "sector_mass_gibbs": {fmt(k): v for k, v in gibbs_sectors.items()},
                            "resolved": resolved})
        rows.append(row)
        results.append(res.as_dict())
    return rows, results, {"beta": beta, **spec.as_dict()}


def cmd_ising(cfg: ExperimentConfig, log: Callable[[str], None] = lambda s: None):
    instance = build_ising(cfg.n_spins, cfg.J, cfg.h, cfg.beta[0])
    cz.coin_width(instance)  # reject unsupported chain lengths early
    tasks = [(b, cfg.as_dict()) for b in cfg.beta]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            outs = list(ex.map(_ising_point, tasks))  # map keeps beta order
    else:
        outs = []
        for t in tasks:
            outs.append(_ising_point(t))
            log(f"beta={fmt(t[0])} done")
    rows = [r for o in outs for r in o[0]]
    results = [r for o in outs for r in o[1]]
    spectra = [o[2] for o in outs]
    return ising_header(instance), rows, results, spectra


# validation ------------------------------------------------------------------

@dataclass
class Check:
    name: str
    ok: bool
    measured: str
    tolerance: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: measured {self.measured} (tolerance {self.tolerance})"


def stationarity_residuals(instance: ProblemInstance) -> dict[str, float]:
    pi = gibbs_distribution(instance).probs
    P = mh_kernel(instance).matrix
    T, A, PP = (k.matrix for k in dual_kernels(instance))
    nu = dual_stationary(pi, instance.proposal_matrix()).probs
    flow = pi[:, None] * P
    return {
        "piP": float(np.max(np.abs(pi @ P - pi))),
        "detailed_balance": float(np.max(np.abs(flow - flow.T))),
        "rows_P": float(np.max(np.abs(P.sum(1) - 1))),
        "rows_dual": float(max(np.max(np.abs(M.sum(1) - 1)) for M in (T, A, PP))),
        "nuT": float(np.max(np.abs(nu @ T - nu))),
        "nuA": float(np.max(np.abs(nu @ A - nu))),
        "nuP": float(np.max(np.abs(nu @ PP - nu))),
        "range": float(max(max(-M.min(), M.max() - 1) for M in (P, T, A, PP))),
    }


def discriminant_walk_check(instance: ProblemInstance) -> dict[str, float]:
    """Dilation walk phases vs +-arccos of the discriminant spectrum."""
    P = mh_kernel(instance)
    pi = gibbs_distribution(instance).probs
    D = discriminant(P, pi).matrix
    U, box = synthetic_spue_of_discriminant(D)
    rep = spectral_report(qubitized_walk(U, box))
    v = np.clip(np.linalg.eigvalsh(D), -1, 1)
    v = np.where(np.abs(np.abs(v) - 1) < 1e-12, np.sign(v), v)
    expect = np.sort(np.concatenate([np.arccos(v), -np.arccos(v)]))
    got = np.sort(rep.eigenphases)
    # phase pi may come out as -pi; compare on the circle, nearest neighbour both ways
    circ = np.abs(np.angle(np.exp(1j * (got[:, None] - expect[None, :]))))
    diff = np.concatenate([circ.min(axis=1), circ.min(axis=0)])
    delta, lam2 = spectral_gap(P, pi)
    return {"phase_error": float(diff.max()), "gap": rep.angular_gap,
            "gap_error": abs(rep.angular_gap - math.acos(lam2)), "delta": delta,
            "sqrt_delta": math.sqrt(delta)}


@dataclass
class ReducedWalk:
    """Dense walk-space matrices of the circuits for a small instance."""
    instance: ProblemInstance
    varphi: float

    def __post_init__(self):
        inst = self.instance
        self.layout = cz.walk_layout(inst)
        self.space = WalkSpace(inst, self.layout)
        B = cz.build_boxtimes(inst, self.layout)
        self.W = circuit_on_walk_space(cz.build_walk(inst, self.layout, B), self.space, self.layout)
        self.V = circuit_on_walk_space(
            cz.build_penalised_walk(inst, self.layout, self.varphi, fused=False, boxtimes=B),
            self.space, self.layout)
        self.B = reference_boxtimes(inst, self.space).toarray()
        self.target = self.B @ target_input(inst)
        self.seed = self.B @ seed_input(inst)


def degeneracy_check(rw: ReducedWalk, tol: float = PHASE_TOL) -> dict:
    rW, rV = spectral_report(rw.W, rw.target), spectral_report(rw.V, rw.target)
    return {"ker_W": rW.zero_multiplicity, "ker_V": rV.zero_multiplicity,
            "target_residual": float(np.max(np.abs(rw.V @ rw.target - rw.target))),
            "gap_W": rW.angular_gap, "gap_V": rV.angular_gap}


def exact_filter_marginal(rw: ReducedWalk, tol: float = PHASE_TOL) -> np.ndarray:
    """Project the seed onto the eigenphase-0 space of V, then decode by circuit."""
    th, Z = eigenphase_decomposition(rw.V)
    Z0 = Z[:, np.abs(th) <= tol]
    v = Z0 @ (Z0.conj().T @ rw.seed)
    full = np.zeros(rw.layout.dim, dtype=np.complex128)
    full[rw.space.to_layout_indices(rw.layout)] = v / np.linalg.norm(v)
    out = run(cz.build_decoding(rw.instance, rw.layout), Statevector(full, rw.layout))
    return marginal_distribution(out, "x")


def mode_equivalence(instance: ProblemInstance, m: int, varphi: float, penalised: bool = True) -> dict:
    pl = CircuitPipeline(instance, varphi if penalised else 0.0)
    res = {mode: run_pipeline(instance, FilterSpec(m, varphi, mode), penalised, engine="circuit",
                              pipeline=pl) for mode in ("coherent", "semiclassical", "oracle")}
    res["subspace"] = run_pipeline(instance, FilterSpec(m, varphi, "oracle"), penalised, engine="subspace")
    ref = res["coherent"]
    return {"p_X": max(float(np.max(np.abs(r.p_X - ref.p_X))) for r in res.values()),
            "success": max(abs(r.success_probability - ref.success_probability) for r in res.values()),
            "results": res}


def cmd_validate(varphi: float = 1.0472, log: Callable[[str], None] = print) -> list[Check]:
    checks: list[Check] = []

    def add(name, ok, measured, tol):
        c = Check(name, bool(ok), fmt(measured), tol)
        checks.append(c)
        log(c.line())

    dw = build_double_well(4, 1.0)
    isg = build_ising(4, 1.0, 0.0, 1.0)
    for inst in (dw, isg):
        r = stationarity_residuals(inst)
        for k, v in r.items():
            add(f"{instance_label(inst)} {k}", v <= 1e-12, v, "1e-12")
    add("basin mass of pi (r=1)", abs(basin_mass(gibbs_distribution(dw).probs, dw) - 0.9815) <= 5e-5,
        basin_mass(gibbs_distribution(dw).probs, dw), "0.9815 +- 5e-5")
    small = [build_double_well(2, 1.0)] + [build_ising(2, 1.0, 0.0, b) for b in (0.25, 0.5, 1.0, 2.0, 4.0)]
    for inst in small + [dw, isg]:
        d = discriminant_walk_check(inst)
        add(f"{instance_label(inst)} dilation phases", d["phase_error"] <= 1e-9, d["phase_error"], "1e-9")
        add(f"{instance_label(inst)} gap = arccos(lambda2)", d["gap_error"] <= 1e-9, d["gap_error"], "1e-9")
        add(f"{instance_label(inst)} gap >= sqrt(delta)", d["gap"] >= d["sqrt_delta"],
            f"{fmt(d['gap'])} vs {fmt(d['sqrt_delta'])}", "inequality")
    rw = ReducedWalk(build_double_well(2, 1.0), varphi)
    deg = degeneracy_check(rw)
    add("2x2 grid dim ker(W - I) > 1", deg["ker_W"] > 1, deg["ker_W"], "> 1")
    add("2x2 grid dim ker(V - I) = 1", deg["ker_V"] == 1, deg["ker_V"], "= 1")
    add("2x2 grid V fixes target", deg["target_residual"] <= 1e-9, deg["target_residual"], "1e-9")
    pX = exact_filter_marginal(rw)
    err = float(np.max(np.abs(pX - gibbs_distribution(rw.instance).probs)))
    add("2x2 grid exact filter gives pi", err <= 1e-9, err, "1e-9")
    for inst in (build_double_well(2, 1.0), build_ising(2, 1.0, 0.0, 0.7)):
        for m in (1, 2, 3):
            me = mode_equivalence(inst, m, varphi)
            add(f"{instance_label(inst)} m={m} mode equivalence p_X", me["p_X"] <= 1e-9, me["p_X"], "1e-9")
            add(f"{instance_label(inst)} m={m} mode equivalence success", me["success"] <= 1e-10,
                me["success"], "1e-10")
    for inst in (dw, isg):
        s = spectral_summary(inst, varphi)
        log(f"INFO {instance_label(inst)} delta={fmt(s.delta)} gap_W={fmt(s.gap_W)} "
            f"gap_V={fmt(s.gap_V)} gap_W/delta={fmt(s.gap_W / s.delta)} gap_W/sqrt(delta)={fmt(s.gap_W / math.sqrt(s.delta))}")
    return checks


# report ------------------------------------------------------------------------

def cmd_report(results_path, outdir=None) -> list[Path]:
    with open(results_path) as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or "results" not in doc or "command" not in doc:
        raise ValueError(f"{results_path} is not a results file")
    outdir = Path(outdir) if outdir else Path(results_path).with_suffix("")
    outdir = Path(str(outdir) + "_report") if outdir == Path(results_path) else outdir
    written = []
    res = doc["results"]
    if doc["command"] == "doublewell":
        cfg = doc["config"]
        inst = build_double_well(cfg["grid_side"], cfg["temperature"])
        pi = gibbs_distribution(inst).probs
        for r in res:
            tag = f"m{r['m']}" + ("" if r["penalised"] else "_unpenalised")
            path = outdir / f"heatmap_{tag}.csv"
            rows = [(*inst.coords(x), r["p_X"][x], pi[x]) for x in range(inst.state_count)]
            write_csv(path, ("i", "j", "p_X", "pi"), rows)
            written.append(path)
        return written
    if doc["command"] != "ising":
        raise ValueError(f"unknown results command {doc['command']!r}")
    betas = sorted({r["metrics"]["beta"] for r in res})
    ms = sorted({r["m"] for r in res})
    by = {(r["metrics"]["beta"], r["m"]): r["metrics"] for r in res}

    def table(name, key, with_gibbs=None):
        header = ["beta"] + ([with_gibbs] if with_gibbs else []) + [f"m{m}" for m in ms]
        rows = []
        for b in betas:
            row = [b]
            if with_gibbs:
                row.append(by[(b, ms[0])][with_gibbs])
            row += [by[(b, m)][key] for m in ms]
            rows.append(row)
        path = outdir / name
        write_csv(path, header, rows)
        written.append(path)

    table("fidelity_vs_beta.csv", "fidelity")
    table("energy_vs_beta.csv", "energy", "energy_gibbs")
    table("domain_wall_error_vs_beta.csv", "domain_wall_error")
    rows = []
    for b in betas:
        for m in ms:
            met = by[(b, m)]
            for lvl, mass in met["sector_mass"].items():
                rows.append((b, m, float(lvl), mass, met["sector_mass_gibbs"][lvl]))
    path = outdir / "sector_mass_vs_beta.csv"
    write_csv(path, ("beta", "m", "level", "mass", "mass_gibbs"), rows)
    written.append(path)
    return written
