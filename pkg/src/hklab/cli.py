"""Batch experiment driver.

Ties the laboratory modules into reproducible command-line runs: each
subcommand resolves an ExperimentConfig (JSON file plus flag overrides),
executes one pipeline, writes its artifacts under --out, and finishes
with a manifest.json listing every artifact and the config hash.  All
floating output is fixed to 17 significant digits so reruns with the
same config are byte-identical.

Exit codes: 0 success, 1 a pass flag came back false, 2 invalid
configuration, 3 numerical failure inside a pipeline.

Thread control: --threads (or HKLAB_THREADS) caps the BLAS worker pools;
it must be applied before numpy loads, which is why the heavy imports
live inside the handlers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

KINDS = ("renorm", "exponents", "gasket", "chain", "phi",
         "local_hk", "jump_hk", "verify", "crossover")

FAMILIES = ("sub_gaussian", "stable_like", "rho_gaussian", "SHK", "SplusHK",
            "GplusHK_lower", "UHK_upper", "GHK_both")

LOCAL_FAMILIES = ("sub_gaussian", "rho_gaussian")

DEFAULT_SEED = 20260819
DEFAULT_INTERIOR_PAIRS = 50


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj, key=str):
            items.append(f"{inner}{json.dumps(str(k))}: "
                         f"{canonical_json(obj[k], indent + 1)}")
        return "{\n" + ",\n".join(items) + f"\n{pad}}}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [f"{inner}{canonical_json(v, indent + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + f"\n{pad}]"
    # numpy scalars and anything float-like fall through here
    if hasattr(obj, "item"):
        return canonical_json(obj.item(), indent)
    raise TypeError(f"canonical_json: unsupported type {type(obj)!r}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One reproducible run: experiment kind plus every knob it reads."""

    kind: str
    tau: float = 0.6
    levels: Optional[list] = None
    family: Optional[str] = None
    scales: dict = field(default_factory=dict)
    t_grid: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    out: str = "out"
    seed: int = DEFAULT_SEED
    space_csv: Optional[str] = None

    _KEYS = ("kind", "tau", "levels", "family", "scales", "t_grid", "pairs",
             "thresholds", "out", "seed", "space_csv")

    @classmethod
    def from_file(cls, path: str, kind: str) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValueError(f"config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ValueError(f"config {path}: expected a JSON object")
        unknown = set(raw) - set(cls._KEYS)
        if unknown:
            raise ValueError(f"config {path}: unknown keys {sorted(unknown)}")
        raw.setdefault("kind", kind)
        return cls(**raw)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}")
        if not (0.5 < self.tau < 1.0):
            raise ValueError(f"tau must lie in (0.5, 1), got {self.tau}")
        if self.levels is not None:
            if not self.levels:
                raise ValueError("levels must be non-empty when given")
            for lv in self.levels:
                if not isinstance(lv, int) or not (1 <= lv <= 8):
                    raise ValueError(f"level {lv!r} out of supported range 1..8")
        if self.family is not None and self.family not in FAMILIES:
            raise ValueError(f"unknown bound family {self.family!r}")
        if not isinstance(self.seed, int):
            raise ValueError("seed must be an integer")
        for key in ("ratio", "drift", "slope"):
            v = self.thresholds.get(key)
            if v is not None and not (float(v) > 0.0):
                raise ValueError(f"threshold {key} must be positive")
        n_int = self.pairs.get("interior", DEFAULT_INTERIOR_PAIRS)
        if not isinstance(n_int, int) or n_int < 0:
            raise ValueError("pairs.interior must be a nonnegative integer")

    def resolved_levels(self) -> list:
        if self.levels is not None:
            return sorted(self.levels)
        if self.kind == "verify":
            if self.family is None or self.family in LOCAL_FAMILIES:
                return [4, 5, 6]
            return [5]
        if self.kind == "chain":
            return [4, 5, 6]
        if self.kind in ("jump_hk", "crossover"):
            return [5]
        return [4]

    def resolved_family(self) -> str:
        if self.family is not None:
            return self.family
        if self.kind == "verify":
            return "rho_gaussian"
        return "SplusHK"

    def threshold(self, key: str, default: float) -> float:
        return float(self.thresholds.get(key, default))

    def to_dict(self) -> dict:
        # the output directory is delivery plumbing, not experiment
        # identity, so it stays out of the hashed payload
        return {
            "kind": self.kind, "tau": self.tau,
            "levels": self.resolved_levels(),
            "family": self.family, "scales": self.scales,
            "t_grid": self.t_grid, "pairs": self.pairs,
            "thresholds": self.thresholds,
            "seed": self.seed, "space_csv": self.space_csv,
        }

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    if getattr(args, "tau", None) is not None:
        cfg.tau = args.tau
    if getattr(args, "level", None):
        cfg.levels = list(args.level)
    if getattr(args, "family", None) is not None:
        cfg.family = args.family
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "space", None) is not None:
        cfg.space_csv = args.space


# ---------------------------------------------------------------------------
# artifact plumbing
# ---------------------------------------------------------------------------

class Run:
    """Collects artifacts and stage summaries for one config."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.artifacts: list[str] = []
        self.ok = True
        os.makedirs(cfg.out, exist_ok=True)

    def write_json(self, name: str, payload) -> None:
        self._write(name, canonical_json(payload) + "\n")

    def write_text(self, name: str, text: str) -> None:
        self._write(name, text)

    def _write(self, name: str, text: str) -> None:
        path = os.path.join(self.cfg.out, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.artifacts.append(name)

    def summary(self, line: str) -> None:
        print(line)

    def finish(self) -> int:
        manifest = {
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.config_hash(),
            "artifacts": sorted(self.artifacts),
        }
        self.write_json("manifest.json", manifest)
        return 0 if self.ok else 1


# ---------------------------------------------------------------------------
# shared pipeline pieces (heavy imports stay inside)
# ---------------------------------------------------------------------------

def _solved_params(cfg: ExperimentConfig):
    from .gasket import GasketParams
    return GasketParams.solve(cfg.tau)


def _policy_pairs(graph, cfg: ExperimentConfig) -> list:
    """Default pair policy: the three corner pairs plus seeded interior."""
    from .gasket import sample_interior_pairs
    pairs = [(graph.corners[0], graph.corners[1]),
             (graph.corners[0], graph.corners[2]),
             (graph.corners[1], graph.corners[2])]
    n_int = int(cfg.pairs.get("interior", DEFAULT_INTERIOR_PAIRS))
    seed = int(cfg.pairs.get("seed", cfg.seed))
    if n_int > 0:
        pairs += sample_interior_pairs(graph, n_int, seed=seed)
    return pairs


def _canonical_scales(cfg: ExperimentConfig, params):
    """The tau-derived scale set: rho, diffusion power, corrected jump scale."""
    from .scale_calculus import ScaleFunction
    beta = params.beta_star
    rho_exp = float(cfg.scales.get("rho_exponent", params.gamma1))
    log_power = float(cfg.scales.get("log_power", 2.0))
    r0 = float(cfg.scales.get("r0", math.exp(-2.0 / beta)))
    return {
        "rho": ScaleFunction.power(rho_exp),
        "psi_c": ScaleFunction.power(beta),
        "psi_j": ScaleFunction.power_log(beta, log_power, r0),
        "r0": r0,
    }


def _pair_csv(grid, pairs, labels) -> str:
    lines = ["t,x,y,p"]
    for k, t in enumerate(grid.t_grid):
        P = grid.kernels[k]
        for a, b in pairs:
            lines.append(f"{t:.17g},{labels[a]},{labels[b]},{P[a, b]:.17g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def _run_renorm(run: Run) -> None:
    params = _solved_params(run.cfg)
    res = params.residuals()
    worst = max(res.values())
    ok = worst < 1e-10
    run.write_json("renorm.json", {"params": params.to_dict(),
                                   "residuals": res, "pass": ok})
    run.ok &= ok
    run.summary(f"renorm tau={params.tau:g}: sigma={params.sigma:.12g} "
                f"lambda={params.lam:.12g} residual_max={worst:.3e} "
                f"{'pass' if ok else 'FAIL'}")


def _run_exponents(run: Run) -> None:
    params = _solved_params(run.cfg)
    invariant = params.gamma1 < params.alpha_star
    payload = {
        "params": params.to_dict(),
        "residuals": params.residuals(),
        "gamma1_lt_alpha_star": invariant,
        "races_split": params.races_split(),
    }
    run.write_json("exponents.json", payload)
    run.ok &= invariant
    run.summary(f"exponents tau={params.tau:g}: alpha*={params.alpha_star:.12g} "
                f"beta*={params.beta_star:.12g} gamma1={params.gamma1:.12g} "
                f"gamma2={params.gamma2:.12g} "
                f"{'pass' if invariant else 'FAIL'}")


def _run_gasket(run: Run) -> None:
    from .gasket import (build_gasket, corner_resistance_report,
                         lattice_spacing, resistance_matrix)
    params = _solved_params(run.cfg)
    for level in run.cfg.resolved_levels():
        graph = build_gasket(params, level)
        R = resistance_matrix(graph)
        report = corner_resistance_report(graph)
        ok = abs(report["dilation"] - 1.0) < 1e-9
        payload = {
            "graph": graph.to_dict(),
            "mesh": lattice_spacing(graph, R),
            "diameter": float(R.max()),
            "corner_resistances": report,
            "pass": ok,
        }
        run.write_json(f"gasket_L{level}.json", payload)
        run.ok &= ok
        run.summary(f"gasket tau={params.tau:g} L{level}: "
                    f"n={graph.n_vertices} mesh={payload['mesh']:.6g} "
                    f"diam={payload['diameter']:.6g} "
                    f"dilation={report['dilation']:.12g} "
                    f"{'pass' if ok else 'FAIL'}")


def _run_chain(run: Run) -> None:
    cfg = run.cfg
    if cfg.space_csv is not None:
        _run_chain_csv(run)
        return
    from .gasket import corner_chain_growth
    params = _solved_params(cfg)
    growth = corner_chain_growth(params, cfg.resolved_levels())
    run.write_json("chain.json", growth.to_dict())
    run.write_text("chain_rows.csv", growth.to_csv())
    fitted = {pair: g for pair, g in growth.fitted.items()
              if isinstance(g, float) and math.isfinite(g)}
    ok = bool(fitted)
    run.ok &= ok
    parts = " ".join(f"{pair}={g:.5f}" for pair, g in sorted(fitted.items()))
    run.summary(f"chain tau={params.tau:g} levels={cfg.resolved_levels()}: "
                f"fitted {parts or 'none'} "
                f"(gamma1={params.gamma1:.5f} gamma2={params.gamma2:.5f})")


def _run_chain_csv(run: Run) -> None:
    # generic point cloud: profile over seeded pairs, then the power fit
    import numpy as np
    from .chain_metric import chain_profile, fit_rho_exponent, space_from_csv
    cfg = run.cfg
    space = space_from_csv(cfg.space_csv)
    rng = np.random.default_rng(cfg.seed)
    n_pairs = min(int(cfg.pairs.get("interior", DEFAULT_INTERIOR_PAIRS)),
                  space.n * (space.n - 1) // 2)
    seen = set()
    while len(seen) < n_pairs:
        a, b = rng.choice(space.n, size=2, replace=False)
        seen.add((min(int(a), int(b)), max(int(a), int(b))))
    pairs = sorted(seen)
    off = space.dist + np.diag(np.full(space.n, np.inf))
    eps_lo = 1.5 * float(off.min())
    eps_hi = space.diameter() / 2.0
    if eps_hi <= eps_lo:
        raise ValueError("space too small for a chain profile window")
    profile = chain_profile(space, pairs, np.geomspace(eps_lo, eps_hi, 12))
    fit = fit_rho_exponent(profile)
    run.write_json("chain.json", {"source": cfg.space_csv,
                                  "fit": fit.to_dict()})
    run.write_text("chain_profile.csv", profile.to_csv())
    run.summary(f"chain {cfg.space_csv}: gamma={fit.gamma:.5f} "
                f"C-={fit.C_minus:.4g} C+={fit.C_plus:.4g} "
                f"n={fit.n_samples}")


def _run_phi(run: Run) -> None:
    import numpy as np
    from .scale_calculus import phi_from_scales
    cfg = run.cfg
    params = _solved_params(cfg)
    scales = _canonical_scales(cfg, params)
    phi = phi_from_scales(scales["psi_c"], scales["psi_j"])
    report = phi.report
    ok = all(math.isfinite(v) and v > 0.0 for v in
             (report.comp_jump_C, report.comp_local_C))
    rs = np.geomspace(1e-6, 1.0, 97)
    lines = ["r,phi,psi_c,psi_j"]
    for r in rs:
        lines.append(f"{r:.17g},{float(phi(r)):.17g},"
                     f"{float(scales['psi_c'](r)):.17g},"
                     f"{float(scales['psi_j'](r)):.17g}")
    run.write_text("phi.csv", "\n".join(lines) + "\n")
    run.write_json("phi.json", {
        "tau": params.tau, "beta_star": params.beta_star, "r0": scales["r0"],
        "comp_jump_C": report.comp_jump_C,
        "comp_local_C": report.comp_local_C,
        "comp_large_C": report.comp_large_C,
        "comp_small_C": report.comp_small_C,
        "tail_exponent": report.tail_exponent,
        "integral_at_one": report.integral_at_one,
        "pass": ok,
    })
    run.ok &= ok
    run.summary(f"phi tau={params.tau:g}: comp_jump_C={report.comp_jump_C:.4g} "
                f"comp_local_C={report.comp_local_C:.4g} "
                f"{'pass' if ok else 'FAIL'}")


def _heat_common(run: Run, operator: str) -> None:
    import numpy as np
    from .gasket import build_gasket, lattice_spacing, resistance_matrix
    from .heat_lab import (calibrate_time_scale, heat_kernel, jump_generator,
                           local_generator, markov_checks, nle_statistic,
                           ondiagonal_slope)
    from .scale_calculus import ScaleFunction
    cfg = run.cfg
    params = _solved_params(cfg)
    scales = _canonical_scales(cfg, params)
    beta = params.beta_star
    for level in cfg.resolved_levels():
        graph = build_gasket(params, level)
        R = resistance_matrix(graph)
        mesh = lattice_spacing(graph, R)
        diam = float(R.max())
        if operator == "local":
            op = local_generator(graph)
            clock = ScaleFunction.power(beta)
        else:
            op = jump_generator(graph, scales["psi_j"], R=R)
            clock = ScaleFunction.power_log(beta, 1.0, scales["r0"])
        c_cal = calibrate_time_scale(op, clock, R)
        if operator == "local":
            clock_cal = ScaleFunction.power(beta, A=c_cal)
        else:
            clock_cal = ScaleFunction.power_log(beta, 1.0, scales["r0"],
                                                A=c_cal)
        t_lo = float(cfg.t_grid.get("lo", clock_cal(3.0 * mesh)))
        t_hi = float(cfg.t_grid.get("hi", clock_cal(diam / 1.5)))
        num = int(cfg.t_grid.get("num", 14))
        grid = heat_kernel(op, np.geomspace(t_lo, t_hi, num))
        checks = markov_checks(grid)
        ok = bool(checks["all_pass"])
        slope = ondiagonal_slope(grid)
        payload = {
            "level": level, "operator": operator,
            "calibration_constant": c_cal,
            "t_grid": [float(t) for t in grid.t_grid],
            "markov": checks,
            "ondiagonal_slope": slope,
            "slope_reference": -params.alpha_star / beta,
            "pass": ok,
        }
        if operator == "local":
            payload["nle"] = nle_statistic(grid, R, ScaleFunction.power(
                beta, A=c_cal))
        run.write_json(f"heat_{operator}_L{level}.json", payload)
        run.write_text(f"heat_{operator}_L{level}_pairs.csv",
                       _pair_csv(grid, _policy_pairs(graph, cfg),
                                 graph.labels))
        run.ok &= ok
        run.summary(f"heat {operator} tau={params.tau:g} L{level}: "
                    f"c_cal={c_cal:.6g} slope={slope:.5f} "
                    f"(ref {-params.alpha_star / beta:.5f}) "
                    f"{'pass' if ok else 'FAIL'}")


def _run_local_hk(run: Run) -> None:
    _heat_common(run, "local")


def _run_jump_hk(run: Run) -> None:
    _heat_common(run, "jump")


def _verify_local(run: Run) -> None:
    """Multi-level two-sided fit with a shared clock and lifted pairs."""
    import numpy as np
    from .estimate_verifier import BoundSpec, SampleWindow, fit_envelope
    from .gasket import (build_gasket, lattice_spacing, lift_pairs,
                         resistance_matrix)
    from .heat_lab import (calibrate_time_scale, heat_kernel, local_generator,
                           ondiagonal_slope)
    from .scale_calculus import ScaleFunction
    cfg = run.cfg
    params = _solved_params(cfg)
    family = cfg.resolved_family()
    levels = cfg.resolved_levels()
    scales = _canonical_scales(cfg, params)
    beta = params.beta_star

    graphs = {lv: build_gasket(params, lv) for lv in levels}
    mats = {lv: resistance_matrix(graphs[lv]) for lv in levels}
    base, fine = graphs[levels[0]], graphs[levels[-1]]

    # one clock for all levels: per-level calibration constants drift with
    # the mesh and would masquerade as fitted-constant drift
    cE = calibrate_time_scale(local_generator(fine), ScaleFunction.power(beta),
                              mats[levels[-1]])
    psi_cal = ScaleFunction.power(beta, A=cE)

    pairs_base = _policy_pairs(base, cfg)
    min_sep = 3.0 * lattice_spacing(base, mats[levels[0]])
    lo_div = float(cfg.t_grid.get("lo_div", 2.8))
    hi_div = float(cfg.t_grid.get("hi_div", 1.5))
    num = int(cfg.t_grid.get("num", 14))
    ratio_thr = cfg.threshold("ratio", 2.5)
    drift_thr = cfg.threshold("drift", 0.25)

    reports = {}
    for lv in levels:
        graph, R = graphs[lv], mats[lv]
        mesh = lattice_spacing(graph, R)
        diam = float(R.max())
        grid = heat_kernel(local_generator(graph),
                           np.geomspace(psi_cal(diam / lo_div),
                                        psi_cal(diam / hi_div), num))
        spec = BoundSpec(family, scales={"rho": scales["rho"],
                                         "psi_c": psi_cal},
                         t_max=float(psi_cal(diam)))
        window = SampleWindow.from_grid(grid, R, min_separation=min_sep,
                                        pairs=lift_pairs(base, graph,
                                                         pairs_base),
                                        min_saddle=mesh)
        rep = fit_envelope(grid, spec, window, threshold=ratio_thr)
        reports[lv] = rep
        run.write_text(f"verify_L{lv}_samples.csv", rep.to_csv())
        run.summary(f"verify {family} L{lv}: C={rep.constants['C']:.4f} "
                    f"c1={rep.constants['c1']:.4f} "
                    f"c2={rep.constants['c2']:.4f} "
                    f"max|log-ratio|={max(rep.max_upper_ratio, rep.max_lower_ratio):.4f} "
                    f"{'pass' if rep.pass_flag else 'FAIL'}")

    Cs = [reports[lv].constants["C"] for lv in levels]
    drifts = [abs(Cs[i + 1] - Cs[i]) / Cs[i] for i in range(len(Cs) - 1)]
    drift_ok = all(d <= drift_thr for d in drifts)

    # on-diagonal decay measured where the scaling window lives
    mesh_f = lattice_spacing(fine, mats[levels[-1]])
    diam_f = float(mats[levels[-1]].max())
    slope_grid = heat_kernel(local_generator(fine),
                             np.geomspace(psi_cal(3.0 * mesh_f),
                                          psi_cal(diam_f / 4.0), 12))
    slope = ondiagonal_slope(slope_grid)
    slope_ref = -params.alpha_star / beta
    slope_ok = abs(slope - slope_ref) <= cfg.threshold("slope", 0.07) * abs(slope_ref)

    all_pass = (all(reports[lv].pass_flag for lv in levels)
                and drift_ok and slope_ok)
    run.write_json("verify.json", {
        "family": family, "tau": params.tau, "levels": levels,
        "clock_constant": cE,
        "reports": {str(lv): reports[lv].to_dict() for lv in levels},
        "drift": {"values": drifts, "threshold": drift_thr, "pass": drift_ok},
        "slope": {"measured": slope, "reference": slope_ref,
                  "pass": slope_ok},
        "pass": all_pass,
    })
    run.ok &= all_pass
    if len(levels) > 1:
        run.summary(f"verify {family}: drift={max(drifts):.4f} "
                    f"(thr {drift_thr:g}) slope={slope:.5f} "
                    f"(ref {slope_ref:.5f}) "
                    f"{'pass' if all_pass else 'FAIL'}")


def _jump_setup(cfg: ExperimentConfig):
    """Level, graph, calibrated jump clock and spec scales for jump kinds."""
    from .gasket import build_gasket, lattice_spacing, resistance_matrix
    from .heat_lab import calibrate_time_scale, jump_generator
    from .scale_calculus import ScaleFunction
    params = _solved_params(cfg)
    scales = _canonical_scales(cfg, params)
    level = cfg.resolved_levels()[-1]
    graph = build_gasket(params, level)
    R = resistance_matrix(graph)
    mesh = lattice_spacing(graph, R)
    diam = float(R.max())
    op = jump_generator(graph, scales["psi_j"], R=R)
    beta = params.beta_star
    cJ = calibrate_time_scale(op, ScaleFunction.power_log(beta, 1.0,
                                                          scales["r0"]), R)
    phi_cal = ScaleFunction.power_log(beta, 1.0, scales["r0"], A=cJ)
    return params, scales, level, graph, R, mesh, diam, op, cJ, phi_cal


def _jump_spec_scales(family: str, scales: dict, phi_cal, params) -> dict:
    from .scale_calculus import ScaleFunction
    out = {"Phi": phi_cal, "psi_j": scales["psi_j"]}
    if family in ("SHK", "SplusHK", "UHK_upper"):
        out["rho"] = scales["rho"]
    if family == "GHK_both":
        out["rho"] = scales["rho"]
        out["psi_c"] = ScaleFunction.power(params.beta_star)
    return out


def _verify_jump(run: Run) -> None:
    import numpy as np
    from .estimate_verifier import BoundSpec, SampleWindow, fit_envelope
    from .heat_lab import heat_kernel
    cfg = run.cfg
    (params, scales, level, graph, R, mesh, diam, op, cJ,
     phi_cal) = _jump_setup(cfg)
    family = cfg.resolved_family()
    ratio_thr = cfg.threshold("ratio", 2.5)

    t_lo = float(cfg.t_grid.get("lo", phi_cal(mesh / 1.5)))
    t_hi = float(cfg.t_grid.get("hi", phi_cal(diam / 1.5)))
    num = int(cfg.t_grid.get("num", 16))
    grid = heat_kernel(op, np.geomspace(t_lo, t_hi, num))
    spec = BoundSpec(family,
                     scales=_jump_spec_scales(family, scales, phi_cal, params),
                     t_max=float(phi_cal(diam)))
    window = SampleWindow.from_grid(grid, R, min_separation=3.0 * mesh,
                                    pairs=_policy_pairs(graph, cfg),
                                    min_saddle=mesh)
    rep = fit_envelope(grid, spec, window, threshold=ratio_thr)
    run.write_text(f"verify_L{level}_samples.csv", rep.to_csv())
    run.write_json("verify.json", {
        "family": family, "tau": params.tau, "levels": [level],
        "clock_constant": cJ,
        "reports": {str(level): rep.to_dict()},
        "pass": rep.pass_flag,
    })
    run.ok &= rep.pass_flag
    rc = rep.regime_counts()
    run.summary(f"verify {family} L{level}: C={rep.constants['C']:.4f} "
                f"max|log-ratio|={max(rep.max_upper_ratio, rep.max_lower_ratio):.4f} "
                f"regimes nd={rc.get('near-diagonal', 0)} "
                f"jd={rc.get('jump-dominated', 0)} "
                f"exp={rc.get('exponential', 0)} "
                f"{'pass' if rep.pass_flag else 'FAIL'}")


def _run_verify(run: Run) -> None:
    if run.cfg.resolved_family() in LOCAL_FAMILIES:
        _verify_local(run)
    else:
        _verify_jump(run)


def _run_crossover(run: Run) -> None:
    import numpy as np
    from .estimate_verifier import (BoundSpec, SampleWindow,
                                    crossover_analysis, fit_envelope)
    from .gasket import corner_chain_growth
    from .heat_lab import heat_kernel
    cfg = run.cfg
    (params, scales, level, graph, R, mesh, diam, op, cJ,
     phi_cal) = _jump_setup(cfg)
    family = cfg.resolved_family()
    if family not in ("SHK", "SplusHK", "GHK_both"):
        raise ValueError(f"crossover needs a jump family with an exponential "
                         f"term, got {family!r}")
    t_lo = float(cfg.t_grid.get("lo", phi_cal(mesh / 1.5)))
    t_hi = float(cfg.t_grid.get("hi", phi_cal(diam / 1.5)))
    num = int(cfg.t_grid.get("num", 16))
    grid = heat_kernel(op, np.geomspace(t_lo, t_hi, num))
    spec = BoundSpec(family,
                     scales=_jump_spec_scales(family, scales, phi_cal, params),
                     t_max=float(phi_cal(diam)))
    window = SampleWindow.from_grid(grid, R, min_separation=3.0 * mesh,
                                    pairs=_policy_pairs(graph, cfg),
                                    min_saddle=mesh)
    rep = fit_envelope(grid, spec, window)
    spec_fit = spec.with_constants(rep.constants["C"], rep.constants["c1"],
                                   rep.constants["c2"])
    chain = None
    if params.races_split():
        chain = corner_chain_growth(params, cfg.resolved_levels())
    table = crossover_analysis(grid, spec_fit, window, chain=chain)
    run.write_json("crossover.json", table.to_dict())
    run.write_text("crossover.csv", table.to_csv())
    n_time = sum(1 for r in table.rows if r.get("kind") == "time")
    run.summary(f"crossover {family} L{level}: {n_time} pair rows, "
                f"{len(table.rows) - n_time} chain rows")


_HANDLERS = {
    "renorm": _run_renorm,
    "exponents": _run_exponents,
    "gasket": _run_gasket,
    "chain": _run_chain,
    "phi": _run_phi,
    "local_hk": _run_local_hk,
    "jump_hk": _run_jump_hk,
    "verify": _run_verify,
    "crossover": _run_crossover,
}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit status."""
    from .numerics import NumericalFailure
    try:
        cfg.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    runner = Run(cfg)
    try:
        _HANDLERS[cfg.kind](runner)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return runner.finish()


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hklab",
        description="chain metrics, gasket forms, and heat kernel "
                    "comparability experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    specs = [
        ("renorm", "solve the renormalization fixed point"),
        ("exponents", "solved exponent table for one tau"),
        ("gasket", "build gasket graphs and corner resistance reports"),
        ("chain", "chain-metric growth staircase or CSV-space profile"),
        ("phi", "subordination scale quadrature"),
        ("heat", "heat kernel grid with Markov checks"),
        ("verify", "two-sided comparability fit"),
        ("crossover", "jump/exponential regime boundary table"),
    ]
    for name, help_text in specs:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--tau", type=float, help="gasket weight parameter")
        p.add_argument("--level", type=int, action="append",
                       help="subdivision level (repeatable)")
        p.add_argument("--family", choices=FAMILIES,
                       help="bound family for verify/crossover")
        p.add_argument("--out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help="pair sampling seed")
        p.add_argument("--threads", type=int,
                       help="BLAS worker cap (overrides HKLAB_THREADS)")
        if name == "chain":
            p.add_argument("--space", help="CSV metric space instead of "
                                           "the gasket staircase")
        if name == "heat":
            p.add_argument("--operator", choices=("local", "jump"),
                           default="local")
    return parser


def _apply_thread_cap(args: argparse.Namespace) -> None:
    threads = getattr(args, "threads", None)
    if threads is None:
        env = os.environ.get("HKLAB_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError as exc:
                raise ValueError(f"HKLAB_THREADS={env!r} is not an "
                                 f"integer") from exc
    if threads is None:
        return
    if threads < 1:
        raise ValueError("thread cap must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv: Optional[list] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        _apply_thread_cap(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    command = args.command
    if command == "heat":
        kind = "local_hk" if args.operator == "local" else "jump_hk"
    else:
        kind = command
    try:
        if args.config:
            cfg = ExperimentConfig.from_file(args.config, kind)
            if cfg.kind != kind:
                raise ValueError(f"config kind {cfg.kind!r} does not match "
                                 f"subcommand {command!r}")
        else:
            cfg = ExperimentConfig(kind=kind)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    _apply_overrides(cfg, args)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
