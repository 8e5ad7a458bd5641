"""Experiment runner: ``aclab run``, ``aclab plots`` and ``aclab profiles``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .geometry import GeometryError, HypersurfaceSpec, fermi_chart, make_geometry
from .layer import (expansion_residuals, extract_level_set, fit_layer_height, fit_slope,
                    mean_curvature_report, zero_set_spec)
from .potential import WellError, from_config
from .profiles import build_profiles
from .solver import SolveOptions, energy, solve_ladder
from .spectral import assemble_diffuse, assemble_sharp, compare_spectra, eigs, lemma_suite, localization_check
from .variations import (SharpHypersurface, VectorFieldSpec, diffuse_measure, fd_first_variation_A,
                         fd_first_variation_E, fd_inner_second_variation, fd_second_variation_E,
                         first_variation_A, first_variation_E, inner_second_variation, limit_comparison,
                         random_directions, random_vector_fields, second_variation_E)

log = logging.getLogger("aclab")

SCENARIOS = ("spectrum-comparison", "layer-asymptotics", "variation-oracles", "lemma-suite")
SLOPE_SCENARIOS = set(SCENARIOS)


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass
class ExperimentConfig:
    name: str
    geometry: dict
    interface: HypersurfaceSpec
    well: object
    h: object
    ladder: tuple
    scenarios: tuple
    output: str
    seed: int = 0
    modes: int = 6
    orthogonal_to: str = "phi"
    tolerances: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def tol(self, key):
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])


DEFAULT_TOLERANCES = {
    "slope_min": 0.9,
    "slope_min_second": 1.9,
    "oracle_rel": 1e-4,
    "mass_rel": 0.02,
    "directions": 10,
    "floor": 1e-9,
}


def _field(raw, path, kind=None, default=...):
    cur = raw
    for key in path.split("."):
        if not isinstance(cur, dict) or key not in cur:
            if default is ...:
                raise ConfigError(f"missing field '{path}'")
            return default
        cur = cur[key]
    if kind is not None and not isinstance(cur, kind):
        raise ConfigError(f"field '{path}' has the wrong type ({type(cur).__name__})")
    return cur


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"TOML syntax error: {exc}") from None
    name = _field(raw, "experiment.name", str, "experiment")
    scen = _field(raw, "experiment.scenario", (str, list))
    scen = [scen] if isinstance(scen, str) else list(scen)
    if "full" in scen:
        scen = list(SCENARIOS)
    bad = [s for s in scen if s not in SCENARIOS]
    if bad or not scen:
        raise ConfigError(f"field 'experiment.scenario': unknown scenario {bad or scen}")
    try:
        geom = make_geometry(_field(raw, "geometry", dict))
        iface = _field(raw, "interface", dict)
        gamma = HypersurfaceSpec(str(iface.get("kind", "")), tuple(float(x) for x in iface.get("positions", ())))
        gamma.validate(geom)
    except GeometryError as exc:
        raise ConfigError(f"field 'geometry'/'interface': {exc}") from None
    try:
        well = from_config(_field(raw, "well", (str, dict), "canonical"))
    except WellError as exc:
        raise ConfigError(f"field 'well': {exc}") from None
    presc = _field(raw, "prescribing", dict, {"h": 0.0})
    if "h" in presc:
        h = presc["h"]
        if not isinstance(h, (int, float, str)):
            raise ConfigError("field 'prescribing.h' must be a number or an expression string")
    elif presc.get("from_curvature"):
        h = "curvature"
    else:
        raise ConfigError("field 'prescribing' needs 'h' or 'from_curvature = true'")
    ladder = _field(raw, "ladder.eps", list)
    if not ladder:
        raise ConfigError("field 'ladder.eps' is empty")
    try:
        ladder = tuple(float(e) for e in ladder)
    except (TypeError, ValueError):
        raise ConfigError("field 'ladder.eps' must hold numbers") from None
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ConfigError("field 'ladder.eps' must be strictly decreasing")
    if ladder[0] > 0.2 or ladder[-1] <= 0:
        raise ConfigError("field 'ladder.eps' must lie in (0, 0.2]")
    if len(ladder) < 3 and SLOPE_SCENARIOS.intersection(scen):
        raise ConfigError("field 'ladder.eps': slope checks need at least 3 ladder values")
    tol = _field(raw, "tolerances", dict, {})
    unknown = set(tol) - set(DEFAULT_TOLERANCES)
    if unknown:
        raise ConfigError(f"field 'tolerances': unknown keys {sorted(unknown)}")
    out = _field(raw, "experiment.output", str, f"out/{name}")
    orth = _field(raw, "layer.orthogonal_to", str, "phi")
    if orth not in ("phi", "phi_hat"):
        raise ConfigError("field 'layer.orthogonal_to' must be 'phi' or 'phi_hat'")
    return ExperimentConfig(name, geom.to_config(), gamma, well, h, ladder, tuple(scen), out,
                            int(_field(raw, "experiment.seed", int, 0)),
                            int(_field(raw, "spectrum.modes", int, 6)), orth, dict(tol), raw)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} not found")
    return parse_config(p.read_text())


# ----------------------------------------------------------------- checks

@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def to_json(self):
        v = self.value if math.isfinite(self.value) else None
        return {"name": self.name, "value": v, "threshold": self.threshold, "passed": bool(self.passed),
                "detail": self.detail}


def _slope_check(name, eps, values, minimum, floor):
    vals = np.abs(np.asarray(values, dtype=float))
    if np.all(vals <= floor):
        return Check(name, float("nan"), minimum, True, f"all values below the floor {floor:g}")
    s = fit_slope(eps, vals)
    return Check(name, s, minimum, bool(s >= minimum), "log-log slope")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


# --------------------------------------------------------------- context

class Context:
    """Shared inputs of one run: profiles, the solved ladder and the limit data."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.geom = make_geometry(cfg.geometry)
        self.profiles = build_profiles(cfg.well)
        self.e0 = self.profiles.e0
        self.gamma = cfg.interface
        if cfg.h == "curvature":
            s0, sig = self.gamma.components[0]
            H = sig * float(self.geom.rho(s0, 1) / self.geom.rho(s0))
            self.h = 0.5 * self.e0 * H
        else:
            self.h = cfg.h
        self.h_sharp = (2 / self.e0 * self.h if isinstance(self.h, (int, float))
                        else f"({self.h})*{2 / self.e0!r}")
        self.solutions = solve_ladder(self.geom, self.gamma, self.h, self.profiles, cfg.ladder,
                                      SolveOptions(ladder=cfg.ladder))
        self.surface = SharpHypersurface(self.geom, self.gamma)

    def fit(self, chart, eps, u):
        return fit_layer_height(chart, self.profiles, eps, u, h_fn=self.h, orthogonal_to=self.cfg.orthogonal_to)

    def chart(self, u):
        return fermi_chart(u.geom, zero_set_spec(u.geom, u), self.z_max)

    @property
    def clearance(self):
        """Distance from Gamma to the poles or, between components, half their separation."""
        pos = [s0 for s0, _ in self.gamma.components]
        L = self.geom.s_length
        gaps = [L] if self.geom.periodic_s else [min(p, L - p) for p in pos]
        if len(pos) == 2:
            gaps.append(0.5 * (pos[1] - pos[0]))
            if self.geom.periodic_s:
                gaps.append(0.5 * (L - pos[1] + pos[0]))
        return min(gaps)

    @property
    def z_max(self):
        return min(0.8, 0.9 * self.clearance)


# --------------------------------------------------------------- scenarios

def scenario_spectrum(ctx: Context, out: Path):
    cfg = ctx.cfg
    reports = []
    for sol in ctx.solutions:
        op = assemble_diffuse(sol.u.geom, sol.eps, sol.u, ctx.profiles.well)
        reports.append(eigs(op, cfg.modes))
    chart = fermi_chart(ctx.geom, ctx.gamma, ctx.z_max)
    sharp = eigs(assemble_sharp(chart, ctx.h, ctx.e0), cfg.modes + 1)
    table = compare_spectra(reports, sharp, cfg.modes)
    table.to_csv(out / "spectrum.csv")
    with open(out / "spectra.json", "w") as fh:
        json.dump({"diffuse": [r.to_json() for r in reports], "sharp": sharp.to_json()}, fh, indent=1)
    checks = []
    for ell, st in table.status.items():
        if st == "floor":
            checks.append(Check(f"spectrum.gap_slope[{ell}]", float("nan"), cfg.tol("slope_min"), True,
                                "gaps at the eigenvalue round-off floor"))
        else:
            s = table.slopes[ell]
            checks.append(Check(f"spectrum.gap_slope[{ell}]", s, cfg.tol("slope_min"), s >= cfg.tol("slope_min")))
    last = reports[-1]
    checks.append(Check("spectrum.index_agree", float(last.index), float(sharp.index), table.index_agree,
                        f"diffuse {last.index}, sharp {sharp.index}"))
    checks.append(Check("spectrum.nullity_agree", float(last.nullity), float(sharp.nullity), table.nullity_agree,
                        f"diffuse {last.nullity}, sharp {sharp.nullity}"))
    flags = {"index": [r.index for r in reports], "nullity": [r.nullity for r in reports],
             "sharp_index": sharp.index, "sharp_nullity": sharp.nullity}
    return checks, flags


def scenario_layer(ctx: Context, out: Path):
    cfg = ctx.cfg
    floor = cfg.tol("floor")
    curves, rows = {}, []
    for sol in ctx.solutions:
        u = sol.u
        curves[sol.eps] = [extract_level_set(u.geom, u, tau) for tau in (0.0, 0.3, -0.3)]
        ch = ctx.chart(u)
        hf = ctx.fit(ch, sol.eps, u)
        lf = expansion_residuals(ch, ctx.profiles, sol.eps, ctx.h, u, hf)
        n = lf.norms
        rows.append((sol.eps, n["h_c0"], n["phi_c0"], n["phi_hat_c0"], n["phi_tilde_c0"], n["phi_tilde_alt_c0"]))
    _write_csv(out / "layer_norms.csv", ["eps", "h", "phi", "phi_hat", "phi_tilde", "phi_tilde_alt"], rows)
    mc = mean_curvature_report(curves, ctx.h, ctx.e0)
    _write_csv(out / "mean_curvature.csv", ["eps", "tau", "sup_dev"],
               [(r["eps"], r["tau"], r["sup_dev"]) for r in mc["rows"]])
    eps = [r[0] for r in rows]
    checks = []
    for tau in (0.0, 0.3, -0.3):
        vals = [r["sup_dev"] for r in mc["rows"] if r["tau"] == tau]
        checks.append(_slope_check(f"layer.H_tau_slope[{tau:+.1f}]", eps, vals, cfg.tol("slope_min"), floor))
    checks.append(_slope_check("layer.refined_slope", list(mc["refined"]), list(mc["refined"].values()),
                               cfg.tol("slope_min_second"), floor))
    checks.append(_slope_check("layer.phi_slope", eps, [r[2] for r in rows], cfg.tol("slope_min"), floor))
    checks.append(_slope_check("layer.phi_hat_slope", eps, [r[3] for r in rows], cfg.tol("slope_min_second"), floor))
    ratio = [r[4] / r[0] ** 2 for r in rows]
    if all(r[4] <= floor for r in rows):
        checks.append(Check("layer.phi_tilde_over_eps2_decreasing", float("nan"), 0.0, True, "floor"))
    else:
        ok = all(b < a for a, b in zip(ratio, ratio[1:]))
        checks.append(Check("layer.phi_tilde_over_eps2_decreasing", ratio[-1], 0.0, ok,
                            " > ".join(f"{x:.3g}" for x in ratio)))
    return checks, {}


def _limit_fields(ctx: Context):
    """Two test fields on the limit curve: one with nabla_n X = 0 there, one without."""
    w = min(0.6, 0.75 * ctx.clearance)
    P = ctx.geom.phi_period
    ang = f"(1+0.5*cos({2 * math.pi / P!r}*phi))"
    flat = " + ".join(f"bump((s-{s0!r})/{w!r})" for s0, _ in ctx.gamma.components)
    shift = " + ".join(f"bump((s-{s0 + 0.3 * w * sig!r})/{w!r})" for s0, sig in ctx.gamma.components)
    s0 = ctx.gamma.components[0][0]
    side = f"0.1*sin({2 * math.pi / P!r}*phi)*bump((s-{s0!r})/{w!r})"
    return [VectorFieldSpec(f"({flat})*{ang}", "0", "flat-normal"),
            VectorFieldSpec(f"({shift})*{ang}", side, "generic")]


def scenario_variations(ctx: Context, out: Path):
    cfg = ctx.cfg
    tol = cfg.tol("oracle_rel")
    n = int(cfg.tol("directions"))
    sol = ctx.solutions[min(1, len(ctx.solutions) - 1)]
    u, g, eps = sol.u, sol.u.geom, sol.eps
    rows = []
    # E: perturb away from criticality so the first variation is not zero
    dirs = random_directions(g, n + 1, cfg.seed)
    base = u.values + 0.1 * dirs[0].values
    for v in dirs[1:]:
        a, b = first_variation_E(g, eps, ctx.h, base, v, ctx.profiles.well), \
            fd_first_variation_E(g, eps, ctx.h, base, v, dw=ctx.profiles.well)
        rows.append(("first_variation_E", v.name, a, b))
        a, b = second_variation_E(g, eps, ctx.h, u, v, v, ctx.profiles.well), \
            fd_second_variation_E(g, eps, ctx.h, u, v, dw=ctx.profiles.well)
        rows.append(("second_variation_E", v.name, a, b))
    centre = ctx.gamma.components[0][0]
    for X in random_vector_fields(g, n, cfg.seed, center=centre):
        a = inner_second_variation(g, eps, ctx.h, u, X, ctx.profiles.well)
        b = fd_inner_second_variation(g, eps, ctx.h, u, X, ctx.profiles.well)
        rows.append(("inner_second_variation", X.name, a, b))
    for X in random_vector_fields(ctx.geom, n, cfg.seed + 1, center=centre):
        a = first_variation_A(ctx.surface, ctx.h_sharp, X)
        b = fd_first_variation_A(ctx.surface, ctx.h_sharp, X)
        rows.append(("first_variation_A", X.name, a, b))
    out_rows, worst = [], {}
    for kind, name, a, b in rows:
        scale = max(abs(a), abs(b))
        # criticality makes the A first variation vanish; compare absolutely there
        err = abs(a - b) / scale if scale > cfg.tol("floor") * 1e3 else abs(a - b)
        out_rows.append((kind, name, a, b, err))
        worst[kind] = max(worst.get(kind, 0.0), err)
    _write_csv(out / "oracles.csv", ["operation", "direction", "analytic", "oracle", "rel_error"], out_rows)
    checks = [Check(f"variations.oracle[{k}]", v, tol, v <= tol) for k, v in worst.items()]

    lim_rows = []
    for X in _limit_fields(ctx):
        tab = limit_comparison(ctx.solutions, ctx.h, X, ctx.surface, ctx.e0, ctx.profiles.well)
        for r in tab.rows:
            lim_rows.append((X.name, r.eps, r.diffuse, r.sharp, r.gap))
        checks.append(_slope_check(f"variations.limit_slope[{X.name}]", [r.eps for r in tab.rows],
                                   [r.gap for r in tab.rows], cfg.tol("slope_min"), cfg.tol("floor")))
    _write_csv(out / "limit.csv", ["field", "eps", "diffuse", "sharp", "gap"], lim_rows)

    meas = []
    for s in ctx.solutions:
        m = diffuse_measure(s.u.geom, s.eps, s.u, ctx.profiles.well)
        meas.append((s.eps, m.mass, m.sup_discrepancy))
    _write_csv(out / "measure.csv", ["eps", "mass", "sup_discrepancy"], meas)
    target = ctx.e0 * ctx.gamma.length(ctx.geom)
    rel = abs(meas[-1][1] - target) / target
    checks.append(Check("variations.mass", rel, cfg.tol("mass_rel"), rel <= cfg.tol("mass_rel")))
    d = [m[2] for m in meas]
    ok = all(b < a or b <= cfg.tol("floor") for a, b in zip(d, d[1:]))
    checks.append(Check("variations.discrepancy_decreasing", d[-1], 0.0, ok, " > ".join(f"{x:.3g}" for x in d)))
    return checks, {}


def scenario_lemmas(ctx: Context, out: Path):
    cfg = ctx.cfg
    rows, loc = [], []
    gammas = []
    for sol in ctx.solutions:
        u = sol.u
        ch = ctx.chart(u)
        hf = ctx.fit(ch, sol.eps, u)
        ls = lemma_suite(ch, ctx.profiles, sol.eps, u, ctx.h, hf)
        for name, r in ls["rows"].items():
            rows.append((sol.eps, name, r["r57"], r["r58"], r["r58_normalized"], r["r59"]))
            if r["r59"] > 0:
                gammas.append(r["r59"])
        op = assemble_diffuse(u.geom, sol.eps, u, ctx.profiles.well)
        rep = eigs(op, cfg.modes)
        for item in localization_check(rep, op, zero_set_spec(u.geom, u),
                                       min(0.3, 0.4 * ctx.clearance), 10.0):
            loc.append((sol.eps, item["mode"], item["ratio"]))
    _write_csv(out / "lemmas.csv", ["eps", "function", "r57", "r58", "r58_normalized", "r59"], rows)
    _write_csv(out / "localization.csv", ["eps", "mode", "ratio"], [(e, str(m), r) for e, m, r in loc])
    checks = []
    names = sorted({r[1] for r in rows})
    last3 = ctx.cfg.ladder[-3:]
    for name in names:
        vals = [abs(r[2]) / r[0] ** 2 for r in rows if r[1] == name and r[0] in last3]
        ok = all(b < a for a, b in zip(vals, vals[1:])) or max(vals) <= cfg.tol("floor")
        checks.append(Check(f"lemmas.r57_over_eps2_decreasing[{name}]", vals[-1], 0.0, ok,
                            " > ".join(f"{x:.3g}" for x in vals)))
        nv = [r[4] for r in rows if r[1] == name and r[0] in last3]
        ok = all(b < a for a, b in zip(nv, nv[1:])) or max(nv) <= cfg.tol("floor")
        checks.append(Check(f"lemmas.r58_decreasing[{name}]", nv[-1], 0.0, ok, " > ".join(f"{x:.3g}" for x in nv)))
    g1 = min(gammas) if gammas else float("nan")
    checks.append(Check("lemmas.gamma1", g1, 0.0, bool(gammas) and g1 > 0))
    by_eps = {}
    for e, _, r in loc:
        by_eps[e] = max(by_eps.get(e, 0.0), r)
    checks.append(_slope_check("lemmas.localization_slope", list(by_eps), list(by_eps.values()), 1.8,
                               cfg.tol("floor")))
    return checks, {}


RUNNERS = {
    "spectrum-comparison": scenario_spectrum,
    "layer-asymptotics": scenario_layer,
    "variation-oracles": scenario_variations,
    "lemma-suite": scenario_lemmas,
}


# ------------------------------------------------------------------ run

@dataclass
class RunReport:
    name: str
    seed: int
    scenarios: dict
    manifest: list
    timings: dict

    @property
    def passed(self):
        return all(c["passed"] for s in self.scenarios.values() for c in s["checks"])

    def failing(self):
        return [c["name"] for s in self.scenarios.values() for c in s["checks"] if not c["passed"]]

    def to_json(self):
        return {"name": self.name, "seed": self.seed, "version": __version__, "passed": self.passed,
                "scenarios": self.scenarios, "manifest": self.manifest, "timings": self.timings}


def _manifest(out: Path):
    return sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "report.json")


def run(cfg: ExperimentConfig, out: Path | None = None, jobs: int = 1, seed: int | None = None) -> RunReport:
    if seed is not None:
        cfg.seed = seed
    out = Path(out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    ctx = Context(cfg)
    timings = {"solve": time.perf_counter() - t0}
    with open(out / "ladder.csv", "w") as fh:
        fh.write("eps,n_s,iterations,residual,energy\n")
        for s in ctx.solutions:
            E = energy(s.u.geom, s.eps, ctx.h, s.u, ctx.profiles.well).total
            fh.write(f"{s.eps!r},{s.u.geom.resolution[0]},{s.iterations},{s.residual!r},{E!r}\n")

    def one(name):
        d = out / name
        d.mkdir(exist_ok=True)
        t = time.perf_counter()
        checks, flags = RUNNERS[name](ctx, d)
        return name, checks, flags, time.perf_counter() - t

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(one, cfg.scenarios))
    scen = {}
    for name, checks, flags, dt in results:
        scen[name] = {"checks": [c.to_json() for c in checks], "flags": flags}
        timings[name] = dt
    report = RunReport(cfg.name, cfg.seed, scen, _manifest(out), timings)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json(), fh, indent=1)
    return report


# ----------------------------------------------------------------- plots

def emit_plots(report_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "aclab"
    plt.rcParams["svg.fonttype"] = "none"
    root = Path(report_dir)
    made = []
    if not root.is_dir():
        log.warning("%s is not a directory", root)
        return made

    def read(path):
        with open(path) as fh:
            return list(csv.DictReader(fh))

    def save(fig, path):
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        made.append(path)

    for path in sorted(root.rglob("spectrum.csv")):
        rows = read(path)
        fig, ax = plt.subplots(figsize=(5, 4))
        for ell in sorted({int(r["ell"]) for r in rows}):
            sel = [r for r in rows if int(r["ell"]) == ell]
            e = np.array([float(r["eps"]) for r in sel])
            gap = np.maximum(np.array([float(r["gap"]) for r in sel]), 1e-16)
            s = fit_slope(e, gap)
            ax.loglog(e, gap, "o-", label=f"l={ell} slope {s:.2f}")
        ax.set_xlabel("eps")
        ax.set_ylabel("|eps^-1 lambda_l - lambda_l(sharp)|")
        ax.legend(fontsize=7)
        save(fig, path.with_suffix(".svg"))
    for path in sorted(root.rglob("layer_norms.csv")):
        rows = read(path)
        e = np.array([float(r["eps"]) for r in rows])
        fig, ax = plt.subplots(figsize=(5, 4))
        for key in ("phi", "phi_hat", "phi_tilde"):
            v = np.maximum(np.array([float(r[key]) for r in rows]), 1e-16)
            ax.loglog(e, v, "o-", label=f"{key} slope {fit_slope(e, v):.2f}")
        ax.set_xlabel("eps")
        ax.set_ylabel("sup norm")
        ax.legend(fontsize=7)
        save(fig, path.with_suffix(".svg"))
    for path in sorted(root.rglob("limit.csv")):
        rows = read(path)
        fig, ax = plt.subplots(figsize=(5, 4))
        for name in sorted({r["field"] for r in rows}):
            sel = [r for r in rows if r["field"] == name]
            e = np.array([float(r["eps"]) for r in sel])
            gap = np.maximum(np.array([float(r["gap"]) for r in sel]), 1e-16)
            ax.loglog(e, gap, "o-", label=f"{name} slope {fit_slope(e, gap):.2f}")
        ax.set_xlabel("eps")
        ax.set_ylabel("limit gap")
        ax.legend(fontsize=7)
        save(fig, path.with_suffix(".svg"))
    prof = sorted(root.rglob("H.csv"))
    for path in prof:
        fig, ax = plt.subplots(figsize=(5, 4))
        for key in "HIJKL":
            p = path.with_name(f"{key}.csv")
            if not p.exists():
                log.warning("missing profile table %s", p)
                continue
            data = np.loadtxt(p, delimiter=",", skiprows=1)
            ax.plot(data[:, 0], data[:, 1], label=key)
        ax.set_xlabel("t")
        ax.set_ylabel("profile")
        ax.set_xlim(-8, 8)
        ax.legend(fontsize=7)
        save(fig, path.with_name("profiles.svg"))
    if not made:
        log.warning("no tables found under %s; nothing plotted", root)
    rep = root / "report.json"
    if rep.exists():
        data = json.loads(rep.read_text())
        data["manifest"] = _manifest(root)
        rep.write_text(json.dumps(data, indent=1))
    return made


def write_profiles(well_spec: str, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ps = build_profiles(from_config(well_spec))
    for key in "HIJKL":
        ps.table(key).to_csv(out / f"{key}.csv")
    consts = ps.constants.as_dict()
    consts["cancellation"] = ps.constants.cancellation()
    (out / "constants.json").write_text(json.dumps(consts, indent=1))
    return out


# ------------------------------------------------------------------ main

def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="aclab", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run the scenarios of a TOML config")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--jobs", type=int, default=int(os.environ.get("ACLAB_JOBS", "1")))
    r.add_argument("--seed", type=int)
    p = sub.add_parser("plots", help="render SVG figures from the CSV tables of a report directory")
    p.add_argument("dir")
    pr = sub.add_parser("profiles", help="tabulate the one-dimensional profiles")
    pr.add_argument("--well", default="canonical")
    pr.add_argument("--out", default="profiles")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")

    if args.cmd == "run":
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        report = run(cfg, args.out, args.jobs, args.seed)
        for sname, s in report.scenarios.items():
            for c in s["checks"]:
                v = "n/a" if c["value"] is None else f"{c['value']:.4g}"
                print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']} value={v} threshold={c['threshold']:g}")
            if s["flags"]:
                print(f"{sname} flags: {json.dumps(s['flags'])}")
        if not report.passed:
            print("failing checks: " + ", ".join(report.failing()), file=sys.stderr)
            return 1
        return 0
    if args.cmd == "plots":
        made = emit_plots(args.dir)
        for m in made:
            print(m)
        return 0
    if args.cmd == "profiles":
        try:
            out = write_profiles(args.well, args.out)
        except WellError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        print(out)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
