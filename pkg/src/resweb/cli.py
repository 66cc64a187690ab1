"""Command line driver.

    resweb <web|cover|classify|reduce|channel|barrier|verify|pipeline> -c CONFIG
           [--site N] [--g a,b] [--out DIR] [--jobs N] [--suite NAME]

Each stage writes JSON or CSV artifacts into the output directory and records
their sha256 in ``manifest.json``.  A stage is keyed by the config hash, its
own arguments and the hashes of the artifacts it reads; a key seen before is
served from the cache (``RESWEB_CACHE`` or ``<out>/.cache``) and reported as
"cached".  Stages only talk to each other through artifacts.

Exit codes: 0 all assertions passed, 1 an assertion failed, 2 config error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from filelock import FileLock

from . import config as config_mod
from .errors import ConfigError, DegenerateSingleResonance, NumericalFailure, ReswebError

VERSION = "0.1.0"


def _source_digest() -> str:
    h = hashlib.sha256()
    for f in sorted(Path(__file__).parent.glob("*.py")):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()[:16]


TOOL_VERSION = f"{VERSION}+{_source_digest()}"
STAGES = ("web", "cover", "classify", "reduce", "channel", "barrier", "verify")
SUITES = ("deviation", "symmetry", "overlap", "translation")


# ---------------------------------------------------------------------------
# serialization


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dump_json(obj) -> bytes:
    return (json.dumps(_clean(obj), sort_keys=True, indent=1) + "\n").encode()


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _fmt(x: float) -> str:
    return f"{x:g}".replace("-", "m")


# ---------------------------------------------------------------------------
# stage context


@dataclass
class StageResult:
    artifacts: dict  # name -> bytes
    checks: list = field(default_factory=list)  # dicts: name, measured, bound, passed

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)


@dataclass
class Context:
    cfg: config_mod.RunConfig
    out: Path
    jobs: int = 1
    args: dict = field(default_factory=dict)
    _system: object = None

    @property
    def system(self):
        if self._system is None:
            try:
                self._system = self.cfg.build_system()
            except ConfigError:
                raise
            except (ReswebError, ValueError) as exc:
                if isinstance(exc, NumericalFailure):
                    raise
                raise ConfigError(str(exc)) from exc
        return self._system

    def read_json(self, name):
        return json.loads((self.out / name).read_text())


def _dr_from_json(d, eps, kappa):
    from .resonance import DoubleResonance

    return DoubleResonance(np.array(d["p"], float), tuple(d["k1"]), tuple(d["k2"]), tuple(d["kbar2"]),
                           int(d["T"]), np.array(d["omega"], float), float(d["radius"]), eps, kappa,
                           d.get("strength"))


def resolve_site(ctx: Context, web: dict) -> int:
    site = ctx.args.get("site")
    if site is None:
        site = ctx.cfg.targets["site"]
    drs = web["double_resonances"]
    if not drs:
        raise NumericalFailure("the web has no double resonances")
    if isinstance(site, list):
        P = np.array([d["p"] for d in drs])
        return int(np.argmin(np.linalg.norm(P - np.array(site, float), axis=1)))
    if not (0 <= site < len(drs)):
        raise ConfigError(f"site {site} out of range (0..{len(drs) - 1})")
    return int(site)


def _site_dr(ctx, web, i):
    g = ctx.cfg.geometry
    return _dr_from_json(web["double_resonances"][i], ctx.system.eps, g["kappa"])


def _site_mechanics(nfj):
    from types import SimpleNamespace

    from .averaged import MechanicalSystem
    from .torus import TorusPotential

    nf = SimpleNamespace(B=np.array(nfj["B"], float), V=TorusPotential.from_json(nfj["V"]),
                         kpp_abs=int(nfj["kpp_abs"]))
    return MechanicalSystem.from_normal_form(nf), nf


def _check(name, measured, bound, passed=None):
    if passed is None:
        passed = measured <= bound
    return {"name": name, "measured": measured, "bound": bound, "passed": bool(passed)}


# ---------------------------------------------------------------------------
# stages


def stage_web(ctx: Context) -> StageResult:
    from .resonance import classify, dirichlet_cover, find_double_resonances, trace_circle

    sys_, cfg = ctx.system, ctx.cfg
    g, n = cfg.geometry, cfg.numerics
    circles, drs, covering = [], [], []
    for k in cfg.system["circles"]:
        circ = trace_circle(sys_, k, n["n_circle"])
        circles.append(circ)
        drs.extend(find_double_resonances(circ, sys_, sys_.eps, g["kappa"], g["K_star"]))
        rep = dirichlet_cover(circ, sys_, sys_.eps, g["kappa"], g["K_star"], n["n_check"], strict=False)
        covering.append((circ.k, rep))

    def cls(dr):
        try:
            c = classify(dr, sys_, g["theta_classify"], n["n_classify"])
        except DegenerateSingleResonance:
            return None
        return c

    with ThreadPoolExecutor(max_workers=max(1, ctx.jobs)) as ex:
        results = list(ex.map(cls, drs))
    for dr, c in zip(drs, results):
        dr.classification = c
        dr.strength = None if c is None else c.strength
    uncovered = [p for _, rep in covering for p in rep.to_json()["uncovered"]]
    web = {
        "circles": [c.to_json() for c in circles],
        "double_resonances": [dict(dr.to_json(), index=i) for i, dr in enumerate(drs)],
        "covering": {
            "uncovered": uncovered,
            "per_circle": [dict({k: v for k, v in rep.to_json().items() if k not in ("discs", "uncovered")},
                                k=list(k), n_discs=len(rep.discs)) for k, rep in covering],
        },
    }
    return StageResult({"web.json": dump_json(web)}, [])


def stage_cover(ctx: Context) -> StageResult:
    from .errors import CoverFails
    from .resonance import cover_with_halving, trace_circle

    sys_, cfg = ctx.system, ctx.cfg
    g, n = cfg.geometry, cfg.numerics
    reports, checks = [], []
    for k in cfg.system["circles"]:
        circ = trace_circle(sys_, k, n["n_circle"])
        try:
            rep = cover_with_halving(circ, sys_, sys_.eps, g["kappa"], g["K_star"], n["n_check"])
            ok = True
        except CoverFails as exc:
            rep, ok = exc.report, False
        d = rep.to_json()
        d.pop("discs")
        d["k"] = list(k)
        d["n_discs"] = len(rep.discs)
        bound = float(sys_.eps) ** (-(1 - 3 * g["kappa"]) / 3) * g["K_star"]
        d["period_bound"] = bound
        reports.append(d)
        checks.append(_check(f"cover {tuple(k)}", len(rep.uncovered_samples), 0, ok))
        checks.append(_check(f"period bound {tuple(k)}", rep.max_period, bound))
    return StageResult({"cover.json": dump_json({"circles": reports})}, checks)


def stage_classify(ctx: Context) -> StageResult:
    from .resonance import classify

    web = ctx.read_json("web.json")
    sys_, g, n = ctx.system, ctx.cfg.geometry, ctx.cfg.numerics
    rows = []
    for i, d in enumerate(web["double_resonances"]):
        dr = _dr_from_json(d, sys_.eps, g["kappa"])
        try:
            c = classify(dr, sys_, g["theta_classify"], n["n_classify"]).to_json()
        except DegenerateSingleResonance as exc:
            c = {"strength": None, "note": str(exc)}
        rows.append(dict(c, index=i, p=d["p"], k1=d["k1"], k2=d["k2"], T=d["T"]))
    counts = {s: sum(r["strength"] == s for r in rows) for s in ("strong", "weak")}
    counts["undetermined"] = sum(r["strength"] is None for r in rows)
    return StageResult({"classify.json": dump_json({"sites": rows, "counts": counts})}, [])


def stage_reduce(ctx: Context) -> StageResult:
    from .normalform import homological_residual, reduce, remainder_sweep, symmetry_check

    web = ctx.read_json("web.json")
    i = resolve_site(ctx, web)
    sys_, g, n = ctx.system, ctx.cfg.geometry, ctx.cfg.numerics
    dr = _site_dr(ctx, web, i)
    nf, chain = reduce(sys_, dr, g["delta_prime"], g["eta"], n["n_remainder"], n["seed"], n["n_flow"])
    sweep = remainder_sweep(sys_, dr, n["remainder_eps"], g["delta_prime"], g["eta"], n["n_remainder"], n["seed"])
    sym = symmetry_check(nf, chain, n["n_symmetry"], delta_prime=g["delta_prime"])
    res = homological_residual(sys_, dr, n=1000, seed=n["seed"])
    out = dict(nf.to_json(), site=i, p=list(map(float, dr.p_dd)), k1=list(dr.k_prime), k2=list(dr.k_second),
               T=dr.T, chain=chain.to_json(), remainder_sweep=sweep.to_json(), symmetry=sym,
               homological_residual=res)
    checks = [_check("deck symmetry", sym["max_discrepancy"], 1e-9),
              _check("homological residual", res, 1e-12)]
    return StageResult({f"nf_{i}.json": dump_json(out)}, checks)


def stage_channel(ctx: Context) -> StageResult:
    from .averaged import embed_channel, embedding_diameter_slope, scan_channel
    from .normalform import build_chain

    web = ctx.read_json("web.json")
    i = resolve_site(ctx, web)
    nfj = ctx.read_json(f"nf_{i}.json")
    ms, nf = _site_mechanics(nfj)
    n, g = ctx.cfg.numerics, ctx.cfg.geometry
    gv = ctx.args.get("g") or n["channel_g"]
    crit = ms.critical_energy
    Emax = n["channel_E_max"]
    ch = scan_channel(ms, gv, (crit + 0.05 * Emax, crit + Emax), n_grid=n["channel_energies"],
                      N=n["orbit_nodes"], n_starts=n["n_starts"], seed=n["seed"], kpp_abs=nf.kpp_abs)
    dr = _site_dr(ctx, web, i)
    chain = build_chain(ctx.system, dr, g["eta"], n["n_flow"])
    emb = embed_channel(ch, chain, dr.p_dd)
    slope, diams = embedding_diameter_slope(
        ch, lambda e: build_chain(ctx.system.with_eps(e), dr, g["eta"], n["n_flow"]), n["remainder_eps"])
    emb["diameter_sweep"] = {"eps": n["remainder_eps"], "diameters": diams, "slope": slope}
    data = ch.to_json()
    tag = f"{gv[0]}_{gv[1]}".replace("-", "m")
    buf = io.StringIO()
    ab = ch.alpha
    buf.write("lambda,beta,sigma,alpha\n")
    for row in zip(ab.lam, ab.beta, ab.sigma, ab.alpha):
        buf.write(",".join(repr(float(x)) for x in row) + "\n")
    floor = n["hyperbolic_floor"]
    margins = [m for m in ch.hyperbolic_margins if m is not None and math.isfinite(m)]
    checks = [
        _check("embedding round trip", emb["roundtrip_error"], 1e-12),
        _check("diameter slope", abs(slope - 0.5), 0.05),
        _check("osc(y) within bound", max(ch.osc_measured), ch.osc_bound),
    ]
    if not ch.degenerate:
        m = min(margins, default=0.0)
        checks.append(_check("hyperbolic margin", m, floor, m >= floor))
    return StageResult({f"channel_{i}_{tag}.json": dump_json(data),
                        f"alpha_{i}.csv": buf.getvalue().encode()}, checks)


def stage_barrier(ctx: Context) -> StageResult:
    from .weakkam import TorusGrid, argmin_components, barrier, build_kernel, elementary_solutions

    web = ctx.read_json("web.json")
    i = resolve_site(ctx, web)
    ms, _ = _site_mechanics(ctx.read_json(f"nf_{i}.json"))
    n = ctx.cfg.numerics
    c = n["barrier_c"]
    grid = TorusGrid(n["wk_n1"], n["wk_n2"])
    kern = build_kernel(ms.A, ms.V, n["wk_tau"], grid, c=c)
    pair = elementary_solutions(kern, tol=n["wk_tol"])
    dg = grid.double()
    bl = barrier(pair.u_minus_l, pair.u_plus_r, dg, side="l")
    br = barrier(pair.u_minus_r, pair.u_plus_l, dg, side="r")
    rep_l = argmin_components(bl, n["argmin_level"])
    rep_r = argmin_components(br, n["argmin_level"])
    tag = f"{_fmt(c[0])}_{_fmt(c[1])}"
    buf = io.StringIO()
    hdr = f"cover=double n1={dg.n1} n2={dg.n2} gauge=mean-zero side=l c={c[0]!r},{c[1]!r}"
    np.savetxt(buf, bl.B, delimiter=",", header=hdr, fmt="%.12e")
    out = {"c": c, "grid": dg.to_json(), "barrier_l": dict(bl.to_json(), argmin=rep_l.to_json()),
           "barrier_r": dict(br.to_json(), argmin=rep_r.to_json()), "elementary": pair.to_json()}
    checks = [_check("penalty monotone", 0, 0, pair.monotone)]
    return StageResult({f"barrier_{i}_{tag}.csv": buf.getvalue().encode(),
                        f"argmin_{i}.json": dump_json(out)}, checks)


def _generic_omega(web, sys_):
    """Frequency at the first circle's sample farthest from every double resonance."""
    circ = web["circles"][0]
    S = np.array(circ["samples"], float)
    D = [np.array(d["p"], float) for d in web["double_resonances"] if tuple(d["k1"]) == tuple(circ["k"])]
    if D:
        dist = np.min(np.linalg.norm(S[:, None, :] - np.array(D)[None, :, :], axis=-1), axis=1)
        p = S[int(np.argmax(dist))]
    else:
        p = S[0]
    return sys_.h.grad(p)


def _suite_deviation(ctx, web):
    from .estimates import verify_deviation

    n = ctx.cfg.numerics
    omega = _generic_omega(web, ctx.system)
    rep = verify_deviation(ctx.system, omega, n["deviation_eps"])
    buf = io.StringIO()
    rep.to_csv(buf)
    data = buf.getvalue().encode()
    checks = [_check(f"deviation eps={r['eps']:g}", r["deviation"], r["bound"], r["pass"]) for r in rep.rows]
    checks += [_check(f"frequency scale eps={r['eps']:g}", abs(r["nu"] - 1.0), r["nu_bound"], r["nu_ok"])
               for r in rep.rows]
    return {"deviation.csv": data}, checks, dict(rep.to_json(), omega=list(map(float, omega))), rep


def _suite_symmetry(ctx, web, i):
    from .normalform import reduce, symmetry_check

    g, n = ctx.cfg.geometry, ctx.cfg.numerics
    nf, chain = reduce(ctx.system, _site_dr(ctx, web, i), g["delta_prime"], g["eta"], 8, n["seed"], n["n_flow"])
    sym = symmetry_check(nf, chain, n["n_symmetry"], delta_prime=g["delta_prime"])
    return [_check("deck symmetry", sym["max_discrepancy"], 1e-9)], sym


def _neighbour(web, i, near=None):
    """The T=1 site on the same circle closest to ``near`` (default: to site i)."""
    drs = web["double_resonances"]
    me = drs[i]
    cands = [j for j, d in enumerate(drs) if j != i and d["T"] == 1 and d["k1"] == me["k1"]]
    if not cands:
        raise NumericalFailure("no other T=1 site on the circle of the chosen site")
    p = np.array(me["p"] if near is None else near, float)
    return min(cands, key=lambda j: (round(float(np.linalg.norm(np.array(drs[j]["p"]) - p)), 9), j))


def _suite_overlap(ctx, web, i, xi):
    from .averaged import overlap_check
    from .normalform import reduce
    from .resonance import ResonanceCircle

    g, n = ctx.cfg.geometry, ctx.cfg.numerics
    sys_ = ctx.system
    j = _neighbour(web, i, ctx.cfg.targets.get("neighbour"))
    k1 = tuple(web["double_resonances"][i]["k1"])
    circ = next(c for c in web["circles"] if tuple(c["k"]) == k1)
    rc = ResonanceCircle(k1, circ["E"], np.array(circ["samples"], float), sys_.h)
    pts = rc.resample(n["n_check"])
    sites = []
    for s in (i, j):
        dr = _site_dr(ctx, web, s)
        chain = reduce(sys_, dr, g["delta_prime"], g["eta"], 8, n["seed"], n["n_flow"])[1]
        sites.append((dr.p_dd, dr.T, chain))
    rep = overlap_check(pts, sites, sys_.eps, xi, g["kappa"], g["delta_prime"], g["eta"])
    sep = float(np.linalg.norm(sites[0][0] - sites[1][0]))
    info = dict(rep.to_json(), sites=[i, j], separation=sep, margins=rep.margins)
    return [_check("overlap length", rep.length, rep.required, rep.passed)], info


def _suite_translation(ctx, web, i):
    from .weakkam import TorusGrid, aubry_proxy, build_kernel, lax_oleinik, translation_identity

    ms, _ = _site_mechanics(ctx.read_json(f"nf_{i}.json"))
    n = ctx.cfg.numerics
    grid = TorusGrid(n["wk_n1"], n["wk_n2"])
    kern = build_kernel(ms.A, ms.V, n["wk_tau"], grid, c=n["barrier_c"])
    um = lax_oleinik(kern, direction="backward", tol=n["wk_tol"])
    up = lax_oleinik(kern, direction="forward", tol=n["wk_tol"])
    A0 = aubry_proxy(kern, um.u, up.u, n["delta_level"])
    # a smooth bump centred half a period away from the first Aubry cell
    idx = np.argwhere(A0)[0] if A0.any() else np.zeros(2, int)
    ctr = np.array([(idx[0] + grid.n1 // 2) % grid.n1, (idx[1] + grid.n2 // 2) % grid.n2])
    I, J = np.meshgrid(np.arange(grid.n1), np.arange(grid.n2), indexing="ij")
    di = np.minimum(np.abs(I - ctr[0]), grid.n1 - np.abs(I - ctr[0])) * grid.h1
    dj = np.minimum(np.abs(J - ctr[1]), grid.n2 - np.abs(J - ctr[1])) * grid.h2
    x = np.clip(np.hypot(di, dj) / (6 * max(grid.h1, grid.h2)), 0, 1)
    bump = 1e-2 * (1 - x * x) ** 2
    err = translation_identity(kern, um.u, up.u, bump)
    return [_check("translation identity", err, 1e-9)], {"max_error": err}


def stage_verify(ctx: Context) -> StageResult:
    web = ctx.read_json("web.json")
    suites = ctx.args.get("suites") or list(SUITES)
    arts, checks, report = {}, [], {}
    i = resolve_site(ctx, web) if set(suites) - {"deviation"} else None
    dev_rep = None
    if "deviation" in suites:
        a, c, info, dev_rep = _suite_deviation(ctx, web)
        arts.update(a)
        checks += [dict(x, suite="deviation") for x in c]
        report["deviation"] = info
    if "symmetry" in suites:
        c, info = _suite_symmetry(ctx, web, i)
        checks += [dict(x, suite="symmetry") for x in c]
        report["symmetry"] = info
    if "overlap" in suites:
        xi = ctx.cfg.geometry["xi"]
        if xi <= 0:
            if dev_rep is None:
                dev_rep = _suite_deviation(ctx, web)[3]
            xi = dev_rep.xi
        c, info = _suite_overlap(ctx, web, i, xi)
        checks += [dict(x, suite="overlap") for x in c]
        report["overlap"] = info
    if "translation" in suites:
        c, info = _suite_translation(ctx, web, i)
        checks += [dict(x, suite="translation") for x in c]
        report["translation"] = info
    report["table"] = checks
    arts["verify.json"] = dump_json(report)
    return StageResult(arts, checks)


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class StageSpec:
    fn: Callable
    deps: tuple  # stages whose artifacts are read
    site: bool = False


SPECS = {
    "web": StageSpec(stage_web, ()),
    "cover": StageSpec(stage_cover, ()),
    "classify": StageSpec(stage_classify, ("web",)),
    "reduce": StageSpec(stage_reduce, ("web",), site=True),
    "channel": StageSpec(stage_channel, ("web", "reduce"), site=True),
    "barrier": StageSpec(stage_barrier, ("web", "reduce"), site=True),
    "verify": StageSpec(stage_verify, ("web", "reduce"), site=True),
}


class Runner:
    def __init__(self, cfg, out: Path, cache: Path, jobs: int = 1, args: Optional[dict] = None,
                 echo=print):
        self.cfg = cfg
        self.out = out
        self.cache = cache
        self.ctx = Context(cfg, out, jobs, dict(args or {}))
        self.echo = echo
        self.done: dict = {}
        self.status: dict = {}
        self.manifest_path = out / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text())
        else:
            self.manifest = {}
        if self.manifest.get("config_hash") != cfg.hash:
            self.manifest = {"config_hash": cfg.hash, "stages": {}, "artifacts": {}}
        self.manifest["tool_version"] = TOOL_VERSION

    def _key(self, stage, dep_hashes):
        params = {k: v for k, v in sorted(self.ctx.args.items())
                  if (k == "site" and SPECS[stage].site) or (k == "g" and stage == "channel")
                  or (k == "suites" and stage == "verify")}
        blob = json.dumps({"stage": stage, "version": TOOL_VERSION, "config": self.cfg.hash, "params": params,
                           "inputs": dep_hashes}, sort_keys=True)
        return sha256(blob.encode())

    def _artifact_hashes(self, stage):
        return self.done[stage]

    def run(self, stage) -> StageResult:
        if stage in self.done:
            return self.done[stage]
        spec = SPECS[stage]
        dep_hashes = {}
        for d in spec.deps:
            res = self.run(d)
            dep_hashes.update({name: sha256(data) for name, data in res.artifacts.items()})
        key = self._key(stage, dep_hashes)
        t0 = time.perf_counter()
        res = self._from_cache(key)
        status = "cached"
        if res is None:
            try:
                res = spec.fn(self.ctx)
            except ReswebError as exc:
                exc.stage = stage
                raise
            status = "computed"
            self._to_cache(key, res)
        for name, data in res.artifacts.items():
            p = self.out / name
            if not p.exists() or p.read_bytes() != data:
                p.write_bytes(data)
        dt = time.perf_counter() - t0
        hashes = {name: sha256(data) for name, data in res.artifacts.items()}
        self.manifest["stages"][stage] = {"key": key, "status": status, "seconds": round(dt, 3),
                                          "artifacts": hashes, "passed": res.passed}
        self.manifest["artifacts"].update(hashes)
        self.status[stage] = status
        self.done[stage] = res
        self.echo(f"{stage}: {status} ({dt:.1f} s)")
        for c in res.checks:
            self.echo(f"  {'PASS' if c['passed'] else 'FAIL'}  {c['name']}: measured {c['measured']!r}, "
                      f"bound {c['bound']!r}")
        self._write_manifest()
        return res

    def _from_cache(self, key):
        entry = self.cache / "entries" / f"{key}.json"
        if not entry.exists():
            return None
        meta = json.loads(entry.read_text())
        arts = {}
        for name, h in meta["artifacts"].items():
            blob = self.cache / "blobs" / h
            if not blob.exists():
                return None
            data = blob.read_bytes()
            if sha256(data) != h:
                return None
            arts[name] = data
        return StageResult(arts, meta["checks"])

    def _to_cache(self, key, res):
        (self.cache / "entries").mkdir(parents=True, exist_ok=True)
        (self.cache / "blobs").mkdir(parents=True, exist_ok=True)
        hashes = {}
        for name, data in res.artifacts.items():
            h = sha256(data)
            (self.cache / "blobs" / h).write_bytes(data)
            hashes[name] = h
        meta = {"artifacts": hashes, "checks": _clean(res.checks)}
        (self.cache / "entries" / f"{key}.json").write_bytes(dump_json(meta))

    def _write_manifest(self):
        self.manifest_path.write_bytes(dump_json(self.manifest))


def _parse_g(text):
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("--g expects two integers a,b") from exc
    return [a, b]


def build_parser():
    ap = argparse.ArgumentParser(prog="resweb", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=STAGES + ("pipeline",))
    ap.add_argument("-c", "--config", required=True)
    ap.add_argument("--site", type=int, default=None)
    ap.add_argument("--g", type=_parse_g, default=None)
    ap.add_argument("--out", default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--suite", action="append", choices=SUITES, default=None)
    return ap


def run(argv=None, echo=print) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config)
        out = cfg.output_dir(args.out)
        out.mkdir(parents=True, exist_ok=True)
        cache = Path(os.environ.get("RESWEB_CACHE") or out / ".cache")
        params = {}
        if args.site is not None:
            params["site"] = args.site
        if args.g is not None:
            params["g"] = args.g
        if args.suite:
            params["suites"] = sorted(set(args.suite))
        with FileLock(str(out / ".resweb.lock"), timeout=600):
            runner = Runner(cfg, out, cache, max(1, args.jobs), params, echo)
            stages = STAGES if args.command == "pipeline" else (args.command,)
            ok = True
            for st in stages:
                ok &= runner.run(st).passed
            # artifacts pulled in as dependencies count too
            ok = ok and all(r.passed for r in runner.done.values())
    except ConfigError as exc:
        echo(f"config error: {exc}")
        return 2
    except NumericalFailure as exc:
        where = getattr(exc, "stage", "?")
        echo(f"numerical failure in stage {where}: {type(exc).__name__}: {exc}")
        return 3
    except (ReswebError, ValueError) as exc:
        echo(f"config error: {type(exc).__name__}: {exc}")
        return 2
    return 0 if ok else 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
