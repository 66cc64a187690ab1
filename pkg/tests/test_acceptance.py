"""End-to-end acceptance criteria, one test each.

Every test prints a PASS/FAIL line and records it for the terminal summary.
Criterion 11 is expected to fail at the flagship eps (see the decisions ledger).
"""

import dataclasses
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from conftest import ACCEPTANCE, FLAGSHIP, modes, quad_system, run_cli, site
from resweb.averaged import (
    MechanicalSystem,
    embed_points,
    embedding_diameter_slope,
    minimal_orbit,
    scan_channel,
    unembed_points,
)
from resweb.estimates import verify_deviation
from resweb.lattice import dirichlet_approx, dist_to_int, totally_irreducible, unimodular_complete
from resweb.normalform import (
    build_chain,
    homological_residual,
    reduce,
    remainder_sweep,
    symmetry_check,
)
from resweb.resonance import dirichlet_cover, trace_circle
from resweb.torus import TorusPotential
from resweb.weakkam import (
    TorusGrid,
    argmin_components,
    barrier,
    build_kernel,
    elementary_solutions,
    lax_oleinik,
    lo_step,
    translation_identity,
)

THREE = modes(((1, 0, 0), "1"), ((0, 1, -1), "1"), ((1, -1, 0), "1"))
PEND = TorusPotential.pendulum(0, 1.0)
I2 = np.eye(2)


def report(n, title, checks):
    """checks: list of (label, ok, value).  Prints one line and asserts all."""
    ok = all(c[1] for c in checks)
    detail = "; ".join(f"{lab} {'ok' if good else 'FAILED'} ({val})" for lab, good, val in checks)
    ACCEPTANCE.append((n, ok, title, detail))
    print(f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
    bad = [c[0] for c in checks if not c[1]]
    assert not bad, f"criterion {n} failed: {bad}"


def _g(x):
    return f"{x:.3g}"


def test_c01_lattice_exactness():
    rng = np.random.default_rng(101)
    n_k, worst_det = 0, 0
    while n_k < 1000:
        k = tuple(int(x) for x in rng.integers(-50, 51, 3))
        if np.linalg.norm(k) > 50 or not any(k) or not totally_irreducible(k):
            continue
        u = unimodular_complete(k)
        if abs(u.det) != 1:
            worst_det += 1
        n_k += 1
    violations = 0
    for _ in range(10_000):
        w = Fraction(int(rng.integers(1, 10 ** 9)), int(rng.integers(1, 10 ** 9)))
        K = int(rng.integers(2, 10 ** 4))
        k = dirichlet_approx(w, K)
        if not (1 <= k < K and dist_to_int(k * w) <= Fraction(1, K)):
            violations += 1
    report(1, "lattice exactness", [("det +-1 on 1000 k", worst_det == 0, worst_det),
                                    ("Dirichlet bound on 1e4 pairs", violations == 0, violations)])


def test_c02_covering():
    sys = quad_system(E=0.5)
    circ = trace_circle(sys, (1, 1, 1), 256)
    checks = []
    for e in (1e-2, 1e-3, 1e-4):
        rep = dirichlet_cover(circ, sys, e, 0.15, 1.0, 10_000, strict=False)
        bound = e ** (-(1 - 3 * 0.15) / 3)
        checks.append((f"eps={e} uncovered", not rep.uncovered_samples, len(rep.uncovered_samples)))
        checks.append((f"eps={e} T<=bound", rep.max_period <= bound, f"{rep.max_period}<={_g(bound)}"))
    report(2, "covering of the (1,1,1) circle", checks)


def test_c03_homological_identity():
    sys = quad_system(THREE)
    r = homological_residual(sys, site(sys), n=1000)
    report(3, "homological identity", [("residual < 1e-12", r < 1e-12, _g(r))])


def test_c04_blocks_and_symmetry():
    sys = quad_system(THREE)
    nf, chain = reduce(sys, site(sys), n_samples=100)
    M = np.array([[1, 0, 0], [0, 1, -1], [0, 0, 1]], float)
    Bt = M @ np.eye(3) @ M.T
    err = max(np.abs(nf.B - Bt[:2, :2]).max(), np.abs(nf.B_prime - Bt[:2, 2]).max(),
              abs(nf.B_dprime - Bt[2, 2]))
    expect = np.abs(nf.B - [[1, 0], [0, 2]]).max() + np.abs(nf.B_prime - [0, -1]).max() + abs(nf.B_dprime - 1)
    sym = symmetry_check(nf, chain, 1000)["max_discrepancy"]
    report(4, "normal form blocks and symmetry", [
        ("blocks vs M M^T", err <= 1e-14, _g(err)), ("B, B', B'' values", expect <= 1e-14, _g(expect)),
        ("symmetry < 1e-9", sym < 1e-9, _g(sym))])


def test_c05_remainder_scaling():
    kappa = 0.15
    sys = quad_system(THREE)
    rep = remainder_sweep(sys, site(sys), [1e-3, 1e-4, 1e-5, 1e-6], n_samples=400)
    checks = []
    for key in ("R1", "Rh"):
        # an identically zero remainder satisfies any power bound
        ok = rep.exact_zero[key] or rep.slopes[key] >= kappa - 0.02
        checks.append((f"{key} slope", ok, "exact zero" if rep.exact_zero[key] else _g(rep.slopes[key])))
    checks.append(("G diff slope", rep.slopes["G_diff"] >= kappa - 0.02, _g(rep.slopes["G_diff"])))
    checks.append(("G diff fit residual < 20%", rep.G_diff_fit_residual < 0.2, _g(rep.G_diff_fit_residual)))
    report(5, "remainder scaling", checks)


def test_c06_pendulum_flat():
    ms = MechanicalSystem(I2, PEND)
    ab = scan_channel(ms, (1, 0), (2.001, 4.0), n_grid=16).alpha
    oracle = quad(lambda s: math.sqrt(2 * (2 + math.cos(s) - 1)), 0, 2 * math.pi, epsabs=1e-13)[0] / (2 * math.pi)
    assert oracle == pytest.approx(4 / math.pi, abs=1e-12)
    report(6, "pendulum alpha flat", [
        ("boundary 4/pi", abs(ab.flat_boundary - oracle) <= 1e-3, _g(ab.flat_boundary)),
        ("level 2", abs(ab.flat_level - 2.0) <= 1e-3, _g(ab.flat_level))])


def test_c07_minimal_orbits():
    ms = MechanicalSystem(I2, PEND)
    o = minimal_orbit(ms, (1, 0), energy=3.0)
    f = lambda s: math.sqrt(2 * (3.0 + math.cos(s) - 1))
    tau = quad(lambda s: 1 / f(s), 0, 2 * math.pi, epsabs=1e-13)[0]
    S = quad(f, 0, 2 * math.pi, epsabs=1e-13)[0] - 3.0 * tau
    m1, m2 = o.floquet
    c = minimal_orbit(ms, (0, 1), tau=2 * math.pi)
    report(7, "minimal orbit oracle", [
        ("period", abs(o.tau - tau) <= 1e-4, _g(abs(o.tau - tau))),
        ("action", abs(o.action - S) <= 1e-4, _g(abs(o.action - S))),
        ("Floquet product", abs(m1 * m2 - 1) <= 1e-6, _g(abs(m1 * m2 - 1))),
        ("constant-angle action -3 pi", abs(c.action + 3 * math.pi) <= 1e-6, _g(abs(c.action + 3 * math.pi)))])


def test_c08_weak_kam():
    rng = np.random.default_rng(808)
    g256 = TorusGrid(256, 256)
    worst = 0.0
    for c in rng.uniform(-1, 1, (10, 2)):
        a = lax_oleinik(build_kernel(I2, TorusPotential(), 2.0, g256, c=tuple(c))).alpha
        worst = max(worst, abs(a - 0.5 * float(c @ c)))
    grid = TorusGrid(256, 32)
    k = build_kernel(I2, PEND, 0.25, grid)
    s = lax_oleinik(k)
    u, h = s.u[:, 0], grid.h1
    q = np.arange(grid.n1) * h
    du = (np.roll(u, -1) - np.roll(u, 1)) / (2 * h)
    keep = np.minimum(q, 2 * np.pi - q) > 3 * h
    slope_err = float(np.abs(np.abs(du) - 2 * np.abs(np.cos(q / 2)))[keep].max())
    expansions = 0
    for _ in range(100):
        a, b = rng.normal(size=grid.shape), rng.normal(size=grid.shape)
        if np.abs(lo_step(k, a) - lo_step(k, b)).max() > np.abs(a - b).max() + 1e-12:
            expansions += 1
    report(8, "weak-KAM solver", [
        ("free alpha", worst <= 1e-4, _g(worst)), ("pendulum alpha 2", abs(s.alpha - 2) <= 1e-3, _g(s.alpha)),
        ("slope within 3h", slope_err <= 3 * h, f"{_g(slope_err)}<={_g(3 * h)}"),
        ("non-expansive on 100 pairs", expansions == 0, expansions)])


def test_c09_barrier():
    grid = TorusGrid(128, 32)
    k = build_kernel(I2, PEND, 0.25, grid, c=(0.5, 0.0))
    ep = elementary_solutions(k)
    dg = ep.u_minus_l.grid
    level = 5e-3  # residue of the discrete barrier between chain nodes, see the ledger
    bf = barrier(ep.u_minus_l, ep.u_plus_r, dg)
    Bn = bf.B - bf.min_value
    q1 = dg.axes()[0]
    branch = (q1 > np.pi + ep.tube) & (q1 < 3 * np.pi - ep.tube)
    on_branch = float(Bn[branch].max())
    b2 = barrier(ep.u_minus_l.u + 7.5, ep.u_plus_r.u - 2.0, dg)
    r1, r2 = argmin_components(bf, level), argmin_components(b2, level)
    gauge = bool(np.array_equal(bf.argmin, b2.argmin) and np.array_equal(r1.labels, r2.labels))
    d = grid.min_image(grid.points() - np.array([np.pi, np.pi]))
    bump = 1e-2 * np.clip(1 - np.sum(d ** 2, axis=-1) / 0.25, 0, None) ** 2
    tr = translation_identity(k, ep.extrapolated["base_minus"].u, ep.extrapolated["base_plus"].u, bump)
    report(9, "barrier properties", [
        ("min 0 on separatrix branch", Bn.min() >= -1e-9 and on_branch <= level, _g(on_branch)),
        ("gauge invariance", gauge, r1.n_components), ("translation identity", tr < 1e-9, _g(tr))])


def test_c10_deviation_suite():
    rep = verify_deviation(quad_system(modes(((1, 0, 0), "1"))), (0, 1, 1), [1e-2, 1e-3, 1e-4])
    dev_ok = all(r["deviation"] <= 2 * math.sqrt(rep.norm_P / rep.m) * math.sqrt(r["eps"]) for r in rep.rows)
    nu_ok = all(r["nu_ok"] for r in rep.rows) and math.isfinite(rep.C_r)
    report(10, "deviation suite", [
        ("minimal-set deviation", dev_ok, _g(max(r["deviation"] for r in rep.rows))),
        ("|nu-1|/sqrt(eps) bounded", nu_ok, _g(rep.C_r)), ("D_H = 2", abs(rep.D_H - 2) < 1e-12, _g(rep.D_H))])


@pytest.mark.xfail(strict=True, reason="the overlap length is zero at eps=1e-4: adjacent T=1 sites are "
                   "about 1.08 apart while each domain has radius about 0.19; see the decisions ledger")
def test_c11_channel_embedding(flagship_run):
    out, _, _ = flagship_run
    sys = quad_system(modes(((1, 0, 0), "1"), ((0, 1, -1), "1")))
    dr = site(sys)
    nf, chain = reduce(sys, dr, n_samples=100)
    rng = np.random.default_rng(1111)
    c, a = rng.uniform(-2, 2, (200, 2)), rng.uniform(-1, 3, 200)
    c2, a2 = unembed_points(embed_points(c, a, chain), chain)
    rt = float(max(np.abs(c2 - c).max(), np.abs(a2 - a).max()))
    ms = MechanicalSystem.from_normal_form(nf)
    Ec = ms.critical_energy
    channel = scan_channel(ms, (1, 0), (Ec + 0.2, Ec + 2.0), n_grid=16)
    slope, _ = embedding_diameter_slope(channel, lambda e: dataclasses.replace(chain, eps=e),
                                        [1e-3, 1e-4, 1e-5, 1e-6])
    ov = json.loads((out / "verify.json").read_text())["overlap"]
    report(11, "channel embedding", [
        ("round trip", rt < 1e-12, _g(rt)), ("diameter slope 0.5", abs(slope - 0.5) <= 0.05, _g(slope)),
        ("overlap length", ov["passed"], f"{_g(ov['length'])} vs required {_g(ov['required'])}")])


def _artifacts(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and not any(part.startswith(".") for part in p.relative_to(d).parts)
            and p.name != "manifest.json"}


def test_c12_determinism(flagship_run, tmp_path):
    out, code1, _ = flagship_run
    code2, _ = run_cli(["pipeline", "-c", FLAGSHIP, "--out", tmp_path / "out"], tmp_path / "cache")
    a, b = _artifacts(out), _artifacts(tmp_path / "out")
    differ = sorted(n for n in a.keys() | b.keys() if a.get(n) != b.get(n))
    report(12, "determinism", [("same exit code", code1 == code2, code2),
                               (f"{len(a)} artifacts byte-identical", not differ and len(a) >= 10,
                                ",".join(differ) or "none differ")])
