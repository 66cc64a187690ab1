import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from resweb.model import ConvexHamiltonian, FourierMode, FourierPerturbation, NearlyIntegrableSystem
from resweb.torus import TorusPotential

settings.register_profile(
    "resweb", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "resweb"))


def quad_system(modes=(), eps=1e-4, E=1.0, Q=None, radius=2.0, d_p=2):
    h = ConvexHamiltonian(Q=np.eye(3) if Q is None else Q, domain_radius=radius)
    P = FourierPerturbation.from_modes(list(modes), degree=d_p) if modes else FourierPerturbation.empty(d_p)
    return NearlyIntegrableSystem(h, P, eps, E, 6, d_p)


def modes(*spec):
    """modes(((1,0,0), "1"), ...) -> FourierMode list."""
    return [FourierMode(tuple(k), *rest) for k, *rest in spec]


@pytest.fixture
def pendulum():
    return TorusPotential.pendulum(0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def site(sys, k1=(1, 0, 0), k2=(0, 1, -1), eps=None, kappa=0.15, upper=True):
    """The double resonance on circle k1 with second vector k2 (upper half by p[1] or p[2])."""
    from resweb.resonance import find_double_resonances, trace_circle

    drs = find_double_resonances(trace_circle(sys, k1, 64), sys, sys.eps if eps is None else eps, kappa, 1.0,
                                 T_max=8)
    hits = [d for d in drs if d.k_second == tuple(k2)]
    key = lambda d: (d.p_dd[1] + d.p_dd[2])
    hits.sort(key=key, reverse=upper)
    return hits[0]


ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]
FLAGSHIP = ROOT / "configs" / "quad.toml"


def run_cli(argv, cache, monkeypatch=None):
    """Run the CLI in-process with its own cache; returns (exit code, printed lines)."""
    from resweb.cli import run

    lines = []
    old = os.environ.get("RESWEB_CACHE")
    os.environ["RESWEB_CACHE"] = str(cache)
    try:
        code = run([str(a) for a in argv], echo=lines.append)
    finally:
        if old is None:
            os.environ.pop("RESWEB_CACHE", None)
        else:
            os.environ["RESWEB_CACHE"] = old
    return code, lines


@pytest.fixture(scope="session")
def flagship_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("flagship")
    out = base / "out"
    code, lines = run_cli(["pipeline", "-c", FLAGSHIP, "--out", out], base / "cache")
    return out, code, lines


# one (number, verdict, title, detail) row per acceptance criterion, filled by test_acceptance
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, title, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:2d}  {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
