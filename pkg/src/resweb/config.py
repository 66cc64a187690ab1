"""Run configuration: a TOML file with system, geometry, numerics, targets and
output tables.  Loading validates every field and fills defaults, and
``dumps(load(text))`` is a fixed point, so the canonical form hashes stably.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python < 3.11
    import tomli
import tomli_w

from .errors import ConfigError

DEFAULTS = {
    "system": {
        "quadratic": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        "modes": [],
        "eps": 1e-4,
        "E": 1.0,
        "r": 6,
        "d_p": 2,
        "domain_radius": 2.0,
        "circles": [[1, 0, 0]],
    },
    "geometry": {
        "kappa": 0.15,
        "K_star": 1.0,
        "eta": 1.0,
        "delta_prime": 0.25,
        "theta_classify": 0.25,
        "xi": 0.0,
    },
    "numerics": {
        "seed": 0,
        "n_circle": 256,
        "n_check": 10000,
        "tol_level": 1e-10,
        "n_classify": 128,
        "n_remainder": 400,
        "remainder_eps": [1e-3, 1e-4, 1e-5, 1e-6],
        "n_flow": 8,
        "n_symmetry": 200,
        "orbit_nodes": 64,
        "n_starts": 4,
        "channel_energies": 16,
        "channel_g": [1, 0],
        "channel_E_max": 4.0,
        "hyperbolic_floor": 1e-6,
        "wk_n1": 64,
        "wk_n2": 32,
        "wk_tau": 0.25,
        "wk_tol": 1e-9,
        "delta_level": 1e-8,
        "argmin_level": 5e-3,
        "barrier_c": [0.0, 0.0],
        "deviation_eps": [1e-2, 1e-3, 1e-4],
    },
    "targets": {
        "site": 0,
    },
    "output": {
        "dir": "out",
    },
}

_POSITIVE = {
    ("system", "domain_radius"), ("geometry", "K_star"), ("numerics", "tol_level"),
    ("numerics", "wk_tau"), ("numerics", "wk_tol"), ("numerics", "delta_level"),
    ("numerics", "hyperbolic_floor"), ("numerics", "channel_E_max"), ("numerics", "argmin_level"),
}
_MIN_INT = {
    ("numerics", "n_circle"): 16, ("numerics", "n_check"): 16, ("numerics", "n_classify"): 16,
    ("numerics", "n_remainder"): 8, ("numerics", "n_flow"): 1, ("numerics", "n_symmetry"): 1,
    ("numerics", "orbit_nodes"): 16, ("numerics", "n_starts"): 1, ("numerics", "channel_energies"): 4,
    ("numerics", "wk_n1"): 32, ("numerics", "wk_n2"): 32,
}


@dataclass
class RunConfig:
    system: dict
    geometry: dict
    numerics: dict
    targets: dict
    output: dict
    source: Optional[Path] = field(default=None, compare=False)

    def to_dict(self) -> dict:
        return {"system": self.system, "geometry": self.geometry, "numerics": self.numerics,
                "targets": self.targets, "output": self.output}

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())

    @property
    def hash(self) -> str:
        """sha256 of the canonical content; the output table is left out so
        the same run in another directory shares cache entries."""
        d = {k: v for k, v in self.to_dict().items() if k != "output"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def output_dir(self, override=None) -> Path:
        d = Path(override if override is not None else self.output["dir"])
        if not d.is_absolute() and self.source is not None:
            d = self.source.parent / d
        return d

    def build_system(self):
        from .model import ConvexHamiltonian, FourierMode, FourierPerturbation, NearlyIntegrableSystem

        s = self.system
        if "poly" in s:
            h = ConvexHamiltonian(poly=s["poly"], degree=int(s.get("degree", 4)),
                                  domain_radius=s["domain_radius"])
        else:
            h = ConvexHamiltonian(Q=s["quadratic"], domain_radius=s["domain_radius"])
        modes = [FourierMode(tuple(m["k"]), str(m.get("coeff", "0")), str(m.get("sin", "0")))
                 for m in s["modes"]]
        P = FourierPerturbation.from_modes(modes, degree=s["d_p"]) if modes else FourierPerturbation.empty(s["d_p"])
        try:
            return NearlyIntegrableSystem(h, P, s["eps"], s["E"], s["r"], s["d_p"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _check_vec(v, n, what, integer=False):
    if not isinstance(v, list) or len(v) != n or not all(_num(x) for x in v):
        raise ConfigError(f"{what} must be a list of {n} numbers")
    if integer and not all(isinstance(x, int) for x in v):
        raise ConfigError(f"{what} must be integers")


def validate(data: dict) -> dict:
    """Merge defaults into ``data`` and check every field; returns the merged dict."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a table")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config table(s): {sorted(unknown)}")
    out = copy.deepcopy(DEFAULTS)
    for block, vals in data.items():
        if not isinstance(vals, dict):
            raise ConfigError(f"[{block}] must be a table")
        extra = set(vals) - set(DEFAULTS[block]) - ({"poly", "degree"} if block == "system" else set()) \
            - ({"p_star", "p_target", "delta", "neighbour"} if block == "targets" else set())
        if extra:
            raise ConfigError(f"unknown key(s) in [{block}]: {sorted(extra)}")
        for k, v in vals.items():
            dv = DEFAULTS[block].get(k)
            if isinstance(dv, float) and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            out[block][k] = v
    s, g, n = out["system"], out["geometry"], out["numerics"]
    if "poly" in s:
        if not isinstance(s["poly"], str):
            raise ConfigError("system.poly must be a polynomial string")
        s.pop("quadratic", None)
    else:
        Q = s["quadratic"]
        if not (isinstance(Q, list) and len(Q) == 3):
            raise ConfigError("system.quadratic must be a 3x3 matrix")
        for row in Q:
            _check_vec(row, 3, "system.quadratic row")
        s["quadratic"] = [[float(x) for x in row] for row in Q]
    if not isinstance(s["modes"], list):
        raise ConfigError("system.modes must be an array of tables")
    for m in s["modes"]:
        if not isinstance(m, dict) or "k" not in m:
            raise ConfigError("each mode needs a wavevector k")
        _check_vec(m["k"], 3, "mode k", integer=True)
        if set(m) - {"k", "coeff", "sin"}:
            raise ConfigError(f"unknown mode key(s): {sorted(set(m) - {'k', 'coeff', 'sin'})}")
        for key in ("coeff", "sin"):
            if key in m and not isinstance(m[key], str):
                m[key] = str(m[key])
    if not _num(s["eps"]) or s["eps"] <= 0:
        raise ConfigError("system.eps must be positive")
    if not _num(s["E"]):
        raise ConfigError("system.E must be a number")
    for key in ("r", "d_p"):
        if not isinstance(s[key], int) or s[key] < 0:
            raise ConfigError(f"system.{key} must be a non-negative integer")
    if not isinstance(s["circles"], list) or not s["circles"]:
        raise ConfigError("system.circles must list at least one wavevector")
    for k in s["circles"]:
        _check_vec(k, 3, "circle wavevector", integer=True)
    if not (0.0 < g["kappa"] < 1.0 / 6.0):
        raise ConfigError("geometry.kappa must lie in (0, 1/6)")
    if not (0.0 < g["delta_prime"] < 0.5):
        raise ConfigError("geometry.delta_prime must lie in (0, 1/2)")
    if not (0.0 < g["eta"] <= 1.0):
        raise ConfigError("geometry.eta must lie in (0, 1]")
    if not _num(g["theta_classify"]) or g["theta_classify"] <= 0:
        raise ConfigError("geometry.theta_classify must be positive")
    if not _num(g["xi"]) or g["xi"] < 0:
        raise ConfigError("geometry.xi must be non-negative (0 means measured)")
    for (blk, key) in _POSITIVE:
        v = out[blk][key]
        if not _num(v) or v <= 0:
            raise ConfigError(f"{blk}.{key} must be positive")
    for (blk, key), lo in _MIN_INT.items():
        v = out[blk][key]
        if not isinstance(v, int) or v < lo:
            raise ConfigError(f"{blk}.{key} must be an integer >= {lo}")
    for key in ("remainder_eps", "deviation_eps"):
        v = n[key]
        if not isinstance(v, list) or len(v) < 2 or not all(_num(x) and x > 0 for x in v):
            raise ConfigError(f"numerics.{key} must list at least two positive values")
        n[key] = [float(x) for x in v]
    _check_vec(n["channel_g"], 2, "numerics.channel_g", integer=True)
    _check_vec(n["barrier_c"], 2, "numerics.barrier_c")
    n["barrier_c"] = [float(x) for x in n["barrier_c"]]
    if not isinstance(n["seed"], int):
        raise ConfigError("numerics.seed must be an integer")
    t = out["targets"]
    if isinstance(t["site"], list):
        _check_vec(t["site"], 3, "targets.site")
    elif not isinstance(t["site"], int) or t["site"] < 0:
        raise ConfigError("targets.site must be an index or a point p")
    for key in ("p_star", "p_target", "neighbour"):
        if key in t:
            _check_vec(t[key], 3, f"targets.{key}")
    if "delta" in t and (not _num(t["delta"]) or t["delta"] <= 0):
        raise ConfigError("targets.delta must be positive")
    if not isinstance(out["output"]["dir"], str):
        raise ConfigError("output.dir must be a string")
    return out


def loads(text: str, source: Optional[Path] = None) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    d = validate(data)
    return RunConfig(d["system"], d["geometry"], d["numerics"], d["targets"], d["output"], source)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text, path.resolve())


def overrides(cfg: RunConfig, **blocks: Any) -> RunConfig:
    """A validated copy with some keys replaced, e.g. overrides(cfg, system={"eps": 1e-3})."""
    d = copy.deepcopy(cfg.to_dict())
    for blk, vals in blocks.items():
        d.setdefault(blk, {}).update(vals)
    d = validate(d)
    return RunConfig(d["system"], d["geometry"], d["numerics"], d["targets"], d["output"], cfg.source)
