"""Scenario files: a schema-versioned YAML document describing one model run.

Sections: ``grid``, ``curves``, ``volatilities``, ``risky_dates``, ``default``,
``recovery`` (optional) and ``run``. Unknown keys are rejected, and every error
carries the line and column of the offending key.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import yaml

from .core import (ConstantVol, ExpDecayVol, FlatCurve, ForwardFieldSpec, LinearCurve, TabulatedCurve,
                   build_time_grid)
from .drift import DefaultModel
from .errors import ModelError, ScenarioParseError
from .measure import DETERMINISTIC, MARKED, JAtom, RiskyDateModel, TruncatedExpKernel, UniformKernel, WindowKernel
from .recovery import LossLaw, RecoveryModel
from .simulator import ScenarioSpec

SCHEMA_VERSION = 1
BUNDLED_DIR = Path(__file__).parent / "scenarios"
KINDS = {"deterministic": DETERMINISTIC, "marked": MARKED}
BUNDLED = ("merton", "announce", "surprise-bad-news", "poisson-news", "recovery-rmv")


# ---------------------------------------------------------------------------
# YAML with source positions
# ---------------------------------------------------------------------------


class _Map(dict):
    """Mapping that remembers where each key was written."""

    mark = None

    def __init__(self):
        super().__init__()
        self.key_marks = {}


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    out = _Map()
    out.mark = node.start_mark
    for k_node, v_node in node.value:
        key = loader.construct_object(k_node, deep=True)
        if key in out:
            raise ScenarioParseError(f"duplicate key {key!r}", k_node.start_mark.line + 1,
                                     k_node.start_mark.column + 1)
        out[key] = loader.construct_object(v_node, deep=True)
        out.key_marks[key] = k_node.start_mark
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def _where(m, key=None):
    mark = m.key_marks.get(key) if isinstance(m, _Map) and key is not None else getattr(m, "mark", None)
    if mark is None:
        return None, None
    return mark.line + 1, mark.column + 1


def _fail(msg, m=None, key=None):
    line, col = _where(m, key) if m is not None else (None, None)
    raise ScenarioParseError(msg, line, col)


def _section(m, key, allowed, required=(), optional=False):
    if key not in m:
        if optional:
            return None
        _fail(f"missing section {key!r}", m)
    sec = m[key]
    if not isinstance(sec, dict):
        _fail(f"section {key!r} must be a mapping", m, key)
    _check_keys(sec, allowed, required, key)
    return sec


def _check_keys(sec, allowed, required, where):
    for k in sec:
        if k not in allowed:
            _fail(f"unknown key {k!r} in {where}", sec, k)
    for k in required:
        if k not in sec:
            _fail(f"missing key {k!r} in {where}", sec)


def _num(sec, key, default=None, kind=float):
    if key not in sec:
        if default is None:
            _fail(f"missing key {key!r}", sec)
        return default
    v = sec[key]
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"{key!r} must be a number, got {v!r}", sec, key)
    if kind is int:
        if int(v) != v:
            _fail(f"{key!r} must be an integer, got {v!r}", sec, key)
        return int(v)
    return float(v)


def _floats(sec, key):
    v = sec.get(key)
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in v):
        _fail(f"{key!r} must be a list of numbers", sec, key)
    return tuple(float(x) for x in v)


def _located(fn, sec, key):
    """Run a constructor; model errors get the position of ``key`` appended."""
    try:
        return fn()
    except ModelError as exc:
        if isinstance(exc, ScenarioParseError):
            raise
        line, col = _where(sec, key)
        if line is not None:
            exc.args = (f"{exc.args[0]} (line {line}, column {col})",) + exc.args[1:]
        raise


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


def _curve(parent, key):
    c = parent.get(key)
    if not isinstance(c, dict) or "family" not in c:
        _fail(f"{key!r} needs a mapping with a 'family'", parent, key)
    fam = c["family"]
    if fam == "flat":
        _check_keys(c, ("family", "level"), ("level",), key)
        return FlatCurve(_num(c, "level"))
    if fam == "linear":
        _check_keys(c, ("family", "level", "slope"), ("level", "slope"), key)
        return LinearCurve(_num(c, "level"), _num(c, "slope"))
    if fam == "tabulated":
        _check_keys(c, ("family", "times", "values"), ("times", "values"), key)
        return _located(lambda: TabulatedCurve(_floats(c, "times"), _floats(c, "values")), c, "family")
    _fail(f"unknown curve family {fam!r}", c, "family")


def _vol(parent, key, n_factors):
    v = parent.get(key)
    if not isinstance(v, dict) or "family" not in v:
        _fail(f"{key!r} needs a mapping with a 'family'", parent, key)
    fam = v["family"]
    if fam == "constant":
        _check_keys(v, ("family", "sigma"), ("sigma",), key)
        vol = ConstantVol(_floats(v, "sigma"))
    elif fam == "exp_decay":
        _check_keys(v, ("family", "sigma", "decay"), ("sigma", "decay"), key)
        vol = ExpDecayVol(_floats(v, "sigma"), _num(v, "decay"))
    else:
        _fail(f"unknown volatility family {fam!r}", v, "family")
    if vol.n_factors != n_factors:
        _fail(f"{key!r} has {vol.n_factors} factors, expected {n_factors}", v, "sigma")
    return vol


def _kernel(parent, key):
    k = parent.get(key)
    if not isinstance(k, dict) or "family" not in k:
        _fail(f"{key!r} needs a mapping with a 'family'", parent, key)
    fam = k["family"]
    if fam == "uniform":
        _check_keys(k, ("family",), (), key)
        return UniformKernel()
    if fam == "window":
        _check_keys(k, ("family", "width"), ("width",), key)
        return _located(lambda: WindowKernel(_num(k, "width")), k, "width")
    if fam == "truncated_exponential":
        _check_keys(k, ("family", "rate"), ("rate",), key)
        return _located(lambda: TruncatedExpKernel(_num(k, "rate")), k, "rate")
    _fail(f"unknown kernel family {fam!r}", k, "family")


def _loss(parent, key):
    if key not in parent:
        return LossLaw((1.0,), (1.0,))
    law = parent[key]
    if not isinstance(law, dict):
        _fail(f"{key!r} must be a mapping", parent, key)
    _check_keys(law, ("values", "probs"), ("values", "probs"), key)
    return _located(lambda: LossLaw(_floats(law, "values"), _floats(law, "probs")), parent, key)


# ---------------------------------------------------------------------------
# parse / serialize
# ---------------------------------------------------------------------------

TOP = ("schema_version", "name", "description", "grid", "curves", "volatilities", "risky_dates", "default",
       "recovery", "run")


def parse_scenario(text: str, source: str = "<string>") -> ScenarioSpec:
    """Build a :class:`ScenarioSpec` from scenario text."""
    try:
        doc = yaml.load(text, Loader=_Loader)
    except ScenarioParseError:
        raise
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        raise ScenarioParseError(f"{source}: {exc.problem}", mark.line + 1 if mark else None,
                                 mark.column + 1 if mark else None) from None
    if not isinstance(doc, dict):
        raise ScenarioParseError(f"{source}: a scenario is a mapping of sections", 1, 1)
    _check_keys(doc, TOP, ("schema_version", "grid", "curves", "risky_dates", "run"), "scenario")
    if doc["schema_version"] != SCHEMA_VERSION:
        _fail(f"unsupported schema_version {doc['schema_version']!r} (expected {SCHEMA_VERSION})",
              doc, "schema_version")
    name = str(doc.get("name", Path(source).stem))

    g = _section(doc, "grid", ("horizon", "steps"), ("horizon", "steps"))
    horizon, steps = _num(g, "horizon"), _num(g, "steps", kind=int)

    rd = _section(doc, "risky_dates", ("kind", "atoms", "weights", "rate", "rate_bound", "kernel",
                                       "max_announcements", "j_atoms"), ("kind",))
    if rd["kind"] not in KINDS:
        _fail(f"risky_dates kind must be one of {sorted(KINDS)}, got {rd['kind']!r}", rd, "kind")
    kind = KINDS[rd["kind"]]
    atoms = _floats(rd, "atoms") if "atoms" in rd else ()
    weights = tuple(int(w) for w in _floats(rd, "weights")) if "weights" in rd else ()
    j_atoms = []
    for ja in rd.get("j_atoms", []) or []:
        if not isinstance(ja, dict):
            _fail("each J atom is a mapping with time, mass and points", rd, "j_atoms")
        _check_keys(ja, ("time", "mass", "points"), ("time", "mass", "points"), "j_atoms")
        pts = ja["points"]
        if not isinstance(pts, list) or any(not isinstance(p, list) or len(p) != 2 for p in pts):
            _fail("J atom points are [date, probability] pairs", ja, "points")
        j_atoms.append(JAtom(_num(ja, "time"), _num(ja, "mass"), tuple((float(u), float(p)) for u, p in pts)))

    extra = list(atoms) + [ja.time for ja in j_atoms] + [u for ja in j_atoms for u, _ in ja.points]
    grid = _located(lambda: build_time_grid(horizon, steps, extra), rd, "atoms" if atoms else "kind")
    # atoms are stored bit-equal to their grid nodes
    atoms = tuple(grid.snap(u) for u in atoms)

    rate = _curve(rd, "rate") if "rate" in rd else FlatCurve(0.0)
    kernel = _kernel(rd, "kernel") if "kernel" in rd else None
    risky = _located(lambda: RiskyDateModel(
        kind, horizon, atoms=atoms, weights=weights, rate=rate,
        rate_bound=_num(rd, "rate_bound") if rd.get("rate_bound") is not None else None,
        kernel=kernel,
        max_announcements=_num(rd, "max_announcements", kind=int) if rd.get("max_announcements") is not None
        else None,
        j_atoms=tuple(j_atoms)), rd, "kind")

    cv = _section(doc, "curves", ("f0", "g0"), ("f0", "g0"))
    f0, g0 = _curve(cv, "f0"), _curve(cv, "g0")
    vs = _section(doc, "volatilities", ("factors", "b", "beta"), ("factors",), optional=True)
    if vs is None:
        nf, vb, vbeta = 1, ConstantVol((0.0,)), ConstantVol((0.0,))
    else:
        nf = _num(vs, "factors", kind=int)
        if nf < 1:
            _fail("factors must be positive", vs, "factors")
        vb = _vol(vs, "b", nf) if "b" in vs else ConstantVol((0.0,) * nf)
        vbeta = _vol(vs, "beta", nf) if "beta" in vs else ConstantVol((0.0,) * nf)
    fields = ForwardFieldSpec(f0, g0, vb, vbeta, nf)

    dsec = _section(doc, "default", ("base", "slope", "max_intensity"), (), optional=True) or {}
    default = _located(lambda: DefaultModel(_num(dsec, "base", 0.0), _num(dsec, "slope", 0.0),
                                            _num(dsec, "max_intensity", 1e4)), doc, "default")

    recovery = None
    rs = _section(doc, "recovery", ("atom_loss", "event_rate", "event_loss"), (), optional=True)
    if rs is not None:
        recovery = _located(lambda: RecoveryModel(_loss(rs, "atom_loss"), _num(rs, "event_rate", 0.0),
                                                  _loss(rs, "event_loss")), doc, "recovery")

    run = _section(doc, "run", ("n_paths", "master_seed", "tolerance_z", "mesh_stride", "keep_paths"),
                   ("n_paths", "master_seed"))
    n_paths = _num(run, "n_paths", kind=int)
    if n_paths < 1:
        _fail("n_paths must be positive", run, "n_paths")
    seed = _num(run, "master_seed", kind=int)
    if seed < 0:
        _fail("master_seed must be non-negative", run, "master_seed")
    mesh_stride = _num(run, "mesh_stride", kind=int) if run.get("mesh_stride") is not None else None
    return ScenarioSpec(name, grid, fields, risky, default, n_paths=n_paths, master_seed=seed,
                        recovery=recovery, mesh_stride=mesh_stride,
                        tolerance_z=_num(run, "tolerance_z", 4.0), keep_paths=_num(run, "keep_paths", 8, int))


def load_scenario(path) -> ScenarioSpec:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def bundled_path(name: str) -> Path:
    return BUNDLED_DIR / f"{name}.scn"


def load_bundled(name: str) -> ScenarioSpec:
    return load_scenario(bundled_path(name))


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    if spec.fields.drift is not None:
        raise ModelError("a scenario with a modified drift cannot be serialized")
    risky = spec.risky
    rd = {"kind": {v: k for k, v in KINDS.items()}[risky.kind]}
    if risky.atoms:
        rd["atoms"] = list(risky.atoms)
    if risky.weights:
        rd["weights"] = list(risky.weights)
    if risky.kind == MARKED:
        rd["rate"] = risky.rate.to_dict()
        rd["kernel"] = risky.kernel.to_dict()
        if risky.rate_bound is not None:
            rd["rate_bound"] = risky.rate_bound
        if risky.max_announcements is not None:
            rd["max_announcements"] = risky.max_announcements
    if risky.j_atoms:
        rd["j_atoms"] = [{"time": ja.time, "mass": ja.mass, "points": [list(p) for p in ja.points]}
                         for ja in risky.j_atoms]
    dm = spec.default
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": spec.name,
        "grid": {"horizon": spec.grid.horizon, "steps": spec.grid.n_steps},
        "curves": {"f0": spec.fields.f0.to_dict(), "g0": spec.fields.g0.to_dict()},
        "volatilities": {"factors": spec.fields.n_factors, "b": spec.fields.vol_b.to_dict(),
                         "beta": spec.fields.vol_beta.to_dict()},
        "risky_dates": rd,
        "default": {"base": dm.base, "slope": dm.slope, "max_intensity": dm.max_intensity},
    }
    if spec.recovery is not None:
        rec = spec.recovery
        doc["recovery"] = {"atom_loss": rec.atom_loss.to_dict(), "event_rate": rec.event_rate,
                           "event_loss": rec.event_loss.to_dict()}
    run = {"n_paths": spec.n_paths, "master_seed": spec.master_seed, "tolerance_z": spec.tolerance_z,
           "keep_paths": spec.keep_paths}
    if spec.mesh_stride is not None:
        run["mesh_stride"] = spec.mesh_stride
    doc["run"] = run
    return doc


def serialize_scenario(spec: ScenarioSpec) -> str:
    return yaml.safe_dump(scenario_to_dict(spec), sort_keys=False, default_flow_style=None)


def content_hash(data: bytes) -> str:
    """Git blob hash of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def with_steps(spec: ScenarioSpec, steps: int) -> ScenarioSpec:
    """Same scenario on a uniform grid of ``steps`` steps (risky dates merged in)."""
    from dataclasses import replace
    risky = spec.risky
    extra = list(risky.atoms) + [ja.time for ja in risky.j_atoms] + [u for ja in risky.j_atoms for u, _ in ja.points]
    grid = build_time_grid(spec.grid.horizon, steps, extra)
    risky = replace(risky, atoms=tuple(grid.snap(u) for u in risky.atoms))
    return replace(spec, grid=grid, risky=risky)
