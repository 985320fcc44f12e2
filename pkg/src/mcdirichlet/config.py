"""Run configuration: strict YAML parsing with line numbers in every error."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .errors import ConfigError

TOP_KEYS = {"name", "description", "seed", "instance", "domain", "coefficients", "boundary", "probes",
            "exact", "sim", "kato", "gauge", "oracle", "verify", "sweep", "out"}
SIM_KEYS = {"h", "level", "N", "T_max", "bridge", "rule", "coupling", "substeps", "antithetic", "backend"}
COEFF_KEYS = {"mu", "nu", "rho"}
BOUNDARY_KEYS = {"name", "params"}
DOMAIN_KEYS = {"ball": {"kind", "center", "radius"}, "box": {"kind", "lo", "hi"}, "sdf": {"kind", "name", "params"}}
BLOCK_KEYS = {
    "kato": {"alpha", "radii", "measures", "threshold"},
    "gauge": {"N", "probe_per_axis", "probe_paths", "max_k"},
    "oracle": {"kind", "radii", "probe", "tol", "max_iter", "pitch", "grid_n", "point", "lattice_out"},
    "verify": {"instances", "quick"},
    "sweep": {"levels", "coupled", "point", "csv"},
}


class _Marks:
    """Line numbers (1-based) of mapping keys, addressed by their path."""

    def __init__(self, node):
        self.lines = {}
        self._walk(node, ())

    def _walk(self, node, path):
        self.lines.setdefault(path, node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = k.value
                self.lines[path + (key,)] = k.start_mark.line + 1
                self._walk(v, path + (key,))
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def line(self, path):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)


def _err(marks: Optional[_Marks], path, msg):
    ln = marks.line(path) if marks is not None else None
    where = ".".join(str(p) for p in path) or "<root>"
    return ConfigError(f"line {ln}: {where}: {msg}" if ln else f"{where}: {msg}")


def _check_keys(d, allowed, marks, path):
    if not isinstance(d, dict):
        raise _err(marks, path, "expected a mapping")
    for k in d:
        if k not in allowed:
            raise _err(marks, tuple(path) + (k,), f"unknown key '{k}' (allowed: {sorted(allowed)})")


def _check_measure(m, marks, path):
    from .measures import measure_from_dict

    if m is None:
        return
    try:
        measure_from_dict(m)
    except ConfigError as e:
        raise _err(marks, path, str(e)) from None
    except (KeyError, TypeError, ValueError) as e:
        raise _err(marks, path, f"bad measure block ({e})") from None


def validate(data: dict, marks: Optional[_Marks] = None):
    _check_keys(data, TOP_KEYS, marks, ())
    if "seed" not in data:
        raise _err(marks, (), "'seed' is mandatory")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool) or data["seed"] < 0:
        raise _err(marks, ("seed",), "seed must be a non-negative integer")
    if "instance" in data:
        from .instances import INSTANCE_NAMES

        if data["instance"] not in INSTANCE_NAMES:
            raise _err(marks, ("instance",), f"unknown instance '{data['instance']}'; known: {INSTANCE_NAMES}")
    if "domain" in data:
        dom = data["domain"]
        if not isinstance(dom, dict) or dom.get("kind") not in DOMAIN_KEYS:
            raise _err(marks, ("domain",), f"domain kind must be one of {sorted(DOMAIN_KEYS)}")
        _check_keys(dom, DOMAIN_KEYS[dom["kind"]], marks, ("domain",))
    if "coefficients" in data and data["coefficients"] is not None:
        co = data["coefficients"]
        _check_keys(co, COEFF_KEYS, marks, ("coefficients",))
        mu = co.get("mu")
        if mu is not None:
            if not isinstance(mu, list) or len(mu) != 3:
                raise _err(marks, ("coefficients", "mu"), "mu must be a list of 3 measure blocks")
            for i, m in enumerate(mu):
                _check_measure(m, marks, ("coefficients", "mu", i))
        for k in ("nu", "rho"):
            _check_measure(co.get(k), marks, ("coefficients", k))
    if "boundary" in data:
        _check_keys(data["boundary"], BOUNDARY_KEYS, marks, ("boundary",))
        from .feynman_kac import BOUNDARY_REGISTRY

        if data["boundary"].get("name") not in BOUNDARY_REGISTRY:
            raise _err(marks, ("boundary", "name"), f"unknown boundary data; known: {sorted(BOUNDARY_REGISTRY)}")
    if "sim" in data:
        _check_keys(data["sim"], SIM_KEYS, marks, ("sim",))
        lv = data["sim"].get("level")
        if lv is not None and lv != "auto" and not isinstance(lv, int):
            raise _err(marks, ("sim", "level"), "level must be an integer or 'auto'")
    if "probes" in data:
        pr = data["probes"]
        if not isinstance(pr, list) or not all(isinstance(p, list) and len(p) == 3 for p in pr):
            raise _err(marks, ("probes",), "probes must be a list of 3-vectors")
    for blk, keys in BLOCK_KEYS.items():
        if blk in data and data[blk] is not None:
            _check_keys(data[blk], keys, marks, (blk,))
    if data.get("kato") and data["kato"].get("measures"):
        for i, m in enumerate(data["kato"]["measures"]):
            if not isinstance(m, dict) or set(m) - {"label", "measure"}:
                raise _err(marks, ("kato", "measures", i), "entries need 'label' and 'measure'")
            _check_measure(m.get("measure"), marks, ("kato", "measures", i, "measure"))


@dataclass
class RunConfig:
    data: dict
    source: Optional[str] = None
    marks: Optional[_Marks] = field(default=None, repr=False, compare=False)

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def block(self, name) -> dict:
        return dict(self.data.get(name) or {})

    def with_seed(self, seed: int) -> "RunConfig":
        d = copy.deepcopy(self.data)
        d["seed"] = int(seed)
        return RunConfig(d, self.source, self.marks)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dump(self) -> str:
        return yaml.safe_dump(self.data, sort_keys=True)

    def problem(self):
        """Resolve to an ``instances.Problem`` (built-in instance with inline overrides)."""
        from .instances import problem_from_dict, load_instance_dict

        if "instance" not in self.data and "domain" not in self.data:
            raise _err(self.marks, (), "this command needs 'instance' or 'domain'")
        base = load_instance_dict(self.data["instance"]) if "instance" in self.data else {}
        merged = dict(base)
        for k in ("domain", "coefficients", "boundary", "probes", "exact", "name", "description"):
            if k in self.data:
                merged[k] = self.data[k]
        if "sim" in base or "sim" in self.data:
            merged["sim"] = {**base.get("sim", {}), **self.data.get("sim", {})}
        return problem_from_dict(merged)

    def sim_config(self, workers: int = 1, **over):
        from .sde import SimConfig

        s = self.problem().sim
        s.update(over)
        lv = s.get("level")
        return SimConfig(seed=self.seed, h=float(s.get("h", 1e-3)), level=None if lv in (None, "auto") else int(lv),
                         coupling=float(s.get("coupling", 1.0)), T_max=s.get("T_max"),
                         bridge=bool(s.get("bridge", True)), rule=s.get("rule", "midpoint"),
                         substeps=int(s.get("substeps", 1)), antithetic=bool(s.get("antithetic", False)),
                         workers=int(workers), backend=s.get("backend"))

    def n_paths(self) -> int:
        return int(self.problem().sim.get("N", 100_000))


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        ln = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{ln}YAML syntax error: {getattr(e, 'problem', e)}") from None
    if node is None or not isinstance(data, dict):
        raise ConfigError("config must be a YAML mapping")
    marks = _Marks(node)
    validate(data, marks)
    return RunConfig(data, source, marks)


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    return parse_config(text, str(path))
