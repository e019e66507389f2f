"""Scenario files: TOML documents with one table per block.

Grammar (see README for the full key list)::

    [experiment]            name = "theorem1" | "two_clocks" | ...; seed = 0
    [grid]                  dims, n, extent
    [system]                masses, matrix, matrix_imag, random_hermitian
    [[system.potentials]]   pair = [i, j], kind = "...", <kind parameters>
    [packet]                shape, center, width, momentum
    [propagator]            method, dt, t_final, record_every
    [<experiment name>]     experiment-specific knobs
    [output]                directory, formats

Unknown tables and keys are errors.  Every problem found is reported, not
only the first.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .nbody import POTENTIAL_KINDS

EXPERIMENTS = ("theorem1", "two_clocks", "ergodic", "stone", "fourier_laplace",
               "klein_gordon", "com_separation", "beats", "equivalence")

REQUIRED = object()


class ScenarioError(ValueError):
    """Parse or validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _num(v):
    return None if _is_num(v) else "must be a number"


def _int(v):
    return None if isinstance(v, int) and not isinstance(v, bool) else "must be an integer"


def _positive(v):
    return _num(v) or (None if v > 0 else "must be positive")


def _nonneg(v):
    return _num(v) or (None if v >= 0 else "must be non-negative")


def _pos_int(v):
    return _int(v) or (None if v >= 1 else "must be at least 1")


def _bool(v):
    return None if isinstance(v, bool) else "must be true or false"


def _str(v):
    return None if isinstance(v, str) else "must be a string"


def _power_of_two(v):
    if _int(v):
        return "n must be a power of two"
    return None if v >= 8 and v & (v - 1) == 0 else "n must be a power of two >= 8"


def _one_of(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(map(str, options))}"
    return check


def _num_list(min_len=1, positive=False):
    def check(v):
        if not isinstance(v, list) or len(v) < min_len or not all(_is_num(x) for x in v):
            return f"must be a list of at least {min_len} numbers"
        if positive and not all(x > 0 for x in v):
            return "entries must be positive"
        return None
    return check


def _int_list(v):
    if not isinstance(v, list) or not v or any(_int(x) for x in v):
        return "must be a non-empty list of integers"
    return None


def _vector(v):
    """Number or list of numbers (per-axis values)."""
    if _is_num(v):
        return None
    return _num_list()(v)


def _matrix(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list of rows"
    n = len(v)
    if any(not isinstance(r, list) or len(r) != n or not all(_is_num(x) for x in r) for r in v):
        return "must be a square list of numeric rows"
    return None


def _complex_list(v):
    if not isinstance(v, list) or not v:
        return "must be a non-empty list of [re, im] pairs"
    if any(not isinstance(p, list) or len(p) != 2 or not all(_is_num(x) for x in p) for p in v):
        return "must be a non-empty list of [re, im] pairs"
    return None


# section -> key -> (default, validator); REQUIRED marks keys without defaults,
# None marks optional keys that are omitted when unset.
SCHEMA = {
    "experiment": {"name": (REQUIRED, _one_of(*EXPERIMENTS)), "seed": (0, _int),
                   "description": ("", _str)},
    "grid": {"dims": (1, _one_of(1, 2, 3)), "n": (REQUIRED, _power_of_two),
             "extent": (REQUIRED, _positive)},
    "system": {"masses": ([2.0, 2.0], _num_list(2, positive=True)),
               "potentials": ([], None), "matrix": (None, _matrix),
               "matrix_imag": (None, _matrix), "random_hermitian": (0, _int)},
    "packet": {"shape": ("gaussian", _one_of("gaussian", "bump")), "center": (0.0, _vector),
               "width": (1.0, _vector), "momentum": (2.0, _vector)},
    "propagator": {"method": ("split_operator", _one_of(
        "split_operator", "exact_diagonal", "dispersive_exact", "kg_leapfrog")),
        "dt": (0.01, _positive), "t_final": (1.0, _num), "record_every": (1, _pos_int)},
    "theorem1": {"R": (10.0, _positive), "t_min": (5.0, _positive), "t_max": (40.0, _positive),
                 "n_times": (12, _pos_int), "time_sign": (1, _one_of(1, -1)),
                 "phi_center": (None, _num), "phi_halfwidth": (None, _positive),
                 "continuum_threshold": (0.99, _nonneg), "filter_continuum": (True, _bool),
                 "exponent_tolerance": (0.2, _positive)},
    "two_clocks": {"momenta": ([1.0, 2.0, 3.0], _num_list(1, positive=True)),
                   "t_final": (30.0, _positive), "n_records": (61, _pos_int),
                   "speed_tolerance": (0.01, _positive)},
    "ergodic": {"lambda": (0.0, _num), "T": ([25.0, 50.0, 100.0, 200.0], _num_list(2, True)),
                "probe": (None, _num_list(1)), "halving_tolerance": (0.2, _positive)},
    "stone": {"eps": ([0.1, 0.05], _num_list(1, True)), "window": (100.0, _positive),
              "tolerance": (1e-8, _positive), "integral_tolerance": (0.03, _positive)},
    "fourier_laplace": {"z": ([0.5, 0.5], _num_list(2)), "T_max": (None, _positive),
                        "dt": (None, _positive), "tolerance": (1e-3, _positive),
                        "tail_tolerance": (0.05, _positive)},
    "klein_gordon": {"c": (1.0, _positive), "mu_field": (1.0, _nonneg), "k_mode": (4, _int),
                     "t_final": (20.0, _positive), "dt": (0.01, _positive),
                     "pulse_width": (2.0, _positive), "pulse_t_final": (10.0, _positive),
                     "pulse_dt": (0.001, _positive), "energy_dt": (0.001, _positive),
                     "frequency_tolerance": (1e-6, _positive),
                     "pulse_tolerance": (1e-4, _positive),
                     "energy_tolerance": (1e-6, _positive)},
    "com_separation": {"tolerance": (1e-8, _positive)},
    "beats": {"levels": ([0, 1], _int_list), "probe_x": (0.5, _num),
              "t_final": (200.0, _positive), "n_samples": (2048, _pos_int)},
    "equivalence": {"z": ([[0.5, 0.5]], _complex_list), "lambdas": (None, _num_list(1)),
                    "T": (100.0, _positive), "eps": (0.1, _positive),
                    "fl_tolerance": (1e-3, _positive), "stone_tolerance": (1e-8, _positive)},
    "output": {"directory": ("results", _str), "formats": (["csv", "png"], None)},
}

GRID_EXPERIMENTS = {"theorem1", "two_clocks", "klein_gordon", "com_separation", "beats"}
# Blocks filled with defaults even when absent from the file.
NEEDS = {name: {"experiment", "system", "output", name} for name in EXPERIMENTS}
for _name in GRID_EXPERIMENTS:
    NEEDS[_name].add("grid")
NEEDS["theorem1"] |= {"packet", "propagator"}
NEEDS["two_clocks"].add("packet")


@dataclass
class Scenario:
    experiment: str
    blocks: dict
    source: Path | None = field(default=None, compare=False)

    def __getitem__(self, section):
        return self.blocks[section]

    def to_toml(self) -> str:
        def strip(d):
            return {k: v for k, v in d.items() if v is not None}
        return tomli_w.dumps({s: strip(b) for s, b in self.blocks.items()})

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()


def _validate_potentials(pots, n_particles, errors):
    if not isinstance(pots, list):
        errors.append("system.potentials: must be an array of tables")
        return
    for idx, p in enumerate(pots):
        where = f"system.potentials[{idx}]"
        if not isinstance(p, dict):
            errors.append(f"{where}: must be a table")
            continue
        kind = p.get("kind")
        if kind not in POTENTIAL_KINDS:
            errors.append(f"{where}.kind: must be one of {', '.join(POTENTIAL_KINDS)}")
            continue
        pair = p.get("pair")
        if (not isinstance(pair, list) or len(pair) != 2 or any(_int(x) for x in pair)
                or not 0 <= pair[0] < pair[1] < n_particles):
            errors.append(f"{where}.pair: must be [i, j] with 0 <= i < j < {n_particles}")
        allowed = set(POTENTIAL_KINDS[kind]) | {"kind", "pair"}
        for key in p:
            if key not in allowed:
                errors.append(f"unknown key '{key}' in section '{where}'")
        for name in POTENTIAL_KINDS[kind]:
            if name not in p:
                if not (kind == "soft_coulomb" and name == "softening"):
                    errors.append(f"{where}.{name}: required for {kind}")
            elif _num(p[name]):
                errors.append(f"{where}.{name}: must be a number")
            elif name in ("width", "softening") and not p[name] > 0:
                errors.append(f"{where}.{name}: must be positive")


def _validate_formats(v, errors):
    if not isinstance(v, list) or any(f not in ("csv", "png") for f in v):
        errors.append("output.formats: must be a list drawn from 'csv', 'png'")
    elif "csv" not in v:
        errors.append("output.formats: 'csv' is always written and must be listed")


def build_scenario(raw: dict, source=None) -> Scenario:
    errors = []
    for section in raw:
        if section not in SCHEMA:
            errors.append(f"unknown section '{section}'")
    name = raw.get("experiment", {}).get("name") if isinstance(
        raw.get("experiment"), dict) else None
    blocks = {}
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            errors.append(f"section '{section}' must be a table")
            continue
        if section in EXPERIMENTS and section != name:
            if section in raw:
                errors.append(f"section '{section}' does not apply to experiment '{name}'")
            continue
        if section not in raw and section not in NEEDS.get(name, SCHEMA):
            continue
        block = {}
        for key in given:
            if key not in keys:
                errors.append(f"unknown key '{key}' in section '{section}'")
        for key, (default, check) in keys.items():
            if key in given:
                value = given[key]
                msg = check(value) if check else None
                if msg:
                    errors.append(f"{section}.{key}: {msg}")
                block[key] = value
            elif default is REQUIRED:
                errors.append(f"{section}.{key}: required")
            else:
                block[key] = list(default) if isinstance(default, list) else default
        blocks[section] = block
    if name is None or name not in EXPERIMENTS:
        raise ScenarioError(errors or [f"experiment.name: unknown experiment {name!r}"])

    system = blocks.get("system", {})
    if "potentials" in system:
        _validate_potentials(system["potentials"], len(system.get("masses") or []), errors)
    if "output" in blocks:
        _validate_formats(blocks["output"]["formats"], errors)
    _cross_checks(name, blocks, errors)
    if errors:
        raise ScenarioError(errors)
    return Scenario(name, blocks, source)


def _cross_checks(name, blocks, errors):
    grid = blocks.get("grid")
    system = blocks.get("system", {})
    exp = blocks.get(name, {})
    if grid and not any(e.startswith("grid.") for e in errors):
        if grid["n"] ** grid["dims"] > 2**22:
            errors.append("grid: n**dims exceeds the lattice cap 2**22")
    if system.get("matrix_imag") is not None and system.get("matrix") is not None:
        if len(system["matrix_imag"]) != len(system["matrix"]):
            errors.append("system.matrix_imag: must match the shape of system.matrix")
    if name == "com_separation" and grid:
        if grid.get("dims") != 1 or (isinstance(grid.get("n"), int) and grid["n"] > 64):
            errors.append("com_separation: needs a 1-d grid with n <= 64")
        if len(system.get("masses", [])) != 2:
            errors.append("com_separation: needs exactly two masses")
    if name == "theorem1" and _is_num(exp.get("t_min")) and _is_num(exp.get("t_max")):
        if not exp["t_min"] < exp["t_max"]:
            errors.append("theorem1: t_min must be below t_max")
    if name == "beats" and not system.get("potentials"):
        errors.append("beats: needs a confining entry in system.potentials")
    if name in ("two_clocks", "klein_gordon", "beats") and grid and grid.get("dims") != 1:
        errors.append(f"{name}: needs a 1-d grid")
    if name == "theorem1" and grid and isinstance(grid.get("dims"), int):
        n_rel = len(system.get("masses", [])) - 1
        if n_rel > 0 and grid["dims"] % n_rel:
            errors.append("theorem1: grid.dims must be a multiple of (number of masses - 1)")


def parse_scenario_text(text: str, source=None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError([f"parse error: {exc}"]) from None
    return build_scenario(raw, source)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError([f"scenario file {path} does not exist"])
    return parse_scenario_text(path.read_text(), path)


def dumps_scenario(scenario: Scenario) -> str:
    return scenario.to_toml()
