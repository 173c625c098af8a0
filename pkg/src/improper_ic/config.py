"""Experiment specifications: YAML schema, validation and hashing.

A spec file looks like::

    name: two_user_fixed
    scenario: fixed-awgn-2user
    modulations: [8PSK, 8PSK]
    grid: [0, 5, 10, 15, 20]
    schemes: [ps-pc, minmax-pep]
    n_symbols: 1000000
    n_realizations: 1
    seed: 7

Optional keys: ``grid_unit`` (``snr_db`` or ``tx_power_dbm``; cellular
scenarios default to the latter), ``mode`` (``ser`` or ``pep``), ``snr2_db``
(PEP mode: fixed SNRs of the interferer), ``interference``
(``constellation`` or ``gaussian``), ``fading_sampling`` (``plain`` or
``importance``), ``algorithm`` and ``benchmarks`` (keyword overrides for
:class:`AlgoConfig` and :class:`BenchConfig`) and ``output`` (CSV file name).

Validation errors carry the line number of the offending key.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import yaml

from .algorithms import AlgoConfig
from .benchmarks import SCHEMES, BenchConfig
from .channel import FADING_METHODS, TX_POWER_RANGE_DBM
from .constellation import canonical_label
from .errors import ConfigurationError
from .montecarlo import INTERFERENCE_MODES

SCENARIOS = {
    "fixed-awgn-2user": 2,
    "fixed-awgn-3user": 3,
    "cellular-2cell": 2,
    "cellular-3cell": 3,
    "rayleigh": None,  # K taken from the modulation list
}
GRID_UNITS = ("snr_db", "tx_power_dbm")
MODES = ("ser", "pep")


@dataclass
class ExperimentSpec:
    scenario: str
    modulations: list
    grid: list
    schemes: list = field(default_factory=list)
    n_symbols: int = 100_000
    n_realizations: int = 1
    seed: int = 0
    name: str = "experiment"
    output: str = ""
    grid_unit: str = ""
    mode: str = "ser"
    snr2_db: list = field(default_factory=list)
    interference: str = "constellation"
    fading_sampling: str = "plain"
    algorithm: dict = field(default_factory=dict)
    benchmarks: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.modulations)

    @property
    def is_cellular(self) -> bool:
        return self.scenario.startswith("cellular")

    @property
    def is_fixed(self) -> bool:
        return self.scenario.startswith("fixed")

    def output_name(self) -> str:
        return self.output or f"{self.name}.csv"

    def algo_config(self) -> AlgoConfig:
        return AlgoConfig(**self.algorithm)

    def bench_config(self) -> BenchConfig:
        return BenchConfig(**self.benchmarks)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        """Short digest of everything that influences results (not the output name)."""
        d = self.to_dict()
        d.pop("output", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _lines(text: str) -> dict:
    """Top-level key -> 1-based line number, plus ``key[i]`` for list items."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out
    if not isinstance(root, yaml.MappingNode):
        return out
    for knode, vnode in root.value:
        key = knode.value
        out[key] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.SequenceNode):
            for i, item in enumerate(vnode.value):
                out[f"{key}[{i}]"] = item.start_mark.line + 1
    return out


def _fail(msg, lines, key, source):
    line = lines.get(key) or lines.get(key.split("[")[0])
    where = f"{source}:{line}: " if line else f"{source}: "
    raise ConfigurationError(f"{where}{msg}")


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    """Parse and validate a YAML experiment spec."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f"{mark.line + 1}: " if mark is not None else " "
        raise ConfigurationError(f"{source}:{line}invalid YAML ({exc})") from exc
    lines = _lines(text)
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{source}: spec must be a mapping of keys to values")
    known = {f.name for f in fields(ExperimentSpec)}
    for key in raw:
        if key not in known:
            _fail(f"unknown key '{key}'", lines, str(key), source)
    for key in ("scenario", "modulations", "grid"):
        if key not in raw:
            raise ConfigurationError(f"{source}: missing required key '{key}'")
    spec = ExperimentSpec(**raw)
    validate(spec, lines, source)
    return spec


def load_spec(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_spec(fh.read(), str(path))


def validate(spec: ExperimentSpec, lines=None, source="<spec>"):
    """Check field values; normalizes labels and defaults in place."""
    lines = lines or {}
    if spec.scenario not in SCENARIOS:
        _fail(f"scenario: unknown value '{spec.scenario}' (choose from {', '.join(SCENARIOS)})", lines, "scenario", source)
    if not isinstance(spec.modulations, list) or not spec.modulations:
        _fail("modulations: must be a non-empty list", lines, "modulations", source)
    labels = []
    for i, m in enumerate(spec.modulations):
        try:
            labels.append(canonical_label(str(m)))
        except ConfigurationError as exc:
            _fail(f"modulations[{i}]: {exc}", lines, f"modulations[{i}]", source)
    spec.modulations = labels
    need = SCENARIOS[spec.scenario]
    if need is not None and len(labels) != need:
        _fail(
            f"modulations: scenario '{spec.scenario}' has {need} users but {len(labels)} modulations were given",
            lines, "modulations", source,
        )
    if not isinstance(spec.grid, list) or not spec.grid:
        _fail("grid: must be a non-empty list of numbers", lines, "grid", source)
    try:
        spec.grid = [float(g) for g in spec.grid]
    except (TypeError, ValueError):
        _fail("grid: entries must be numbers", lines, "grid", source)
    if not spec.grid_unit:
        spec.grid_unit = "tx_power_dbm" if spec.is_cellular else "snr_db"
    if spec.grid_unit not in GRID_UNITS:
        _fail(f"grid_unit: must be one of {GRID_UNITS}", lines, "grid_unit", source)
    if not spec.is_cellular and spec.grid_unit != "snr_db":
        _fail("grid_unit: only cellular scenarios accept tx_power_dbm", lines, "grid_unit", source)
    if spec.is_cellular and spec.grid_unit == "tx_power_dbm":
        lo, hi = TX_POWER_RANGE_DBM
        for i, g in enumerate(spec.grid):
            if not lo <= g <= hi:
                _fail(f"grid[{i}]: transmit power {g} dBm outside [{lo}, {hi}]", lines, f"grid[{i}]", source)
    if spec.mode not in MODES:
        _fail(f"mode: must be one of {MODES}", lines, "mode", source)
    if spec.mode == "ser":
        if not isinstance(spec.schemes, list) or not spec.schemes:
            _fail("schemes: must be a non-empty list", lines, "schemes", source)
        for i, s in enumerate(spec.schemes):
            if s not in SCHEMES:
                _fail(f"schemes[{i}]: unknown scheme '{s}' (choose from {', '.join(SCHEMES)})", lines, f"schemes[{i}]", source)
    else:
        if spec.scenario != "rayleigh" or spec.K != 2:
            _fail("mode: pep mode needs scenario 'rayleigh' with two users", lines, "mode", source)
        if not spec.snr2_db:
            _fail("snr2_db: pep mode needs a non-empty list of interferer SNRs", lines, "snr2_db", source)
        spec.snr2_db = [float(x) for x in spec.snr2_db]
    for key in ("n_symbols", "n_realizations"):
        val = getattr(spec, key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            _fail(f"{key}: must be a positive integer", lines, key, source)
    if not isinstance(spec.seed, int) or isinstance(spec.seed, bool) or spec.seed < 0:
        _fail("seed: must be a non-negative integer", lines, "seed", source)
    if spec.interference not in INTERFERENCE_MODES:
        _fail(f"interference: must be one of {INTERFERENCE_MODES}", lines, "interference", source)
    if spec.fading_sampling not in FADING_METHODS:
        _fail(f"fading_sampling: must be one of {FADING_METHODS}", lines, "fading_sampling", source)
    for key, factory in (("algorithm", AlgoConfig), ("benchmarks", BenchConfig)):
        opts = getattr(spec, key)
        if not isinstance(opts, dict):
            _fail(f"{key}: must be a mapping", lines, key, source)
        try:
            factory(**opts)
        except (TypeError, ValueError) as exc:
            _fail(f"{key}: {exc}", lines, key, source)
    return spec
