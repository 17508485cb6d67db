"""YAML run configuration for the command-line interface.

A configuration names a command and carries the blocks that command reads.
Every optional value is filled in on parsing, so a parsed configuration
serializes to a document that parses back to an equal object.

Schema (all blocks optional except ``command``)::

    command: weights | simulate | estimate | design-info
    design:   {clusters: 18, periods: 10, cell_size: 30}
    scenario:                      # preset XOR explicit effect vector
      preset: sim2-exposure        # sim1-immediate | sim2-exposure | sim3-calendar
      theta: 6                     # or delta: [...] (J-1) or xi: [...] (J-2)
      period_effects: [...]        # J values, explicit scenarios only
      correlation: exchangeable    # exchangeable | nested-exchangeable | independence
      tau_alpha_sq: 0.1111
      sigma_e_sq: 1.0
      tau_omega_sq: 0.0
    analysis:
      structures: [IT, ETI, CTI]
      correlations: [exchangeable, independence]   # or known (needs gamma)
      variance_methods: [model, CR2, CR3]          # also CR0
      gamma: null
    mc:       {n_reps: 1000, base_seed: 20240101}
    weights:  {families: [w1, w2, w3, w4], Q: [3, 5, 9], gamma: [0, 0.25, 0.5, 0.75, 0.9]}
                                   # gamma may be 1 where a closed form exists
    output:   {directory: out, formats: [csv, svg]}
    data:     {path: null}
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import yaml

from .correlation import CorrelationKind, CorrelationSpec
from .design import DesignSpec, Structure, TreatmentStructure, build_design
from .dgp import DEFAULT_SEED, PRESET_NAMES, ScenarioSpec, preset
from .errors import ConfigParseError, ConfigValidationError, IoError, ValidationError
from .mc import CORRELATIONS, AnalysisSpec
from .variance import VarianceMethod
from .weights import FAMILIES

COMMANDS = ("weights", "simulate", "estimate", "design-info")
FORMATS = ("csv", "svg")


@dataclass(frozen=True)
class DesignBlock:
    clusters: int = 18
    periods: int = 10
    cell_size: int = 30

    def build(self) -> DesignSpec:
        return build_design(self.clusters, self.periods, self.cell_size)


@dataclass(frozen=True)
class ScenarioBlock:
    preset: str | None = "sim1-immediate"
    theta: float | None = None
    delta: tuple[float, ...] | None = None
    xi: tuple[float, ...] | None = None
    period_effects: tuple[float, ...] | None = None
    correlation: str = "exchangeable"
    tau_alpha_sq: float = 1.0 / 9.0
    sigma_e_sq: float = 1.0
    tau_omega_sq: float = 0.0


@dataclass(frozen=True)
class AnalysisBlock:
    structures: tuple[str, ...] = ("IT", "ETI", "CTI")
    correlations: tuple[str, ...] = ("exchangeable", "independence")
    variance_methods: tuple[str, ...] = ("model", "CR2", "CR3")
    gamma: float | None = None


@dataclass(frozen=True)
class McBlock:
    n_reps: int = 1000
    base_seed: int = DEFAULT_SEED


@dataclass(frozen=True)
class WeightsBlock:
    families: tuple[str, ...] = FAMILIES
    Q: tuple[int, ...] = (3, 5, 9)
    gamma: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    formats: tuple[str, ...] = FORMATS


@dataclass(frozen=True)
class DataBlock:
    path: str | None = None


@dataclass(frozen=True)
class RunConfig:
    command: str
    design: DesignBlock = field(default_factory=DesignBlock)
    scenario: ScenarioBlock = field(default_factory=ScenarioBlock)
    analysis: AnalysisBlock = field(default_factory=AnalysisBlock)
    mc: McBlock = field(default_factory=McBlock)
    weights: WeightsBlock = field(default_factory=WeightsBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    data: DataBlock = field(default_factory=DataBlock)

    @property
    def design_spec(self) -> DesignSpec:
        return self.design.build()

    @property
    def scenario_spec(self) -> ScenarioSpec:
        return scenario_from_block(self.scenario, self.design_spec, self.mc.base_seed)

    def analyses(self) -> list[AnalysisSpec]:
        a = self.analysis
        return [
            AnalysisSpec(s, c, a.variance_methods, a.gamma if c == "known" else None)
            for s in a.structures
            for c in a.correlations
        ]


def scenario_from_block(block: ScenarioBlock, design: DesignSpec, seed: int = DEFAULT_SEED) -> ScenarioSpec:
    corr = CorrelationSpec(block.correlation, block.tau_alpha_sq, block.sigma_e_sq, block.tau_omega_sq)
    if block.preset is not None:
        base = preset(block.preset)
        return ScenarioSpec(design, base.structure, base.period_effects, corr, seed, block.preset)
    if block.theta is not None:
        structure = TreatmentStructure.immediate(block.theta)
    elif block.delta is not None:
        structure = TreatmentStructure.exposure(block.delta)
    else:
        structure = TreatmentStructure.calendar(block.xi)
    return ScenarioSpec(design, structure, block.period_effects, corr, seed, "custom")


class _Doc:
    """Parsed YAML plus the node tree, for error messages with line numbers."""

    def __init__(self, text: str):
        try:
            self.node = yaml.compose(text, Loader=yaml.SafeLoader)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ConfigParseError(f"malformed configuration: {getattr(exc, 'problem', exc)}", line) from None

    def line(self, path: tuple[str, ...]) -> int | None:
        node = self.node
        line = None
        for key in path:
            if not isinstance(node, yaml.MappingNode):
                break
            for k, v in node.value:
                if k.value == key:
                    line = k.start_mark.line + 1
                    node = v
                    break
            else:
                break
        return line

    def fail(self, path: tuple[str, ...], message: str) -> ConfigValidationError:
        line = self.line(path)
        where = f" (line {line})" if line is not None else ""
        return ConfigValidationError(".".join(path), message + where)


def _block(doc: _Doc, name: str, cls) -> dict:
    raw = doc.data.get(name)
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise doc.fail((name,), "must be a mapping")
    allowed = {f.name for f in fields(cls)}
    for key in raw:
        if key not in allowed:
            raise doc.fail((name, str(key)), f"unknown key; allowed: {', '.join(sorted(allowed))}")
    return raw


def _int(doc, path, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise doc.fail(path, f"must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise doc.fail(path, f"must be at least {minimum}, got {value}")
    return value


def _float(doc, path, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise doc.fail(path, f"must be a finite number, got {value!r}")
    return float(value)


def _list(doc, path, value, item, allow_empty=False):
    if not isinstance(value, list):
        raise doc.fail(path, "must be a list")
    if not value and not allow_empty:
        raise doc.fail(path, "must not be empty")
    return tuple(item(doc, path, v) for v in value)


def _str(doc, path, value):
    if not isinstance(value, str):
        raise doc.fail(path, f"must be a string, got {value!r}")
    return value


def _choice(choices):
    def check(doc, path, value):
        value = _str(doc, path, value)
        if value not in choices:
            raise doc.fail(path, f"{value!r} is not one of {', '.join(choices)}")
        return value

    return check


def parse_config(text: str) -> RunConfig:
    """Parse and validate a YAML configuration document.

    Raises:
        ConfigParseError: the document is not well-formed YAML (with line).
        ConfigValidationError: a field violates the schema (names the field).
    """
    doc = _Doc(text)
    if not isinstance(doc.data, dict):
        raise ConfigParseError("configuration must be a mapping at the top level", 1)
    allowed = {f.name for f in fields(RunConfig)}
    for key in doc.data:
        if key not in allowed:
            raise doc.fail((str(key),), f"unknown block; allowed: {', '.join(sorted(allowed))}")
    if "command" not in doc.data:
        raise ConfigValidationError("command", f"missing; choose from {', '.join(COMMANDS)}")
    command = _choice(COMMANDS)(doc, ("command",), doc.data["command"])

    raw = _block(doc, "design", DesignBlock)
    d = DesignBlock()
    design = DesignBlock(
        clusters=_int(doc, ("design", "clusters"), raw.get("clusters", d.clusters), 1),
        periods=_int(doc, ("design", "periods"), raw.get("periods", d.periods), 1),
        cell_size=_int(doc, ("design", "cell_size"), raw.get("cell_size", d.cell_size), 1),
    )
    try:
        spec = design.build()
    except ValidationError as exc:
        raise doc.fail(("design",), str(exc)) from None

    scenario = _parse_scenario(doc, spec)
    analysis = _parse_analysis(doc)

    raw = _block(doc, "mc", McBlock)
    mc = McBlock(
        n_reps=_int(doc, ("mc", "n_reps"), raw.get("n_reps", McBlock.n_reps), 1),
        base_seed=_int(doc, ("mc", "base_seed"), raw.get("base_seed", McBlock.base_seed), 0),
    )
    if mc.base_seed >= 2**64:
        raise doc.fail(("mc", "base_seed"), "must fit in 64 unsigned bits")

    raw = _block(doc, "weights", WeightsBlock)
    w = WeightsBlock()
    weights = WeightsBlock(
        families=_list(doc, ("weights", "families"), raw.get("families", list(w.families)), _choice(FAMILIES)),
        Q=_list(doc, ("weights", "Q"), raw.get("Q", list(w.Q)), lambda dc, p, v: _int(dc, p, v, 2)),
        gamma=_list(doc, ("weights", "gamma"), raw.get("gamma", list(w.gamma)), _float),
    )
    for g in weights.gamma:
        if not 0.0 <= g <= 1.0:
            raise doc.fail(("weights", "gamma"), f"values must lie in [0, 1], got {g}")

    raw = _block(doc, "output", OutputBlock)
    output = OutputBlock(
        directory=_str(doc, ("output", "directory"), raw.get("directory", OutputBlock.directory)),
        formats=_list(doc, ("output", "formats"), raw.get("formats", list(FORMATS)), _choice(FORMATS), True),
    )

    raw = _block(doc, "data", DataBlock)
    path = raw.get("path")
    data = DataBlock(path=None if path is None else _str(doc, ("data", "path"), path))

    return RunConfig(command, design, scenario, analysis, mc, weights, output, data)


def _parse_scenario(doc: _Doc, design: DesignSpec) -> ScenarioBlock:
    raw = _block(doc, "scenario", ScenarioBlock)
    path = ("scenario",)
    vectors = [k for k in ("theta", "delta", "xi") if raw.get(k) is not None]
    has_preset = raw.get("preset") is not None
    if has_preset and (vectors or raw.get("period_effects") is not None):
        raise doc.fail(path, "give either a preset or explicit effect vectors, not both")
    if len(vectors) > 1:
        raise doc.fail(path, f"give exactly one of theta, delta, xi; got {', '.join(vectors)}")
    if not has_preset and not vectors:
        if raw:
            raise doc.fail(path, "needs a preset or one of theta, delta, xi")
        has_preset = True
    J = design.J
    defaults = ScenarioBlock()
    corr = _str(doc, path + ("correlation",), raw.get("correlation", defaults.correlation))
    try:
        corr = CorrelationKind.parse(corr).value
    except ValidationError as exc:
        raise doc.fail(path + ("correlation",), str(exc)) from None
    comps = {
        name: _float(doc, path + (name,), raw.get(name, getattr(defaults, name)))
        for name in ("tau_alpha_sq", "sigma_e_sq", "tau_omega_sq")
    }
    kwargs = dict(correlation=corr, **comps)
    if has_preset:
        name = _choice(PRESET_NAMES)(doc, path + ("preset",), raw.get("preset", defaults.preset))
        if J != 10:
            raise doc.fail(("design", "periods"), f"preset {name!r} needs 10 periods, got {J}")
        block = ScenarioBlock(preset=name, **kwargs)
    else:
        key = vectors[0]
        if key == "theta":
            payload = {"theta": _float(doc, path + ("theta",), raw["theta"])}
        else:
            values = _list(doc, path + (key,), raw[key], _float)
            need = J - 1 if key == "delta" else J - 2
            if len(values) != need:
                raise doc.fail(path + (key,), f"needs {need} values for {J} periods, got {len(values)}")
            payload = {key: values}
        phi = raw.get("period_effects")
        phi = (0.0,) * J if phi is None else _list(doc, path + ("period_effects",), phi, _float)
        if len(phi) != J:
            raise doc.fail(path + ("period_effects",), f"needs {J} values, got {len(phi)}")
        block = ScenarioBlock(preset=None, period_effects=phi, **payload, **kwargs)
    try:
        CorrelationSpec(block.correlation, block.tau_alpha_sq, block.sigma_e_sq, block.tau_omega_sq)
    except ValidationError as exc:
        raise doc.fail(path, str(exc)) from None
    return block


def _parse_analysis(doc: _Doc) -> AnalysisBlock:
    raw = _block(doc, "analysis", AnalysisBlock)
    path = ("analysis",)
    d = AnalysisBlock()

    def structure(dc, p, v):
        try:
            return Structure.parse(_str(dc, p, v)).value
        except ValidationError as exc:
            raise dc.fail(p, str(exc)) from None

    def method(dc, p, v):
        try:
            return VarianceMethod.parse(_str(dc, p, v)).value
        except ValidationError as exc:
            raise dc.fail(p, str(exc)) from None

    structures = _list(doc, path + ("structures",), raw.get("structures", list(d.structures)), structure)
    correlations = _list(doc, path + ("correlations",), raw.get("correlations", list(d.correlations)),
                         _choice(CORRELATIONS))
    methods = _list(doc, path + ("variance_methods",), raw.get("variance_methods", list(d.variance_methods)),
                    method)
    gamma = raw.get("gamma")
    if gamma is not None:
        gamma = _float(doc, path + ("gamma",), gamma)
        if not 0.0 <= gamma < 1.0:
            raise doc.fail(path + ("gamma",), f"must lie in [0, 1), got {gamma}")
    if ("known" in correlations) != (gamma is not None):
        raise doc.fail(path + ("gamma",), "a known correlation analysis needs gamma, and gamma needs it")
    return AnalysisBlock(structures, correlations, methods, gamma)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def serialize_config(config: RunConfig) -> str:
    """YAML text that :func:`parse_config` maps back to ``config``."""
    doc = {"command": config.command}
    for f in fields(config):
        if f.name == "command":
            continue
        block = {k: v for k, v in asdict(getattr(config, f.name)).items() if v is not None}
        doc[f.name] = _plain(block)
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)
