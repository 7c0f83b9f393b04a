import hashlib
import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel

from app.config import Config, GridConfig, ParamSpec, PerturbationConfig, ProbeConfig

logger = logging.getLogger(__name__)

Violation = Tuple[Optional[int], str, str]  # (line, key, message); line is None for overrides

# section headers that do not prefix their keys
TOP_LEVEL_SECTIONS = ("", "experiment", "general")


class ConfigValidationError(ValueError):
    def __init__(self, violations: List[Violation]):
        self.violations = violations
        lines = [
            f"line {line}: {key}: {message}" if line is not None else f"{key}: {message}"
            for line, key, message in violations
        ]
        super().__init__("Invalid experiment configuration:\n  " + "\n  ".join(lines))


class ExperimentConfig(BaseModel):
    kind: str
    seed: int
    output_dir: Optional[str] = None
    params: Dict[str, Any]

    def get(self, key: str) -> Any:
        if key in self.params:
            return self.params[key]
        return Config.get_param_spec(key).default

    def config_hash(self) -> str:
        """sha256 of the canonical JSON of kind, seed and parameters; the output location is excluded."""
        canonical = json.dumps({"kind": self.kind, "seed": self.seed, "params": self.params}, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()

    def grid(self) -> GridConfig:
        return GridConfig(r_max=self.get("grid.rmax"), npoints=self.get("grid.npoints"))

    def perturbation(self) -> PerturbationConfig:
        return PerturbationConfig(
            amplitude=self.get("perturbation.amplitude"),
            center=self.get("perturbation.center"),
            width=self.get("perturbation.width"),
            velocity=self.get("perturbation.velocity"),
        )

    def probes(self) -> ProbeConfig:
        return ProbeConfig(radii=tuple(self.get("probes.radii")), cadence=self.get("probes.cadence"))

    def to_text(self) -> str:
        """The config in the line-based format, sections sorted, parseable by ConfigParser."""
        lines = [f"kind = {self.kind}", f"seed = {self.seed}"]
        if self.output_dir is not None:
            lines.append(f"output.dir = {self.output_dir}")
        sections: Dict[str, List[str]] = {}
        for key in sorted(self.params):
            section, _, name = key.rpartition(".")
            value = self.params[key]
            text = ", ".join(str(v) for v in value) if isinstance(value, (list, tuple)) else str(value)
            sections.setdefault(section, []).append(f"{name} = {text}")
        for section in sorted(sections):
            if section:
                lines.append(f"\n[{section}]")
            lines.extend(sections[section])
        return "\n".join(lines) + "\n"


class ConfigParser:
    @staticmethod
    def _convert(raw: str, spec: ParamSpec) -> Any:
        raw = raw.strip()
        if spec.data_type == "int":
            return int(raw)
        if spec.data_type == "float":
            value = float(raw)
            if value != value or value in (float("inf"), float("-inf")):
                raise ValueError(f"non-finite value '{raw}'")
            return value
        if spec.data_type == "int_list":
            return [int(v) for v in raw.split(",") if v.strip()]
        if spec.data_type == "float_list":
            return [float(v) for v in raw.split(",") if v.strip()]
        return raw

    @staticmethod
    def _range_messages(value: Any, spec: ParamSpec) -> List[str]:
        messages = []
        values = value if isinstance(value, list) else [value]
        if isinstance(value, list) and not values:
            messages.append(f"{spec.key} needs at least one value")
        if spec.choices is not None and value not in spec.choices:
            messages.append(f"{spec.key} must be one of {', '.join(spec.choices)}, got '{value}'")
        for v in values:
            if isinstance(v, str):
                continue
            if spec.minimum is not None and v < spec.minimum:
                messages.append(f"{spec.key} must be ≥ {spec.minimum:g}, got {v}")
            if spec.maximum is not None and v > spec.maximum:
                message = f"{spec.key} must be ≤ {spec.maximum:g}, got {v}"
                if spec.help:
                    message += f" ({spec.help})"
                messages.append(message)
        return messages

    @staticmethod
    def _writable(path: str) -> bool:
        target = os.path.abspath(path)
        while not os.path.exists(target):
            parent = os.path.dirname(target)
            if parent == target:
                return False
            target = parent
        return os.path.isdir(target) and os.access(target, os.W_OK)

    @staticmethod
    def _read_lines(text: str, violations: List[Violation]) -> Dict[str, Tuple[Optional[int], str]]:
        raw: Dict[str, Tuple[Optional[int], str]] = {}
        section = ""
        for number, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if stripped.startswith("[") and stripped.endswith("]"):
                section = stripped[1:-1].strip().lower()
                continue
            if "=" not in stripped:
                violations.append((number, stripped, "expected 'key = value'"))
                continue
            name, value = (part.strip() for part in stripped.split("=", 1))
            key = name if section in TOP_LEVEL_SECTIONS else f"{section}.{name}"
            if key in raw:
                violations.append((number, key, f"duplicate key, first set on line {raw[key][0]}"))
                continue
            raw[key] = (number, value)
        return raw

    @staticmethod
    def parse_config(text: str, overrides: Optional[Iterable[str]] = None,
                     output_root: Optional[str] = None) -> ExperimentConfig:
        """
        Parses the line-based ``key = value`` format with ``[section]`` headers; keys in a
        section are addressed as ``section.key``. ``overrides`` are ``key=value`` strings
        applied on top of the file.

        Raises:
            ConfigValidationError: with every violation found, each with its line number.
        """
        violations: List[Violation] = []
        raw = ConfigParser._read_lines(text, violations)
        for override in overrides or ():
            if "=" not in override:
                violations.append((None, override, "override must look like key=value"))
                continue
            key, value = (part.strip() for part in override.split("=", 1))
            raw[key] = (None, value)

        values: Dict[str, Tuple[Optional[int], Any]] = {}
        for key, (line, text_value) in raw.items():
            try:
                spec = Config.get_param_spec(key)
            except KeyError:
                violations.append((line, key, "unknown key"))
                continue
            try:
                values[key] = (line, ConfigParser._convert(text_value, spec))
            except ValueError:
                violations.append((line, key, f"cannot read '{text_value}' as {spec.data_type}"))
        return ConfigParser._build(values, violations, output_root)

    @staticmethod
    def from_values(kind: str, params: Dict[str, Any], seed: int = Config.get_param_spec("seed").default,
                    output_dir: Optional[str] = None, output_root: Optional[str] = None) -> ExperimentConfig:
        """Validated config from already-typed values, as built by sweeps and the HTTP layer."""
        values: Dict[str, Tuple[Optional[int], Any]] = {key: (None, value) for key, value in params.items()}
        values["kind"] = (None, kind)
        values["seed"] = (None, seed)
        if output_dir is not None:
            values["output.dir"] = (None, output_dir)
        violations: List[Violation] = []
        for key in list(values):
            try:
                Config.get_param_spec(key)
            except KeyError:
                violations.append((None, key, "unknown key"))
                del values[key]
        return ConfigParser._build(values, violations, output_root)

    @staticmethod
    def _build(values: Dict[str, Tuple[Optional[int], Any]], violations: List[Violation],
               output_root: Optional[str]) -> ExperimentConfig:
        kind_line, kind = values.pop("kind", (None, None))
        if kind is None:
            violations.append((None, "kind", "missing experiment kind"))
        elif kind not in Config.kinds:
            violations.append((kind_line, "kind", f"kind must be one of {', '.join(Config.kinds)}, got '{kind}'"))
            kind = None

        seed_line, seed = values.pop("seed", (None, Config.get_param_spec("seed").default))
        dir_line, output_dir = values.pop("output.dir", (None, None))
        for message in ConfigParser._range_messages(seed, Config.get_param_spec("seed")):
            violations.append((seed_line, "seed", message))

        params: Dict[str, Any] = {}
        if kind is not None:
            allowed = {spec.key: spec for spec in Config.params_for_kind(kind)}
            for key, (line, value) in values.items():
                if key not in allowed:
                    violations.append((line, key, f"key does not apply to kind '{kind}'"))
                    continue
                for message in ConfigParser._range_messages(value, allowed[key]):
                    violations.append((line, key, message))
                params[key] = value
            for key, spec in allowed.items():
                if key not in ("kind", "seed", "output.dir") and key not in params:
                    params[key] = list(spec.default) if isinstance(spec.default, tuple) else spec.default
            violations.extend(ConfigParser._cross_checks(kind, params, values))

        if output_dir is not None:
            root = output_root or Config.output_root()
            path = output_dir if os.path.isabs(output_dir) else os.path.join(root, output_dir)
            if not ConfigParser._writable(path):
                violations.append((dir_line, "output.dir", f"path '{path}' is not writable"))

        if violations:
            logger.error(f"Configuration rejected with {len(violations)} violation(s)")
            raise ConfigValidationError(violations)
        return ExperimentConfig(kind=kind, seed=seed, output_dir=output_dir, params=params)

    @staticmethod
    def _cross_checks(kind: str, params: Dict[str, Any], values: Dict[str, Tuple[Optional[int], Any]]) -> List[Violation]:
        out: List[Violation] = []

        def line_of(key: str) -> Optional[int]:
            return values.get(key, (None, None))[0]

        if kind == "tabulate-coefficients" and params["dims.min"] > params["dims.max"]:
            out.append((line_of("dims.max"), "dims.max", f"dims.max must be ≥ dims.min = {params['dims.min']}"))
        if "grid.rmax" in params and kind != "spectral":
            r_max = params["grid.rmax"]
            dr = (r_max - 1.0) / (params["grid.npoints"] - 1)
            center, width = params["perturbation.center"], params["perturbation.width"]
            if params["perturbation.amplitude"] or params["perturbation.velocity"]:
                if center - width <= 1.0 or center + width >= r_max:
                    out.append((line_of("perturbation.center"), "perturbation.center",
                                f"bump support [{center - width:g}, {center + width:g}] must lie inside (1, {r_max:g})"))
            required = max(params["probes.radii"] or [1.0]) + params["T"] + Config.Evolution.causal_margin_cells * dr
            if r_max < required:
                out.append((line_of("grid.rmax"), "grid.rmax",
                            f"grid.rmax must be ≥ max(probes.radii) + T + margin = {required:g} for finite speed of propagation"))
        if kind == "channels":
            if params["T"] <= 0:
                out.append((line_of("T"), "T", "T must be > 0 for channel experiments"))
            if params["dim"] % 2 == 0:
                out.append((line_of("dim"), "dim", f"dim must be odd, got {params['dim']}"))
        return out
