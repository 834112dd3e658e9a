"""
Experiment configuration: one YAML file mapped onto dataclass sections.

Every field has a default; ``ExperimentConfig.defaults()`` is the complete
default set. Validation reports every offending key at once.
"""
import hashlib
import json
import logging
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import ClassVar

import yaml

from .exceptions import ConfigValidationError

logger = logging.getLogger(__name__)

FAMILY_PARAMS = {
    "special-quadratic": {"z0": 3.0, "q": 1, "l": 1, "uspp": 0.0, "vspp": -1.0, "U0": 5.0, "V0": 5.0,
                          "r": 0.5, "blend": 1.0, "tail": 0.4},
    "erf": {"U0": 1.0, "V0": 1.0, "width_u": 1.0, "width_v": 0.6},
    "tanh-pair": {"U0": 1.0, "V0": 1.0, "width_u": 1.0, "width_v": 0.6},
    "structured": {"base": "tanh", "U0": 1.0, "width_u": 1.0, "c": 1.5},
}


@dataclass
class ShearSection:
    family: str = "special-quadratic"
    params: dict = field(default_factory=dict)
    t_end: float = 0.5
    dt: float = 1e-3
    frozen: bool = False

    RANGES: ClassVar[dict] = {"t_end": (0.0, 100.0), "dt": (1e-8, 1.0)}
    CHOICES: ClassVar[dict] = {"family": tuple(FAMILY_PARAMS)}

    def resolved_params(self):
        """Family defaults overlaid with the configured values."""
        return {**FAMILY_PARAMS.get(self.family, {}), **self.params}


@dataclass
class GridSection:
    n: int = 600
    z_max: float = 12.0
    stretch: bool = True
    stretch_center: float | None = None
    stretch_width: float = 1.0

    RANGES: ClassVar[dict] = {"n": (16, 200000), "z_max": (1.0, 1000.0), "stretch_width": (1e-4, 100.0)}


@dataclass
class EigenSection:
    L: float = 12.0
    n: int = 2048
    re_range: list = field(default_factory=lambda: [-3.0, 3.0])
    im_range: list = field(default_factory=lambda: [-3.0, -0.05])
    shape: list = field(default_factory=lambda: [25, 12])
    max_seeds: int = 6
    convergence: bool = True

    RANGES: ClassVar[dict] = {"L": (8.0, 200.0), "n": (512, 1 << 20), "max_seeds": (1, 100)}


@dataclass
class ModeSection:
    ks: list = field(default_factory=lambda: [8, 16, 32, 64])
    phi_radius: float | None = None
    q_max: int = 64
    tol_nondeg_rel: float = 1e-3
    alpha: float = 0.0
    critical_index: int = 0
    residual_k: list = field(default_factory=lambda: [64, 128, 256, 512])
    residual_t: list = field(default_factory=lambda: [0.01, 0.02, 0.04, 0.08])
    witness_m: list = field(default_factory=lambda: [0, 1, 2])

    RANGES: ClassVar[dict] = {"q_max": (1, 10000), "tol_nondeg_rel": (0.0, 1.0), "alpha": (0.0, 10.0),
                              "critical_index": (0, 100)}


@dataclass
class EvolveSection:
    T: float = 0.5
    dt: float | None = None
    window: list = field(default_factory=lambda: [0.2, 0.8])
    frozen_too: bool = True
    samples: int = 400

    RANGES: ClassVar[dict] = {"T": (1e-6, 100.0), "samples": (10, 100000)}


@dataclass
class TransformedSection:
    ks: list = field(default_factory=lambda: [8, 16, 32, 64])
    T: float = 0.2
    dt: float | None = None
    two_route_T: float = 0.02

    RANGES: ClassVar[dict] = {"T": (1e-6, 100.0), "two_route_T": (1e-6, 100.0)}


@dataclass
class NonlinearSection:
    M: int = 8
    kmax: int = 2
    deltas: list = field(default_factory=lambda: [1e-2, 5e-3, 2.5e-3])
    T: float = 0.2
    dt: float | None = None
    m: int = 1
    ratio: float | None = None

    RANGES: ClassVar[dict] = {"M": (2, 16), "kmax": (1, 8), "T": (1e-6, 100.0), "m": (0, 4)}


@dataclass
class OutputSection:
    dir: str = "runs/latest"
    csv_every: int = 10
    svg: bool = True

    RANGES: ClassVar[dict] = {"csv_every": (1, 100000)}


SECTIONS = {
    "shear": ShearSection,
    "grid": GridSection,
    "eigen": EigenSection,
    "mode": ModeSection,
    "evolve": EvolveSection,
    "transformed": TransformedSection,
    "nonlinear": NonlinearSection,
    "output": OutputSection,
}


def _expected_type(f):
    """The Python type of a field, read off its default."""
    default = f.default if f.default is not MISSING else f.default_factory()
    if default is None:
        return (int, float)
    if isinstance(default, bool):
        return bool
    if isinstance(default, float):
        return (int, float)
    return type(default)


def _check_section(name, cls, data, problems):
    if not isinstance(data, dict):
        problems[name] = "must be a mapping"
        return None
    known = {f.name: f for f in fields(cls)}
    values = {}
    for key, value in data.items():
        path = f"{name}.{key}"
        if key not in known:
            problems[path] = "unknown key"
            continue
        expected = _expected_type(known[key])
        optional = known[key].default is None
        if value is None and optional:
            values[key] = None
            continue
        if isinstance(value, bool) and expected is not bool:
            problems[path] = "wrong type"
            continue
        if not isinstance(value, expected):
            problems[path] = "wrong type"
            continue
        lo_hi = getattr(cls, "RANGES", {}).get(key)
        if lo_hi is not None and not (lo_hi[0] <= value <= lo_hi[1]):
            problems[path] = f"out of range [{lo_hi[0]}, {lo_hi[1]}]"
            continue
        choices = getattr(cls, "CHOICES", {}).get(key)
        if choices is not None and value not in choices:
            problems[path] = f"must be one of {', '.join(choices)}"
            continue
        values[key] = value
    return cls(**values)


@dataclass
class ExperimentConfig:
    shear: ShearSection = field(default_factory=ShearSection)
    grid: GridSection = field(default_factory=GridSection)
    eigen: EigenSection = field(default_factory=EigenSection)
    mode: ModeSection = field(default_factory=ModeSection)
    evolve: EvolveSection = field(default_factory=EvolveSection)
    transformed: TransformedSection = field(default_factory=TransformedSection)
    nonlinear: NonlinearSection = field(default_factory=NonlinearSection)
    output: OutputSection = field(default_factory=OutputSection)
    seed: int = 0

    @classmethod
    def defaults(cls):
        cfg = cls()
        cfg.shear.params = dict(FAMILY_PARAMS[cfg.shear.family])
        return cfg

    @classmethod
    def from_dict(cls, data):
        data = data or {}
        problems = {}
        if not isinstance(data, dict):
            raise ConfigValidationError(["<root>"], {"<root>": "must be a mapping"})
        kwargs = {}
        for key, value in data.items():
            if key == "seed":
                if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                    problems["seed"] = "must be a non-negative integer"
                else:
                    kwargs["seed"] = value
            elif key in SECTIONS:
                section = _check_section(key, SECTIONS[key], value, problems)
                if section is not None:
                    kwargs[key] = section
            else:
                problems[key] = "unknown key"
        cfg = cls(**kwargs)
        cfg._cross_check(problems)
        if problems:
            raise ConfigValidationError(problems.keys(), problems)
        return cfg

    def _cross_check(self, problems):
        """Constraints spanning several fields."""
        family_keys = FAMILY_PARAMS.get(self.shear.family, {})
        for key in self.shear.params:
            if key not in family_keys:
                problems[f"shear.params.{key}"] = f"not a parameter of {self.shear.family}"
        w = self.evolve.window
        if len(w) != 2 or not all(isinstance(x, (int, float)) for x in w) or not 0 <= w[0] < w[1] <= 1:
            problems["evolve.window"] = "must be [lo, hi] with 0 <= lo < hi <= 1"
        for path, ks in (("mode.ks", self.mode.ks), ("transformed.ks", self.transformed.ks),
                         ("mode.residual_k", self.mode.residual_k)):
            if not ks or not all(isinstance(k, int) and not isinstance(k, bool) and k >= 1 for k in ks):
                problems[path] = "must be a non-empty list of positive integers"
        if not all(isinstance(t, (int, float)) and t > 0 for t in self.mode.residual_t):
            problems["mode.residual_t"] = "must be positive times"
        if not self.nonlinear.deltas or not all(isinstance(d, (int, float)) and d >= 0 for d in self.nonlinear.deltas):
            problems["nonlinear.deltas"] = "must be non-negative amplitudes"
        if len(self.eigen.im_range) != 2 or not max(self.eigen.im_range) < 0:
            problems["eigen.im_range"] = "must be [lo, hi] with hi < 0"
        if len(self.eigen.re_range) != 2 or not self.eigen.re_range[0] < self.eigen.re_range[1]:
            problems["eigen.re_range"] = "must be [lo, hi] with lo < hi"
        if self.eigen.n % 2:
            problems["eigen.n"] = "must be even"
        center = self.grid.stretch_center
        if center is not None and not 0 < center < self.grid.z_max:
            problems["grid.stretch_center"] = "must lie inside (0, z_max)"

    def to_dict(self):
        return {**{name: asdict(getattr(self, name)) for name in SECTIONS}, "seed": self.seed}

    def config_hash(self):
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path) -> ExperimentConfig:
    """Read and validate a YAML experiment file."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigValidationError(["<file>"], {"<file>": f"invalid YAML: {exc}"}) from exc
    except OSError as exc:
        raise ConfigValidationError(["<file>"], {"<file>": str(exc)}) from exc
    cfg = ExperimentConfig.from_dict(data)
    logger.info("loaded configuration %s (hash %s)", path, cfg.config_hash()[:12])
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)
