"""Flat ``key = value`` configuration files and the run configuration.

Precedence is command-line flags over config file over built-in defaults.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, ParseError
from .measurements import UncertaintyConfig
from .state import InitialUncertainty, NoiseParameters


def read_key_values(path):
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped.

    Raises
    ------
    ParseError
        On a line without ``=``, an empty key, or a repeated key.
    """
    path = Path(path)
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError("empty key", path, lineno)
        if key in out:
            raise ParseError(f"duplicate key {key!r}", path, lineno)
        out[key] = value
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(name, kind, value):
    if value is None or not isinstance(value, str):
        return value
    try:
        if kind is bool:
            v = value.strip().lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(value)
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r} as {kind.__name__}") from None
    return value


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; unset paths are ``None``."""

    output_dir: str = "out"
    seed: int = 0
    # scenario
    duration: float = 30.0
    imu_rate: float = 200.0
    cam_rate: float = 10.0
    sigma_rot: float = 0.01
    sigma_trans: float = 0.02
    render: bool = True
    imu_noise: bool = True
    # inputs
    imu: str = None
    measurements: str = None
    groundtruth: str = None
    initial_state: str = None
    calibration: str = None
    # filter
    sigma_w: float = 1e-3
    sigma_a: float = 0.1
    sigma_bw: float = 1e-5
    sigma_ba: float = 0.01
    sigma0_sq: float = 1.0
    beta: float = 4.0
    sigma_g0: float = 0.1
    sigma_v0: float = 0.01
    sigma_ba0: float = 1.0
    sigma_bw0: float = 0.1
    sigma_scale0: float = 0.1
    freeze_scale: bool = False
    # gradcheck / calibrate
    frames: int = 10
    window_start: float = 2.0
    inject_scale: float = 0.8
    inject_bias_x: float = 0.02
    inject_bias_y: float = 0.0
    inject_bias_z: float = 0.0
    steps: int = 120
    lr_scale: float = 0.03
    lr_bias: float = 3e-4
    fd_step: float = 1e-3
    gradcheck_step: float = 1e-2

    @classmethod
    def field_types(cls):
        hints = {"str": str, "int": int, "float": float, "bool": bool}
        return {f.name: hints.get(f.type, f.type) if isinstance(f.type, str) else f.type
                for f in dataclasses.fields(cls)}

    @classmethod
    def load(cls, path=None, overrides=None):
        """Defaults, then the config file at ``path``, then ``overrides``.

        ``None`` values in ``overrides`` mean "not given" and do not override.
        """
        types = cls.field_types()
        values = {}
        if path is not None:
            for key, value in read_key_values(path).items():
                if key not in types:
                    raise ConfigError(f"{path}: unknown key {key!r}")
                values[key] = _coerce(key, types[key], value)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown option {key!r}")
            values[key] = _coerce(key, types[key], value)
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def require(self, *names):
        """Check that the named path options are set and exist."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing required input '{name}'")
            if not Path(value).exists():
                raise ConfigError(f"{name}: {value} does not exist")

    def noise(self):
        return NoiseParameters(self.sigma_w, self.sigma_a, self.sigma_bw, self.sigma_ba)

    def uncertainty(self):
        return UncertaintyConfig(self.sigma0_sq, self.beta)

    def initial_uncertainty(self):
        return InitialUncertainty(
            self.sigma_g0, self.sigma_v0, self.sigma_ba0, self.sigma_bw0, self.sigma_scale0
        )

    def as_dict(self):
        return dataclasses.asdict(self)
