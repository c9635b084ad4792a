"""
Per-run parameters: a flat key=value file plus CLI overrides.

Keys are read with python-dotenv and validated by a pydantic model that
rejects unknown keys. Validation failures are reported with the line number
of the offending key.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .config import settings
from .exceptions import ConfigError
from .gaussian import BellStateSpec

logger = logging.getLogger("run_config")

DEFAULT_NBAR = 0.2


class RunConfig(BaseModel):
    """Everything one subcommand run needs; file keys use these field names."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    state: Literal["psi+", "psi-", "phi+", "phi-"] = Field("psi+", description="Bell state")
    eta: float = Field(0.26, ge=0.0, le=1.0, description="Detection efficiency")
    gain: Optional[float] = Field(None, ge=0.0, description="Parametric gain Gamma (exclusive with nbar)")
    nbar: Optional[float] = Field(None, ge=0.0, description="Mean photons per mode N = sinh^2 Gamma")
    modes: int = Field(settings.DEFAULT_QUADRUPLES, ge=1, description="Independent mode quadruples M")
    pulses: int = Field(settings.DEFAULT_PULSES, ge=1, description="Simulated pulses per setting")
    seed: int = Field(0, ge=0, description="Master RNG seed")
    noise_sigma: Optional[float] = Field(None, ge=0.0, description="Electronic noise per channel (photons)")
    subtract_noise: bool = Field(True, description="Subtract a vacuum noise reference from MC estimates")
    chunk_size: int = Field(settings.DEFAULT_CHUNK_SIZE, ge=1, description="Pulses per RNG chunk")
    workers: int = Field(settings.DEFAULT_WORKERS, ge=1, description="Sampling threads")
    batches: int = Field(settings.DEFAULT_BATCHES, ge=2, description="Batch-means groups")
    orders: List[int] = Field(default_factory=lambda: [1, 2, 4], description="DP orders")
    plate: Literal["hwp", "qwp"] = Field("hwp", description="Plate swept by curves")
    curve_points: int = Field(73, ge=2, description="Points per curve")
    mc: bool = Field(False, description="Add Monte Carlo columns/estimates")
    format: Literal["csv", "json"] = Field("csv", description="Sweep output format")
    step_h: float = Field(2.5, gt=0.0, description="HWP sweep step (deg)")
    step_q: float = Field(5.0, gt=0.0, description="QWP sweep step (deg)")
    chi_h: float = Field(0.0, description="HWP angle for simulate (deg)")
    chi_q: float = Field(0.0, description="QWP angle for simulate (deg)")
    bins: int = Field(41, ge=2, description="Histogram bins for simulate")
    cutoff: Optional[int] = Field(None, ge=1, description="Fock cutoff (default: smallest adequate)")
    refine_tol: float = Field(settings.REFINE_TOL, gt=0.0, description="DP refinement tolerance (rad)")
    out: Optional[str] = Field(None, description="Output path")

    @field_validator("orders", mode="before")
    @classmethod
    def parse_orders(cls, v):
        if isinstance(v, str):
            v = [item for item in v.replace(" ", "").split(",") if item]
        orders = sorted({int(item) for item in v})
        if not orders or orders[0] < 1:
            raise ValueError("orders must be positive integers")
        if orders[-1] > settings.MAX_WICK_ORDER:
            raise ValueError(f"orders above MAX_WICK_ORDER={settings.MAX_WICK_ORDER} are not supported")
        return orders

    @field_validator("state", "plate", "format", mode="before")
    @classmethod
    def lower(cls, v):
        return v.strip().lower() if isinstance(v, str) else v

    @model_validator(mode="after")
    def check_gain(self):
        if self.gain is not None and self.nbar is not None:
            raise ValueError("gain and nbar are mutually exclusive")
        return self

    def to_spec(self) -> BellStateSpec:
        """BellStateSpec for this run (N = 0.2 when neither gain nor nbar is set)."""
        if self.gain is not None:
            return BellStateSpec.from_label(self.state, gain=self.gain, quadruples=self.modes)
        nbar = DEFAULT_NBAR if self.nbar is None else self.nbar
        return BellStateSpec.from_label(self.state, nbar=nbar, quadruples=self.modes)

    def to_text(self) -> str:
        """Serialize as a key=value file that load_run_config reads back."""
        lines = []
        for name, value in self.model_dump().items():
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{name}={value}")
        return "\n".join(lines) + "\n"


def documented_keys() -> Dict[str, str]:
    """Key -> description for every accepted key."""
    return {name: field.description or "" for name, field in RunConfig.model_fields.items()}


def _key_lines(path: Path) -> Dict[str, int]:
    lines = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#") or "=" not in stripped:
            continue
        key = stripped.split("=", 1)[0].strip()
        if key.startswith("export "):
            key = key[len("export "):].strip()
        lines.setdefault(key.lower(), number)
    return lines


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Build a RunConfig from an optional key=value file and CLI overrides.

    Args:
        path: Config file; keys are RunConfig field names (case-insensitive)
        overrides: Values from CLI flags; None entries are ignored

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: with one {"key", "line", "message"} entry per problem
    """
    values: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    if path is not None:
        file_path = Path(path)
        if not file_path.is_file():
            raise ConfigError(f"Config file not found: {path}", [{"key": None, "line": None, "message": "missing file"}])
        values = {k.lower(): v for k, v in dotenv_values(file_path).items()}
        lines = _key_lines(file_path)
        logger.debug(f"Read {len(values)} keys from {path}")

    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    # A CLI gain replaces a file nbar and vice versa
    if "gain" in overrides:
        values.pop("nbar", None)
    if "nbar" in overrides:
        values.pop("gain", None)
    values.update(overrides)

    try:
        return RunConfig(**values)
    except ValidationError as exc:
        errors = []
        for err in exc.errors():
            key = str(err["loc"][0]) if err["loc"] else None
            if key is None and "gain" in values and "nbar" in values:
                key = "nbar"
            errors.append({"key": key, "line": lines.get(key), "message": err["msg"]})
        where = ", ".join(f"{e['key']} (line {e['line']})" if e["line"] else str(e["key"]) for e in errors)
        raise ConfigError(f"Invalid run configuration: {where}", errors)
