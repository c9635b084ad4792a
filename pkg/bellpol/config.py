from pydantic import field_validator, ValidationInfo
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide tunables loaded from environment (or .env).

    Every variable is read with the ``BELLPOL_`` prefix, e.g.
    ``BELLPOL_MAX_WICK_ORDER=4``. Per-run physics parameters are not here;
    they live in :class:`bellpol.run_config.RunConfig`.
    """
    # App Config
    ENV: str = "dev"
    LOG_LEVEL: str = "INFO"

    # Moment engine
    MAX_WICK_ORDER: int = 6  # (2k-1)!! pairings, 10395 at k=6
    PHYSICALITY_TOL: float = 1e-10

    # Fock oracle
    FOCK_NORM_BOUND: float = 1e-8  # max tolerated 1 - |psi|^2
    FOCK_LEAKAGE_BOUND: float = 1e-10
    FOCK_MAX_CUTOFF: int = 40

    # Pulse simulator
    DEFAULT_PULSES: int = 20000
    DEFAULT_QUADRUPLES: int = 100
    DEFAULT_BATCHES: int = 50
    DEFAULT_CHUNK_SIZE: int = 2000
    DEFAULT_WORKERS: int = 1

    # Metrics / fitting
    REFINE_TOL: float = 1e-4  # radians
    FIT_MAX_ITER: int = 200
    FIT_STEP_TOL: float = 1e-8

    # Cache sizes
    MATCHING_CACHE_MAXSIZE: int = 8  # one entry per Wick order
    UNITARY_CACHE_MAXSIZE: int = 64
    TABLE_CACHE_MAXSIZE: int = 32  # outcome tables are (2c+1)^2 floats

    model_config = SettingsConfigDict(env_file=".env", env_prefix="BELLPOL_", extra="ignore")

    @field_validator("MAX_WICK_ORDER")
    def check_wick_order(cls, v):
        if not 1 <= v <= 8:
            raise ValueError("MAX_WICK_ORDER must be between 1 and 8")
        return v

    @field_validator("LOG_LEVEL", mode="before")
    def normalize_log_level(cls, v, info: ValidationInfo):
        level = str(v or "INFO").upper()
        # Chatty engine logs are only useful while developing
        if info.data.get("ENV") == "prod" and level == "DEBUG":
            return "INFO"
        return level

    @field_validator(
        "DEFAULT_PULSES", "DEFAULT_QUADRUPLES", "DEFAULT_BATCHES",
        "DEFAULT_CHUNK_SIZE", "DEFAULT_WORKERS", "FIT_MAX_ITER", "FOCK_MAX_CUTOFF",
    )
    def check_positive(cls, v):
        if v < 1:
            raise ValueError("must be a positive integer")
        return v


# Instantiate settings to be imported elsewhere
settings = Settings()
