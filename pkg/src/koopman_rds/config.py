from functools import lru_cache
from pathlib import Path

from pydantic_settings import (
    BaseSettings,
    SettingsConfigDict,
)


class Settings(BaseSettings):
    """
    Runtime settings, read from the environment (prefix ``KOOPMAN_RDS_``).
    Don't initialise this class directly. Use the get_settings() function instead.
    """

    OUTPUT_DIR: Path = Path("runs")
    LOG_LEVEL: str = "INFO"
    DEFAULT_SEED: int = 20190528
    MAX_WORKERS: int = 1

    model_config = SettingsConfigDict(env_prefix="KOOPMAN_RDS_", extra="ignore")


@lru_cache
def get_settings() -> Settings:
    """
    Returns the runtime settings.
    """
    return Settings()
