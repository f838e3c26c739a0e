import os
from typing import Optional

from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    # Application
    APP_NAME: str = "volfit"
    APP_VERSION: str = "1.0.0"

    # Logging
    LOG_LEVEL: str = "INFO"

    # Worker pool (0 = one worker per CPU)
    THREADS: int = 0

    # Fixed tile edge for image rendering; part of the reproducibility contract
    TILE_SIZE: int = 32

    class Config:
        env_file = ".env"
        env_prefix = "VOLFIT_"


settings = Settings()


def resolve_threads(threads: Optional[int] = None) -> int:
    """Resolve a worker count: explicit value, then VOLFIT_THREADS, then CPU count"""
    if threads is None or threads < 0:
        threads = settings.THREADS
    if threads == 0:
        threads = os.cpu_count() or 1
    return max(1, threads)
