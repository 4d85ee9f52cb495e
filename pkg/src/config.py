from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

LOG_FORMAT = "[evpn-sim] %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class Settings:
    """Process-wide settings resolved from the environment (and `.env`, if present)."""

    log_level: str = "INFO"
    workers: int = 1
    output_dir: Path = Path("output")

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        try:
            workers = int(os.getenv("EVPNSIM_WORKERS", "1"))
        except ValueError as exc:
            raise RuntimeError(f"EVPNSIM_WORKERS must be an integer: {exc}") from exc
        return cls(
            log_level=os.getenv("EVPNSIM_LOG_LEVEL", "INFO").upper(),
            workers=max(1, workers),
            output_dir=Path(os.getenv("EVPNSIM_OUTPUT_DIR", "output")),
        )


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
