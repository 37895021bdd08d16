"""
Process-level settings loaded from the environment (.env supported)
"""
import os

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables
load_dotenv()


class Settings(BaseModel):
    """Defaults for CLI flags"""
    seed: int = Field(2020, description="Default random seed")
    folds: int = Field(5, ge=2, description="Cross-validation folds")
    threads: int = Field(1, ge=1, description="Worker pool size")
    out_dir: str = Field("./runs", description="Root directory for run outputs")
    log_level: str = Field("INFO", description="Logging level name")
    outcome: str = Field("y2", pattern="^y[123]$", description="Primary outcome")

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            seed=int(os.getenv("CLAIMSRISK_SEED", 2020)),
            folds=int(os.getenv("CLAIMSRISK_FOLDS", 5)),
            threads=int(os.getenv("CLAIMSRISK_THREADS", 1)),
            out_dir=os.getenv("CLAIMSRISK_OUT_DIR", "./runs"),
            log_level=os.getenv("CLAIMSRISK_LOG_LEVEL", "INFO"),
            outcome=os.getenv("CLAIMSRISK_OUTCOME", "y2"),
        )


# Global settings instance
settings = Settings.from_env()
