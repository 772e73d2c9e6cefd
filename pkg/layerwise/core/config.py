"""
Process-level configuration settings
"""

from typing import Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Toolkit settings"""

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")

    # Application
    APP_NAME: str = "layerwise"
    APP_VERSION: str = "1.0.0"
    ENVIRONMENT: str = Field(default="development")
    LOG_LEVEL: str = Field(default="INFO")

    # Runs
    OUTPUT_DIR: str = Field(default="runs")
    DEFAULT_SEED: int = Field(default=0)
    MAX_WORKERS: int = Field(default=1, ge=1)
    EVAL_BATCH_SIZE: int = Field(default=256, ge=1)

    # Numerics
    GRAD_CHECK_EPSILON: float = Field(default=1e-5, gt=0)
    GRAD_CHECK_FLOOR: float = Field(default=1e-8, gt=0)

    # Optional corpus used when a dataset spec names none
    DEFAULT_CORPUS: Optional[str] = Field(default=None)

    @field_validator("ENVIRONMENT")
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """Validate environment setting"""
        if v not in ["development", "staging", "production"]:
            raise ValueError("Environment must be development, staging, or production")
        return v

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        if v.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {v}")
        return v.upper()

    @property
    def is_development(self) -> bool:
        """Check if running in development mode"""
        return self.ENVIRONMENT == "development"

    @property
    def is_production(self) -> bool:
        """Check if running in production mode"""
        return self.ENVIRONMENT == "production"


# Global settings instance
settings = Settings()
