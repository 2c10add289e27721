from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class LabSettings(BaseSettings):
    MFGC_LAB_THREADS: int = Field(default=1, ge=1, alias="MFGC_LAB_THREADS")
    MFGC_LAB_LOG_LEVEL: str = Field(default="INFO", alias="MFGC_LAB_LOG_LEVEL")
    MFGC_LAB_OUTPUT_DIR: str = Field(default="runs", alias="MFGC_LAB_OUTPUT_DIR")
    model_config = SettingsConfigDict(env_file=".env", extra="ignore")
