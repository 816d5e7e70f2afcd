from pydantic_settings import BaseSettings
from typing import Optional
from pydantic import Field


class Settings(BaseSettings):
    # Image and token geometry
    IMAGE_WIDTH: int = 1024
    IMAGE_HEIGHT: int = 1024
    PATCH_SIZE: int = 16

    # Camera derivation (see camera_service.derive_camera)
    CAMERA_DISTANCE_FACTOR: float = 1.2
    CAMERA_VFOV_DEG: float = 55.0
    NEAR_PLANE: float = 0.05

    # Attention mask construction
    PATCHIFY_MIN_COVERAGE: float = 0.0  # 0 means any set pixel marks the patch
    GLOBAL_ISOLATED: bool = True
    DEPTH_GLOBAL: bool = True
    TOKENS_GLOBAL: int = 8
    TOKENS_LOCAL: int = 8
    TOKENS_DEPTH: Optional[int] = None  # None -> same as the image token count

    # Refinement loop
    NUM_STEPS: int = 20
    MAX_REFINEMENTS: int = 5
    STABILITY_WINDOW: int = 2
    DEFAULT_SEED: int = 0
    LOOP_IMAGE_SIZE: int = 128

    # Planner endpoint (chat-completions style)
    PLANNER_URL: Optional[str] = Field(default=None)
    PLANNER_KEY: Optional[str] = Field(default=None)
    PLANNER_MODEL: str = "gemini-2.5-pro"
    PLANNER_TIMEOUT: float = 60.0
    PLANNER_MAX_RETRIES: int = 2
    PLANNER_BACKOFF: float = 1.0
    PLANNER_IMAGE_MODE: str = "base64"  # base64 | path

    # Output
    OUTPUT_DIR: str = "out"

    # Logging configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None

    class Config:
        case_sensitive = True

    @property
    def planner_configured(self) -> bool:
        """Check if a live planner endpoint is configured."""
        return bool(self.PLANNER_URL)

    @property
    def image_tokens(self) -> int:
        """Number of image latent tokens for the configured image and patch size."""
        return (self.IMAGE_WIDTH // self.PATCH_SIZE) * (self.IMAGE_HEIGHT // self.PATCH_SIZE)


settings = Settings()
