"""Configuration management for the BiSIFT retrieval tools."""

from typing import Literal, Tuple

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .distance import DistanceKind
from .retrieval import Representation

LogLevel = Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


class Settings(BaseSettings):
    """Configuration settings for the library and the command line."""

    model_config = SettingsConfigDict(
        env_prefix="BISIFT_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Vocabulary
    vocabulary_size: int = Field(
        default=1000,
        ge=1,
        description="Number of visual words K learned by flat k-means",
    )

    kmeans_max_iters: int = Field(
        default=50,
        ge=1,
        description="Upper bound on Lloyd iterations",
    )

    kmeans_sample_cap: int = Field(
        default=200_000,
        ge=1,
        description="Training pools larger than this are subsampled uniformly",
    )

    # Re-ranking
    top_x: int = Field(
        default=30,
        ge=1,
        description="Number of first-stage candidates re-ranked by image matching",
    )

    ratio: float = Field(
        default=0.8,
        gt=0.0,
        le=1.0,
        description="Reliable-match threshold S of the nearest-neighbor ratio test",
    )

    distance_kind: DistanceKind = Field(
        default=DistanceKind.HAMMING_LOOKUP,
        description="Distance kernel used by the matcher",
    )

    representation: Representation = Field(
        default=Representation.BISIFT,
        description="Per-keypoint representation stored in the index",
    )

    # Execution
    seed: int = Field(default=42, ge=0, description="Seed for every random draw")

    workers: int = Field(
        default=1,
        ge=1,
        description="Worker threads for scans, matching and k-means assignment",
    )

    cutoffs: Tuple[int, ...] = Field(
        default=(1, 5, 10, 30),
        description="Rank cutoffs for precision@k and recall@k",
    )

    log_level: LogLevel = Field(default="INFO", description="Root logging level")

    # Synthetic benchmark
    bench_sizes: Tuple[int, ...] = Field(
        default=(1_000, 10_000, 100_000, 500_000),
        description="Database sizes of the timing ladder",
    )

    bench_queries: int = Field(default=10, ge=1, description="Queries per ladder rung")

    bench_repeats: int = Field(
        default=5,
        ge=1,
        description="Repetitions per timing cell; the median is reported",
    )

    # Planted corpus
    corpus_base_images: int = Field(default=200, ge=1)
    corpus_queries: int = Field(default=10, ge=1)
    corpus_copies_per_query: int = Field(default=5, ge=1)
    corpus_keypoints: int = Field(default=80, ge=1)
    corpus_noise_sigma: float = Field(
        default=8.0,
        ge=0.0,
        description="Gaussian component noise applied to copies (0-255 scale)",
    )
    corpus_dropout: float = Field(
        default=0.3,
        ge=0.0,
        le=1.0,
        description="Fraction of original keypoints removed from each copy",
    )
    corpus_distractor_rate: float = Field(
        default=0.2,
        ge=0.0,
        description="Injected distractor keypoints per copy, relative to the original count",
    )

    @field_validator("log_level", mode="before")
    @classmethod
    def upper_log_level(cls, v):
        """Accept level names in any case."""
        return v.upper() if isinstance(v, str) else v


# Global settings instance
settings = Settings()
