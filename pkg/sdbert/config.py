import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

class Config:
    """Process-level configuration for the sdbert command line."""

    # Artifacts (checkpoints, reports, vocabulary files)
    OUTPUT_DIR: str = os.getenv("SDBERT_OUTPUT_DIR", "runs")

    # Logging
    LOG_LEVEL: str = os.getenv("SDBERT_LOG_LEVEL", "INFO")
    LOG_FORMAT: str = "[%(levelname)s] %(name)s: %(message)s"

    # BLAS threads pinned before numpy loads; benchmark slopes assume 1
    NUMERIC_THREADS: str = os.getenv("SDBERT_BENCH_THREADS", "1")

    # Benchmark defaults
    BENCH_LENGTHS: str = os.getenv("SDBERT_BENCH_LENGTHS", "128,256,512,1024,2048")
    BENCH_REPETITIONS: int = int(os.getenv("SDBERT_BENCH_REPETITIONS", "5"))

    @classmethod
    def output_dir(cls, override: Optional[str] = None) -> str:
        """Return the artifact directory, creating it if needed."""
        path = override or os.getenv("SDBERT_OUTPUT_DIR", cls.OUTPUT_DIR)
        os.makedirs(path, exist_ok=True)
        return path

    @classmethod
    def thread_env(cls) -> dict[str, str]:
        """Environment variables that pin the numeric backend's thread pools."""
        return {
            name: cls.NUMERIC_THREADS
            for name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
        }

# Global config instance
config = Config()
