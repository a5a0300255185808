"""CSV and JSON artifacts."""

from pathlib import Path

import pandas as pd
import structlog
from pydantic import BaseModel

logger = structlog.get_logger()


def run_directory(out_dir: Path, subcommand: str) -> Path:
    """Create and return <out_dir>/<subcommand>."""
    path = Path(out_dir) / subcommand
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_frame(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False)
    logger.debug("artifact_written", path=str(path), rows=len(frame))
    return path


def write_json(model: BaseModel, path: Path) -> Path:
    path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug("artifact_written", path=str(path))
    return path
