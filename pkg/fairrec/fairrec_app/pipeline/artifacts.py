import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np
import pandas as pd
import scipy

from fairrec.fairrec_app.fair_models.FairErrors import DataIOError
from fairrec.fairrec_app.fair_models.dataset import DemographicTable

logger = logging.getLogger(__name__)


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create output directory: {e}", path=str(path))
    return path


def require(path) -> Path:
    """Raises DataIOError unless ``path`` is an existing file."""
    if path is None:
        raise DataIOError("required input path is not configured")
    path = Path(path)
    if not path.is_file():
        raise DataIOError("missing input file", path=str(path))
    return path


def write_csv(df: pd.DataFrame, path) -> Path:
    """Comma-delimited UTF-8 with a header row and no index column."""
    try:
        df.to_csv(path, index=False, encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write CSV: {e}", path=str(path))
    logger.info(f"Wrote {len(df)} rows to {path}")
    return Path(path)


def save_users(table: DemographicTable, path) -> None:
    write_csv(table.to_frame(), path)


def load_users(path) -> Optional[DemographicTable]:
    path = Path(path)
    if not path.is_file():
        return None
    try:
        return DemographicTable.from_frame(pd.read_csv(path))
    except (OSError, ValueError, KeyError) as e:
        raise DataIOError(f"cannot read users snapshot: {e}", path=str(path))


def sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, stage: str, config: dict, inputs: Iterable, seeds: Dict[str, int]) -> None:
    manifest = {
        "stage": stage,
        "config": config,
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs if p and Path(p).is_file()},
        "versions": {"numpy": np.__version__, "pandas": pd.__version__, "scipy": scipy.__version__},
    }
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
    except OSError as e:
        raise DataIOError(f"cannot write manifest: {e}", path=str(path))
