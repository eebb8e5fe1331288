"""
Result records and table writers
"""
import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(resolved: Dict[str, Any]) -> str:
    return hashlib.sha256(canonical_json(resolved).encode("utf-8")).hexdigest()


def to_jsonable(value: Any) -> Any:
    """numpy scalars and arrays to plain JSON; non-finite floats to strings"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


@dataclass
class ResultRecord:
    """Outcome of one run: metrics, pass/fail flags and the files written"""
    experiment: str
    config_hash: str
    seed: int
    workers: int
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    metrics: Dict[str, Any] = field(default_factory=dict)
    flags: Dict[str, bool] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def to_dict(self) -> Dict[str, Any]:
        return to_jsonable({
            "experiment": self.experiment, "timestamp": self.timestamp, "config_hash": self.config_hash,
            "seed": self.seed, "workers": self.workers, "metrics": self.metrics, "flags": self.flags,
            "passed": self.passed, "files": sorted(self.files),
        })


class ArtifactWriter:
    """Writes CSV and JSON files into one output directory and tracks them"""

    def __init__(self, directory: Union[str, Path], formats: Sequence[str] = ("csv", "json")):
        self.directory = Path(directory)
        self.formats = set(formats)
        self.files: List[str] = []
        self.directory.mkdir(parents=True, exist_ok=True)

    def _track(self, path: Path) -> Path:
        self.files.append(path.name)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        if "csv" not in self.formats:
            logger.debug(f"Skipping {name}.csv; csv output disabled")
            return self.directory / f"{name}.csv"
        path = self.directory / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        logger.info(f"Wrote {path}")
        return self._track(path)

    def write_json(self, name: str, payload: Any) -> Path:
        if "json" not in self.formats:
            logger.debug(f"Skipping {name}.json; json output disabled")
            return self.directory / f"{name}.json"
        path = self.directory / f"{name}.json"
        path.write_text(json.dumps(to_jsonable(payload), indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Wrote {path}")
        return self._track(path)

    def track(self, path: Path) -> Path:
        return self._track(Path(path))

    def write_record(self, record: ResultRecord) -> Path:
        record.files = list(self.files)
        path = self.directory / "record.json"
        path.write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
        logger.info(f"Wrote {path}")
        return path
