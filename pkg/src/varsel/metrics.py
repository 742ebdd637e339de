"""Line-delimited JSON metrics and the run manifest."""

import json
import logging
import platform
from dataclasses import asdict, dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Union

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class MetricRecord:
    trial: int
    iteration: int
    metric: str
    value: Any
    phase: Optional[int] = None
    cycle: Optional[int] = None

    def to_dict(self) -> dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None or k == "value"}


class MetricsWriter:
    """Writes one JSON object per line and flushes after every record.

    Opening truncates the file, so a rerun into the same directory starts clean.
    """

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = None
        self.count = 0

    def __enter__(self) -> "MetricsWriter":
        self._file = self.path.open("w", encoding="utf-8")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def write(self, record: MetricRecord) -> None:
        if self._file is None:
            raise RuntimeError(f"metrics writer for {self.path} is not open")
        self._file.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        self._file.flush()
        self.count += 1

    def write_all(self, records: Iterable[MetricRecord]) -> None:
        for record in records:
            self.write(record)


def read_metrics(path: Union[str, Path]) -> Iterator[MetricRecord]:
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield MetricRecord(**json.loads(line))


def package_version() -> str:
    try:
        return metadata.version("varsel")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(
    out_dir: Union[str, Path],
    config: dict[str, Any],
    seed: int,
    table_version: Optional[str] = None,
) -> Path:
    """Everything needed to rerun and reproduce a run's metrics."""
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": config,
        "seed": seed,
        "varsel_version": package_version(),
        "python_version": platform.python_version(),
        "fsm_table_version": table_version,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("wrote manifest %s", path)
    return path
