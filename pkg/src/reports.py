"""
This module defines the RunSummary data class describing the outcome of a
command, and the ReportWriter class that writes summaries, CSV tables and
text exports atomically into the output directory.
"""

import os
import json
import logging
import tempfile
import numpy as np
import pandas as pd
from pathlib import Path
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Union
from src.config import Config

logger = logging.getLogger(__name__)

VERSION = "1.0.0"


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


@dataclass
class RunSummary:
    """
    Data class representing the JSON summary of a run.

    :ivar command: The command that produced the report.
    :ivar status: ``PASS`` or ``FAIL``.
    :ivar config: Echo of the run configuration.
    :ivar results: Command-specific results.
    :ivar failure: Violated invariant and worst datum of a FAIL.
    :ivar files: Names of the other files written by the run.
    :ivar version: Artifact version.
    """
    command: str
    status: str
    config: Dict[str, Any]
    results: Dict[str, Any] = field(default_factory=dict)
    failure: Dict[str, Any] = field(default_factory=dict)
    files: List[str] = field(default_factory=list)
    version: str = VERSION

    def __post_init__(self) -> None:
        if self.status not in ("PASS", "FAIL"):
            raise ValueError(f"Invalid status: {self.status}")

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def to_json(self) -> str:
        """
        Convert the summary to deterministic JSON (sorted keys, no
        timestamps).

        :return: A JSON string representation of the summary.
        :rtype: str
        """
        return json.dumps(_plain(asdict(self)), sort_keys=True, indent=2,
                          ensure_ascii=False) + "\n"


class ReportWriter:
    """
    Writer for report files in one output directory.

    Every file is written to a temporary file in the same directory and
    renamed into place, so a report is either complete or absent.
    """
    _config = Config()

    def __init__(self, output_dir: Optional[Union[str, Path]] = None) -> None:
        """
        Initialize the ReportWriter.

        :param output_dir: Target directory; defaults to
            :attr:`Config.output_dir`.
        """
        self.output_dir = Path(output_dir or self._config.output_dir)
        self.written: List[str] = []
        logger.info("ReportWriter initialized for %s", self.output_dir)

    def write_text(self, name: str, text: str) -> Path:
        """
        Atomically write ``text`` to ``name``.

        :raises RuntimeError: If the file cannot be written.
        """
        target = self.output_dir / name
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.output_dir,
                                       prefix=f".{name}.")
            with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except OSError as e:
            logger.error("Failed to write report %s: %s", target, e)
            raise RuntimeError(f"Failed to write report {target}: {e}") from e
        self.written.append(name)
        logger.debug("Wrote %s", target)
        return target

    def write_csv(self, name: str, rows: Sequence[Dict[str, Any]],
                  columns: Sequence[str]) -> Path:
        """Write rows as CSV with a header of ``columns``."""
        frame = pd.DataFrame(list(rows), columns=list(columns))
        return self.write_text(
            name, frame.to_csv(index=False, lineterminator="\n"))

    def write_lines(self, name: str, header: Dict[str, Any],
                    lines: Sequence[str]) -> Path:
        """Write text lines preceded by a ``#`` JSON header line."""
        head = "# " + json.dumps(_plain(header), sort_keys=True)
        return self.write_text(name, "\n".join([head, *lines]) + "\n")

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        return self.write_text(
            name, json.dumps(_plain(payload), sort_keys=True, indent=2) + "\n")

    def write_summary(self, summary: RunSummary) -> Path:
        """Write ``summary.json`` listing every file written so far."""
        summary.files = sorted(self.written)
        return self.write_text("summary.json", summary.to_json())
