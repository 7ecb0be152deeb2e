"""Shared utilities for the association library.

The helpers collected here keep every component aligned regarding logging,
error reporting, timing instrumentation and configuration loading.

Examples
--------
>>> tracker = OperationTracker()
>>> with tracker.span("Trainer", "fit", "overfit", lambda: {"iterations": 1}):
...     pass
>>> build_timing_table(tracker)[0]["component"]
'Trainer'
"""
from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from threading import Lock
from time import perf_counter
from typing import Any, Callable, Dict, Iterable, List, Mapping

import yaml


LOGGER_NAME = "mot_association"
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"


def configure_logging(level: int = logging.INFO) -> logging.Logger:
	"""Configure a single shared logger for the package.

	Examples
	--------
	>>> logger = configure_logging()
	>>> logger.name
	'mot_association'
	"""

	logger = logging.getLogger(LOGGER_NAME)
	if not logger.handlers:
		handler = logging.StreamHandler()
		handler.setFormatter(logging.Formatter(LOG_FORMAT, "%Y-%m-%d %H:%M:%S"))
		logger.addHandler(handler)
		logger.propagate = False
	logger.setLevel(level)
	return logger


LOGGER = configure_logging()


class AssociationError(Exception):
	"""Base class for every error raised by the package."""


class ValidationFailure(AssociationError, ValueError):
	"""Input violates a documented precondition (shape, index, finiteness)."""


class EmptyProblemError(ValidationFailure):
	"""One side of an association problem is empty; the caller handles births/deaths directly."""


class EnumerationLimitError(ValidationFailure):
	"""Brute-force enumeration requested above its size cap."""


class TapeStateError(AssociationError, RuntimeError):
	"""Differentiation tape used out of order."""


class NonFiniteLossError(AssociationError, FloatingPointError):
	"""Training produced a NaN or infinite loss."""


class ConfigError(AssociationError, ValueError):
	"""Configuration file does not match the documented schema."""


class CheckpointMissingError(AssociationError, FileNotFoundError):
	"""A learned solver was requested without a usable checkpoint."""


class ArtifactParseError(AssociationError, ValueError):
	"""A sequence, track or checkpoint file is malformed."""

	def __init__(self, path: Path | str, line: int | None, message: str) -> None:
		self.path = Path(path)
		self.line = line
		location = f"{self.path}:{line}" if line is not None else str(self.path)
		super().__init__(f"{location}: {message}")


def load_config_mapping(path: Path | str | None) -> Dict[str, Any]:
	"""Read a JSON (or YAML) configuration file into a plain mapping.

	Examples
	--------
	>>> load_config_mapping(None)
	{}
	"""

	if path is None:
		return {}
	config_path = Path(path)
	if not config_path.exists():
		raise ConfigError(f"Configuration file '{config_path}' was not found.")
	try:
		payload = yaml.safe_load(config_path.read_text(encoding="utf-8"))
	except yaml.YAMLError as exc:
		raise ConfigError(f"Configuration file '{config_path}' is not valid JSON/YAML: {exc}") from exc
	if payload is None:
		return {}
	if not isinstance(payload, dict):
		raise ConfigError(f"Configuration file '{config_path}' must contain an object at top level.")
	return payload


def write_json(path: Path | str, payload: Any) -> Path:
	target = Path(path)
	target.parent.mkdir(parents=True, exist_ok=True)
	target.write_text(json.dumps(payload, ensure_ascii=True, indent=2) + "\n", encoding="utf-8")
	return target


@dataclass(slots=True)
class OperationLog:
	"""Capture a single timed operation.

	Examples
	--------
	>>> log = OperationLog('Tracker', 'run', 'sequence', 10.5, {'frames': 3}, datetime.now(timezone.utc))
	>>> isinstance(log.as_dict(), dict)
	True
	"""

	component: str
	phase: str
	action: str
	elapsed_ms: float
	context_snapshot: Mapping[str, Any]
	timestamp: datetime

	def as_dict(self) -> Dict[str, Any]:
		record = asdict(self)
		record["timestamp"] = self.timestamp.isoformat()
		record["context_snapshot"] = dict(self.context_snapshot)
		return record


class OperationTracker:
	"""Collect execution spans for the timing summary printed by the CLI."""

	def __init__(self) -> None:
		self._records: List[OperationLog] = []
		self._lock = Lock()

	@property
	def records(self) -> Iterable[OperationLog]:
		with self._lock:
			return list(self._records)

	@contextmanager
	def span(
		self,
		component: str,
		phase: str,
		action: str,
		context_supplier: Callable[[], Mapping[str, Any]],
	):
		start = perf_counter()
		try:
			yield
		finally:
			elapsed_ms = (perf_counter() - start) * 1000
			snapshot = dict(context_supplier())
			record = OperationLog(
				component=component,
				phase=phase,
				action=action,
				elapsed_ms=elapsed_ms,
				context_snapshot=snapshot,
				timestamp=datetime.now(timezone.utc),
			)
			with self._lock:
				self._records.append(record)
			LOGGER.info(
				"[%s] %s - %s | %.1f ms | context=%s",
				component,
				phase,
				action,
				elapsed_ms,
				snapshot,
			)

	def to_dict(self) -> List[Dict[str, Any]]:
		return [record.as_dict() for record in self.records]


def build_timing_table(tracker: OperationTracker) -> List[Dict[str, Any]]:
	"""Aggregate span timings per component."""

	grouped: Dict[str, Dict[str, float]] = {}
	for record in tracker.records:
		bucket = grouped.setdefault(record.component, {"total_ms": 0.0, "operations": 0})
		bucket["total_ms"] += record.elapsed_ms
		bucket["operations"] += 1
	formatted: List[Dict[str, Any]] = []
	for component, metrics in grouped.items():
		formatted.append(
			{
				"component": component,
				"operations": int(metrics["operations"]),
				"total_ms": round(metrics["total_ms"], 2),
				"mean_ms": round(metrics["total_ms"] / metrics["operations"], 2),
			}
		)
	return formatted


def log_timing_summary(tracker: OperationTracker) -> None:
	for entry in build_timing_table(tracker):
		LOGGER.info(
			"[Timing] %s | operations=%s | total=%.2f ms | mean=%.2f ms",
			entry["component"],
			entry["operations"],
			entry["total_ms"],
			entry["mean_ms"],
		)


__all__ = [
	"LOGGER",
	"AssociationError",
	"ArtifactParseError",
	"CheckpointMissingError",
	"ConfigError",
	"EmptyProblemError",
	"EnumerationLimitError",
	"NonFiniteLossError",
	"OperationLog",
	"OperationTracker",
	"TapeStateError",
	"ValidationFailure",
	"build_timing_table",
	"configure_logging",
	"load_config_mapping",
	"log_timing_summary",
	"write_json",
]
