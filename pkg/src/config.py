"""
Configuration for warped-cone-lab runs.

Environment defaults are read through the :class:`Config` singleton, and
per-run settings are validated by the :class:`RunConfig` data class,
loaded from a JSON or TOML file with flat command-line overrides.
"""

import os
import json
import logging
import threading
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Mapping, Optional, Union
from dotenv import load_dotenv


load_dotenv()
logger = logging.getLogger(__name__)

COMMANDS = (
    "net", "graph", "spectrum", "sweep", "sandwich",
    "weyl", "accumulate", "invariant", "boxcompare",
)


class Config:
    """
    Singleton class for environment variable validation and access.

    This class loads environment variables from a .env file. The seed is
    required whenever a command needs one and no seed was configured
    explicitly, raising an :exc:`OSError` if it is missing. It implements
    the singleton pattern so only one instance exists across the whole
    application.
    """

    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        """
        Creates the instance if it does not already exist.
        Returns the singleton instance.
        """
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    logger.debug("Creating a new Config instance.")
                    cls._instance = super(Config, cls).__new__(cls)
        return cls._instance

    @property
    def default_seed(self) -> int:
        """
        :returns: The default random seed.
        :rtype: int
        :raises OSError: If the 'WARPED_LAB_SEED' environment variable
            is not set.
        :raises ValueError: If it is not an integer.
        """
        value = os.getenv("WARPED_LAB_SEED")
        if value is None:
            logger.error(
                "Missing required environment variable: WARPED_LAB_SEED"
            )
            raise OSError(
                "Missing required environment variable: WARPED_LAB_SEED"
            )
        try:
            seed = int(value)
        except ValueError as e:
            logger.error("WARPED_LAB_SEED is not an integer: %s", value)
            raise ValueError(
                f"WARPED_LAB_SEED is not an integer: {value}"
            ) from e
        logger.debug("Default seed successfully retrieved.")
        return seed

    @property
    def output_dir(self) -> str:
        """
        :returns: The report directory, ``reports`` if unset.
        :rtype: str
        """
        value = os.getenv("WARPED_LAB_OUTPUT_DIR")
        if value:
            logger.debug("Output directory set to %s", value)
            return value
        logger.debug("No output directory set, using 'reports'.")
        return "reports"

    @property
    def log_level(self) -> str:
        """
        :returns: The logging level name, ``INFO`` if unset.
        :rtype: str
        """
        value = os.getenv("WARPED_LAB_LOG_LEVEL", "INFO").upper()
        if value not in getattr(logging, "getLevelNamesMapping", lambda: logging._nameToLevel)():
            logger.warning("Unknown log level %s, using INFO.", value)
            return "INFO"
        return value


@dataclass
class RunConfig:
    """
    Validated settings of a single command run.

    :ivar command: One of the CLI commands.
    :ivar seed: Random seed; there is no entropy default.
    :ivar action: Catalog action name (``circle-rotation``,
        ``torus-translation``, ``so3-rational-rotations``, ``odometer``,
        ``identity``).
    :ivar action_params: Parameters forwarded to the action catalog.
    :ivar space: Space name for commands without an action
        (``circle``, ``torus:2``, ``so3``, ``cantor:5``).
    :ivar levels: Strictly increasing list of levels t.
    :ivar epsilon: Net separation in the scaled metric.
    :ivar r: Scaled radius, or ``"auto"`` for the largest admissible one.
    :ivar output_dir: Directory receiving report files.
    :ivar options: Command-specific options.
    """
    command: str
    seed: int
    action: str = "circle-rotation"
    action_params: Dict[str, Any] = field(default_factory=dict)
    space: Optional[str] = None
    levels: List[float] = field(default_factory=lambda: [10.0])
    epsilon: float = 0.05
    r: Union[float, str] = "auto"
    output_dir: str = "reports"
    options: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """
        Validate the configuration.

        :raises ValueError: On any invalid field.
        """
        if self.command not in COMMANDS:
            self._fail(f"Unknown command: {self.command}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int):
            self._fail(f"Seed must be an integer, got {self.seed!r}")
        self.levels = [float(t) for t in self.levels]
        if not self.levels:
            self._fail("At least one level is required")
        if any(t <= 0 for t in self.levels):
            self._fail(f"Levels must be positive: {self.levels}")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            self._fail(f"Levels must be strictly increasing: {self.levels}")
        if self.epsilon <= 0:
            self._fail(f"Epsilon must be positive, got {self.epsilon}")
        if isinstance(self.r, str):
            if self.r != "auto":
                self._fail(f"r must be positive or 'auto', got {self.r!r}")
        elif self.r <= 0:
            self._fail(f"r must be positive or 'auto', got {self.r}")
        else:
            self.r = float(self.r)

    @staticmethod
    def _fail(message: str) -> None:
        logger.error("Invalid run configuration: %s", message)
        raise ValueError(f"Invalid run configuration: {message}")

    def echo(self) -> Dict[str, Any]:
        """
        :returns: The configuration as a JSON-ready mapping.
        :rtype: Dict[str, Any]
        """
        return json.loads(json.dumps(asdict(self), sort_keys=True))


def _read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    logger.debug("Reading run configuration from %s", path)
    try:
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                return tomllib.load(fh)
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError, tomllib.TOMLDecodeError) as e:
        logger.error("Cannot read configuration %s: %s", path, e)
        raise ValueError(f"Cannot read configuration {path}: {e}") from e
    if not isinstance(data, dict):
        raise ValueError(f"Configuration {path} is not a mapping")
    return data


def load_run_config(
        command: str,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None
        ) -> RunConfig:
    """
    Build a :class:`RunConfig` from a file and flat overrides.

    Keys that are not fields of :class:`RunConfig` are moved into
    ``options``; override values of ``None`` are ignored. The seed falls
    back to :attr:`Config.default_seed` and the output directory to
    :attr:`Config.output_dir`.

    :param command: The CLI command.
    :param path: Optional JSON or TOML file.
    :param overrides: Flat CLI-flag values.
    :returns: The validated configuration.
    :raises ValueError: If the configuration is invalid.
    :raises OSError: If no seed is available at all.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        data.update(_read_config_file(path))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value

    known = set(RunConfig.__dataclass_fields__) - {"command"}
    options = dict(data.pop("options", {}) or {})
    for key in list(data):
        if key not in known:
            options[key] = data.pop(key)
    data["options"] = options

    config = Config()
    if "seed" not in data:
        data["seed"] = config.default_seed
    if "output_dir" not in data:
        data["output_dir"] = config.output_dir
    logger.info("Run configuration loaded for command '%s'.", command)
    return RunConfig(command=command, **data)
