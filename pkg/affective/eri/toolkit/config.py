#
# Copyright 2026 ERI Toolkit Developers
#
# The source code of this program is made available
# under the terms of the GNU Affero General Public License version 3
# (GNU AGPL V3) as published by the Free Software Foundation.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
# GNU Affero General Public License for more details.
#
# You should have received a copy of the GNU Affero General Public
# License along with this program; if not, see
# <http://www.gnu.org/licenses/>.

"""
Run configuration.

Settings come from three sources, later ones winning: the defaults of
:class:`RunConfig`, a JSON config file with flat dotted keys
(``{"hp.learning_rate": 1e-4, "paths.manifest": "data/manifest.jsonl"}``) and
command line flags. Every value is type-checked against the dataclass it ends
up in before any work starts.
"""

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import (
    Any,
    Dict,
    List,
    Mapping,
    Optional,
    Union,
    get_args,
    get_origin,
    get_type_hints,
)

from .encoders import Hyperparams
from .exceptions import ConfigError
from .featstore import DATA_DEFAULT_RETRIES, DEFAULT_EMOTION_NAMES, MANIFEST_FILENAME, SynthSpec
from .trainer import derive_run_id
from .tuner import SearchSpace

CHECKPOINT_FILENAME = "checkpoint.eric"
SUMMARY_FILENAME = "run_summary.json"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

# dotted config key -> RunConfig attribute
TOP_LEVEL_KEYS = {
    "seed": "seed",
    "parallelism": "parallelism",
    "log_level": "log_level",
    "run_id": "run_id",
    "data_retries": "data_retries",
    "split": "split",
    "emotion_names": "emotion_names",
    "paths.manifest": "manifest",
    "paths.out_dir": "out_dir",
    "paths.checkpoint": "checkpoint",
    "paths.checkpoints": "checkpoints",
    "train.filter_faces": "filter_faces",
    "ensemble.weights": "weights",
    "combos.streams": "streams",
}
SECTIONS = {"hp": Hyperparams, "search": SearchSpace, "synth": SynthSpec}
NON_CONFIGURABLE = {"search": ("base",)}

logger = logging.getLogger(__name__)


def _check_value(key: str, value: Any, hint: Any) -> Any:
    origin = get_origin(hint)
    args = get_args(hint)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        options = [a for a in args if a is not type(None)]
        return _check_value(key, value, options[0])
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key!r} must be a list, got {value!r}.", field=key)
        item = args[0] if args else Any
        checked = [_check_value(f"{key}[{i}]", v, item) for i, v in enumerate(value)]
        return tuple(checked) if origin is tuple else checked
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key!r} must be an object, got {value!r}.", field=key)
        return dict(value)
    if hint is Any:
        return value
    if isinstance(hint, type) and issubclass(hint, Enum):
        try:
            return hint(value)
        except ValueError as exc:
            raise ConfigError(
                f"{key!r} must be one of {[e.value for e in hint]!r}, got {value!r}.", field=key
            ) from exc
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key!r} must be true or false, got {value!r}.", field=key)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key!r} must be an integer, got {value!r}.", field=key)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key!r} must be a number, got {value!r}.", field=key)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key!r} must be a string, got {value!r}.", field=key)
        return value
    return value


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file {str(path)!r} not found.", path=path) from exc
    except (OSError, ValueError) as exc:
        raise ConfigError(f"Cannot read config file {str(path)!r}: {exc!s}", path=path) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {str(path)!r} must hold a JSON object.", path=path)
    return data


def _plain(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in sorted(value.items())}
    if isinstance(value, Path):
        return str(value)
    return value


@dataclass
class RunConfig:
    command: str = ""
    manifest: Optional[str] = None
    out_dir: str = "out"
    checkpoint: Optional[str] = None
    checkpoints: List[str] = field(default_factory=list)
    split: str = "val"
    seed: int = 42
    parallelism: int = 1
    log_level: str = "INFO"
    run_id: Optional[str] = None
    data_retries: int = DATA_DEFAULT_RETRIES
    filter_faces: bool = True
    weights: Optional[List[float]] = None
    streams: List[str] = field(default_factory=list)
    emotion_names: List[str] = field(default_factory=lambda: list(DEFAULT_EMOTION_NAMES))
    hp: Dict[str, Any] = field(default_factory=dict)
    search: Dict[str, Any] = field(default_factory=dict)
    synth: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def load(
        cls,
        command: str,
        config_file: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        """
        Build the configuration of ``command``: defaults, then ``config_file``,
        then ``overrides`` (dotted keys; ``None`` values are ignored).
        """
        values: Dict[str, Any] = {}
        if config_file:
            values.update(read_config_file(config_file))
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        config = cls(command=command)
        for key in sorted(values):
            config.set(key, values[key])
        config.validate()
        return config

    def set(self, key: str, value: Any) -> None:
        if key in TOP_LEVEL_KEYS:
            attr = TOP_LEVEL_KEYS[key]
            hint = get_type_hints(type(self))[attr]
            setattr(self, attr, _check_value(key, value, hint))
            return
        section, _, name = key.partition(".")
        target = SECTIONS.get(section)
        if target is None or not name:
            raise ConfigError(f"Unknown configuration key {key!r}.", field=key)
        hints = get_type_hints(target)
        if name not in hints or name in NON_CONFIGURABLE.get(section, ()):
            raise ConfigError(f"Unknown configuration key {key!r}.", field=key)
        getattr(self, section)[name] = _check_value(key, value, hints[name])

    def validate(self) -> None:
        if self.log_level.upper() not in LOG_LEVELS:
            raise ConfigError(
                f"'log_level' must be one of {LOG_LEVELS!r}, got {self.log_level!r}.",
                field="log_level",
            )
        self.log_level = self.log_level.upper()
        if self.seed < 0:
            raise ConfigError("'seed' must not be negative.", field="seed")
        if self.data_retries < 0:
            raise ConfigError("'data_retries' must not be negative.", field="data_retries")
        if len(self.emotion_names) != len(DEFAULT_EMOTION_NAMES):
            raise ConfigError(
                f"Exactly {len(DEFAULT_EMOTION_NAMES)} emotion names are required.",
                field="emotion_names",
            )
        self.hyperparams()
        self.search_space().validate()
        self.synth_spec().validate()

    def hyperparams(self) -> Hyperparams:
        try:
            return Hyperparams(**self.hp)
        except ConfigError as exc:
            raise exc.__class__(
                f"Invalid setting 'hp.{exc.field}': {exc!s}", field=f"hp.{exc.field}"
            ) from exc

    def search_space(self) -> SearchSpace:
        values = dict(self.search)
        values.setdefault("loss_kind", self.hyperparams().loss_kind)
        return SearchSpace(base=self.hyperparams(), **values)

    def synth_spec(self) -> SynthSpec:
        return SynthSpec(**self.synth)

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def manifest_path(self) -> Path:
        if self.manifest:
            return Path(self.manifest)
        return self.out_path / "data" / MANIFEST_FILENAME

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else self.out_path / CHECKPOINT_FILENAME

    def resolved(self) -> Dict[str, Any]:
        """JSON-serializable view of every effective setting."""
        search = dataclasses.asdict(self.search_space())
        search.pop("base")
        res = {
            "command": self.command,
            "data_retries": self.data_retries,
            "emotion_names": list(self.emotion_names),
            "filter_faces": self.filter_faces,
            "hp": self.hyperparams().as_dict(),
            "log_level": self.log_level,
            "parallelism": self.parallelism,
            "paths": {
                "checkpoint": str(self.checkpoint_path),
                "checkpoints": list(self.checkpoints),
                "manifest": str(self.manifest_path),
                "out_dir": str(self.out_path),
            },
            "search": _plain(search),
            "seed": self.seed,
            "split": self.split,
            "streams": list(self.streams),
            "synth": _plain(dataclasses.asdict(self.synth_spec())),
            "weights": self.weights,
        }
        res["run_id"] = self.run_id or derive_run_id(res)
        return res

    @property
    def effective_run_id(self) -> str:
        return self.resolved()["run_id"]
