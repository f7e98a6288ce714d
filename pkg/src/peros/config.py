"""Runtime configuration: one JSON file, dataclass in memory.

Resolution order: explicit --config path, then the PEROS_CONFIG environment
variable, then defaults rooted at ./peros_home. Shipped data files (registry,
grammar versions, corpora) are used whenever the config does not override
them.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

DATA_PACKAGE = "peros.data"


def data_path(*parts: str) -> Path:
    """Path to a shipped data file (registry, grammars, corpora)."""
    root = resources.files(DATA_PACKAGE)
    out = root
    for part in parts:
        out = out / part
    return Path(str(out))


@dataclass
class PerosConfig:
    home: Path = Path("peros_home")
    registry_path: Path | None = None       # default: shipped registry
    grammar_version: str = "v1"
    grammar_root: Path | None = None        # default: shipped grammar dir
    recommend_min_creations: int = 10
    recommend_window_ms: int = 600_000
    watch_poll_ms: int = 200
    watch_debounce_ms: int = 200
    step_timeout_s: float = 30.0
    backend: str = "rule"                   # "rule" | "llm-endpoint"
    retrain_window: int = 5
    retrain_min_accuracy: float = 0.9
    retrain_new_api_trigger: int = 3
    retrain_cooldown: int = 2

    @property
    def state_dir(self) -> Path:
        return self.home / "state"

    @property
    def workspace_parent(self) -> Path:
        return self.home / "workspaces"

    @property
    def reports_dir(self) -> Path:
        return self.home / "reports"

    @property
    def finetune_ledger(self) -> Path:
        return self.home / "finetune-jobs.ndjson"

    def registry_file(self) -> Path:
        return self.registry_path or data_path("registry.json")

    def grammar_dir(self, version: str | None = None) -> Path:
        root = self.grammar_root or data_path("grammar")
        return Path(root) / (version or self.grammar_version)

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "PerosConfig":
        kwargs: dict[str, Any] = {}
        for f in fields(cls):
            if f.name in doc:
                value = doc[f.name]
                if f.name in ("home", "registry_path", "grammar_root") and value:
                    value = Path(value)
                kwargs[f.name] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "PerosConfig":
        if path is None:
            path = os.environ.get("PEROS_CONFIG")
        if path is None:
            return cls()
        return cls.from_json(json.loads(Path(path).read_text()))

    def ensure_dirs(self) -> None:
        for p in (self.home, self.state_dir, self.workspace_parent, self.reports_dir):
            p.mkdir(parents=True, exist_ok=True)
