"""Run directory layout, ownership lock and the per-epoch log."""

from __future__ import annotations

import csv
import logging
import os
from pathlib import Path

from .config import RunConfig, dump, resolve

LAYOUT = ("data", "checkpoints", "maps", "metrics", "figures", "normalized")


class RunLocked(RuntimeError):
    pass


class RunDir:
    def __init__(self, root):
        self.root = Path(root)
        self._lock = self.root / ".lock"
        self._handler = None

    def __getattr__(self, name):
        if name in LAYOUT:
            return self.root / name
        raise AttributeError(name)

    @property
    def config_path(self) -> Path:
        return self.root / "config.resolved"

    def require(self, *paths) -> None:
        """Raise ``FileNotFoundError`` naming the first missing input."""
        for p in paths:
            if not Path(p).exists():
                raise FileNotFoundError(str(p))

    def resolve_config(self, config_path=None, overrides=(), seed=None) -> RunConfig:
        """An explicit ``--config`` wins; otherwise the run's own resolved config is the base."""
        base = config_path or (self.config_path if self.config_path.exists() else None)
        return resolve(base, overrides, seed)

    def write_config(self, cfg: RunConfig) -> None:
        self.config_path.write_text(dump(cfg))

    def __enter__(self) -> "RunDir":
        self.root.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(f"run directory {self.root} is locked by another process ({self._lock})") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        for d in LAYOUT:
            (self.root / d).mkdir(exist_ok=True)
        self._handler = logging.FileHandler(self.root / "log.txt")
        self._handler.setFormatter(logging.Formatter("%(message)s"))
        lg = logging.getLogger("histoprog")
        lg.addHandler(self._handler)
        lg.setLevel(logging.INFO)
        return self

    def __exit__(self, *exc) -> None:
        if self._handler is not None:
            logging.getLogger("histoprog").removeHandler(self._handler)
            self._handler.close()
        self._lock.unlink(missing_ok=True)


def fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def write_table(path, columns, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r[c]) for c in columns])
    return path


def read_table(path) -> list:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
