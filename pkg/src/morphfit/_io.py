"""Output plumbing: number formatting, header comments, atomic writes."""

import json
import os
import tempfile
from datetime import datetime, timezone

from . import __version__


def fmt(x):
    """17 significant digits; round-trips every finite double."""
    return "%.17g" % x


def header_lines(config=None, timestamp=True, prefix="# "):
    lines = [f"{prefix}morphfit {__version__}"]
    if timestamp:
        now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        lines.append(f"{prefix}timestamp {now}")
    if config is not None:
        lines.append(f"{prefix}config {json.dumps(config, sort_keys=True, default=str)}")
    return lines


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory + rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class StagedOutputs:
    """Collect every output in memory and commit only once all succeeded.

    Nothing touches the filesystem until :meth:`commit`, so a failure while
    producing outputs leaves no partial files behind.
    """

    def __init__(self):
        self._files = {}

    def add(self, path, text):
        self._files[os.fspath(path)] = text

    def __contains__(self, path):
        return os.fspath(path) in self._files

    def __len__(self):
        return len(self._files)

    def paths(self):
        return list(self._files)

    def commit(self):
        for path, text in self._files.items():
            atomic_write_text(path, text)
