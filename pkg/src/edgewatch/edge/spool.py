"""Edge-local append-only spool of raw windows awaiting batch upload.

One canonical-notation record per line per segment file.  Segments roll
every spool_roll windows; a segment must be closed before upload and is
deleted only after the cloud acknowledged its final chunk.

Crash safety: records are appended line-at-a-time and flushed, so after
a crash at any point the spool loses at most the one in-flight record
(a torn final line, truncated away on recovery).
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

from .. import canon

_OPEN_SUFFIX = ".open"
_CLOSED_SUFFIX = ".closed"
_NAME_RE = re.compile(r"^segment-(?P<start>\d+)\.(open|closed)$")


@dataclass(frozen=True)
class SpoolSegment:
    segment_id: str
    records: tuple[tuple[int, tuple[float, ...], float], ...]


def _record_obj(window_index: int, features, score: float) -> dict:
    return {
        "features": [float(v) for v in features],
        "score": float(score),
        "window_index": int(window_index),
    }


def _parse_record(obj) -> tuple[int, tuple[float, ...], float]:
    return (
        int(obj["window_index"]),
        tuple(float(v) for v in obj["features"]),
        float(obj["score"]),
    )


class Spool:
    def __init__(self, directory: str, edge_id: str, roll_every: int = 10_000):
        if roll_every < 1:
            raise ValueError("roll_every must be >= 1")
        self._dir = str(directory)
        self._edge_id = edge_id
        self._roll_every = roll_every
        os.makedirs(self._dir, exist_ok=True)
        self._fh = None
        self._open_path: str | None = None
        self._open_start: int | None = None
        self._open_count = 0
        self.bytes_written = 0
        self._recover()

    # -- recovery -------------------------------------------------------------

    def _recover(self) -> None:
        """Truncate any torn final line and reopen the active segment."""
        open_paths = []
        for name in sorted(os.listdir(self._dir)):
            m = _NAME_RE.match(name)
            if not m:
                continue
            path = os.path.join(self._dir, name)
            self._truncate_torn_line(path)
            self.bytes_written += os.path.getsize(path)
            if name.endswith(_OPEN_SUFFIX):
                open_paths.append((int(m.group("start")), path))
        if open_paths:
            # at most one segment should be open; close any stale extras
            open_paths.sort()
            for _, stale in open_paths[:-1]:
                os.replace(stale, stale[: -len(_OPEN_SUFFIX)] + _CLOSED_SUFFIX)
            start, path = open_paths[-1]
            self._open_path = path
            self._open_start = start
            self._open_count = sum(1 for _ in canon.read_log(path))
            self._fh = open(path, "ab")

    @staticmethod
    def _truncate_torn_line(path: str) -> None:
        size = os.path.getsize(path)
        if size == 0:
            return
        with open(path, "rb+") as fh:
            fh.seek(max(0, size - 1))
            if fh.read(1) == b"\n":
                return
            fh.seek(0)
            data = fh.read()
            cut = data.rfind(b"\n") + 1
            fh.truncate(cut)

    # -- writing -------------------------------------------------------------

    def segment_id_for(self, start_window: int) -> str:
        return f"{self._edge_id}-{start_window:08d}"

    def append(self, window_index: int, features, score: float) -> None:
        if self._fh is None or self._open_count >= self._roll_every:
            self._roll(window_index)
        line = canon.dump_line(_record_obj(window_index, features, score))
        self._fh.write(line)
        self._fh.flush()
        self._open_count += 1
        self.bytes_written += len(line)

    def _roll(self, start_window: int) -> None:
        self.close_active()
        name = f"segment-{start_window:08d}{_OPEN_SUFFIX}"
        self._open_path = os.path.join(self._dir, name)
        self._open_start = start_window
        self._open_count = 0
        self._fh = open(self._open_path, "ab")

    def close_active(self) -> None:
        """Close the open segment so the uploader may take it."""
        if self._fh is None:
            return
        self._fh.close()
        self._fh = None
        if self._open_count == 0:
            os.remove(self._open_path)
        else:
            closed = self._open_path[: -len(_OPEN_SUFFIX)] + _CLOSED_SUFFIX
            os.replace(self._open_path, closed)
        self._open_path = None
        self._open_start = None
        self._open_count = 0

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    # -- reading -------------------------------------------------------------

    def _files(self, suffix: str) -> list[tuple[int, str]]:
        out = []
        for name in sorted(os.listdir(self._dir)):
            m = _NAME_RE.match(name)
            if m and name.endswith(suffix):
                out.append((int(m.group("start")), os.path.join(self._dir, name)))
        return sorted(out)

    def closed_segments(self) -> list[SpoolSegment]:
        segments = []
        for start, path in self._files(_CLOSED_SUFFIX):
            records = tuple(_parse_record(obj) for obj in canon.read_log(path))
            segments.append(SpoolSegment(segment_id=self.segment_id_for(start), records=records))
        return segments

    def delete_segment(self, segment_id: str) -> None:
        for start, path in self._files(_CLOSED_SUFFIX):
            if self.segment_id_for(start) == segment_id:
                os.remove(path)
                return
        raise FileNotFoundError(segment_id)

    def record_counts(self) -> tuple[int, int]:
        """(closed segment count, total records across all segments)."""
        closed = self._files(_CLOSED_SUFFIX)
        total = self._open_count
        for _, path in closed:
            total += sum(1 for _ in canon.read_log(path))
        return len(closed), total

    def last_window_index(self) -> int | None:
        """Highest spooled window index, scanning every segment file."""
        last = None
        for _, path in self._files(_CLOSED_SUFFIX) + self._files(_OPEN_SUFFIX):
            for obj in canon.read_log(path):
                w = int(obj["window_index"])
                if last is None or w > last:
                    last = w
        return last
