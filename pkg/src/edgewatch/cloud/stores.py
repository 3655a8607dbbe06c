"""Append-only canonical log stores with in-memory indexes.

Each store is one log file of canonical-notation lines; the in-memory
view is rebuilt by replaying the log on startup.  Writers are serialized
behind a lock, reads work on snapshots, so concurrent connections can
ingest while the HTTP side lists.
"""

from __future__ import annotations

import os
import threading

from .. import canon


class LogStore:
    def __init__(self, path: str):
        self._path = path
        self._lock = threading.Lock()
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._records: list[dict] = []
        if os.path.exists(path):
            self._records = list(canon.read_log(path))
        self._fh = open(path, "ab")

    def append(self, obj: dict) -> None:
        line = canon.dump_line(obj)
        with self._lock:
            self._fh.write(line)
            self._fh.flush()
            self._records.append(obj)

    def all(self) -> list[dict]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def close(self) -> None:
        with self._lock:
            self._fh.close()


class RawStore:
    """Raw window records uploaded in batch, one file per complete segment.

    Chunks are staged in memory until a segment is complete (all of
    chunk_index 0..total-1 seen); re-uploads of a stored segment
    deduplicate by segment_id.
    """

    def __init__(self, directory: str):
        self._dir = directory
        os.makedirs(directory, exist_ok=True)
        self._manifest = LogStore(os.path.join(directory, "manifest.log"))
        self._lock = threading.Lock()
        self._segments: dict[str, dict] = {}
        for entry in self._manifest.all():
            self._segments[entry["segment_id"]] = entry
        self._staging: dict[str, dict] = {}

    def has_segment(self, segment_id: str) -> bool:
        with self._lock:
            return segment_id in self._segments

    def ingest_chunk(self, edge_id: str, payload) -> dict:
        """Returns ack info: {"segment_id", "complete", "duplicate"}."""
        seg_id = payload.segment_id
        with self._lock:
            if seg_id in self._segments:
                return {"segment_id": seg_id, "complete": True, "duplicate": True}
            stage = self._staging.setdefault(
                seg_id, {"edge_id": edge_id, "total": payload.total_chunks, "chunks": {}})
            if stage["total"] != payload.total_chunks:
                # inconsistent re-send; restart staging with the new shape
                stage = {"edge_id": edge_id, "total": payload.total_chunks, "chunks": {}}
                self._staging[seg_id] = stage
            stage["chunks"][payload.chunk_index] = payload.records
            if len(stage["chunks"]) < stage["total"]:
                return {"segment_id": seg_id, "complete": False, "duplicate": False}

            records = []
            for idx in range(stage["total"]):
                records.extend(stage["chunks"][idx])
            path = os.path.join(self._dir, f"seg-{len(self._segments):06d}.log")
            with open(path, "wb") as fh:
                for w, fv, score in records:
                    fh.write(canon.dump_line(
                        {"features": list(fv), "score": score, "window_index": w}))
            entry = {
                "segment_id": seg_id, "edge_id": edge_id,
                "path": os.path.basename(path), "records": len(records),
            }
            self._manifest.append(entry)
            self._segments[seg_id] = entry
            del self._staging[seg_id]
            return {"segment_id": seg_id, "complete": True, "duplicate": False}

    def segments_for_edge(self, edge_id: str) -> list[dict]:
        with self._lock:
            return [e for e in self._segments.values() if e["edge_id"] == edge_id]

    def edges(self) -> list[str]:
        with self._lock:
            return sorted({e["edge_id"] for e in self._segments.values()})

    def records_for_edge(self, edge_id: str) -> list[tuple[int, tuple[float, ...], float]]:
        """All stored raw records for an edge, ordered by window index."""
        out = []
        for entry in self.segments_for_edge(edge_id):
            path = os.path.join(self._dir, entry["path"])
            for obj in canon.read_log(path):
                out.append((
                    int(obj["window_index"]),
                    tuple(float(v) for v in obj["features"]),
                    float(obj["score"]),
                ))
        out.sort(key=lambda r: r[0])
        return out

    def count_for_edge(self, edge_id: str) -> int:
        return sum(e["records"] for e in self.segments_for_edge(edge_id))
