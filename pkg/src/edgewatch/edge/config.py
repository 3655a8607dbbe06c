"""Edge agent configuration, loaded from a canonical-notation file."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .. import canon
from ..features import DEFAULT_BAND_EDGES, DEFAULT_HOP, DEFAULT_WINDOW_SIZE
from ..lof import DEFAULT_CAPACITY, DEFAULT_EPS, DEFAULT_K, RULE_STREAK

ENV_CLOUD_ADDR = "EDGE_CLOUD_ADDR"


@dataclass
class EdgeConfig:
    edge_id: str
    equipment_id: str
    spool_dir: str
    state_dir: str
    initial_model: str | None = None
    cloud_addr: str = "127.0.0.1:7700"
    window_size: int = DEFAULT_WINDOW_SIZE
    hop: int = DEFAULT_HOP
    band_edges: tuple[int, ...] = DEFAULT_BAND_EDGES
    k: int = DEFAULT_K
    eps: float = DEFAULT_EPS
    capacity: int = DEFAULT_CAPACITY
    upload_every: int = 0          # 0 = manual trigger only
    rule_streak: int = RULE_STREAK
    rule_margin: float = 0.1
    queue_limit: int = 10_000
    spool_roll: int = 10_000

    def __post_init__(self):
        if not self.edge_id:
            raise ValueError("edge_id must be non-empty")
        if self.upload_every < 0:
            raise ValueError("upload_every must be >= 0")
        self.band_edges = tuple(int(b) for b in self.band_edges)

    @property
    def feature_dim(self) -> int:
        return len(self.band_edges)  # B bands + rms

    def cloud_host_port(self) -> tuple[str, int]:
        host, _, port = self.cloud_addr.rpartition(":")
        return host or "127.0.0.1", int(port)

    @classmethod
    def from_file(cls, path: str) -> "EdgeConfig":
        with open(path, "rb") as fh:
            obj = canon.loads(fh.read())
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            return p if p is None or os.path.isabs(p) else os.path.join(base, p)

        known = {f for f in cls.__dataclass_fields__}
        kwargs = {key: obj[key] for key in obj if key in known}
        config = cls(**kwargs)
        config.spool_dir = resolve(config.spool_dir)
        config.state_dir = resolve(config.state_dir)
        config.initial_model = resolve(config.initial_model)
        env_addr = os.environ.get(ENV_CLOUD_ADDR)
        if env_addr:
            config.cloud_addr = env_addr
        return config

    def to_obj(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "equipment_id": self.equipment_id,
            "spool_dir": self.spool_dir,
            "state_dir": self.state_dir,
            "initial_model": self.initial_model,
            "cloud_addr": self.cloud_addr,
            "window_size": self.window_size,
            "hop": self.hop,
            "band_edges": list(self.band_edges),
            "k": self.k,
            "eps": self.eps,
            "capacity": self.capacity,
            "upload_every": self.upload_every,
            "rule_streak": self.rule_streak,
            "rule_margin": self.rule_margin,
            "queue_limit": self.queue_limit,
            "spool_roll": self.spool_roll,
        }

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(canon.dump_line(self.to_obj()))
