"""Cloud service configuration, loaded from a canonical-notation file."""

from __future__ import annotations

import os
from dataclasses import dataclass

from .. import canon
from ..lof import DEFAULT_CAPACITY, DEFAULT_EPS, DEFAULT_K


@dataclass
class CloudConfig:
    store_dir: str
    catalog_path: str | None = None
    tcp_port: int = 7700
    http_port: int = 7780
    host: str = "127.0.0.1"
    k: int = DEFAULT_K
    eps: float = DEFAULT_EPS
    capacity: int = DEFAULT_CAPACITY
    retrain_seed: int = 1234
    retrain_min_records: int = 200
    retrain_normal_quantile: float = 0.95
    retrain_threshold_quantile: float = 0.99
    retrain_threshold_factor: float = 1.2
    critical_multiplier: float = 2.0
    fit_window: int = 20
    jaccard_merge: float = 0.8

    @classmethod
    def from_file(cls, path: str) -> "CloudConfig":
        with open(path, "rb") as fh:
            obj = canon.loads(fh.read())
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            return p if p is None or os.path.isabs(p) else os.path.join(base, p)

        known = {f for f in cls.__dataclass_fields__}
        config = cls(**{key: obj[key] for key in obj if key in known})
        config.store_dir = resolve(config.store_dir)
        config.catalog_path = resolve(config.catalog_path)
        return config

    def to_obj(self) -> dict:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(canon.dump_line(self.to_obj()))
