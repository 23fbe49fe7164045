"""Pipeline configuration: one flat key/value file carrying every tunable.

Every artifact the CLI writes embeds the config hash so results can always
be traced back to the exact parameter set that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .errors import ConfigError


@dataclass
class PipelineConfig:
    # fusion
    voxel_size: float = 0.05
    gamma: float = 0.25
    delta: float = 0.5
    dbscan_eps_m: float = 0.1
    dbscan_min_pts: int = 10
    # 2D mask refinement
    taus: tuple = (1.0, 0.5, 0.3)
    min_area_frac: float = 0.0005
    margin_px: int = 1
    dbscan_eps_px: float = 3.0
    dbscan_min_pts_2d: int = 8
    # crop aggregation
    w_mask: float = 0.4
    w_bbox: float = 0.3
    w_large: float = 0.2
    w_huge: float = 0.1
    w_sur: float = 0.15
    # labeling / evaluation
    prompt_template: str = "a photo of {}."
    match_radius: float = 0.05
    # retrieval
    topk: int = 10
    dedup_overlap: float = 0.7
    lambda_occ: float = 0.5
    depth_tol: float = 0.1
    n_bins: int = 8
    iou_thresholds: tuple = (0.1, 0.25)
    # gateway
    embed_dim: int = 64
    mock_seed: int = 0

    def weights(self):
        from .embedding import EmbeddingWeights

        return EmbeddingWeights(
            self.w_mask, self.w_bbox, self.w_large, self.w_huge, self.w_sur
        )

    def fusion_params(self):
        from .fusion import FusionParams

        return FusionParams(
            gamma=self.gamma,
            delta=self.delta,
            voxel_size=self.voxel_size,
            dbscan_eps_m=self.dbscan_eps_m,
            dbscan_min_pts=self.dbscan_min_pts,
        )

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:32]

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(raw, fields[key].type, key)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def _parse_value(raw: str, typ, key: str):
    try:
        if typ in ("int", int):
            return int(raw)
        if typ in ("float", float):
            return float(raw)
        if typ in ("tuple", tuple):
            parts = [p.strip().strip("'\"") for p in raw.split(",") if p.strip()]
            return tuple(float(p) for p in parts)
        return raw.strip("'\"")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
