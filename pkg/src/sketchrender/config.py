"""Training configuration read from line-oriented ``key = value`` text."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path

from .sketch import SketchParams


@dataclass
class TrainConfig:
    # optimizer settings for the two stages
    lr_gs: float = 0.001
    lr_ds: float = 0.001
    lr_gp: float = 0.0002
    lr_dp: float = 0.0002
    # Adam moments for the sketch stage; the render stage keeps the optimizer defaults
    gs_beta1: float = 0.0
    gs_beta2: float = 0.99
    lam: float = 100.0
    batch_size: int = 4
    resolution: int = 64
    latent_dim: int = 32
    images_per_level: int = 800
    fade_fraction: float = 0.5
    render_steps: int = 300
    schedule: str = "staged"
    trainable_code: bool = False
    seed: int = 0
    # network sizes
    gs_base_width: int = 64
    unet_depth: int = 4
    unet_width: int = 32
    patch_blocks: int = 3
    # sketch extraction
    sketch_sigma: float = 1.0
    sketch_ksize: int = 5
    sketch_thresh: float = 0.25
    sketch_radius: int = 1
    # io
    data_dir: str = ""
    out_dir: str = "run"
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("lr_gs", "lr_ds", "lr_gp", "lr_dp"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.gs_beta1 < 1 and 0 <= self.gs_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.batch_size <= 0 or self.images_per_level <= 0 or self.render_steps < 0:
            raise ValueError("batch size and budgets must be positive")
        r = self.resolution
        if r < 4 or r & (r - 1):
            raise ValueError("resolution must be a power of two >= 4")
        if self.schedule not in ("staged", "joint"):
            raise ValueError("schedule must be 'staged' or 'joint'")
        if r % 2 ** self.unet_depth:
            raise ValueError("resolution must be divisible by 2**unet_depth")

    @property
    def max_level(self) -> int:
        return int(math.log2(self.resolution)) - 1

    @property
    def sketch_params(self) -> SketchParams:
        return SketchParams(self.sketch_sigma, self.sketch_ksize, self.sketch_thresh, self.sketch_radius)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def as_dict(self) -> dict[str, str]:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse(value, types[key])
        return cls(**values)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(value: str, typ: str):
    if typ == "bool":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return value.lower() in ("true", "1", "yes")
    if typ == "int":
        return int(value)
    if typ == "float":
        return float(value)
    return value
