from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..tensorcore import ConfigurationError

FUSION_MODES = ("early", "cross")
DISTANCE_MODES = ("none", "chamfer", "neural")


@dataclass
class ModelConfig:
    input_dims: tuple = (32, 32, 32)
    # average-pooling factor applied to volumes and masks before the CNN branches
    input_pool: int = 4
    phase_count: int = 3
    block_channels: tuple = (8, 8, 8)
    lift_channels: tuple = (16, 16, 16)
    patch: tuple = (2, 2, 2)
    heads: int = 2
    ff_hidden: int = 32
    fusion_heads: int = 1
    c_t: int = 64
    c_s: int = 64
    structure_channels: tuple = (4, 8, 8)
    use_structure: bool = True
    k: int = 32
    n_points: int = 1024
    embed_dim: int = 16
    distance_heads: int = 2
    c_d: int = 16
    coord_scale: float = 10.0
    squared_distance: bool = True
    fusion_mode: str = "cross"
    distance_mode: str = "neural"

    def __post_init__(self):
        for name in ("input_dims", "block_channels", "lift_channels", "patch", "structure_channels"):
            setattr(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    @property
    def n_blocks(self):
        return len(self.block_channels)

    def block_dims(self):
        """Spatial dims entering each texture block, plus the final output dims."""
        dims = [tuple(d // self.input_pool for d in self.input_dims)]
        for _ in range(self.n_blocks):
            dims.append(tuple(d // 2 for d in dims[-1]))
        return dims

    def block_patches(self):
        """Patch dims per block, clipped to the block's feature-map dims."""
        return [tuple(min(p, n // 2) for p, n in zip(self.patch, d)) for d in self.block_dims()[:-1]]

    @property
    def token_length(self):
        return self.block_dims()[-1][2]

    @property
    def token_channels(self):
        return self.lift_channels[-1]

    def validate(self):
        if self.phase_count != 3:
            raise ConfigurationError("exactly three CT phases are supported")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.distance_mode not in DISTANCE_MODES:
            raise ConfigurationError(f"distance_mode must be one of {DISTANCE_MODES}")
        if len(self.lift_channels) != len(self.block_channels):
            raise ConfigurationError("block_channels and lift_channels must have equal length")
        if min(self.c_t, self.c_s, self.k, self.c_d, self.embed_dim) <= 0:
            raise ConfigurationError("feature widths and k must be positive")
        if any(d % self.input_pool for d in self.input_dims):
            raise ConfigurationError(f"input_pool {self.input_pool} does not divide {self.input_dims}")
        dims = self.block_dims()
        for b, (d, patch) in enumerate(zip(dims[:-1], self.block_patches())):
            if any(n % 2 or n < 2 for n in d):
                raise ConfigurationError(f"block {b} input dims {d} are not divisible by 2")
            after = tuple(n // 2 for n in d)
            if any(n % p for n, p in zip(after, patch)):
                raise ConfigurationError(f"block {b} dims {after} are not divisible by patch {patch}")
        for c in self.lift_channels:
            if c % self.heads:
                raise ConfigurationError(f"lift width {c} is not divisible by {self.heads} heads")
        if self.token_length % self.fusion_heads:
            raise ConfigurationError("token length must be divisible by fusion_heads")
        if self.embed_dim % self.distance_heads:
            raise ConfigurationError("embed_dim must be divisible by distance_heads")
        s = tuple(d // self.input_pool for d in self.input_dims)
        for _ in self.structure_channels:
            if any(n % 2 for n in s):
                raise ConfigurationError("structure branch dims are not divisible by 2")
            s = tuple(n // 2 for n in s)

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)
