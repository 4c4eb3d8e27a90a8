"""Discrete architecture space, integer-gene encoding and variation operators.

A gene is a fixed-length integer vector laid out as::

    [resolution | depth per stage | kernel per (stage, block) | expansion per (stage, block)]

Kernel and expansion genes exist for every block up to the maximum depth.
Positions beyond a stage's chosen depth are inert: they are carried through
variation but ignored by :func:`decode`.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidGene

Gene = tuple[int, ...]


def _check_choices(name: str, values: Sequence[int]) -> None:
    if len(values) == 0:
        raise ValueError(f"{name} must be non-empty")
    if any(int(v) != v or v <= 0 for v in values):
        raise ValueError(f"{name} must contain positive integers, got {values}")
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly increasing, got {values}")


@dataclass(frozen=True)
class SearchSpaceDef:
    resolution_choices: tuple[int, ...] = (16, 24, 32)
    stage_count: int = 3
    depth_choices: tuple[int, ...] = (1, 2, 3)
    kernel_choices: tuple[int, ...] = (3, 5)
    expansion_choices: tuple[int, ...] = (1, 2, 4)
    base_channels: tuple[int, ...] = (4, 8, 16)
    in_channels: int = 3
    num_classes: int = 2

    def __post_init__(self):
        for name in ("resolution_choices", "depth_choices", "kernel_choices",
                     "expansion_choices", "base_channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        _check_choices("resolution_choices", self.resolution_choices)
        _check_choices("depth_choices", self.depth_choices)
        _check_choices("kernel_choices", self.kernel_choices)
        _check_choices("expansion_choices", self.expansion_choices)
        if self.stage_count < 1:
            raise ValueError("stage_count must be >= 1")
        if len(self.base_channels) != self.stage_count:
            raise ValueError("base_channels needs one width per stage")
        if any(c <= 0 for c in self.base_channels):
            raise ValueError("base_channels must be positive")
        if self.in_channels < 1 or self.num_classes < 2:
            raise ValueError("need in_channels >= 1 and num_classes >= 2")

    @property
    def max_depth(self) -> int:
        return self.depth_choices[-1]

    @property
    def gene_length(self) -> int:
        return 1 + self.stage_count + 2 * self.stage_count * self.max_depth

    def domain_sizes(self) -> np.ndarray:
        """Number of admissible indices at each gene position."""
        blocks = self.stage_count * self.max_depth
        return np.array(
            [len(self.resolution_choices)]
            + [len(self.depth_choices)] * self.stage_count
            + [len(self.kernel_choices)] * blocks
            + [len(self.expansion_choices)] * blocks,
            dtype=np.int64,
        )

    def kernel_pos(self, stage: int, block: int) -> int:
        return 1 + self.stage_count + stage * self.max_depth + block

    def expansion_pos(self, stage: int, block: int) -> int:
        return 1 + self.stage_count + self.stage_count * self.max_depth + stage * self.max_depth + block

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "SearchSpaceDef":
        return cls(**data)

    @classmethod
    def full_size(cls) -> "SearchSpaceDef":
        """Full-scale gene dimensions: 25 resolutions, depths 2-4, kernels 3/5/7, expansions 3/4/6."""
        return cls(
            resolution_choices=tuple(range(128, 225, 4)),
            stage_count=5,
            depth_choices=(2, 3, 4),
            kernel_choices=(3, 5, 7),
            expansion_choices=(3, 4, 6),
            base_channels=(24, 40, 80, 112, 160),
            num_classes=10,
        )


@dataclass(frozen=True)
class StageConfig:
    depth: int
    kernels: tuple[int, ...]
    expansions: tuple[int, ...]
    channels: int


@dataclass(frozen=True)
class NetworkConfig:
    input_resolution: int
    stages: tuple[StageConfig, ...]
    num_classes: int
    in_channels: int = 3

    def to_dict(self) -> dict:
        return {
            "input_resolution": self.input_resolution,
            "in_channels": self.in_channels,
            "num_classes": self.num_classes,
            "stages": [
                {"depth": s.depth, "kernels": list(s.kernels),
                 "expansions": list(s.expansions), "channels": s.channels}
                for s in self.stages
            ],
        }


def validate(space: SearchSpaceDef, gene: Sequence[int]) -> Gene:
    g = tuple(int(v) for v in gene)
    if len(g) != space.gene_length:
        raise InvalidGene(f"gene has length {len(g)}, expected {space.gene_length}")
    sizes = space.domain_sizes()
    for pos, (v, n) in enumerate(zip(g, sizes)):
        if not 0 <= v < n:
            raise InvalidGene(f"gene[{pos}] = {v} outside [0, {n})")
    return g


def sample_uniform(space: SearchSpaceDef, rng_seed) -> Gene:
    rng = np.random.default_rng(rng_seed)
    return tuple(int(v) for v in rng.integers(0, space.domain_sizes()))


def decode(space: SearchSpaceDef, gene: Sequence[int]) -> NetworkConfig:
    g = validate(space, gene)
    stages = []
    for s in range(space.stage_count):
        depth = space.depth_choices[g[1 + s]]
        kernels = tuple(space.kernel_choices[g[space.kernel_pos(s, b)]] for b in range(depth))
        expansions = tuple(space.expansion_choices[g[space.expansion_pos(s, b)]] for b in range(depth))
        stages.append(StageConfig(depth, kernels, expansions, space.base_channels[s]))
    return NetworkConfig(
        input_resolution=space.resolution_choices[g[0]],
        stages=tuple(stages),
        num_classes=space.num_classes,
        in_channels=space.in_channels,
    )


def encode(space: SearchSpaceDef, config: NetworkConfig) -> Gene:
    """Inverse of :func:`decode`; inert positions are set to index 0."""
    if len(config.stages) != space.stage_count:
        raise InvalidGene("stage count does not match the space")
    try:
        g = [0] * space.gene_length
        g[0] = space.resolution_choices.index(config.input_resolution)
        for s, stage in enumerate(config.stages):
            if stage.channels != space.base_channels[s]:
                raise InvalidGene(f"stage {s} width {stage.channels} not in the space")
            g[1 + s] = space.depth_choices.index(stage.depth)
            for b in range(stage.depth):
                g[space.kernel_pos(s, b)] = space.kernel_choices.index(stage.kernels[b])
                g[space.expansion_pos(s, b)] = space.expansion_choices.index(stage.expansions[b])
    except (ValueError, IndexError) as exc:
        raise InvalidGene(str(exc)) from exc
    return tuple(g)


def active_mask(space: SearchSpaceDef, gene: Sequence[int]) -> np.ndarray:
    """Boolean mask of the gene positions that influence :func:`decode`."""
    g = validate(space, gene)
    mask = np.zeros(space.gene_length, dtype=bool)
    mask[: 1 + space.stage_count] = True
    for s in range(space.stage_count):
        for b in range(space.depth_choices[g[1 + s]]):
            mask[space.kernel_pos(s, b)] = True
            mask[space.expansion_pos(s, b)] = True
    return mask


def mutate(space: SearchSpaceDef, gene: Sequence[int], per_gene_prob: float, rng_seed) -> Gene:
    if not 0.0 <= per_gene_prob <= 1.0:
        raise ValueError("per_gene_prob must lie in [0, 1]")
    g = np.array(validate(space, gene), dtype=np.int64)
    rng = np.random.default_rng(rng_seed)
    hit = rng.random(g.size) < per_gene_prob
    fresh = rng.integers(0, space.domain_sizes())
    g[hit] = fresh[hit]
    return tuple(int(v) for v in g)


def crossover(a: Sequence[int], b: Sequence[int], rng_seed) -> tuple[Gene, Gene]:
    """Uniform crossover: each position swaps between the children on a fair coin."""
    if len(a) != len(b):
        raise InvalidGene(f"parent lengths differ: {len(a)} vs {len(b)}")
    pa = np.asarray(a, dtype=np.int64)
    pb = np.asarray(b, dtype=np.int64)
    take_a = np.random.default_rng(rng_seed).random(pa.size) < 0.5
    c1 = np.where(take_a, pa, pb)
    c2 = np.where(take_a, pb, pa)
    return tuple(int(v) for v in c1), tuple(int(v) for v in c2)


def normalize(space: SearchSpaceDef, gene: Sequence[int]) -> np.ndarray:
    """Min-max scale gene indices to [0, 1]; single-choice positions map to 0."""
    sizes = space.domain_sizes()
    denom = np.maximum(sizes - 1, 1)
    return np.asarray(gene, dtype=float) / denom
