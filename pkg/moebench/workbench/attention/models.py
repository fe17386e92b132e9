import math
from enum import StrEnum
from dataclasses import dataclass, field
import numpy as np
from returns.result import Result, Success, Failure
from workbench.shared.exceptions import ValidationError


class Mechanism(StrEnum):
    MHA = "MHA"
    GQA = "GQA"
    MQA = "MQA"
    CLA = "CLA"
    GQA_CLA = "GQA_CLA"


@dataclass(frozen=True)
class KVCacheLayout:
    n_h: int
    n_g: int
    d_h: int
    l: int
    share_period: int = 2
    bytes_per_element: int = 2

    @classmethod
    def create(
        cls,
        n_h: int,
        n_g: int,
        d_h: int,
        l: int,
        share_period: int = 2,
        bytes_per_element: int = 2,
    ) -> Result["KVCacheLayout", ValidationError]:

        if min(n_h, n_g, d_h, l, bytes_per_element) < 1:
            return Failure(ValidationError("attention.invalid_layout", "n_h, n_g, d_h, l and bytes_per_element must be >= 1"))

        if n_g > n_h or n_h % n_g != 0:
            return Failure(ValidationError(
                "attention.invalid_kv_groups",
                "n_g must divide n_h (n_g <= n_h)",
                details={"n_h": n_h, "n_g": n_g},
            ))

        if share_period < 1:
            return Failure(ValidationError("attention.invalid_share_period", "share_period must be >= 1"))

        return Success(cls(n_h, n_g, d_h, l, share_period, bytes_per_element))

    @property
    def heads_per_group(self) -> int:
        return self.n_h // self.n_g

    @property
    def cache_layers(self) -> int:
        """ Layers that own a KV buffer; the last share group may be partial. """
        return math.ceil(self.l / self.share_period)

    def source_layer(self, layer: int) -> int:
        return layer - (layer % self.share_period)

    def is_source(self, layer: int) -> bool:
        return layer % self.share_period == 0

    def source_layers(self) -> list[int]:
        return list(range(0, self.l, self.share_period))


@dataclass(frozen=True)
class RopeParams:
    d_h: int
    base: float = 10000.0

    @classmethod
    def create(cls, d_h: int, base: float = 10000.0) -> Result["RopeParams", ValidationError]:

        if d_h < 2 or d_h % 2 != 0:
            return Failure(ValidationError("attention.odd_head_dim", "RoPE needs an even head dimension", details={"d_h": d_h}))

        if not base > 1 or not math.isfinite(base):
            return Failure(ValidationError("attention.invalid_rope_base", "RoPE base must be > 1", details={"base": base}))

        return Success(cls(d_h=int(d_h), base=float(base)))


@dataclass(eq=False)
class KVCache:
    """
    Keys and values of past positions, one buffer pair per source layer.

    Keys are stored without rotary encoding; attention rotates them by their
    position when reading. Single writer: an append must not overlap any
    read or another append.
    """

    layout: KVCacheLayout
    max_seq: int
    dtype: np.dtype = np.float64
    keys: dict[int, np.ndarray] = field(default_factory=dict)
    values: dict[int, np.ndarray] = field(default_factory=dict)
    lengths: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.layout.n_g, self.max_seq, self.layout.d_h)
        for layer in self.layout.source_layers():
            self.keys[layer] = np.zeros(shape, dtype=self.dtype)
            self.values[layer] = np.zeros(shape, dtype=self.dtype)
            self.lengths[layer] = 0

    def buffers(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """ The K/V buffers a layer reads; layers of one share group get the same objects. """
        source = self.layout.source_layer(layer)
        return self.keys[source], self.values[source]

    def length(self, layer: int) -> int:
        return self.lengths[self.layout.source_layer(layer)]

    def cached(self, layer: int) -> tuple[np.ndarray, np.ndarray]:
        """ Populated K/V of the layer's source, as (length, n_g, d_h) views. """
        keys, values = self.buffers(layer)
        length = self.length(layer)
        return keys[:, :length, :].transpose(1, 0, 2), values[:, :length, :].transpose(1, 0, 2)

    @property
    def accounted_bytes(self) -> int:
        """ Stored K and V scalars priced at layout.bytes_per_element. """
        per_position = 2 * self.layout.n_g * self.layout.d_h * self.layout.bytes_per_element
        return sum(self.lengths.values()) * per_position
