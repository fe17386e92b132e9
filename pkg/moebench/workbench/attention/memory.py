"""
KV-cache memory model per attention mechanism.

With bytes_per_element=2 (bf16) and share_period=2 the results are the
bf16 byte counts 4*n_h*d_h*l (MHA), 4*n_g*d_h*l (GQA), 4*d_h*l (MQA),
2*n_h*d_h*l (CLA) and 2*n_g*d_h*l (GQA+CLA).
"""

from returns.result import Result, Success, Failure
from workbench.shared.exceptions import InvalidInputError
from .models import KVCacheLayout, Mechanism


def parse_mechanism(mechanism: str | Mechanism) -> Result[Mechanism, InvalidInputError]:
    try:
        return Success(Mechanism(str(mechanism).upper().replace("+", "_")))
    except ValueError:
        return Failure(InvalidInputError(
            "attention.unknown_mechanism",
            f"unknown mechanism '{mechanism}', expected one of {', '.join(Mechanism)}",
        ))


def kv_bytes_per_token(layout: KVCacheLayout, mechanism: str | Mechanism) -> Result[int, InvalidInputError]:
    return parse_mechanism(mechanism).map(lambda parsed: _bytes_per_token(layout, parsed))


def _bytes_per_token(layout: KVCacheLayout, mechanism: Mechanism) -> int:
    kv_heads = {
        Mechanism.MHA: layout.n_h,
        Mechanism.GQA: layout.n_g,
        Mechanism.MQA: 1,
        Mechanism.CLA: layout.n_h,
        Mechanism.GQA_CLA: layout.n_g,
    }[mechanism]
    layers = layout.cache_layers if mechanism in (Mechanism.CLA, Mechanism.GQA_CLA) else layout.l
    # K and V
    return 2 * kv_heads * layout.d_h * layers * layout.bytes_per_element


def kv_savings(layout: KVCacheLayout, mechanism: str | Mechanism) -> Result[float, InvalidInputError]:
    """ Fraction of the MHA cache a mechanism saves. """
    mha = _bytes_per_token(layout, Mechanism.MHA)
    return kv_bytes_per_token(layout, mechanism).map(lambda size: 1 - size / mha)


def kv_bytes_for_sequence(
    layout: KVCacheLayout,
    mechanism: str | Mechanism,
    seq_len: int,
    batch: int = 1,
) -> Result[int, InvalidInputError]:

    if seq_len < 0 or batch < 1:
        return Failure(InvalidInputError("attention.invalid_sequence", "seq_len must be >= 0 and batch >= 1"))

    return kv_bytes_per_token(layout, mechanism).map(lambda size: size * seq_len * batch)
