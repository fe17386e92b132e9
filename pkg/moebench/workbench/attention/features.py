from logging import Logger, getLogger
from dataclasses import dataclass
from returns.result import Result, Success
from returns.pipeline import is_successful
from workbench.shared.exceptions import Error
from .models import KVCacheLayout, Mechanism
from .memory import kv_bytes_per_token, kv_bytes_for_sequence, kv_savings


@dataclass(frozen=True)
class KVReportRow:
    mechanism: Mechanism
    bytes_per_token: int
    savings_vs_mha: float
    bytes_for_sequence: int

    def to_dict(self) -> dict:
        return {
            "mechanism": str(self.mechanism),
            "bytes_per_token": self.bytes_per_token,
            "savings_vs_mha": self.savings_vs_mha,
            "bytes_for_sequence": self.bytes_for_sequence,
        }


class BuildKVReport:
    """
    KV cache memory of every mechanism for one layout.
    """

    def __init__(self, logger: Logger = getLogger("kv-attention")):
        self._logger = logger

    def execute(self, layout: KVCacheLayout, seq_len: int = 1) -> Result[list[KVReportRow], Error]:
        rows = []
        for mechanism in Mechanism:
            per_token = kv_bytes_per_token(layout, mechanism)
            savings = kv_savings(layout, mechanism)
            sequence = kv_bytes_for_sequence(layout, mechanism, seq_len)
            for result in (per_token, savings, sequence):
                if not is_successful(result):
                    return result
            rows.append(KVReportRow(mechanism, per_token.unwrap(), savings.unwrap(), sequence.unwrap()))
        self._logger.debug("kv report for %s at seq_len=%d", layout, seq_len)
        return Success(rows)
