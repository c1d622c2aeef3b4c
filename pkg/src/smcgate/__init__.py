"""Privacy-preserving aggregation gateway over additively secret-shared sensor data."""

from .config import Params
from .field import M61, FieldElement, FixedPointCodec, decode_fixed, encode_fixed
from .gateway import Gateway
from .request import DataRequest
from .scenario import Scenario, run_sim
from .source import SourceNode

__all__ = [
    "M61",
    "DataRequest",
    "FieldElement",
    "FixedPointCodec",
    "Gateway",
    "Params",
    "Scenario",
    "SourceNode",
    "decode_fixed",
    "encode_fixed",
    "run_sim",
]
