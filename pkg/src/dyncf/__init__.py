"""Dynamic low-rank matrix and tensor recommenders for streaming implicit feedback."""

from .psirec import SvdState
from .seq_tensor import AttentionSpec, EventLog, IdMap
from .streaming import ModelConfig, make_model
from .tirec import TuckerState

__version__ = "0.1.0"

__all__ = ["AttentionSpec", "EventLog", "IdMap", "ModelConfig", "SvdState", "TuckerState", "make_model"]
