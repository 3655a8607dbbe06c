from .agent import EdgeAgent, UploadResult, WindowOutcome
from .config import EdgeConfig
from .links import CloudLink, InProcessLink, LinkError, TcpLink
from .spool import Spool, SpoolSegment

__all__ = [
    "EdgeAgent", "EdgeConfig", "Spool", "SpoolSegment", "UploadResult",
    "WindowOutcome", "CloudLink", "InProcessLink", "TcpLink", "LinkError",
]
