"""Passive analysis of World of Warcraft traffic in packet traces."""

from .capture import Flow, PacketRecord, Trace, read_trace, reassemble
from .dpd import Connection, DpdState, Kind, classify, detect
from .pipeline import Analysis, analyze

__version__ = "0.1.0"

__all__ = [
    "Flow", "PacketRecord", "Trace", "read_trace", "reassemble",
    "Connection", "DpdState", "Kind", "classify", "detect",
    "Analysis", "analyze",
]
