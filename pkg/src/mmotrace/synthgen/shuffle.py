"""Reorder and duplicate TCP segments of a generated pcap (reassembly test vectors)."""

from __future__ import annotations

import random
from pathlib import Path

from ..capture import LINKTYPE_ETHERNET, LINKTYPE_RAW, PcapWriter, iter_raw_records, pcap_link_type


def _is_tcp(frame: bytes, link_type: int) -> bool:
    if link_type == LINKTYPE_ETHERNET:
        if len(frame) < 14 or frame[12:14] != b"\x08\x00":
            return False
        frame = frame[14:]
    elif link_type != LINKTYPE_RAW:
        return False
    return len(frame) >= 20 and frame[0] >> 4 == 4 and frame[9] == 6


def shuffle_segments(src: str | Path, dst: str | Path, seed: int, window: int = 8,
                     dup_rate: float = 0.01) -> int:
    """Copy ``src`` to ``dst`` with records permuted inside consecutive blocks of ``window``.

    Each TCP record is duplicated with probability ``dup_rate``; the copy keeps
    its original timestamp. Records keep their own timestamps, so the file is
    no longer in time order. Returns the number of duplicates written.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if not 0 <= dup_rate <= 1:
        raise ValueError("dup_rate must be in [0, 1]")
    rng = random.Random(seed)
    link = pcap_link_type(src)
    records: list[tuple[int, bytes]] = []
    dups = 0
    for rec in iter_raw_records(src):
        records.append(rec)
        if dup_rate and _is_tcp(rec[1], link) and rng.random() < dup_rate:
            records.append(rec)
            dups += 1
    with PcapWriter(dst, link) as w:
        for i in range(0, len(records), window):
            block = records[i:i + window]
            if window > 1:
                rng.shuffle(block)
            for ts, frame in block:
                w.write(ts, frame)
    return dups
