"""Per-role message transcripts and the checks run over them."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field


@dataclass
class TranscriptEntry:
    direction: str
    peer: str
    tag: str
    payload: bytes
    seq: int
    view: list[int] | None = None

    def to_json(self) -> dict:
        d = {"dir": self.direction, "peer": self.peer, "tag": self.tag, "payload": self.payload.hex()}
        if self.view is not None:
            d["view"] = [hex(v) for v in self.view]
        return d


@dataclass
class Transcript:
    role: str
    entries: list[TranscriptEntry] = field(default_factory=list)

    def extend(self, other: "Transcript"):
        self.entries.extend(other.entries)

    def sizes(self) -> list[tuple[str, str, int]]:
        return [(e.direction, e.tag, len(e.payload)) for e in self.entries]

    def dump_jsonl(self, fh):
        for e in self.entries:
            fh.write(json.dumps({"role": self.role, **e.to_json()}) + "\n")

    def views(self, tag: str | None = None) -> list[list[int]]:
        return [e.view for e in self.entries if e.view is not None and (tag is None or e.tag == tag)]


def merge(role: str, *parts: Transcript) -> Transcript:
    """Interleave nothing: one role's channels concatenated in channel order."""
    out = Transcript(role)
    for p in parts:
        out.extend(p)
    return out


@dataclass
class Divergence:
    role: str
    index: int
    reason: str


def first_divergence(a: dict[str, Transcript], b: dict[str, Transcript]) -> Divergence | None:
    """Compare two sessions' transcripts role by role, byte for byte."""
    for role in sorted(set(a) | set(b)):
        if role not in a or role not in b:
            return Divergence(role, 0, "role missing from one session")
        ea, eb = a[role].entries, b[role].entries
        for i, (x, y) in enumerate(zip(ea, eb)):
            if (x.direction, x.peer, x.tag, x.payload) != (y.direction, y.peer, y.tag, y.payload):
                return Divergence(role, i, f"{x.tag} differs from {y.tag}" if x.tag != y.tag
                                  else f"{x.tag} payload differs")
        if len(ea) != len(eb):
            return Divergence(role, min(len(ea), len(eb)), "transcript lengths differ")
    return None


@dataclass
class BlindRecord:
    purpose: str
    value: int
    bits: int          # blinds are drawn from (0, 2**bits)
    data_bits: int     # width of the value being hidden


class BlindLog:
    """Every additive blind a role draws, with the range it was drawn from."""

    def __init__(self):
        self.records: list[BlindRecord] = []

    def add(self, purpose: str, value: int, bits: int, data_bits: int):
        self.records.append(BlindRecord(purpose, value, bits, data_bits))


def reused_blinds(log: BlindLog) -> list[int]:
    counts = Counter(r.value for r in log.records)
    return sorted(v for v, c in counts.items() if c > 1)


def thin_blinds(log: BlindLog, lam: int) -> list[BlindRecord]:
    """Blinds whose range does not exceed the hidden data by ``lam`` bits."""
    return [r for r in log.records if r.bits < r.data_bits + lam or r.value.bit_length() > r.bits]


def bit_length_profile(transcript: Transcript, tag: str | None = None) -> Counter:
    return Counter(v.bit_length() for view in transcript.views(tag) for v in view)
