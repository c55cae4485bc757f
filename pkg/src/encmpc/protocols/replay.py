"""Recording sessions and replaying them against the deterministic parties."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..mpc import QuantizedQP
from ..paillier import PaillierPublicKey, PaillierSecretKey
from .client_server import protocol1_run
from .session import SessionConfig, TwoServerKeys
from .transcript import Divergence, Transcript, first_divergence


@dataclass(frozen=True)
class SessionSpec:
    """Everything needed to rerun one protocol session."""
    variant: str
    qq: QuantizedQP
    x: np.ndarray
    session: SessionConfig
    seed: object
    pk: PaillierPublicKey | None = None
    sk: PaillierSecretKey | None = None
    keys: TwoServerKeys | None = None


@dataclass
class SessionRecord:
    spec: SessionSpec
    transcripts: dict[str, Transcript]
    result: object


def run_session(spec: SessionSpec) -> SessionRecord:
    if spec.variant == "cs":
        res = protocol1_run(spec.qq, spec.x, spec.pk, spec.sk, spec.session, seed=spec.seed)
    elif spec.variant == "ss":
        from .two_server import protocol2_run
        res = protocol2_run(spec.qq, spec.x, spec.keys, spec.session, seed=spec.seed)
    else:
        raise ValueError(f"unknown variant {spec.variant!r}")
    return SessionRecord(spec, res.transcripts, res)


record_transcript = run_session


def replay(record: SessionRecord, seed=None) -> Divergence | None:
    """Rerun the recorded session (optionally under another seed) and diff it."""
    spec = record.spec if seed is None else replace(record.spec, seed=seed)
    again = run_session(spec)
    return first_divergence(record.transcripts, again.transcripts)
