"""Encrypted projected FGM on two non-colluding servers.

``S1`` holds the problem data and runs the iteration on ciphertexts under
``pk1``; ``S2`` holds ``sk1`` and helps with truncation and projection but
only ever decrypts blinded values.  The client encrypts its state and box,
and receives the input re-encrypted under its own key ``pk2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..fixedpoint import decode, from_residue
from ..mpc import QuantizedQP, server_coefficients
from ..paillier import Ciphertext, PaillierPublicKey, PaillierSecretKey
from .channel import Endpoint, Tag, make_pair, run_parties
from .client_server import momentum_step, server_gradient_step
from .session import (BlindSource, PartyState, SessionConfig, TwoServerKeys, pack, party_rng,
                      unpack)
from .subprotocols import (extremum_s1, extremum_s2, reencrypt_s1, reencrypt_s2, truncate_s1,
                           truncate_s2)
from .transcript import BlindLog, Transcript

Observer = Callable[[str, int, list[Ciphertext]], None]


class SsClient:
    def __init__(self, keys: TwoServerKeys, x_raw, lo, hi, session: SessionConfig, rng):
        self.keys = keys
        self.x_raw, self.lo, self.hi = x_raw, lo, hi
        self.session = session
        self.rng = rng

    def run(self, ep: Endpoint) -> np.ndarray:
        pk1 = self.keys.pk1
        ep.send(Tag.STATE, pack(pk1.encrypt_signed(int(v), self.rng) for v in self.x_raw))
        ep.send(Tag.BOX, pack([pk1.encrypt_signed(int(v), self.rng) for v in self.hi]
                              + [pk1.encrypt_signed(-int(v), self.rng) for v in self.lo]))
        sk2 = self.keys.sk2
        out = unpack(ep.recv(Tag.OUTPUT), self.keys.pk2)
        return np.array([from_residue(sk2.decrypt(c), sk2.public_key.n, i)
                         for i, c in enumerate(out)], dtype=object)


class SsServer1:
    def __init__(self, pk1: PaillierPublicKey, pk2: PaillierPublicKey, qq: QuantizedQP,
                 session: SessionConfig, rng, trunc_rng, state: PartyState | None = None,
                 observer: Observer | None = None, momentum: bool = True):
        self.pk1, self.pk2 = pk1, pk2
        self.G, self.Fx_mult = server_coefficients(qq)
        self.eta = qq.eta if momentum else 0
        self.cfg = qq.cfg
        self.m = qq.qp.m
        self.dim = qq.dim
        self.session = session
        self.rng = rng
        self.log = BlindLog()
        self.blinds = BlindSource(rng, self.log)
        self.trunc_blinds = BlindSource(trunc_rng, self.log)
        self.state = state or PartyState()
        self.observer = observer

    def _observe(self, what, k, cts):
        if self.observer is not None:
            self.observer(what, k, cts)

    def initial_iterate(self) -> list[Ciphertext]:
        if self.session.cold_start or self.state.U_w is None:
            return [self.pk1.encrypt_zero(self.rng) for _ in range(self.dim)]
        return list(self.state.U_w[self.m:]) + [self.pk1.encrypt_zero(self.rng) for _ in range(self.m)]

    def run(self, ep_c: Endpoint, ep_s2: Endpoint) -> PartyState:
        pk1 = self.pk1
        cfg, lam, l = self.cfg, self.session.lam, self.session.l
        one = cfg.one
        x = unpack(ep_c.recv(Tag.STATE), pk1)
        box = unpack(ep_c.recv(Tag.BOX), pk1)
        hi, neg_lo = box[:self.dim], box[self.dim:]
        U = self.initial_iterate()
        z = [c * one for c in U]
        for k in range(self.session.K):
            t = server_gradient_step(z, x, self.G, self.Fx_mult)
            self._observe("t", k, t)
            t = truncate_s1(ep_s2, pk1, t, cfg.l_i, cfg.l_f, lam, self.trunc_blinds)
            self._observe("truncated", k, t)
            U_new = extremum_s1(ep_s2, pk1, t, hi, l, lam, self.rng, self.blinds)
            U_new = extremum_s1(ep_s2, pk1, U_new, neg_lo, l, lam, self.rng, self.blinds)
            self._observe("U", k + 1, U_new)
            z = momentum_step(U_new, U, self.eta, one)
            U = U_new
        u2 = reencrypt_s1(ep_s2, pk1, self.pk2, U[:self.m], l, lam, self.blinds)
        ep_c.send(Tag.OUTPUT, pack(u2))
        return PartyState(U_w=U, extra={"blind_log": self.log})


class SsServer2:
    def __init__(self, sk1: PaillierSecretKey, pk2: PaillierPublicKey, session: SessionConfig, rng):
        self.sk1, self.pk2 = sk1, pk2
        self.session = session
        self.rng = rng

    def run(self, ep: Endpoint):
        s = self.session
        for _ in range(s.K):
            truncate_s2(ep, self.sk1, s.cfg.l_f, self.rng)
            extremum_s2(ep, self.sk1, "min", s.l, self.rng, s.audit)
            extremum_s2(ep, self.sk1, "max", s.l, self.rng, s.audit)
        reencrypt_s2(ep, self.sk1, self.pk2, self.rng)


@dataclass
class SsResult:
    u: np.ndarray
    u_raw: np.ndarray
    server_state: PartyState
    transcripts: dict[str, Transcript]
    blind_log: BlindLog
    bytes_sent: dict[str, int] = field(default_factory=dict)


def protocol2_run(qq: QuantizedQP, x, keys: TwoServerKeys, session: SessionConfig, seed=0,
                  server_state: PartyState | None = None, transport: str = "inproc",
                  observer: Observer | None = None, trunc_seed=None,
                  momentum: bool = True) -> SsResult:
    """One MPC time step of the two-server protocol.

    ``trunc_seed`` seeds S1's truncation blinds on their own stream so a
    plaintext run of :func:`encmpc.mpc.fgm_fixed` with ``variant='ss'`` can
    reproduce the same carries.
    """
    session.check_key(keys.pk1, "ss")
    session.check_key(keys.pk2, "ss")
    if session.cfg != qq.cfg:
        raise ValueError("session and quantized problem use different fixed-point configs")
    x = np.asarray(x)
    x_raw = x if x.dtype == object else qq.encode_state(x)
    sid = str(seed)
    ep_c, ep_1c = make_pair("client", "S1", transport, sid)
    ep_12, ep_2 = make_pair("S1", "S2", transport, sid)
    s1_log = Transcript("S1")
    ep_1c.transcript = s1_log
    ep_12.transcript = s1_log
    client = SsClient(keys, x_raw, qq.lo, qq.hi, session, party_rng(seed, "client"))
    trunc_rng = party_rng(seed if trunc_seed is None else trunc_seed, "S1-truncate")
    s1 = SsServer1(keys.pk1, keys.pk2, qq, session, party_rng(seed, "S1"), trunc_rng,
                   server_state, observer, momentum)
    s2 = SsServer2(keys.sk1, keys.pk2, session, party_rng(seed, "S2"))
    eps = [ep_c, ep_1c, ep_12, ep_2]
    try:
        res = run_parties({"client": lambda: client.run(ep_c),
                           "S1": lambda: s1.run(ep_1c, ep_12),
                           "S2": lambda: s2.run(ep_2)}, eps)
    finally:
        for ep in eps:
            ep.close()
    u_raw = res["client"]
    return SsResult(decode(u_raw, qq.cfg), u_raw, res["S1"],
                    {"client": ep_c.transcript, "S1": s1_log, "S2": ep_2.transcript}, s1.log,
                    {"client": ep_c.bytes_sent, "S1": ep_1c.bytes_sent + ep_12.bytes_sent,
                     "S2": ep_2.bytes_sent})
