"""Encrypted projected FGM with one server and an assisting client.

The server holds the scaled problem data and only ever sees ciphertexts.
Each iteration it evaluates the gradient step homomorphically and the client
decrypts, truncates, projects and re-encrypts.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..fixedpoint import FixedConfig, OverflowBandError, clamp, decode, from_residue
from ..mpc import QuantizedQP, server_coefficients
from ..paillier import Ciphertext, PaillierPublicKey, PaillierSecretKey
from .channel import Endpoint, Tag, make_pair, run_parties
from .session import PartyState, SessionConfig, pack, party_rng, unpack
from .transcript import Transcript


def server_gradient_step(z: list[Ciphertext], x: list[Ciphertext], G: np.ndarray,
                         Fx_mult: np.ndarray) -> list[Ciphertext]:
    """``G (x) z  (+)  Fx_mult (x) x`` row by row."""
    pk = z[0].public_key if z else x[0].public_key
    out = []
    for i in range(G.shape[0]):
        acc = pk.trivial(0)
        for coef, c in zip(G[i], z):
            if coef:
                acc = acc + c * int(coef)
        for coef, c in zip(Fx_mult[i], x):
            if coef:
                acc = acc + c * int(coef)
        out.append(acc)
    return out


def client_project(sk: PaillierSecretKey, t: list[Ciphertext], lo: np.ndarray, hi: np.ndarray,
                   l_f: int) -> np.ndarray:
    """Decrypt scale-3 iterates, floor them to scale 1 and clamp to ``[-lo, hi]``."""
    n = sk.public_key.n
    raw = [from_residue(sk.decrypt(c), n, i) for i, c in enumerate(t)]
    truncated = np.array([v >> (2 * l_f) for v in raw], dtype=object)
    return clamp(truncated, -lo, hi)


def momentum_step(U_new: list[Ciphertext], U_old: list[Ciphertext], eta: int, one: int):
    return [a * (one + eta) + b * (-eta) if eta else a * one for a, b in zip(U_new, U_old)]


class CsServer:
    def __init__(self, pk: PaillierPublicKey, qq: QuantizedQP, session: SessionConfig,
                 rng, state: PartyState | None = None, momentum: bool = True):
        self.pk = pk
        self.G, self.Fx_mult = server_coefficients(qq)
        self.eta = qq.eta if momentum else 0
        self.cfg = qq.cfg
        self.m = qq.qp.m
        self.dim = qq.dim
        self.session = session
        self.rng = rng
        self.state = state or PartyState()

    def initial_iterate(self) -> list[Ciphertext]:
        if self.session.cold_start or self.state.U_w is None:
            return [self.pk.encrypt_zero(self.rng) for _ in range(self.dim)]
        return list(self.state.U_w[self.m:]) + [self.pk.encrypt_zero(self.rng) for _ in range(self.m)]

    def run(self, ep: Endpoint) -> PartyState:
        pk = self.pk
        one = self.cfg.one
        x = unpack(ep.recv(Tag.STATE), pk)
        U = self.initial_iterate()
        z = [c * one for c in U]
        for _ in range(self.session.K):
            t = server_gradient_step(z, x, self.G, self.Fx_mult)
            ep.send(Tag.ITERATE_T, pack(t))
            U_new = unpack(ep.recv(Tag.ITERATE_U), pk)
            z = momentum_step(U_new, U, self.eta, one)
            U = U_new
        return PartyState(U_w=U)


class CsClient:
    def __init__(self, pk: PaillierPublicKey, sk: PaillierSecretKey, x_raw: np.ndarray,
                 lo: np.ndarray, hi: np.ndarray, cfg: FixedConfig, session: SessionConfig, rng):
        self.pk, self.sk = pk, sk
        self.x_raw = x_raw
        self.lo, self.hi = lo, hi
        self.cfg = cfg
        self.session = session
        self.rng = rng
        self.iterates: list[np.ndarray] = []

    def run(self, ep: Endpoint) -> np.ndarray:
        pk = self.pk
        ep.send(Tag.STATE, pack(pk.encrypt_signed(int(v), self.rng) for v in self.x_raw))
        U = None
        for _ in range(self.session.K):
            t = unpack(ep.recv(Tag.ITERATE_T), pk)
            try:
                U = client_project(self.sk, t, self.lo, self.hi, self.cfg.l_f)
            except OverflowBandError:
                ep.abort("overflow detected")
                raise
            self.iterates.append(U)
            ep.send(Tag.ITERATE_U, pack(pk.encrypt_signed(int(v), self.rng) for v in U))
        return U


@dataclass
class CsResult:
    u: np.ndarray
    u_raw: np.ndarray
    U_raw: np.ndarray
    iterates: list[np.ndarray]
    server_state: PartyState
    transcripts: dict[str, Transcript]
    bytes_sent: dict[str, int]


def protocol1_run(qq: QuantizedQP, x, pk: PaillierPublicKey, sk: PaillierSecretKey,
                  session: SessionConfig, seed=0, server_state: PartyState | None = None,
                  transport: str = "inproc", momentum: bool = True) -> CsResult:
    """One MPC time step of the client-server protocol."""
    session.check_key(pk, "cs")
    if session.cfg != qq.cfg:
        raise ValueError("session and quantized problem use different fixed-point configs")
    x = np.asarray(x)
    x_raw = x if x.dtype == object else qq.encode_state(x)
    ep_c, ep_s = make_pair("client", "server", transport, session_id=str(seed))
    client = CsClient(pk, sk, x_raw, qq.lo, qq.hi, qq.cfg, session, party_rng(seed, "client"))
    server = CsServer(pk, qq, session, party_rng(seed, "server"), server_state, momentum)
    try:
        res = run_parties({"client": lambda: client.run(ep_c), "server": lambda: server.run(ep_s)},
                          [ep_c, ep_s])
    finally:
        ep_c.close()
        ep_s.close()
    U = res["client"]
    m = qq.qp.m
    return CsResult(decode(U[:m], qq.cfg), U[:m], U, client.iterates, res["server"],
                    {"client": ep_c.transcript, "server": ep_s.transcript},
                    {"client": ep_c.bytes_sent, "server": ep_s.bytes_sent})
