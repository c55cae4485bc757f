"""Two-server building blocks.

Each block is split into the half run by the data server ``S1`` (holds
ciphertexts under ``pk1``) and the half run by the key server ``S2`` (holds
``sk1``).  Halves talk only through an :class:`Endpoint` and process whole
vectors per message, so the number and size of messages depend on vector
length and bit widths only.
"""
from __future__ import annotations

from ..paillier import Ciphertext, PaillierPublicKey, PaillierSecretKey
from .channel import Endpoint, Tag
from .session import BlindSource, pack, unpack

# ---------------------------------------------------------------- truncation


def truncate_s1(ep: Endpoint, pk: PaillierPublicKey, t: list[Ciphertext], l_i: int, l_f: int,
                lam: int, blinds: BlindSource) -> list[Ciphertext]:
    """Scale-3 ciphertexts to scale 1, floor plus a possible carry of one unit."""
    shift = 2 * l_f
    offset = 1 << (l_i + 3 * l_f)
    data_bits = l_i + 3 * l_f + 1
    rs = [blinds.draw("truncate", data_bits + lam, data_bits) for _ in t]
    ep.send(Tag.TRUNC_REQ, pack(c + (offset + r) for c, r in zip(t, rs)))
    back = unpack(ep.recv(Tag.TRUNC_RESP), pk)
    return [c - ((r >> shift) + (offset >> shift)) for c, r in zip(back, rs)]


def truncate_s2(ep: Endpoint, sk: PaillierSecretKey, l_f: int, rng):
    pk = sk.public_key
    ds = [sk.decrypt(c) for c in unpack(ep.recv(Tag.TRUNC_REQ), pk)]
    ep.note_view(ds)
    ep.send(Tag.TRUNC_RESP, pack(pk.encrypt(d >> (2 * l_f), rng) for d in ds))


# ---------------------------------------------------------------- comparison


def compare_s1(ep: Endpoint, pk: PaillierPublicKey, a: list[Ciphertext], b: list[Ciphertext],
               l: int, lam: int, rng, blinds: BlindSource):
    """S1 half of the comparison; S2 learns ``a_i <= b_i`` for inputs in [0, 2**l)."""
    top = 1 << l
    rs = [blinds.draw("compare", l + 1 + lam, l + 1) for _ in a]
    # z = 2^l + b - a has bit l set exactly when a <= b
    ep.send(Tag.CMP_D, pack(bi - ai + (top + r) for ai, bi, r in zip(a, b, rs)))
    bits = unpack(ep.recv(Tag.CMP_BITS), pk)
    one = pk.trivial(1)
    out, flags = [], []
    for idx, r in enumerate(rs):
        d_bits = bits[idx * l:(idx + 1) * l]
        r_low = r & (top - 1)
        delta_a = rng.getrandbits(1)
        s = 1 - 2 * delta_a
        xors = [(one - d_bits[j]) if (r_low >> j) & 1 else d_bits[j] for j in range(l)]
        cs = []
        suffix = pk.trivial(0)
        for i in range(l - 1, -1, -1):
            r_i = (r_low >> i) & 1
            cs.append(suffix * 3 - d_bits[i] + (s + r_i))
            suffix = suffix + xors[i]
        # the extra term is zero only on equality when delta_a = 0
        cs.append(suffix + delta_a)
        blinded = [c * pk.random_unit(rng) for c in cs]
        rng.shuffle(blinded)
        out.extend(blinded)
        flags.append(((r >> l) & 1) ^ delta_a ^ 1)
    ep.send(Tag.CMP_C, pack(out))
    ep.send(Tag.CMP_E, bytes(flags))


def compare_s2(ep: Endpoint, sk: PaillierSecretKey, l: int, rng) -> list[int]:
    pk = sk.public_key
    top = 1 << l
    ds = [sk.decrypt(c) for c in unpack(ep.recv(Tag.CMP_D), pk)]
    ep.note_view(ds)
    bits = []
    for d in ds:
        low = d & (top - 1)
        bits.extend(pk.encrypt((low >> j) & 1, rng) for j in range(l))
    ep.send(Tag.CMP_BITS, pack(bits))
    cs = [sk.decrypt(c) for c in unpack(ep.recv(Tag.CMP_C), pk)]
    ep.note_view(cs)
    flags = ep.recv(Tag.CMP_E)
    betas = []
    for idx, d in enumerate(ds):
        delta_b = int(any(v == 0 for v in cs[idx * (l + 1):(idx + 1) * (l + 1)]))
        betas.append(((d >> l) & 1) ^ delta_b ^ flags[idx])
    return betas


# ------------------------------------------------------------ min / max


def extremum_s1(ep: Endpoint, pk: PaillierPublicKey, a: list[Ciphertext], b: list[Ciphertext],
                l: int, lam: int, rng, blinds: BlindSource) -> list[Ciphertext]:
    """Fresh encryptions of the elementwise min (or max) of signed scale-1 inputs.

    Which of min/max is taken is decided by S2's half; S1's steps are the same.
    """
    half = 1 << (l - 1)
    a = [c + half for c in a]
    b = [c + half for c in b]
    swaps = [rng.getrandbits(1) for _ in a]
    first = [bi if sw else ai for ai, bi, sw in zip(a, b, swaps)]
    second = [ai if sw else bi for ai, bi, sw in zip(a, b, swaps)]
    compare_s1(ep, pk, first, second, l, lam, rng, blinds)
    rs = [blinds.draw("select", l + lam, l) for _ in a]
    ss = [blinds.draw("select", l + lam, l) for _ in a]
    ep.send(Tag.SEL_REQ, pack([c + r for c, r in zip(first, rs)] + [c + s for c, s in zip(second, ss)]))
    back = unpack(ep.recv(Tag.SEL_RESP), pk)
    k = len(a)
    sigma, v = back[:k], back[k:]
    # v - r if the first input was chosen (sigma = 1), v - s otherwise
    return [vi + sg * (si - ri) - (si + half) for vi, sg, ri, si in zip(v, sigma, rs, ss)]


def extremum_s2(ep: Endpoint, sk: PaillierSecretKey, mode: str, l: int, rng,
                audit: bool = False):
    if mode not in ("min", "max"):
        raise ValueError(f"mode must be min or max, not {mode!r}")
    pk = sk.public_key
    betas = compare_s2(ep, sk, l, rng)
    req = unpack(ep.recv(Tag.SEL_REQ), pk)
    if audit:
        ep.note_view(sk.decrypt(c) for c in req)
    k = len(betas)
    sigma = [b if mode == "min" else 1 - b for b in betas]
    chosen = [req[i] if sigma[i] else req[k + i] for i in range(k)]
    ep.send(Tag.SEL_RESP, pack([pk.encrypt(s, rng) for s in sigma]
                               + [c + pk.encrypt_zero(rng) for c in chosen]))


# --------------------------------------------------- output re-encryption


def reencrypt_s1(ep: Endpoint, pk1: PaillierPublicKey, pk2: PaillierPublicKey,
                 u: list[Ciphertext], l: int, lam: int, blinds: BlindSource) -> list[Ciphertext]:
    """Move signed ciphertexts from ``pk1`` to ``pk2`` through a blinded hop via S2."""
    half = 1 << (l - 1)
    rhos = [blinds.draw("output", l + lam, l) for _ in u]
    ep.send(Tag.OUT_REQ, pack(c + (half + rho) for c, rho in zip(u, rhos)))
    back = unpack(ep.recv(Tag.OUT_RESP), pk2)
    return [c - (half + rho) for c, rho in zip(back, rhos)]


def reencrypt_s2(ep: Endpoint, sk1: PaillierSecretKey, pk2: PaillierPublicKey, rng):
    ws = [sk1.decrypt(c) for c in unpack(ep.recv(Tag.OUT_REQ), sk1.public_key)]
    ep.note_view(ws)
    ep.send(Tag.OUT_RESP, pack(pk2.encrypt(w, rng) for w in ws))
