"""Run the two halves of a subprotocol against each other."""
import random

from encmpc.protocols import BlindSource, make_pair, run_parties


def run_halves(s1, s2, transport="inproc", sid="t"):
    """``s1(ep)`` and ``s2(ep)`` on a fresh channel; returns (r1, r2, ep1, ep2)."""
    ep1, ep2 = make_pair("S1", "S2", transport, sid)
    try:
        res = run_parties({"S1": lambda: s1(ep1), "S2": lambda: s2(ep2)}, [ep1, ep2])
    finally:
        ep1.close()
        ep2.close()
    return res["S1"], res["S2"], ep1, ep2


def blinds(seed):
    return BlindSource(random.Random(f"blinds:{seed}"))
