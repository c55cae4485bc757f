"""Offline precision analysis for the fixed-point FGM.

Covers the feasibility/convergence checks on a quantized problem, integer
bit sizing against overflow, the a-priori quantization and round-off bounds
on the primal iterate, and modulus sizing.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fixedpoint import FixedConfig
from .mpc import (CondensedQP, MpcError, QuantizedQP, SystemModel, momentum_from_condition,
                  quantize_qp)

LOG2_3 = math.log2(3)


@dataclass
class Assumption1Verdict:
    ok: bool
    box_inside: bool
    eig_in_unit: bool
    momentum_ok: bool
    eig_min: float
    eig_max: float
    eta_lower: float
    eta_bar: float
    failing: list[str] = field(default_factory=list)
    suggested_c: int | None = None


def check_assumption1(qq: QuantizedQP) -> Assumption1Verdict:
    """Box feasibility, spectrum of the scaled Hessian in (0, 1], momentum range."""
    qp = qq.qp
    box_inside = bool(np.all(qq.lo_real <= qp.lo) and np.all(qq.hi_real <= qp.hi)
                      and np.all(qq.lo_real >= 0) and np.all(qq.hi_real >= 0))
    Hf = qq.Hf_real
    eig = np.linalg.eigvalsh(0.5 * (Hf + Hf.T))
    eig_ok = bool(eig[0] > 0 and eig[-1] <= 1)
    eta_lower = momentum_from_condition(qq.kappa_bar)
    eta_bar = qq.eta_real
    momentum_ok = bool(0 <= eta_lower <= eta_bar < 1)
    failing = [name for name, ok in (("box", box_inside), ("eigenvalues", eig_ok),
                                     ("momentum", momentum_ok)) if not ok]
    return Assumption1Verdict(not failing, box_inside, eig_ok, momentum_ok, float(eig[0]),
                              float(eig[-1]), eta_lower, eta_bar, failing,
                              None if eig_ok else 2 * qq.c)


def _inf_norm(M) -> float:
    return float(np.abs(np.atleast_2d(M)).sum(axis=1).max())


@dataclass
class OverflowReport:
    R_U: float
    zeta: float
    t_bound: float
    x_bound: float
    l_i: int


def overflow_bounds(qq: QuantizedQP, x0_radius_inf: float) -> OverflowReport:
    """Infinity-norm bounds on U, z and t; smallest ``l_i`` clearing all of them.

    The state enters through ``F_f^T x`` so its induced norm is the one used.
    One extra unit in the last place is allowed on t for the carry of the
    blinded truncation.
    """
    R_U = float(max(np.max(qq.lo_real), np.max(qq.hi_real)))
    zeta = (1 + 2 * qq.eta_real) * R_U
    x_bar = x0_radius_inf + 2.0 ** (-qq.cfg.l_f - 1)
    t_bound = _inf_norm(np.eye(qq.dim) - qq.Hf_real) * zeta + _inf_norm(qq.Ff_real.T) * x_bar
    need = max(R_U, zeta, t_bound + 2.0 ** -qq.cfg.l_f, x_bar)
    l_i = max(1, math.floor(math.log2(need)) + 1)
    while 2.0 ** l_i <= need:
        l_i += 1
    while l_i > 1 and 2.0 ** (l_i - 1) > need:
        l_i -= 1
    return OverflowReport(R_U, zeta, t_bound, x_bar, l_i)


@dataclass
class ErrorSystem:
    A_tilde: np.ndarray
    B_tilde: np.ndarray
    gamma: float
    zeta: float
    gamma_cs: float
    gamma_ss: float
    rho: float
    dim: int

    def selected_norms(self, K: int) -> tuple[np.ndarray, np.ndarray]:
        """``||E A^j||_2`` and ``||E A^j B||_2`` for j = 0..K-1."""
        d = self.dim
        EA = np.hstack([np.eye(d), np.zeros((d, d))])
        a, b = np.zeros(K), np.zeros(K)
        for j in range(K):
            a[j] = np.linalg.norm(EA, 2)
            b[j] = np.linalg.norm(EA @ self.B_tilde, 2)
            EA = EA @ self.A_tilde
        return a, b


def error_system(qq: QuantizedQP, x0_radius_2: float, momentum: bool = True) -> ErrorSystem:
    d = qq.dim
    l_f = qq.cfg.l_f
    n = qq.qp.n
    I = np.eye(d)
    G = I - qq.Hf_real
    eta = qq.eta_real if momentum else 0.0
    eps_eta = qq.eps_eta if momentum else 0.0
    A_t = np.block([[(1 + eta) * G, -eta * G], [I, np.zeros((d, d))]])
    B_t = np.block([[-qq.eps_Hf, eps_eta * G], [np.zeros((d, d)), np.zeros((d, d))]])
    R_U = float(max(np.max(np.abs(qq.qp.lo)), np.max(np.abs(qq.qp.hi))))
    gamma = (3 + 2 * eta) * math.sqrt(d) * R_U
    zeta = (np.linalg.norm(qq.eps_Ff, 2) * x0_radius_2
            + 2.0 ** -l_f * math.sqrt(n) * np.linalg.norm(qq.Ff_real, 2))
    rho = float(np.max(np.abs(np.linalg.eigvals(A_t))))
    return ErrorSystem(A_t, B_t, gamma, float(zeta), 2.0 ** -l_f * d ** 1.5,
                       2.0 ** -l_f * math.sqrt(d) * (1 + d), rho, d)


def _require_stable(es: ErrorSystem):
    if not es.rho < 1:
        raise MpcError(f"error dynamics not stable (spectral radius {es.rho:.6g})")


def quantization_bound(es: ErrorSystem, K: int) -> tuple[float, np.ndarray]:
    """Bound on the quantized-coefficient iterate error for k = 0..K."""
    _require_stable(es)
    a, b = es.selected_norms(K)
    ca, cb = np.concatenate([[0.0], np.cumsum(a)]), np.concatenate([[0.0], np.cumsum(b)])
    profile = es.gamma * cb + es.zeta * ca
    return float(profile[K]), profile


def roundoff_bound(es: ErrorSystem, K: int, variant: str = "cs") -> tuple[float, np.ndarray]:
    """Bound on the truncation-induced iterate error for k = 0..K."""
    _require_stable(es)
    gp = {"cs": es.gamma_cs, "ss": es.gamma_ss}[variant]
    a, _ = es.selected_norms(K)
    profile = gp * np.concatenate([[0.0], np.cumsum(a)])
    return float(profile[K]), profile


@dataclass
class KeySize:
    headroom_bits: int
    min_bits: int
    recommended_bits: int
    gradient_headroom_bits: int
    gradient_min_bits: int
    gradient_saves_key: bool


def key_headroom(l_i: int, l_f: int, lam: int, variant: str, accumulation: int = 3) -> int:
    """Left-hand side of the no-overflow inequality against log2(n/3)."""
    if variant == "cs":
        return l_i + accumulation * l_f + 2
    if variant == "ss":
        return l_i + accumulation * l_f + 3 + lam
    raise ValueError(f"unknown variant {variant!r}")


def key_ok(n_bits_or_modulus: int, l_i: int, l_f: int, lam: int, variant: str, modulus: bool = True) -> bool:
    """Check the inequality for an actual modulus (or a worst-case bit length)."""
    if modulus:
        log_n3 = math.log2(n_bits_or_modulus) - LOG2_3
    else:
        log_n3 = n_bits_or_modulus - 1 - LOG2_3
    return key_headroom(l_i, l_f, lam, variant) < log_n3


def _min_bits(headroom: int) -> int:
    b = math.floor(headroom + 1 + LOG2_3) + 1
    return b + (b % 2)


def select_keysize(l_i: int, l_f: int, lam: int, variant: str) -> KeySize:
    head = key_headroom(l_i, l_f, lam, variant)
    ghead = key_headroom(l_i, l_f, lam, variant, accumulation=2)
    b, gb = _min_bits(head), _min_bits(ghead)
    rec = 512
    while rec < b:
        rec *= 2
    grec = 512
    while grec < gb:
        grec *= 2
    return KeySize(head, b, rec, ghead, gb, grec < rec)


@dataclass
class PrecisionPlan:
    variant: str
    K: int
    l_i: int
    l_f: int
    lam: int
    c: int
    key_bits: int
    key_min_bits: int
    eps1: float
    eps2: float
    eps: float
    delta: float | None
    budget: float | None
    B_norm: float
    ok: bool
    eps1_profile: list[float]
    eps2_profile: list[float]
    message: str = ""

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class BoundReport:
    qq: QuantizedQP
    es: ErrorSystem
    eps1: float
    eps2: float
    eps1_profile: np.ndarray
    eps2_profile: np.ndarray

    @property
    def eps(self) -> float:
        return self.eps1 + self.eps2

    @property
    def profile(self) -> np.ndarray:
        return self.eps1_profile + self.eps2_profile


def bound_report(qq: QuantizedQP, model: SystemModel, K: int, variant: str = "cs",
                 momentum: bool = True) -> BoundReport:
    es = error_system(qq, model.x0_radius_2, momentum)
    e1, p1 = quantization_bound(es, K)
    e2, p2 = roundoff_bound(es, K, variant)
    return BoundReport(qq, es, e1, e2, p1, p2)


def plan_precision(qp: CondensedQP, model: SystemModel, delta: float, K: int,
                   variant: str = "cs", lam: int = 100, l_f_min: int = 4,
                   l_f_max: int = 64) -> PrecisionPlan:
    """Smallest ``l_f`` whose bound fits the disturbance budget ``delta / ||B||``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    B_norm = float(np.linalg.norm(model.B, 2))
    budget = delta / B_norm
    best = None
    for l_f in range(l_f_min, l_f_max + 1):
        try:
            qq = quantize_qp(qp, FixedConfig(16, l_f))
        except MpcError:
            continue
        if not check_assumption1(qq).ok:
            continue
        rep = bound_report(qq, model, K, variant)
        best = (qq, rep)
        if rep.eps <= budget:
            ov = overflow_bounds(qq, model.x0_radius)
            ks = select_keysize(ov.l_i, l_f, lam, variant)
            return PrecisionPlan(variant, K, ov.l_i, l_f, lam, qq.c, ks.recommended_bits,
                                 ks.min_bits, rep.eps1, rep.eps2, rep.eps, delta, budget,
                                 B_norm, True, rep.eps1_profile.tolist(),
                                 rep.eps2_profile.tolist())
    if best is None:
        msg = f"no l_f in [{l_f_min}, {l_f_max}] satisfies the quantization assumptions"
        return PrecisionPlan(variant, K, 0, 0, lam, 0, 0, 0, math.inf, math.inf, math.inf,
                             delta, budget, B_norm, False, [], [], msg)
    qq, rep = best
    ov = overflow_bounds(qq, model.x0_radius)
    ks = select_keysize(ov.l_i, qq.cfg.l_f, lam, variant)
    msg = (f"budget {budget:.3e} not reached by l_f <= {l_f_max}; "
           f"best achieved eps = {rep.eps:.3e} at l_f = {qq.cfg.l_f}")
    return PrecisionPlan(variant, K, ov.l_i, qq.cfg.l_f, lam, qq.c, ks.recommended_bits,
                         ks.min_bits, rep.eps1, rep.eps2, rep.eps, delta, budget, B_norm, False,
                         rep.eps1_profile.tolist(), rep.eps2_profile.tolist(), msg)
