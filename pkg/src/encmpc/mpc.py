"""Plaintext MPC: condensed QP, projected fast gradient method, LQR.

The real-arithmetic solver is the reference the error bounds are measured
against; :func:`fgm_fixed` reproduces, on raw integers, exactly what the
encrypted protocols compute.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .fixedpoint import (FixedConfig, FixedOverflowError, FixedVector, clamp,
                         encode_array, quantize)


class MpcError(Exception):
    pass


class ControllerError(MpcError):
    def __init__(self, step: int, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"controller failed at step {step}: {cause}")


def _is_pd(M: np.ndarray) -> bool:
    return bool(np.allclose(M, M.T) and np.linalg.eigvalsh(M).min() > 0)


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    x0_radius: float = 1.0
    x0_radius_2: float | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise MpcError(f"inconsistent dimensions A{A.shape} B{B.shape}")
        if not self.x0_radius > 0:
            raise MpcError("x0_radius must be positive")
        if self.x0_radius_2 is None:
            object.__setattr__(self, "x0_radius_2", math.sqrt(self.n) * self.x0_radius)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def step(self, x, u) -> np.ndarray:
        return self.A @ x + self.B @ u


@dataclass(frozen=True)
class MpcSpec:
    P: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    N: int
    l_u: np.ndarray
    h_u: np.ndarray

    def __post_init__(self):
        for name in ("P", "Q", "R"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not _is_pd(M):
                raise MpcError(f"{name} must be symmetric positive definite")
            object.__setattr__(self, name, M)
        for name in ("l_u", "h_u"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        if self.N < 1:
            raise MpcError("horizon N must be at least 1")
        if not (np.all(self.l_u > 0) and np.all(self.h_u > 0)):
            raise MpcError("box must contain the origin in its interior: need l_u > 0 and h_u > 0")
        m = self.R.shape[0]
        if self.l_u.shape != (m,) or self.h_u.shape != (m,):
            raise MpcError("box bounds must be m-vectors")


def load_instance(source) -> tuple[SystemModel, MpcSpec]:
    """Read the plant/spec JSON (path or already-parsed dict)."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text())
    else:
        data = source
    model = SystemModel(np.array(data["A"], dtype=float), np.array(data["B"], dtype=float),
                        float(data.get("x0_radius", 1.0)), data.get("x0_radius_2"))
    spec = MpcSpec(np.array(data["P"], dtype=float), np.array(data["Q"], dtype=float),
                   np.array(data["R"], dtype=float), int(data["N"]),
                   np.array(data["l_u"], dtype=float), np.array(data["h_u"], dtype=float))
    if spec.P.shape != model.A.shape or spec.Q.shape != model.A.shape or spec.R.shape[0] != model.m:
        raise MpcError("cost matrices do not match the plant dimensions")
    return model, spec


def instance_to_json(model: SystemModel, spec: MpcSpec) -> dict:
    return {"A": model.A.tolist(), "B": model.B.tolist(), "P": spec.P.tolist(),
            "Q": spec.Q.tolist(), "R": spec.R.tolist(), "N": spec.N,
            "l_u": spec.l_u.tolist(), "h_u": spec.h_u.tolist(), "x0_radius": model.x0_radius}


def power_iteration(M: np.ndarray, iters: int = 10_000, tol: float = 1e-13, seed: int = 0) -> float:
    v = np.random.default_rng(seed).standard_normal(M.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = M @ v
        new = float(v @ w)
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
        if abs(new - lam) <= tol * abs(new):
            return new
        lam = new
    return lam


def spectrum(H: np.ndarray, check: bool = True) -> tuple[float, float]:
    """(lambda_max, lambda_min) of a symmetric matrix.

    With ``check`` the two extreme eigenpairs must have residuals below
    ``1e-8 * lambda_max``.
    """
    eig, vecs = np.linalg.eigh(H)
    lmax, lmin = float(eig[-1]), float(eig[0])
    if check:
        scale = max(abs(lmax), 1e-300)
        for j in (0, -1):
            if np.linalg.norm(H @ vecs[:, j] - eig[j] * vecs[:, j]) > 1e-8 * scale:
                raise MpcError("eigenpair residual check failed")
    return lmax, lmin


def momentum_from_condition(kappa: float) -> float:
    s = math.sqrt(kappa)
    return (s - 1.0) / (s + 1.0)


@dataclass(frozen=True)
class CondensedQP:
    H: np.ndarray
    F: np.ndarray           # n x Nm; the linear term is U^T F^T x
    lo: np.ndarray          # stacked l_u (lower bound is -lo)
    hi: np.ndarray
    n: int
    m: int
    N: int
    L: float = field(init=False)
    kappa: float = field(init=False)
    eta: float = field(init=False)

    def __post_init__(self):
        lmax, lmin = spectrum(self.H)
        if lmin <= 0:
            raise MpcError("condensed Hessian is not positive definite")
        object.__setattr__(self, "L", lmax)
        object.__setattr__(self, "kappa", lmax / lmin)
        object.__setattr__(self, "eta", momentum_from_condition(lmax / lmin))

    @property
    def dim(self) -> int:
        return self.N * self.m

    def objective(self, U, x) -> float:
        U = np.asarray(U, dtype=float)
        return 0.5 * U @ self.H @ U + U @ (self.F.T @ x)

    def project(self, t) -> np.ndarray:
        return np.clip(t, -self.lo, self.hi)


def prediction_matrices(A: np.ndarray, B: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Stacked free response ``Omega`` (A..A^N) and impulse response ``Gamma``."""
    n, m = B.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    Omega = np.vstack(powers[1:])
    Gamma = np.zeros((N * n, N * m))
    for i in range(N):
        for j in range(i + 1):
            Gamma[i * n:(i + 1) * n, j * m:(j + 1) * m] = powers[i - j] @ B
    return Omega, Gamma


def condense(model: SystemModel, spec: MpcSpec) -> CondensedQP:
    N = spec.N
    Omega, Gamma = prediction_matrices(model.A, model.B, N)
    Qbar = np.kron(np.eye(N), spec.Q)
    Qbar[-model.n:, -model.n:] = spec.P
    Rbar = np.kron(np.eye(N), spec.R)
    H = Gamma.T @ Qbar @ Gamma + Rbar
    H = 0.5 * (H + H.T)
    Ft = Gamma.T @ Qbar @ Omega
    return CondensedQP(H, Ft.T, np.tile(spec.l_u, N), np.tile(spec.h_u, N),
                       model.n, model.m, N)


def warm_start_shift(U_prev, m: int) -> np.ndarray:
    U_prev = np.asarray(U_prev)
    out = np.zeros_like(U_prev)
    out[:len(U_prev) - m] = U_prev[m:]
    return out


def fgm_solve(qp: CondensedQP, x, K: int, U0=None, c: float = 1.0,
              momentum: bool = True, history: bool = False):
    """Projected fast gradient method in floating point.

    ``c`` scales the step to ``1/(c L)`` so the run can be paired with a
    quantized problem that needed the same scaling.  ``momentum=False`` gives
    the plain projected gradient method.
    """
    if K < 1:
        raise MpcError("K must be at least 1")
    x = np.asarray(x, dtype=float)
    U = np.zeros(qp.dim) if U0 is None else np.array(U0, dtype=float)
    if np.any(U < -qp.lo) or np.any(U > qp.hi):
        raise MpcError("initial iterate is infeasible")
    step = 1.0 / (c * qp.L)
    G = np.eye(qp.dim) - step * qp.H
    g = step * (qp.F.T @ x)
    eta = qp.eta if momentum else 0.0
    z = U.copy()
    iterates = [U.copy()]
    for _ in range(K):
        t = G @ z - g
        U_new = np.clip(t, -qp.lo, qp.hi)
        z = (1 + eta) * U_new - eta * U
        U = U_new
        if history:
            iterates.append(U.copy())
    return (U, np.array(iterates)) if history else U


def projected_gradient_long(qp: CondensedQP, x, iters: int = 100_000) -> np.ndarray:
    """Slow plain projected gradient run, used as an optimality oracle."""
    x = np.asarray(x, dtype=float)
    U = np.zeros(qp.dim)
    G = np.eye(qp.dim) - qp.H / qp.L
    g = qp.F.T @ x / qp.L
    for _ in range(iters):
        U = np.clip(G @ U - g, -qp.lo, qp.hi)
    return U


@dataclass(frozen=True)
class QuantizedQP:
    """Fixed-point coefficients of a condensed QP plus their errors."""
    qp: CondensedQP
    cfg: FixedConfig
    c: int
    Hbar: np.ndarray          # raw, scale 1
    Lbar: float
    kappa_bar: float
    Hf: np.ndarray            # raw, scale 1
    Ff: np.ndarray            # raw, scale 1, n x Nm
    eta: int                  # raw, scale 1
    lo: np.ndarray            # raw magnitudes of the lower bound
    hi: np.ndarray
    eps_Hf: np.ndarray = field(repr=False)
    eps_Ff: np.ndarray = field(repr=False)
    eps_eta: float = 0.0

    @property
    def dim(self) -> int:
        return self.qp.dim

    def decoded(self, raw) -> np.ndarray:
        one = float(1 << self.cfg.l_f)
        return np.array([int(v) / one for v in np.ravel(raw)]).reshape(np.shape(raw))

    @property
    def Hf_real(self) -> np.ndarray:
        return self.decoded(self.Hf)

    @property
    def Ff_real(self) -> np.ndarray:
        return self.decoded(self.Ff)

    @property
    def eta_real(self) -> float:
        return self.eta / (1 << self.cfg.l_f)

    @property
    def lo_real(self) -> np.ndarray:
        return self.decoded(self.lo)

    @property
    def hi_real(self) -> np.ndarray:
        return self.decoded(self.hi)

    def encode_state(self, x) -> np.ndarray:
        raw, _ = encode_array(np.asarray(x, dtype=float), self.cfg)
        return raw

    def with_cfg(self, l_i: int) -> "QuantizedQP":
        """Same coefficients under a different integer-bit budget."""
        return quantize_qp(self.qp, FixedConfig(l_i, self.cfg.l_f), c=self.c)


def _quantize_with_c(qp: CondensedQP, cfg: FixedConfig, c: int) -> QuantizedQP:
    l_f = cfg.l_f
    one = 1 << l_f
    big = FixedConfig(max(cfg.l_i, 64), l_f)
    Hbar_raw, _ = encode_array(qp.H, big)
    Hbar = Hbar_raw.astype(float) / one
    Hbar = 0.5 * (Hbar + Hbar.T)
    Lbar, lmin_bar = spectrum(Hbar, check=False)
    if lmin_bar <= 0:
        raise MpcError(f"quantized Hessian is not positive definite at l_f={l_f}")
    kappa_bar = Lbar / lmin_bar
    Fbar_raw, _ = encode_array(qp.F, big)
    Fbar = Fbar_raw.astype(float) / one
    Hf_raw, _ = encode_array(Hbar / (c * Lbar), big)
    Ff_raw, _ = encode_array(Fbar / (c * Lbar), big)
    eta_target = momentum_from_condition(kappa_bar)
    eta_raw = quantize(eta_target, l_f)
    if eta_raw < eta_target * one:
        eta_raw += 1
    eta_raw = min(eta_raw, one - 1)
    lo_raw = np.array([quantize(v, l_f, "toward_zero") for v in qp.lo], dtype=object)
    hi_raw = np.array([quantize(v, l_f, "toward_zero") for v in qp.hi], dtype=object)
    eps_Hf = Hf_raw.astype(float) / one - qp.H / (c * qp.L)
    eps_Ff = Ff_raw.astype(float) / one - qp.F / (c * qp.L)
    return QuantizedQP(qp, cfg, c, Hbar_raw, Lbar, kappa_bar, Hf_raw, Ff_raw, int(eta_raw),
                       lo_raw, hi_raw, eps_Hf, eps_Ff, eta_raw / one - qp.eta)


def hf_eigen_ok(qq: QuantizedQP) -> bool:
    eig = np.linalg.eigvalsh(0.5 * (qq.Hf_real + qq.Hf_real.T))
    return bool(eig[0] > 0 and eig[-1] <= 1)


def quantize_qp(qp: CondensedQP, cfg: FixedConfig, c: int | None = None,
                max_c: int = 1 << 10) -> QuantizedQP:
    """Quantize ``qp`` at ``cfg``.

    Without an explicit ``c``, start at 1 and double until the scaled Hessian
    has its spectrum in ``(0, 1]``.
    """
    if c is not None:
        return _quantize_with_c(qp, cfg, c)
    c = 1
    while c <= max_c:
        qq = _quantize_with_c(qp, cfg, c)
        if hf_eigen_ok(qq):
            return qq
        c *= 2
    raise MpcError(f"no power-of-two c <= {max_c} brings eig(Hf) into (0, 1] at l_f={cfg.l_f}")


def _idot(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.array([sum(int(a) * int(b) for a, b in zip(row, v)) for row in M], dtype=object)


@dataclass
class FixedRun:
    U: FixedVector
    iterates: list[np.ndarray]        # raw scale-1 U_0..U_K
    t_raw: list[np.ndarray]           # raw scale-3 t_0..t_{K-1}
    truncated: list[np.ndarray]       # raw scale-1 truncations before projection


def server_coefficients(qq: QuantizedQP) -> tuple[np.ndarray, np.ndarray]:
    """Integer matrices of the gradient step: ``t = G z + Fx_mult x``.

    ``G = 2^l_f I - Hf`` acts on z at scale 2; the state multiplier carries
    an extra ``2^l_f`` so both products land at scale 3.
    """
    one = 1 << qq.cfg.l_f
    dim = qq.dim
    G = np.empty((dim, dim), dtype=object)
    for i in range(dim):
        for j in range(dim):
            G[i, j] = (one if i == j else 0) - int(qq.Hf[i, j])
    Fx_mult = np.array([[-int(v) * one for v in row] for row in qq.Ff.T], dtype=object)
    return G, Fx_mult


def blinded_truncation(t_raw: int, r: int, l_i: int, l_f: int) -> int:
    """Scale-3 to scale-1 truncation as produced through an additive blind.

    The value is first shifted to be non-negative, blinded with ``r``, the
    blinded sum is floor-divided and the divided blind removed, so the result
    is the exact floor plus a carry bit in {0, 1}.
    """
    shift = 2 * l_f
    offset = 1 << (l_i + 3 * l_f)
    return ((t_raw + offset + r) >> shift) - (r >> shift) - (offset >> shift)


def truncation_blind_bits(cfg: FixedConfig, lam: int) -> int:
    """Bit width of truncation blinds: data width l + 2 l_f plus lam."""
    return (cfg.l_i + cfg.l_f + 1) + 2 * cfg.l_f + lam


def fgm_fixed(qq: QuantizedQP, x, K: int, variant: str = "cs", rng=None, lam: int = 40,
              U0=None, momentum: bool = True) -> FixedRun:
    """Projected FGM on raw fixed-point integers.

    ``x`` is a real state (encoded here) or a raw integer array.  ``U0`` is a
    raw scale-1 starting iterate.  ``variant='ss'`` perturbs every truncation
    with a blind drawn from ``rng`` exactly as the two-server truncation does.
    """
    cfg = qq.cfg
    l_f = cfg.l_f
    one = 1 << l_f
    dim = qq.dim
    if variant not in ("cs", "ss"):
        raise ValueError(f"unknown variant {variant!r}")
    if variant == "ss" and rng is None:
        raise ValueError("the two-server variant needs an rng for the truncation blinds")
    x = np.asarray(x)
    x_raw = x if x.dtype == object else qq.encode_state(x)
    G, Fx_mult = server_coefficients(qq)
    fx = _idot(Fx_mult, x_raw)
    eta = qq.eta if momentum else 0
    U = np.zeros(dim, dtype=object) if U0 is None else np.array([int(v) for v in U0], dtype=object)
    lo = -qq.lo
    hi = qq.hi
    if any(U[i] < lo[i] or U[i] > hi[i] for i in range(dim)):
        raise MpcError("initial iterate is infeasible")
    z = U * one
    bound3 = cfg.bound(3)
    blind_hi = 1 << truncation_blind_bits(cfg, lam)
    iterates, ts, truncs = [U.copy()], [], []
    for k in range(K):
        t = _idot(G, z) + fx
        for i, v in enumerate(t):
            if abs(v) >= bound3:
                raise FixedOverflowError(f"t[{i}] overflows {cfg.l_i} integer bits at iterate {k}")
        if variant == "cs":
            tr = np.array([int(v) >> (2 * l_f) for v in t], dtype=object)
        else:
            tr = np.array([blinded_truncation(int(v), rng.randrange(1, blind_hi), cfg.l_i, l_f)
                           for v in t], dtype=object)
        U_new = clamp(tr, lo, hi)
        z = (one + eta) * U_new - eta * U
        U = U_new
        iterates.append(U.copy())
        ts.append(t)
        truncs.append(tr)
    return FixedRun(FixedVector(U, cfg, 1), iterates, ts, truncs)


def fgm_quantized_real(qq: QuantizedQP, x, K: int, U0=None, momentum: bool = True,
                       history: bool = False):
    """FGM with quantized coefficients, state and box but real iterates."""
    x_bar = qq.decoded(qq.encode_state(x))
    Hf = qq.Hf_real
    Ff = qq.Ff_real
    eta = qq.eta_real if momentum else 0.0
    lo, hi = qq.lo_real, qq.hi_real
    U = np.zeros(qq.dim) if U0 is None else np.array(U0, dtype=float)
    G = np.eye(qq.dim) - Hf
    g = Ff.T @ x_bar
    z = U.copy()
    iterates = [U.copy()]
    for _ in range(K):
        U_new = np.clip(G @ z - g, -lo, hi)
        z = (1 + eta) * U_new - eta * U
        U = U_new
        iterates.append(U.copy())
    return (U, np.array(iterates)) if history else U


def lqr_gain(model: SystemModel, spec: MpcSpec) -> tuple[np.ndarray, np.ndarray]:
    """Finite-horizon Riccati recursion from ``P_N = P``; returns (F_0, P_0)."""
    A, B = model.A, model.B
    Pk = spec.P
    Fk = np.zeros((model.m, model.n))
    for _ in range(spec.N):
        S = B.T @ Pk @ B + spec.R
        Fk = -np.linalg.solve(S, B.T @ Pk @ A)
        Pk = A.T @ Pk @ A + spec.Q + A.T @ Pk @ B @ Fk
    return Fk, Pk


def simulate_closed_loop(model: SystemModel, controller: Callable[[np.ndarray], np.ndarray],
                         x_init, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Run ``x(t+1) = A x(t) + B u(t)`` for ``T`` steps; returns states and inputs."""
    X = np.zeros((T + 1, model.n))
    Uin = np.zeros((T, model.m))
    X[0] = np.asarray(x_init, dtype=float)
    for t in range(T):
        try:
            u = np.asarray(controller(X[t]), dtype=float).reshape(model.m)
        except Exception as exc:
            raise ControllerError(t, exc) from exc
        Uin[t] = u
        X[t + 1] = model.step(X[t], u)
    return X, Uin


class MpcController:
    """Plaintext receding-horizon controller with warm starts."""

    def __init__(self, qp: CondensedQP, K_c: int, K_w: int | None = None, c: float = 1.0):
        self.qp = qp
        self.K_c = K_c
        self.K_w = K_c if K_w is None else K_w
        self.c = c
        self._prev = None

    def __call__(self, x) -> np.ndarray:
        if self._prev is None:
            U = fgm_solve(self.qp, x, self.K_c, c=self.c)
        else:
            U = fgm_solve(self.qp, x, self.K_w, warm_start_shift(self._prev, self.qp.m), c=self.c)
        self._prev = U
        return U[:self.qp.m]
