import dataclasses
import math

import numpy as np
import pytest

from instances import instances

from encmpc.bounds import (bound_report, check_assumption1, error_system, key_headroom, key_ok,
                           overflow_bounds, plan_precision, quantization_bound, roundoff_bound,
                           select_keysize)
from encmpc.fixedpoint import FixedConfig
from encmpc.mpc import (CondensedQP, MpcError, _quantize_with_c, condense, fgm_fixed,
                        fgm_quantized_real, fgm_solve, load_instance, quantize_qp)
from encmpc import harness


def qp_from(H, F, box=1.0):
    H = np.asarray(H, float)
    d = H.shape[0]
    F = np.asarray(F, float)
    return CondensedQP(H, F, np.full(d, box), np.full(d, box), F.shape[0], 1, d)


def test_identity_hessian_passes():
    for l_f in (4, 12, 30):
        v = check_assumption1(quantize_qp(qp_from(np.eye(3), np.ones((1, 3))), FixedConfig(4, l_f)))
        assert v.ok and v.eig_max == 1.0


def test_rounding_pushes_eigenvalue_over_one():
    H = (3 * np.eye(3) + np.ones((3, 3))) / 16
    qp = qp_from(H, np.ones((1, 3)))
    qq1 = _quantize_with_c(qp, FixedConfig(4, 4), 1)
    v1 = check_assumption1(qq1)
    assert v1.eig_max == 1 + 2 ** -4
    assert v1.failing == ["eigenvalues"] and v1.suggested_c == 2
    qq = quantize_qp(qp, FixedConfig(4, 4))
    assert qq.c == 2 and check_assumption1(qq).ok


def test_box_rounding_direction():
    qp = qp_from(np.eye(2), np.ones((1, 2)), box=0.3)
    qq = quantize_qp(qp, FixedConfig(4, 4))
    assert check_assumption1(qq).box_inside
    flipped = dataclasses.replace(qq, hi=qq.hi + 1)
    v = check_assumption1(flipped)
    assert not v.ok and "box" in v.failing


def test_overflow_bounds_one_d():
    qp = qp_from([[2.0]], [[1.0]])          # Hf = 1, Ff = 0.5, no momentum
    qq = quantize_qp(qp, FixedConfig(4, 16))
    rep = overflow_bounds(qq, 1.0)
    assert rep.R_U == 1.0 and rep.zeta == 1.0
    # |1 - h| * 1 + 0.5 * (1 + half an ulp of rounding on x)
    assert rep.t_bound == pytest.approx(0.5 * (1 + 2 ** -17), abs=1e-15)
    assert rep.l_i == 1


def test_overflow_bounds_dominate_iterates():
    for model, spec, qp, x in instances(21, 100, (16,)):
        qq = quantize_qp(qp, FixedConfig(16, 16))
        rep = overflow_bounds(qq, model.x0_radius)
        run = fgm_fixed(qq, x, 18)
        eta = qq.eta_real
        U = [qq.decoded(u) for u in run.iterates]
        z = [U[0]] + [(1 + eta) * U[k] - eta * U[k - 1] for k in range(1, len(U))]
        t = [np.abs(np.array([int(v) for v in tk], dtype=float)) / 2.0 ** 48 for tk in run.t_raw]
        assert max(np.max(np.abs(u)) for u in U) <= rep.R_U
        assert max(np.max(np.abs(v)) for v in z) <= rep.zeta
        assert max(np.max(v) for v in t) <= rep.t_bound
        assert max(np.max(v) for v in t) < 2 ** rep.l_i
        # the sized configuration runs without overflow
        fgm_fixed(qq.with_cfg(rep.l_i), x, 18)


def test_roundoff_constants():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((8, 8))
    qp = qp_from(M @ M.T + np.eye(8), rng.standard_normal((2, 8)))
    es = error_system(quantize_qp(qp, FixedConfig(8, 16)), 1.0)
    assert es.gamma_cs == pytest.approx(3.4527e-4, rel=1e-4)
    # sqrt(8) * 9 / 2^16 = 3.88425e-4
    assert es.gamma_ss == pytest.approx(math.sqrt(8) * 9 / 2 ** 16, rel=1e-12)
    assert es.gamma_ss == pytest.approx(3.88425e-4, rel=1e-5)
    assert es.gamma_ss > es.gamma_cs


def test_exact_coefficients_leave_only_state_rounding():
    qp = qp_from(np.eye(2), [[0.5, 0.25]])
    qq = quantize_qp(qp, FixedConfig(4, 12))
    assert np.all(qq.eps_Hf == 0) and np.all(qq.eps_Ff == 0)
    es = error_system(qq, 1.0)
    assert np.all(es.B_tilde == 0)
    assert es.zeta == pytest.approx(2 ** -12 * np.linalg.norm(qq.Ff_real, 2))
    e1, prof = quantization_bound(es, 10)
    a, _ = es.selected_norms(10)
    assert e1 == pytest.approx(es.zeta * a.sum())
    assert prof[0] == 0


def test_quantization_bound_halves_per_bit():
    [(model, spec, qp, x)] = instances(22, 1, tuple(range(8, 33)))
    l_fs = np.arange(8, 33)
    eps1 = [bound_report(quantize_qp(qp, FixedConfig(16, int(l))), model, 18).eps1 for l in l_fs]
    slope = np.polyfit(l_fs, np.log2(eps1), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_bounds_sound_on_dual_runs():
    for model, spec, qp, x in instances(23, 100, (12,)):
        qq = quantize_qp(qp, FixedConfig(16, 12))
        rep = bound_report(qq, model, 18, "cs")
        real = fgm_solve(qp, x, 18, c=qq.c)
        quant = fgm_quantized_real(qq, x, 18)
        fixed = qq.decoded(fgm_fixed(qq, x, 18).U.raw)
        assert np.linalg.norm(quant - real) <= rep.eps1
        assert np.linalg.norm(fixed - quant) <= rep.eps2
        assert np.linalg.norm(fixed - real) <= rep.eps


def test_profile_monotone_and_final():
    [(model, spec, qp, x)] = instances(24, 1, (16,))
    rep = bound_report(quantize_qp(qp, FixedConfig(16, 16)), model, 18, "ss")
    assert rep.profile[-1] == pytest.approx(rep.eps)
    assert np.all(np.diff(rep.profile) >= 0)
    e2, _ = roundoff_bound(rep.es, 18, "cs")
    assert e2 < rep.eps2


def test_key_rule_examples():
    assert key_headroom(16, 32, 100, "cs") == 114
    assert key_headroom(16, 32, 100, "ss") == 215
    assert select_keysize(16, 32, 100, "cs").recommended_bits == 512
    ks = select_keysize(16, 32, 100, "ss")
    assert ks.recommended_bits == 512 and ks.min_bits <= 512
    assert key_ok(512, 16, 32, 100, "ss", modulus=False)
    assert not key_ok(200, 16, 32, 100, "ss", modulus=False)
    assert key_ok(200, 16, 32, 100, "cs", modulus=False)
    assert select_keysize(200, 200, 200, "ss").recommended_bits == 1024
    with pytest.raises(ValueError):
        key_headroom(1, 1, 40, "xx")


def test_key_ok_on_actual_modulus():
    n = (1 << 120) + 1
    need = key_headroom(10, 30, 40, "cs")
    assert key_ok(n, 10, 30, 40, "cs") == (need < math.log2(n / 3))


def test_plan_generous_budget_takes_first_valid_l_f():
    model, spec = load_instance(harness.SURROGATE)
    qp = condense(model, spec)
    plan = plan_precision(qp, model, 1e6, 18, "cs")
    first = next(l for l in range(4, 65)
                 if (qq := _first_quantization(qp, l)) is not None and check_assumption1(qq).ok)
    assert plan.ok and plan.l_f == first and plan.key_bits == 512


def _first_quantization(qp, l_f):
    try:
        return quantize_qp(qp, FixedConfig(16, l_f))
    except MpcError:
        return None


def test_plan_tiny_budget_fails():
    model, spec = load_instance(harness.SURROGATE)
    plan = plan_precision(qp := condense(model, spec), model, 1e-30, 18, "cs", l_f_max=40)
    assert not plan.ok and "not reached" in plan.message
    with pytest.raises(ValueError):
        plan_precision(qp, model, 0.0, 18)


def test_plan_ss_includes_lambda_headroom():
    model, spec = load_instance(harness.SURROGATE)
    qp = condense(model, spec)
    cs = plan_precision(qp, model, 0.05, 18, "cs", lam=100)
    ss = plan_precision(qp, model, 0.05, 18, "ss", lam=100)
    assert ss.key_min_bits - cs.key_min_bits >= 100
    assert ss.eps2 > cs.eps2


def test_plan_bound_dominates_surrogate_error():
    model, spec = load_instance(harness.SURROGATE)
    qp = condense(model, spec)
    plan = plan_precision(qp, model, 0.05, 18, "cs")
    qq = quantize_qp(qp, FixedConfig(plan.l_i, plan.l_f), c=plan.c)
    x = np.array(harness.SURROGATE_X0)
    measured = np.linalg.norm(qq.decoded(fgm_fixed(qq, x, 18).U.raw) - fgm_solve(qp, x, 18, c=qq.c))
    assert plan.eps >= 10 * measured
