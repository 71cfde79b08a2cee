"""Depth subproblem tests: objective pieces, gradients, dual solver."""

import math

import numpy as np
import pytest

import oracles
from saoi_uav.model import SystemParams, information_value, link_rates, timing_breakdown
from saoi_uav.sem_extract import (DepthProblem, bisect_stationary,
                                  budget_k, build_depth_problem, gamma1_k,
                                  gamma2_k, grad_lam1, grad_lam2, grad_rho_l,
                                  grad_rho_u, grad_varrho, lagrangian_k,
                                  objective_k, phi_taylor, solve_depths)


def _flat_problem(**over) -> DepthProblem:
    """Single-GU problem with every coefficient zero unless overridden."""
    kw = dict(scheduled=np.array([True]), weight=np.array([0.0]), v_weight=0.0,
              wait_time=np.array([0.0]), extract_l=np.array([0.0]), exp_l=2.0,
              upload_s=np.array([0.0]), upload_f=np.array([0.0]),
              extract_u=np.array([0.0]), exp_u=2.0, recover=np.array([0.0]),
              rec_exp=1.0, fixed_time=np.array([0.0]),
              value_exp=np.array([0.0]), t_max=1.0, rho_min=1e-3,
              upload_full=False)
    kw.update(over)
    return DepthProblem(**kw)


def _hand_problem() -> DepthProblem:
    return _flat_problem(weight=np.array([2.0]), v_weight=3.0,
                         extract_l=np.array([0.1]), upload_s=np.array([0.3]),
                         upload_f=np.array([0.2]), extract_u=np.array([0.05]),
                         recover=np.array([0.01]), fixed_time=np.array([0.05]),
                         value_exp=np.array([1.2]))


def _random_problem(rng, num_gus=1, **param_over):
    p = oracles.random_cycle_params(
        rng, num_uavs=min(num_gus, 3), num_gus=num_gus, **param_over)
    state = oracles.random_state(p, rng)
    q = rng.uniform(0.0, 10.0, num_gus)
    assoc = oracles.random_assoc(p.num_uavs, num_gus, rng, p_idle=0.1)
    rate_gu, rate_bs = link_rates(state.uav_pos, state, p)
    return build_depth_problem(state, q, assoc, rate_gu, rate_bs, p), state, assoc, p


def test_gamma1_contribution_frozen():
    # forward cost only: 0.2 * (0.4 + 0) with unit-free coefficients
    prob = _flat_problem(upload_f=np.array([2.0]))
    assert abs(gamma1_k(prob, 0, 0.4, 0.0) - 0.8) < 1e-12


def test_gamma2_equals_information_value(rng):
    # same formula, so the surrogate optimizes the true delivered value;
    # multiplication order differs, leaving last-ulp float noise only
    prob, state, assoc, p = _random_problem(rng)
    for rho in rng.uniform(0.0, 1.0, 50):
        want = information_value(state.packet_bits[0], float(rho), p.value_rate)
        assert oracles.rel_err(gamma2_k(prob, 0, float(rho), 0.0), want) < 1e-12
        assert oracles.rel_err(gamma2_k(prob, 0, 0.0, float(rho)), want) < 1e-12


def test_gamma1_reproduces_protocol_timing(rng):
    # gamma1 + fixed_time must equal the exact timing total on both branches
    for flag in (False, True):
        for _ in range(25):
            prob, state, assoc, p = _random_problem(rng, physical_upload=flag)
            rate_gu, rate_bs = link_rates(state.uav_pos, state, p)
            serving = {int(k): m for m, k in enumerate(assoc) if k >= 0}
            for k, m in serving.items():
                for _ in range(4):
                    rho = float(rng.uniform(p.rho_min, 1.0))
                    branch = rng.integers(2)
                    rl, ru = (rho, 0.0) if branch == 0 else (0.0, rho)
                    tb = timing_breakdown(float(state.packet_bits[k]), rl, ru,
                                          float(rate_gu[m, k]), float(rate_bs[m]), p)
                    total = gamma1_k(prob, k, rl, ru) + prob.fixed_time[k]
                    assert oracles.rel_err(total, tb.total) < 1e-12


def test_phi_taylor_anchor_identity(rng):
    for _ in range(100):
        a, b = rng.uniform(0.0, 1.0, 2)
        assert abs(phi_taylor(a, b, a, b) - a * b) < 1e-12


def test_phi_taylor_frozen():
    assert abs(phi_taylor(0.0, 0.0, 0.3, 0.1) - 0.01) < 1e-12


def test_phi_taylor_majorizes_product(rng):
    for _ in range(200):
        rl, ru, al, au = rng.uniform(0.0, 1.0, 4)
        assert phi_taylor(rl, ru, al, au) >= rl * ru - 1e-12


def test_budget_definition(rng):
    prob = _hand_problem()
    for _ in range(20):
        rl, ru = rng.uniform(0.0, 0.5, 2)
        want = gamma1_k(prob, 0, rl, ru) + prob.fixed_time[0] - prob.t_max
        assert abs(budget_k(prob, 0, rl, ru) - want) < 1e-12


def test_lagrangian_hand_frozen():
    prob = _hand_problem()
    # gamma1 = 0.036 + 0.12 + 0.12 + 0.032 + 0.01/0.6
    g1 = 0.1 * 0.36 + 0.3 * 0.4 + 0.2 * 0.6 + 0.05 * 0.64 + 0.01 / 0.6
    g2 = 1.0 - math.exp(-1.2 * 0.6)
    obj = 2.0 * g1 - 3.0 * g2
    bud = g1 + 0.05 - 1.0
    phi = 0.25 * (0.6 ** 2 - 0.4 ** 2 - 2.0 * 0.4 * (0.4 - 0.2 - 0.4))
    want = obj + 2.0 * 0.05 + 0.7 * bud + 0.3 * (2.0 * phi - 0.05)
    got = lagrangian_k(prob, 0, 0.4, 0.2, varrho=0.05, lam1=0.7, lam2=0.3,
                       omega0=2.0, anchor_l=0.5, anchor_u=0.1)
    assert abs(got - want) < 1e-12
    assert abs(got - (-1.189143232120085)) < 1e-9


def test_lagrangian_zero_multipliers_is_objective(rng):
    prob = _hand_problem()
    for _ in range(20):
        rl, ru = rng.uniform(0.05, 0.45, 2)
        l0 = lagrangian_k(prob, 0, rl, ru, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5)
        assert abs(l0 - objective_k(prob, 0, rl, ru)) < 1e-12


def test_lagrangian_linear_in_multipliers(rng):
    prob = _hand_problem()
    rl, ru = 0.3, 0.1
    base = lagrangian_k(prob, 0, rl, ru, 0.02, 0.0, 0.0, 2.0, 0.4, 0.2)
    bumped = lagrangian_k(prob, 0, rl, ru, 0.02, 1.0, 0.0, 2.0, 0.4, 0.2)
    assert abs((bumped - base) - budget_k(prob, 0, rl, ru)) < 1e-12
    bumped2 = lagrangian_k(prob, 0, rl, ru, 0.02, 0.0, 1.0, 2.0, 0.4, 0.2)
    want = 2.0 * phi_taylor(rl, ru, 0.4, 0.2) - 0.02
    assert abs((bumped2 - base) - want) < 1e-12


def test_penalty_gradient_frozen():
    # all model coefficients zero: only the complementarity penalty remains
    prob = _flat_problem()
    g = grad_rho_l(prob, 0, 0.5, 0.5, lam1=0.0, lam2=1.0, omega0=2.0,
                   anchor_l=0.5, anchor_u=0.5)
    assert abs(g - 1.0) < 1e-12


def test_depth_gradients_match_finite_differences(rng):
    h = 1e-6
    for flag in (False, True):
        for _ in range(30):
            prob, _, assoc, _ = _random_problem(rng, physical_upload=flag)
            if not prob.scheduled[0]:
                continue
            rl, ru = (float(x) for x in rng.uniform(0.05, 0.45, 2))
            al, au = (float(x) for x in rng.uniform(0.0, 1.0, 2))
            lam1, lam2 = (float(x) for x in rng.uniform(0.0, 1.0, 2))
            varrho = float(rng.uniform(0.0, 0.3))
            omega0 = float(rng.uniform(0.5, 8.0))

            def lag(x_l, x_u, vr=varrho, l1=lam1, l2=lam2):
                return lagrangian_k(prob, 0, x_l, x_u, vr, l1, l2, omega0, al, au)

            fd_l = (lag(rl + h, ru) - lag(rl - h, ru)) / (2 * h)
            fd_u = (lag(rl, ru + h) - lag(rl, ru - h)) / (2 * h)
            an_l = grad_rho_l(prob, 0, rl, ru, lam1, lam2, omega0, al, au)
            an_u = grad_rho_u(prob, 0, rl, ru, lam1, lam2, omega0, al, au)
            assert oracles.rel_err(an_l, fd_l) < 1e-5
            assert oracles.rel_err(an_u, fd_u) < 1e-5
            fd_vr = (lag(rl, ru, vr=varrho + h) - lag(rl, ru, vr=varrho - h)) / (2 * h)
            assert oracles.rel_err(grad_varrho(lam2, omega0), fd_vr) < 1e-5
            fd_l1 = (lag(rl, ru, l1=lam1 + h) - lag(rl, ru, l1=lam1 - h)) / (2 * h)
            assert oracles.rel_err(grad_lam1(prob, 0, rl, ru), fd_l1) < 1e-5
            fd_l2 = (lag(rl, ru, l2=lam2 + h) - lag(rl, ru, l2=lam2 - h)) / (2 * h)
            assert oracles.rel_err(
                grad_lam2(prob, 0, rl, ru, varrho, omega0, al, au), fd_l2) < 1e-5


def test_bisect_stationary_frozen():
    assert abs(bisect_stationary(lambda x: x - 0.3, 0.0, 1.0) - 0.3) < 1e-7
    assert bisect_stationary(lambda x: x + 1.0, 0.0, 1.0) == 0.0
    assert bisect_stationary(lambda x: x - 2.0, 0.0, 1.0) == 1.0


def test_bisect_stationary_cubic(rng):
    for _ in range(20):
        a = float(rng.uniform(0.1, 0.9))
        root = bisect_stationary(lambda x: (x - a) ** 3 + (x - a), 0.0, 1.0)
        assert abs(root - a) < 1e-7


def test_solve_depths_value_dominated():
    # huge value weight and a slack budget: push combined depth to 1
    prob = _flat_problem(weight=np.array([0.01]), v_weight=50.0,
                         upload_s=np.array([0.05]), upload_f=np.array([0.05]),
                         recover=np.array([0.001]), value_exp=np.array([2.0]))
    sol = solve_depths(prob)
    assert sol.feasible[0]
    assert abs((sol.rho_l[0] + sol.rho_u[0]) - 1.0) < 1e-6
    assert sol.rho_l[0] * sol.rho_u[0] == 0.0


def test_solve_depths_aoi_dominated_matches_grid():
    # no value term: the solver must minimize pure service time
    prob = _flat_problem(weight=np.array([5.0]), v_weight=0.0,
                         extract_l=np.array([0.2]), upload_s=np.array([0.4]),
                         upload_f=np.array([0.1]), extract_u=np.array([0.15]),
                         recover=np.array([0.02]))
    sol = solve_depths(prob)
    best = oracles.depth_grid_best(prob, 0, n=4001)
    assert sol.feasible[0]
    got = objective_k(prob, 0, sol.rho_l[0], sol.rho_u[0])
    assert got <= best[0] + 2e-2 * abs(best[0]) + 1e-12


def test_solve_depths_infeasible_budget():
    # knowledge construction alone exceeds the slot: no depth can fit
    prob = _flat_problem(weight=np.array([1.0]), upload_s=np.array([5.0]),
                         fixed_time=np.array([1.5]))
    sol = solve_depths(prob)
    assert not sol.feasible[0]
    assert sol.rho_l[0] == 0.0 and sol.rho_u[0] == 0.0


def test_solve_depths_skips_unscheduled(rng):
    prob, _, assoc, _ = _random_problem(rng, num_gus=4)
    sol = solve_depths(prob)
    for k in range(4):
        if not prob.scheduled[k]:
            assert sol.rho_l[k] == 0.0 and sol.rho_u[k] == 0.0
            assert sol.lam1[k] == 0.0 and sol.lam2[k] == 0.0


def test_solve_depths_invariants(rng):
    for _ in range(40):
        prob, _, _, _ = _random_problem(rng, num_gus=3)
        sol = solve_depths(prob)
        for k in range(3):
            if not prob.scheduled[k]:
                continue
            rl, ru = sol.rho_l[k], sol.rho_u[k]
            assert rl * ru == 0.0
            assert rl + ru <= 1.0 + 1e-12
            assert 0.0 <= sol.lam1[k] <= 1.0 and 0.0 <= sol.lam2[k] <= 1.0
            if sol.feasible[k]:
                active = rl + ru
                assert active == 0.0 or active >= prob.rho_min * (1.0 - 1e-9)
                assert budget_k(prob, k, rl, ru) <= 1e-9
            else:
                assert rl == 0.0 and ru == 0.0
        assert sol.sweeps <= 40


def test_solve_depths_matches_grid_oracle(rng):
    checked = 0
    for _ in range(30):
        prob, _, _, _ = _random_problem(rng)
        if not prob.scheduled[0]:
            continue
        sol = solve_depths(prob)
        best = oracles.depth_grid_best(prob, 0)
        if best is None:
            assert not sol.feasible[0]
            continue
        assert sol.feasible[0]
        got = objective_k(prob, 0, sol.rho_l[0], sol.rho_u[0])
        scale = max(abs(best[0]), 1e-9)
        assert got <= best[0] + 0.02 * scale, (got, best[0])
        checked += 1
    assert checked >= 15


def test_solve_depths_warm_start_never_hurts(rng):
    for _ in range(15):
        prob, _, _, _ = _random_problem(rng)
        if not prob.scheduled[0]:
            continue
        cold = solve_depths(prob)
        if not cold.feasible[0]:
            continue
        warm = solve_depths(prob, anchor_l=cold.rho_l, anchor_u=cold.rho_u)
        assert warm.objective <= cold.objective + 1e-9


def test_build_depth_problem_fields(rng):
    prob, state, assoc, p = _random_problem(rng, num_gus=3)
    rate_gu, rate_bs = link_rates(state.uav_pos, state, p)
    assert prob.upload_full == p.physical_upload
    for m, k in enumerate(assoc):
        if k < 0:
            continue
        assert prob.scheduled[k]
        assert oracles.rel_err(prob.upload_s[k],
                               state.packet_bits[k] / rate_gu[m, k]) < 1e-12
        assert oracles.rel_err(prob.upload_f[k],
                               state.packet_bits[k] / rate_bs[m]) < 1e-12
        want_fixed = (p.local_knowledge_coef / p.f_local
                      + p.edge_knowledge_coef / p.f_edge) * state.packet_bits[k]
        assert oracles.rel_err(prob.fixed_time[k], want_fixed) < 1e-12
