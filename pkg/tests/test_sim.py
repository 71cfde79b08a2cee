"""Tests for the episode loop: seeded substreams, initial layout, logging
and CSV rendering, the AoI/queue recursions replayed from logs, baseline
association rules, and the per-scheme continuous-variable dispatch."""

import numpy as np
import pytest

import oracles
from saoi_uav.model import SystemParams, WorldState, information_value, link_rates
from saoi_uav.sim import (MetricLog, SCHEMES, baseline_assoc_max_aoi,
                          baseline_assoc_max_value, init_state,
                          initial_uav_positions, run_episode,
                          scheme_continuous_vars, substreams, summarize,
                          draw_arrivals)


def _small_params(**over):
    """Two UAVs, three GUs: cheap enough to run the full optimizer per slot."""
    return SystemParams(num_uavs=2, num_gus=3, **over)


def _coverage_state(params):
    """Hand-placed layout for the association baselines (M=2, K=4)."""
    return WorldState(slot=0,
                      uav_pos=np.array([[200.0, 500.0], [600.0, 500.0]]),
                      gu_pos=np.array([[200.0, 400.0], [250.0, 500.0],
                                       [600.0, 600.0], [900.0, 900.0]]),
                      aoi=np.array([3.0, 3.0, 1.0, 9.0]),
                      packet_bits=np.full(4, 2e6),
                      packet_gen=np.zeros(4, dtype=int),
                      fading_gu=np.zeros((2, 4), dtype=complex),
                      fading_bs=np.zeros(2, dtype=complex))


# ---------------------------------------------------------------------------
# substreams and initial conditions
# ---------------------------------------------------------------------------

def test_substreams_named_and_deterministic():
    a = substreams(123)
    assert set(a) == {"fading", "arrivals", "policy"}
    b = substreams(123)
    assert a["fading"].random() == b["fading"].random()
    assert a["arrivals"].random() == b["arrivals"].random()
    assert substreams(124)["fading"].random() != substreams(123)["fading"].random()


def test_substreams_are_independent():
    a = substreams(7)
    b = substreams(7)
    a["fading"].random(1000)                      # advance one stream only
    assert a["arrivals"].random() == b["arrivals"].random()


def test_initial_positions_midline():
    pos = initial_uav_positions(SystemParams())
    assert np.allclose(pos, [[250.0, 500.0], [500.0, 500.0], [750.0, 500.0]])
    assert np.allclose(initial_uav_positions(SystemParams(num_uavs=1)),
                       [[500.0, 500.0]])


def test_initial_positions_rejects_crowding():
    with pytest.raises(ValueError):
        initial_uav_positions(SystemParams(num_uavs=35))   # spacing < d_min


def test_init_state_paired_across_schemes():
    # the arrivals stream fixes GU layout and packet sizes, so two runs of
    # different schemes under one seed see the same world
    params = SystemParams()
    s1 = init_state(params, substreams(9)["arrivals"])
    s2 = init_state(params, substreams(9)["arrivals"])
    assert np.array_equal(s1.gu_pos, s2.gu_pos)
    assert np.array_equal(s1.packet_bits, s2.packet_bits)
    assert (s1.gu_pos[:, 0] <= params.area_width).all()
    assert (s1.gu_pos[:, 1] <= params.area_height).all()
    assert s1.aoi.sum() == 0.0 and s1.slot == 0


def test_draw_arrivals_consumes_stream_regardless_of_outcome():
    never = SystemParams(p_gen=0.0)
    always = SystemParams(p_gen=1.0)
    state_n = init_state(never, substreams(3)["arrivals"])
    state_a = init_state(always, substreams(3)["arrivals"])
    g_n = np.random.default_rng(55)
    g_a = np.random.default_rng(55)
    state_n.slot = state_a.slot = 4
    draw_arrivals(state_n, never, g_n)
    draw_arrivals(state_a, always, g_a)
    assert (state_n.packet_gen == 0).all()        # nothing regenerated
    assert (state_a.packet_gen == 4).all()        # everything regenerated
    assert g_n.random() == g_a.random()           # same draws consumed


# ---------------------------------------------------------------------------
# episode loop invariants
# ---------------------------------------------------------------------------

def test_force_idle_ages_everyone(params):
    log = run_episode(params, "MaxAoI", seed=0, horizon=6, force_idle=True)
    aoi = log.aoi_matrix()
    for i in range(6):
        assert np.allclose(aoi[i], params.t_max * (i + 1))
    assert not log.value_matrix().any()
    assert (log.assoc_matrix() == -1).all()
    rho_l, rho_u = log.depth_matrices()
    assert not rho_l.any() and not rho_u.any()
    assert not log.t_total_matrix().any()


def test_same_seed_same_log_and_csv(tmp_path):
    params = _small_params()
    l1 = run_episode(params, "NoExtraction", seed=3, horizon=20)
    l2 = run_episode(params, "NoExtraction", seed=3, horizon=20)
    assert l1.rows == l2.rows
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    l1.to_csv(str(p1))
    l2.to_csv(str(p2))
    assert p1.read_bytes() == p2.read_bytes()
    assert run_episode(params, "NoExtraction", seed=4, horizon=20).rows != l1.rows


def test_eval_does_not_mutate_agent(params):
    # rerunning the same seeded episode with one agent gives identical
    # logs: evaluation freezes normalization and never trains
    small = _small_params()
    from saoi_uav.hippo import new_agent
    agent = new_agent(small, "LyaHiPPO", seed=6)
    l1 = run_episode(small, "LyaHiPPO", seed=6, horizon=4, agent=agent)
    l2 = run_episode(small, "LyaHiPPO", seed=6, horizon=4, agent=agent)
    assert l1.rows == l2.rows
    assert agent.obs_norm.count == 0.0
    assert len(agent.pending_buffer.obs) == 0


def test_unscheduled_gus_age_by_slot_length():
    params = _small_params()
    log = run_episode(params, "MaxAoI", seed=5, horizon=10)
    aoi = log.aoi_matrix()
    assoc = log.assoc_matrix()
    t_tot = log.t_total_matrix()
    val = log.value_matrix()
    served_any = False
    for i in range(10):
        prev = aoi[i - 1] if i > 0 else np.zeros(params.num_gus)
        served = set(int(k) for k in assoc[i] if k >= 0)
        for k in range(params.num_gus):
            if k in served:
                served_any = True
                assert 0.0 < t_tot[i, k] <= params.t_max + 1e-9
                assert val[i, k] > 0.0
            else:
                assert aoi[i, k] == pytest.approx(prev[k] + params.t_max)
                assert t_tot[i, k] == 0.0 and val[i, k] == 0.0
    assert served_any


def test_queue_column_replays_recursion():
    params = _small_params()
    log = run_episode(params, "MaxAoI", seed=5, horizon=10)
    aoi = log.aoi_matrix()
    qm = log.queue_matrix()
    prev = np.zeros(params.num_gus)
    for i in range(10):
        want = [oracles.ref_queue_step(prev[k], aoi[i, k], params.aoi_budget)
                for k in range(params.num_gus)]
        assert np.allclose(qm[i], want, rtol=1e-12)
        prev = qm[i]


def test_saoi_column_matches_definition():
    params = _small_params()
    log = run_episode(params, "MaxAoI", seed=5, horizon=10)
    want = np.mean(params.w_aoi * log.aoi_matrix()
                   - params.w_value * log.value_matrix(), axis=1)
    assert np.allclose(log.saoi_column(), want, rtol=1e-12)


def test_unknown_scheme_and_bad_horizon(params):
    with pytest.raises(ValueError):
        run_episode(params, "Oracle", seed=0)
    with pytest.raises(ValueError):
        run_episode(params, "MaxAoI", seed=0, horizon=0)
    assert "LyaHiPPO" in SCHEMES and len(SCHEMES) == 5


# ---------------------------------------------------------------------------
# baseline association rules
# ---------------------------------------------------------------------------

def test_max_aoi_assoc_coverage_tie_and_claiming():
    params = SystemParams(num_uavs=2, num_gus=4)
    state = _coverage_state(params)
    # tie at AoI 3 between GU0 and GU1 breaks to the lower index; the
    # stalest GU overall (GU3, AoI 9) is out of every UAV's range
    assert np.array_equal(baseline_assoc_max_aoi(state, params), [0, 1])
    state.aoi = np.array([3.0, 5.0, 1.0, 9.0])
    # UAV0 now takes GU1; UAV1 falls back to GU2 because GU1 is claimed
    assert np.array_equal(baseline_assoc_max_aoi(state, params), [1, 2])


def test_max_aoi_assoc_idles_when_nothing_in_range():
    params = SystemParams(num_uavs=2, num_gus=4, cov_radius=10.0)
    state = _coverage_state(params)
    assert np.array_equal(baseline_assoc_max_aoi(state, params), [-1, -1])


def test_max_value_assoc_ranks_by_size_proxy():
    params = SystemParams(num_uavs=2, num_gus=4)
    state = _coverage_state(params)
    state.packet_bits = np.array([1e6, 3e6, 2e6, 9e9])
    # biggest packet in range wins; GU3's giant packet is unreachable
    assert np.array_equal(baseline_assoc_max_value(state, params), [1, 2])
    state.packet_bits = np.array([2e6, 2e6, 1e6, 9e9])
    # exact value tie breaks to the lower index, so UAV0 takes GU0 and
    # UAV1 falls back to the biggest unclaimed packet in its range (GU1)
    assert np.array_equal(baseline_assoc_max_value(state, params), [0, 1])


# ---------------------------------------------------------------------------
# per-scheme continuous variables
# ---------------------------------------------------------------------------

def test_no_extraction_relays_raw_packets():
    params = SystemParams(num_uavs=2, num_gus=4)
    state = _coverage_state(params)
    q = np.zeros(4)
    assoc = baseline_assoc_max_aoi(state, params)
    action, outcome = scheme_continuous_vars("NoExtraction", state, q,
                                             assoc, params)
    rate_gu, rate_bs = link_rates(action.positions, state, params)
    for m, k in enumerate(action.assoc):
        if k < 0:
            continue
        assert action.relay[k]
        assert action.rho_local[k] == 1.0 and action.rho_edge[k] == 0.0
        d = float(state.packet_bits[k])
        # raw forwarding: airtime only, no extraction or recovery stages
        want = d / rate_gu[m, k] + d / rate_bs[m]
        assert outcome.t_total[k] == pytest.approx(want, rel=1e-9)
        assert outcome.value[k] == pytest.approx(
            information_value(d, 1.0, params.value_rate), rel=1e-12)
    assert (action.assoc >= 0).any()


def test_forced_rho_pins_logged_depths():
    params = _small_params(forced_rho=0.5)
    log = run_episode(params, "MaxAoI", seed=1, horizon=8)
    rho_l, rho_u = log.depth_matrices()
    assert set(np.unique(rho_l)) <= {0.0, 0.5}
    assert not rho_u.any()
    assert (rho_l == 0.5).any()                   # somebody was actually served


# ---------------------------------------------------------------------------
# logging and summaries
# ---------------------------------------------------------------------------

def _toy_log():
    log = MetricLog("X", 0, num_uavs=1, num_gus=2)
    log.append_slot(0, [1.0, 2.0], [0.0, 0.5], 0.6, [0.0, 0.0], -1.0,
                    [[10.0, 20.0]], [1], [0.0, 0.3], [0.0, 0.0], [0.0, 0.4])
    log.append_slot(1, [2.0, 1.0], [0.25, 0.0], 0.4, [1.0, 0.0], -2.0,
                    [[11.0, 21.0]], [-1], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0])
    return log


def test_summarize_frozen_values():
    s = summarize(_toy_log())
    assert s["aoi_mean"] == pytest.approx(1.5)
    assert s["value_mean"] == pytest.approx(0.375)        # delivered only
    assert s["value_slot_mean"] == pytest.approx(0.1875)  # all GU-slots
    assert s["saoi_mean"] == pytest.approx(0.5)
    assert s["slots"] == 2


def test_summarize_no_deliveries():
    log = MetricLog("X", 0, 1, 1)
    log.append_slot(0, [1.0], [0.0], 1.0, [0.0], 0.0, [[0.0, 0.0]],
                    [-1], [0.0], [0.0], [0.0])
    assert summarize(log)["value_mean"] == 0.0


def test_metric_log_accessor_layout():
    log = MetricLog("X", 0, num_uavs=2, num_gus=3)
    log.append_slot(0, [1, 2, 3], [4, 5, 6], 7, [8, 9, 10], 11,
                    [[12, 13], [14, 15]], [1, -1],
                    [16, 17, 18], [19, 20, 21], [22, 23, 24])
    assert len(log.header) == len(log.rows[0])
    assert np.array_equal(log.aoi_matrix(), [[1, 2, 3]])
    assert np.array_equal(log.value_matrix(), [[4, 5, 6]])
    assert log.saoi_column() == [7]
    assert np.array_equal(log.queue_matrix(), [[8, 9, 10]])
    assert log.reward_column() == [11]
    assert np.array_equal(log.positions_tensor(), [[[12, 13], [14, 15]]])
    assert np.array_equal(log.assoc_matrix(), [[1, -1]])
    assert log.assoc_matrix().dtype == int
    rho_l, rho_u = log.depth_matrices()
    assert np.array_equal(rho_l, [[16, 17, 18]])
    assert np.array_equal(rho_u, [[19, 20, 21]])
    assert np.array_equal(log.t_total_matrix(), [[22, 23, 24]])


def test_csv_rendering(tmp_path):
    log = MetricLog("X", 0, num_uavs=1, num_gus=1)
    log.append_slot(0, [0.123456789123], [1e-7], -0.5, [3.0], -1.25,
                    [[250.0, 500.0]], [-1], [0.001], [0.0], [0.75])
    path = tmp_path / "log.csv"
    log.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == ("slot,aoi_0,value_0,saoi,queue_0,reward,"
                        "uav_x_0,uav_y_0,assoc_0,rho_l_0,rho_u_0,t_total_0")
    # slot and association render as integers, floats as %.9g
    assert lines[1] == ("0,0.123456789,1e-07,-0.5,3,-1.25,"
                        "250,500,-1,0.001,0,0.75")
    assert len(lines) == 2
