import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from offloadsim import sysmodel as sm

P = sm.SystemParams()
CPU_CAP_DELAY = P.task_cycles / P.max_cpu_hz  # 4.1875e-3 s
CPU_CAP_JOULES = P.switched_cap * P.task_cycles * P.max_cpu_hz ** 2  # 3.35e-3 J


def make_state(q_task=0, q_energy=0, assoc=1, level=0):
    gains = tuple(ladder[level] for ladder in P.gain_levels)
    return sm.NetworkState(q_task, q_energy, assoc, gains)


class TestLocalExecDelay:
    def test_boundary_energy_hits_cpu_cap_exactly(self):
        # closed form and the frequency clamp agree at the cap energy
        d = sm.local_exec_delay(CPU_CAP_JOULES, P)
        assert d == pytest.approx(4.1875e-3, rel=1e-12)
        assert P.task_cycles / d <= P.max_cpu_hz * (1 + 1e-12)

    def test_huge_energy_is_clamped(self):
        assert sm.local_exec_delay(1.0, P) == pytest.approx(4.1875e-3, rel=1e-12)

    def test_square_root_scaling_below_clamp(self):
        d1 = sm.local_exec_delay(1e-4, P)
        d4 = sm.local_exec_delay(4e-4, P)
        assert P.task_cycles / d4 < P.max_cpu_hz  # still unclamped
        assert d4 == pytest.approx(d1 / 2.0, rel=1e-12)

    def test_non_positive_energy_rejected(self):
        with pytest.raises(ValueError):
            sm.local_exec_delay(0.0, P)
        with pytest.raises(ValueError):
            sm.local_exec_delay(-1e-3, P)

    def test_implied_frequency_never_exceeds_cap(self):
        rng = np.random.default_rng(0)
        for energy in 10.0 ** rng.uniform(-6, 1, size=300):
            d = sm.local_exec_delay(energy, P)
            assert P.task_cycles / d <= P.max_cpu_hz * (1 + 1e-12)


class TestHandover:
    def test_same_node_is_free(self):
        assert sm.handover_delay(2, 2, P) == 0.0

    def test_switch_costs_sigma(self):
        assert sm.handover_delay(1, 2, P) == pytest.approx(2.0e-3)
        assert sm.handover_delay(3, 1, P) == pytest.approx(2.0e-3)

    def test_local_is_rejected(self):
        with pytest.raises(ValueError):
            sm.handover_delay(0, 1, P)


class TestAchievableRate:
    def test_unit_snr(self):
        assert sm.achievable_rate(1.0, 1.0, 1.0, 6.0e5) == pytest.approx(6.0e5)

    def test_vanishing_snr(self):
        assert sm.achievable_rate(1e-12, 1e-12, 1.0, 6.0e5) < 1.0

    def test_snr_three(self):
        assert sm.achievable_rate(3.0, 1.0, 1.0, 6.0e5) == pytest.approx(1.2e6)


class TestSolveTransmissionTime:
    def test_constructed_exact_root(self):
        # gain*E/I = 0.31 makes d = 1e-2 exact: log2(1 + 0.31/0.01) = 5
        d = sm.solve_transmission_time(2e-3, 155.0, 1.0, P)
        assert d == pytest.approx(1.0e-2, rel=1e-9)
        residual = abs(6e5 * d * math.log2(1 + 0.31 / d) - 3e4) / 3e4
        assert residual < 1e-9

    def test_payload_monotonicity(self):
        heavier = sm.SystemParams(task_bits=6.0e4)
        d1 = sm.solve_transmission_time(2e-3, 155.0, 1.0, P)
        d2 = sm.solve_transmission_time(2e-3, 155.0, 1.0, heavier)
        assert d2 > d1

    def test_supremum_bound_infeasible(self):
        # gain*E/I = 0.03 gives a deliverable-bit supremum below the payload
        assert 6e5 * 0.03 / math.log(2) < 3e4
        with pytest.raises(sm.TransmissionInfeasible):
            sm.solve_transmission_time(2e-3, 15.0, 1.0, P)

    def test_power_cap_stretch(self):
        # large energy at high gain: root under E/p_max, stretched duration used
        energy = 8e-3
        g = P.gain_levels[0][-1]
        d = sm.solve_transmission_time(energy, g, P.interference_watts, P)
        assert d == pytest.approx(energy / P.max_tx_power)
        bits = 6e5 * d * math.log2(1 + g * energy / P.interference_watts / d)
        assert bits >= P.task_bits

    def test_power_cap_overflow_raises(self):
        # with a handover the stretched 4 ms no longer fits the 3 ms budget
        with pytest.raises(sm.PowerInfeasible):
            sm.solve_transmission_time(8e-3, P.gain_levels[0][-1],
                                       P.interference_watts, P,
                                       handover=P.handover_seconds)

    def test_random_feasible_residuals(self):
        rng = np.random.default_rng(42)
        a_min = P.task_bits * math.log(2) / P.bandwidth_hz
        for _ in range(500):
            a = a_min * 10 ** rng.uniform(0.5, 4.0)
            d = sm._tx_root(a, P.bandwidth_hz, P.task_bits)
            residual = abs(sm._deliverable_bits(d, a, P.bandwidth_hz)
                           - P.task_bits) / P.task_bits
            assert residual < 1e-9
            # deliverable bits increase through the root
            assert sm._deliverable_bits(d * 0.5, a, P.bandwidth_hz) < P.task_bits
            assert sm._deliverable_bits(d * 2.0, a, P.bandwidth_hz) > P.task_bits


class TestPayment:
    def test_direct_sum(self):
        p = sm.SystemParams(price_per_second=1.0)
        assert sm.payment(0.0, 3.0e-3, p) == pytest.approx(3.001e-3)

    def test_epoch_cap(self):
        p = sm.SystemParams(price_per_second=1.0)
        assert sm.payment(2.0e-3, 4.0e-3, p) == pytest.approx(3.0e-3)

    def test_zero(self):
        p = sm.SystemParams(price_per_second=1.0, server_exec_seconds=0.0)
        assert sm.payment(0.0, 0.0, p) == 0.0

    @given(st.floats(0.0, 5.0e-3), st.floats(0.0, 1.0))
    def test_bounded_by_price_times_epoch(self, tx, h_frac):
        h = h_frac * P.epoch_seconds
        value = sm.payment(h, tx, P)
        assert 0.0 <= value <= P.price_per_second * P.epoch_seconds + 1e-15


class TestExecutionDelay:
    def test_not_executed(self):
        d = sm.execution_delay(sm.JointAction(1, 0), make_state(1, 2), 0.0, 0.0, P)
        assert d == 0.0

    def test_local_composes_cpu_delay(self):
        d = sm.execution_delay(sm.JointAction(0, 2), make_state(1, 2),
                               CPU_CAP_JOULES, 0.0, P)
        assert d == pytest.approx(4.1875e-3, rel=1e-12)

    def test_offload_sums_parts(self):
        d = sm.execution_delay(sm.JointAction(1, 1), make_state(1, 2, assoc=1),
                               2e-3, 1e-3, P)
        assert d == pytest.approx(1e-3 + 1e-6)


class TestStep:
    def test_energy_queue_arithmetic(self):
        state = make_state(q_task=2, q_energy=3)
        nxt, out = sm.step(state, sm.JointAction(0, 2),
                           sm.ArrivalSample(0, 1), P, np.random.default_rng(0))
        assert nxt.q_energy == 2
        assert out.energy_spent == 2

    def test_full_queue_completion_absorbs_arrival(self):
        state = make_state(q_task=4, q_energy=2)
        nxt, out = sm.step(state, sm.JointAction(0, 2),
                           sm.ArrivalSample(1, 0), P, np.random.default_rng(0))
        assert out.completed
        assert nxt.q_task == 4
        assert out.drops == 0

    def test_full_queue_without_completion_drops(self):
        state = make_state(q_task=4, q_energy=1)
        # one unit cannot finish a local run inside the epoch
        nxt, out = sm.step(state, sm.JointAction(0, 1),
                           sm.ArrivalSample(1, 0), P, np.random.default_rng(0))
        assert not out.completed
        assert out.exec_delay > P.epoch_seconds
        assert nxt.q_task == 4
        assert out.drops == 1

    def test_association_follows_offload(self):
        state = make_state(q_task=1, q_energy=2, assoc=1, level=5)
        nxt, out = sm.step(state, sm.JointAction(3, 1),
                           sm.ArrivalSample(0, 0), P, np.random.default_rng(0))
        assert nxt.assoc == 3
        assert out.handover == pytest.approx(P.handover_seconds)

    def test_invalid_actions_raise(self):
        with pytest.raises(sm.InvalidAction):
            sm.step(make_state(1, 1), sm.JointAction(0, 2),
                    sm.ArrivalSample(0, 0), P, np.random.default_rng(0))
        with pytest.raises(sm.InvalidAction):
            sm.step(make_state(0, 3), sm.JointAction(0, 1),
                    sm.ArrivalSample(0, 0), P, np.random.default_rng(0))

    def test_handover_offload_cannot_complete_by_default(self):
        state = make_state(q_task=1, q_energy=4, assoc=1, level=5)
        _, out = sm.step(state, sm.JointAction(2, 3), sm.ArrivalSample(0, 0),
                        P, np.random.default_rng(0))
        assert out.handover > 0
        assert not out.completed
        assert out.payment > 0


class TestUtility:
    def test_all_zero_outcome(self):
        out = sm.EpochOutcome()
        assert sm.utility(out, sm.UtilityWeights(), P.epoch_seconds) == 0.0

    def test_decided_form(self):
        out = sm.EpochOutcome(exec_delay=4e-3, queuing=1, drops=0, payment=3e-3)
        u = sm.utility(out, sm.UtilityWeights(), P.epoch_seconds)
        assert u == pytest.approx(-1.2e-2)

    def test_positive_scaling_keeps_argmax(self):
        outs = [
            sm.EpochOutcome(exec_delay=4e-3, queuing=1),
            sm.EpochOutcome(exec_delay=1e-3, queuing=2, payment=2e-3),
            sm.EpochOutcome(drops=1),
        ]
        w1 = sm.UtilityWeights()
        w2 = sm.UtilityWeights(delay=2.0, queuing=2.0, drop=2.0, payment=2.0)
        u1 = [sm.utility(o, w1, P.epoch_seconds) for o in outs]
        u2 = [sm.utility(o, w2, P.epoch_seconds) for o in outs]
        assert int(np.argmax(u1)) == int(np.argmax(u2))
        for a, b in zip(u1, u2):
            assert b == pytest.approx(2 * a)


class TestArrivals:
    def test_degenerate_probabilities(self):
        rng = np.random.default_rng(1)
        never = sm.SystemParams(task_arrival_prob=0.0)
        always = sm.SystemParams(task_arrival_prob=1.0)
        assert all(sm.sample_arrivals(rng, never).tasks == 0 for _ in range(200))
        assert all(sm.sample_arrivals(rng, always).tasks == 1 for _ in range(200))

    def test_law_of_large_numbers(self):
        rng = np.random.default_rng(2)
        n = 10 ** 6
        draws = rng.random(n) < P.task_arrival_prob
        mean = float(np.mean(draws))
        assert abs(mean - 0.5) < 0.002

    def test_poisson_mode(self):
        p = sm.SystemParams(energy_arrival=sm.EnergyArrival("poisson", 0.8))
        rng = np.random.default_rng(3)
        samples = [sm.sample_arrivals(rng, p).energy for _ in range(20000)]
        assert abs(np.mean(samples) - 0.8) < 0.03
        assert max(samples) > 1  # counts above one occur


@given(
    q_task=st.integers(0, 4), q_energy=st.integers(0, 4),
    spend=st.integers(0, 4), a_task=st.integers(0, 1), a_energy=st.integers(0, 3),
    offload=st.integers(0, 3), level=st.integers(0, 5),
)
@settings(max_examples=300, deadline=None)
def test_queue_update_invariants(q_task, q_energy, spend, a_task, a_energy,
                                 offload, level):
    spend = min(spend, q_energy) if q_task > 0 else 0
    state = make_state(q_task, q_energy, assoc=1, level=level)
    nxt, out = sm.step(state, sm.JointAction(offload, spend),
                       sm.ArrivalSample(a_task, a_energy), P,
                       np.random.default_rng(0))
    assert 0 <= nxt.q_task <= P.task_queue_cap
    assert 0 <= nxt.q_energy <= P.energy_queue_cap
    # energy conservation when the cap is not hit
    if q_energy - spend + a_energy <= P.energy_queue_cap:
        assert nxt.q_energy - q_energy == a_energy - spend
    # drop accounting
    served = 1 if out.completed else 0
    assert out.drops == max(q_task - served + a_task - P.task_queue_cap, 0)
    if out.drops > 0:
        assert nxt.q_task == P.task_queue_cap
    # handover marker
    if offload in (0, 1):
        assert out.handover == 0.0
    else:
        assert out.handover == P.handover_seconds
    assert out.exec_delay >= 0 and out.payment >= 0


def test_trajectory_determinism():
    def rollout():
        env = sm.DeviceEnv(P, sm.UtilityWeights(),
                           np.random.default_rng(100), np.random.default_rng(200))
        policy_rng = np.random.default_rng(300)
        trace = []
        for _ in range(500):
            s = env.state
            e = policy_rng.integers(0, s.q_energy + 1) if s.q_task else 0
            c = int(policy_rng.integers(0, P.num_edge_nodes + 1))
            out = env.advance(sm.JointAction(c, int(e)))
            trace.append((env.state, out.utility, out.drops))
        return trace

    assert rollout() == rollout()


def test_params_validation():
    with pytest.raises(ValueError):
        sm.SystemParams(activity_factor=1.0)
    with pytest.raises(ValueError):
        sm.SystemParams(task_arrival_prob=1.5)
    with pytest.raises(ValueError):
        sm.SystemParams(gain_levels=((1.0, 2.0),))  # wrong ladder length
    with pytest.raises(ValueError):
        sm.EnergyArrival("gaussian", 0.5)
