import pytest
from hypothesis import given, strategies as st

from revsim.perf import JobView, PerfEstimator, UnseededError, estimation_error_delay


def est(alpha=2.0, tau=1.0, tau_cli=None, ema=0.5):
    e = PerfEstimator(ema)
    e.record_restart_latency(0, alpha)
    e.record_production(0, tau)
    if tau_cli is not None:
        e.record_client_access(1, tau_cli)
    return e


class TestEma:
    def test_first_observation_seeds(self):
        e = PerfEstimator(0.5)
        assert e.record_restart_latency(0, 13.0) == 13.0
        assert e.alpha_sim(0) == 13.0

    def test_alpha_one_tracks_last(self):
        e = PerfEstimator(1.0)
        for x in (2, 4, 2, 4, 7):
            e.record_production(0, x)
        assert e.tau_sim_of(0) == 7

    def test_half(self):
        e = PerfEstimator(0.5)
        e.record_restart_latency(0, 10)
        assert e.record_restart_latency(0, 20) == 15

    @pytest.mark.parametrize("tau", [3.0, 14.0])
    def test_constant_stream(self, tau):
        e = PerfEstimator(0.3)
        for _ in range(10):
            e.record_production(0, tau)
        assert e.tau_sim_of(0) == pytest.approx(tau)

    @given(st.lists(st.floats(0, 1e4), min_size=1, max_size=30), st.floats(0.01, 1))
    def test_within_observed_range(self, xs, a):
        e = PerfEstimator(a)
        for x in xs:
            e.record_client_access(1, x)
        v = e.tau_cli_of(1)
        assert min(xs) - 1e-9 <= v <= max(xs) + 1e-9

    def test_negative_latency_rejected(self):
        with pytest.raises(ValueError):
            PerfEstimator().record_restart_latency(0, -1)

    def test_unseeded(self):
        e = PerfEstimator()
        with pytest.raises(UnseededError):
            e.alpha_sim(0)
        assert not e.seeded()

    def test_nearest_level_fallback(self):
        e = est()
        e.record_production(3, 0.25)
        assert e.tau_sim_of(2) == 0.25
        assert e.tau_sim_of(1) == 1.0
        assert e.alpha_sim(5) == 2.0


class TestTimes:
    def test_t_sim(self):
        assert est(2, 1).t_sim(4) == 6
        assert est(2, 1).t_sim(0) == 2
        assert est(13, 3).t_sim(48) == 157

    def test_wait_on_disk(self):
        assert est().estimated_wait(3, on_disk=True) == 0

    def test_wait_no_job(self):
        # key three steps past its restart step
        assert est(2, 1).estimated_wait(3) == 5

    def test_wait_mid_flight(self):
        job = JobView(0, 9, 0, launched_at=0.0, last_key=4, last_at=10.0)
        assert est(2, 1).estimated_wait(3, job, key=6, now=10.0) == 2

    def test_wait_while_launching(self):
        job = JobView(4, 9, 0, launched_at=10.0)
        assert est(2, 1).estimated_wait(3, job, key=5, now=11.0) == 1 + 2

    def test_error_delay(self):
        assert estimation_error_delay([(5, 5), (5, 5)]) == 0
        assert estimation_error_delay([(10, 7), (6, 9)]) == 3
        assert estimation_error_delay([]) == 0

    def test_history_recorded(self):
        e = PerfEstimator()
        e.record_restart_latency(0, 10, predicted=7)
        assert e.alpha_history == [(10, 7)]

    def test_snapshot_keys(self):
        snap = est(2, 1, 0.5).snapshot()
        assert snap == {"alpha.0": 2.0, "tau_sim.0": 1.0, "tau_cli.1": 0.5}
