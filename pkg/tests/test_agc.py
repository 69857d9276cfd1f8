import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dercosim import AgcConfig, AgcState, compute_ace, dispatch, pi_update


def cfg(**kw):
    base = dict(bias=-50.0, betas=(1.0,), kp=0.2, ki=0.2, interval=4.0,
                freq_deadband=0.0, u_min=-1.0, u_max=1.0)
    base.update(kw)
    return AgcConfig(**base)


class TestComputeAce:
    def test_zero_error(self):
        assert compute_ace(60.0, cfg()) == 0.0

    def test_underfrequency_with_negative_bias(self):
        assert compute_ace(59.95, cfg(bias=-50.0)) == pytest.approx(25.0, rel=1e-12)

    def test_inside_deadband(self):
        assert compute_ace(60.005, cfg(freq_deadband=0.01)) == 0.0

    def test_just_outside_deadband(self):
        c = cfg(freq_deadband=0.01)
        assert compute_ace(60.02, c) == pytest.approx(10 * -50.0 * 0.02, rel=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            compute_ace(float("inf"), cfg())

    @given(e=st.floats(min_value=0.001, max_value=0.5), k=st.integers(min_value=1, max_value=5))
    @settings(max_examples=50)
    def test_linearity_outside_deadband(self, e, k):
        c = cfg(freq_deadband=0.0)
        assert compute_ace(60 + k * e, c) == pytest.approx(k * compute_ace(60 + e, c), rel=1e-9)


class TestPiUpdate:
    def test_first_tick_closed_form(self):
        c = cfg(u_min=-10.0, u_max=10.0)
        st0 = AgcState()
        st1, u1 = pi_update(st0, 1.0, c, 1.0, tick=1)
        assert u1 == pytest.approx(0.2 * 1 + 0.2 * 4, rel=1e-12)   # 1.0

    def test_accumulation(self):
        c = cfg(u_min=-10.0, u_max=10.0)
        state = AgcState()
        state, u = pi_update(state, 1.0, c, 1.0, tick=1)
        state, u = pi_update(state, 1.0, c, 1.0, tick=2)
        assert u == pytest.approx(0.2 + 0.2 * 8, rel=1e-12)        # 1.8

    def test_zero_ace_forever_zero_command(self):
        c = cfg()
        state = AgcState()
        for tick in range(10):
            state, u = pi_update(state, 0.0, c, 1000.0, tick=tick)
            assert u == 0.0
        assert state.integrator == 0.0

    @given(a=st.floats(min_value=-0.01, max_value=0.01), n=st.integers(min_value=1, max_value=20))
    @settings(max_examples=50)
    def test_constant_ace_closed_form_until_clamp(self, a, n):
        c = cfg()
        state = AgcState()
        for tick in range(1, n + 1):
            state, u = pi_update(state, a, c, 1.0, tick=tick)
        expected = a * (c.kp + c.ki * c.interval * n)
        if abs(expected) <= 1.0:
            assert u == pytest.approx(expected, rel=1e-9, abs=1e-15)

    def test_clamp_and_integrator_suspension(self):
        c = cfg(u_min=-1.0, u_max=1.0)
        state = AgcState()
        for tick in range(1, 30):
            state, u = pi_update(state, 1.0, c, 1.0, tick=tick)
            assert u <= 1.0
        # integrator was frozen once the output clamped against the push
        assert state.integrator <= (1.0 - c.kp) / c.ki + c.interval + 1e-9
        # a reversed ACE must act immediately (no windup lag)
        state, u = pi_update(state, -1.0, c, 1.0, tick=100)
        assert u < 1.0 - c.kp

    def test_out_of_order_tick_rejected(self):
        c = cfg()
        state, _ = pi_update(AgcState(), 1.0, c, 1.0, tick=3)
        with pytest.raises(ValueError, match="out-of-order"):
            pi_update(state, 1.0, c, 1.0, tick=3)
        with pytest.raises(ValueError, match="out-of-order"):
            pi_update(state, 1.0, c, 1.0, tick=2)

    def test_skipped_ticks_allowed(self):
        c = cfg()
        state, _ = pi_update(AgcState(), 1.0, c, 1.0, tick=0)
        state, _ = pi_update(state, 1.0, c, 1.0, tick=5)
        assert state.last_tick == 5

    def test_sign_chain_underfrequency_raises_generation(self):
        c = cfg(bias=-50.0)
        ace = compute_ace(59.9, c)
        assert ace > 0
        _, u = pi_update(AgcState(), ace, c, 1000.0, tick=0)
        assert u > 0


class TestDispatch:
    def test_splits_by_beta(self):
        c = cfg(betas=(0.5, 0.3, 0.2))
        np.testing.assert_allclose(dispatch(1.0, c), [0.5, 0.3, 0.2], rtol=1e-15)

    def test_zero_command(self):
        c = cfg(betas=(0.5, 0.3, 0.2))
        assert np.all(dispatch(0.0, c) == 0.0)

    def test_single_unit_negative(self):
        c = cfg(betas=(1.0,))
        np.testing.assert_allclose(dispatch(-0.4, c), [-0.4], rtol=1e-15)

    @given(
        u=st.floats(min_value=-100.0, max_value=100.0),
        raw=st.lists(st.floats(min_value=0.01, max_value=5.0), min_size=1, max_size=8),
    )
    @settings(max_examples=100)
    def test_conservation(self, u, raw):
        total = sum(raw)
        betas = tuple(b / total for b in raw)
        c = cfg(betas=betas)
        assert dispatch(u, c).sum() == pytest.approx(u, rel=1e-12, abs=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            dispatch(float("nan"), cfg())


class TestConfigValidation:
    def test_betas_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            cfg(betas=(0.5, 0.4))

    def test_negative_beta_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            cfg(betas=(1.5, -0.5))

    def test_betas_renormalized_exactly(self):
        c = cfg(betas=(1 / 3, 1 / 3, 1 / 3))
        assert sum(c.betas) == 1.0

    def test_interval_positive(self):
        with pytest.raises(ValueError):
            cfg(interval=0.0)

    def test_limits_ordered(self):
        with pytest.raises(ValueError):
            cfg(u_min=1.0, u_max=-1.0)

    def test_deadband_non_negative(self):
        with pytest.raises(ValueError):
            cfg(freq_deadband=-0.01)
