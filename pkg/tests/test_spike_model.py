import numpy as np
import pytest
from scipy import integrate

from helpers import random_spike_params, stopped_spike_state
from stepspike.calendar import JumpSchedule, PiecewiseFlatCurve
from stepspike.spike_model import (
    SpikeFactorState,
    SpikeModelParams,
    bond_price_z,
    evolve_spike_state,
    forward_drift_z,
    forward_rate_z,
    integrated_short_rate_z,
    short_rate_spike_part,
    short_rate_z,
    window_overlap,
)


def hjm_drift(params, t, T):
    """Quadrature of ``int_0^t sigma(s,T) int_s^T sigma(s,u) du ds`` for the window volatility."""
    total = 0.0
    for z, h, sig in zip(params.z, params.h, params.sigma_z):
        inside = z <= T < z + h

        def alpha(s):
            if not inside or s >= z:
                return 0.0
            return sig**2 * max(min(T, z + h) - max(s, z), 0.0)

        total += integrate.quad(alpha, 0.0, t, points=[z] if 0 < z < t else None, epsabs=1e-15)[0]
    return total


def test_forward_curve_must_vanish_outside_windows():
    s = JumpSchedule((0.5,), "spike", (0.01,))
    with pytest.raises(ValueError):
        SpikeModelParams(s, [0.1], PiecewiseFlatCurve([0.5], [0.0, 0.01]))
    p = SpikeModelParams.from_heights(s, 0.1, 0.004)
    assert p.heights.tolist() == [0.004]


@pytest.mark.parametrize("seed", range(6))
def test_drift_matches_hjm_condition(seed):
    rng = np.random.default_rng(seed)
    p = random_spike_params(rng)
    for z, h in zip(p.z, p.h):
        for T in (z, z + 0.3 * h, z + 0.99 * h, z + h):
            for t in (0.0, 0.5 * z, z, T):
                if t <= T:
                    assert forward_drift_z(p, t, T) == pytest.approx(hjm_drift(p, t, T), abs=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_bond_price_matches_forward_quadrature(seed):
    rng = np.random.default_rng(seed)
    p = random_spike_params(rng)
    k = int(rng.integers(p.n))
    # straddle a window: t before or inside, T inside or after
    t = float(rng.uniform(0.0, p.z[k] + p.h[k]))
    T = float(t + rng.uniform(0.0, 1.5))
    s = stopped_spike_state(rng, p, t)
    pts = sorted({x for x in np.concatenate([p.z, p.z + p.h]) if t < x < T})
    quad = integrate.quad(lambda u: forward_rate_z(p, s, t, u), t, T, points=pts or None, limit=200,
                          epsabs=1e-15)[0]
    assert bond_price_z(p, s, t, T) == pytest.approx(np.exp(-quad), rel=1e-9)


def test_window_overlap_cases():
    s = JumpSchedule((1.0,), "spike", (0.5,))
    p = SpikeModelParams.from_heights(s, 0.0, 0.0)
    cases = [(0.0, 0.9, 0.0), (0.0, 1.2, 0.2), (0.0, 2.0, 0.5), (1.1, 1.3, 0.2), (1.2, 3.0, 0.3), (1.6, 2.0, 0.0)]
    for t, T, expected in cases:
        assert window_overlap(p, t, T)[0] == pytest.approx(expected, abs=1e-15)


def test_short_rate_zero_outside_windows():
    rng = np.random.default_rng(4)
    p = random_spike_params(rng, n=3)
    s = stopped_spike_state(rng, p, 4.0)
    for u in np.linspace(0.0, 4.0, 4001):
        inside = np.any((u >= p.z) & (u < p.z + p.h))
        if not inside:
            assert short_rate_z(p, s, u) == 0.0


def test_random_part_is_frozen_within_each_window():
    rng = np.random.default_rng(6)
    p = random_spike_params(rng, n=3)
    s = stopped_spike_state(rng, p, 4.0)
    zero = SpikeFactorState(4.0, np.zeros(p.n))
    for k in range(p.n):
        inside = np.linspace(p.z[k], p.z[k] + p.h[k], 50, endpoint=False)
        parts = [short_rate_spike_part(p, s, u) for u in inside]
        assert parts == [p.sigma_z[k] * s.w[k]] * 50
        for u in inside:
            assert short_rate_z(p, s, u) - short_rate_z(p, zero, u) == pytest.approx(parts[0], abs=1e-16)
    assert short_rate_spike_part(p, s, p.z[-1] + p.h[-1]) == 0.0


def test_short_rate_is_forward_at_maturity():
    rng = np.random.default_rng(7)
    p = random_spike_params(rng, n=3)
    for t in np.linspace(0.0, 3.0, 31):
        s = stopped_spike_state(rng, p, t)
        assert short_rate_z(p, s, t) == pytest.approx(forward_rate_z(p, s, t, t), abs=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_integrated_short_rate_matches_quadrature(seed):
    rng = np.random.default_rng(seed)
    p = random_spike_params(rng)
    t = float(rng.uniform(0.1, 3.5))
    s = stopped_spike_state(rng, p, t)
    pts = sorted({x for x in np.concatenate([p.z, p.z + p.h]) if 0 < x < t})
    quad = integrate.quad(lambda u: short_rate_z(p, s, u), 0.0, t, points=pts or None, limit=200, epsabs=1e-15)[0]
    assert integrated_short_rate_z(p, s, t) == pytest.approx(quad, abs=1e-12)


def test_evolve_stops_at_spike_date():
    s = JumpSchedule((0.2, 0.6), "spike", (0.01, 0.01))
    p = SpikeModelParams.from_heights(s, 0.1, 0.0)
    st0 = SpikeFactorState.initial(p, 3)
    z = np.random.default_rng(1).standard_normal((2, 3, 2))
    st1 = evolve_spike_state(p, st0, 0.4, z)
    assert np.allclose(st1.w[:, 0], np.sqrt(0.2) * z[0, :, 0])
    assert np.allclose(st1.w[:, 1], np.sqrt(0.2) * (z[0, :, 1] + z[1, :, 1]))
