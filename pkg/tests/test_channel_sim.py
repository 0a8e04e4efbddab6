import cmath
import dataclasses

import numpy as np
import pytest

from csiaug.channel_sim import (
    ISOTROPIC, AntennaPattern, Mpc, NonidealityProfile, Scenario, apply_nonideality, channel_response,
    default_scenario, draw_sample, noise_variance_for_snr, nonideality_draws, response_matrix,
    synthesize_dataset,
)
from csiaug.core import TensorDims, validate
from csiaug.errors import ConfigError, PreconditionError

from conftest import random_dataset


def oracle_response(mpcs, freq):
    # isotropic pattern, plain scalar arithmetic
    return sum(complex(p.alpha) * cmath.exp(-2j * cmath.pi * freq * p.tau) for p in mpcs)


@pytest.mark.parametrize("f", [0.0, 1e6, 2.4e9, 5.21e9])
def test_single_zero_delay_path_is_unity(f):
    assert channel_response([Mpc(1 + 0j, 0.0)], ISOTROPIC, f) == 1 + 0j


def test_half_cycle_delay_flips_sign():
    f = 1e9
    h = channel_response([Mpc(1 + 0j, 0.5 / f)], ISOTROPIC, f)
    assert abs(h - (-1 + 0j)) <= 1e-12


def test_destructive_pair_cancels():
    f = 2e9
    h = channel_response([Mpc(1, 0.0), Mpc(1, 0.5 / f)], ISOTROPIC, f)
    assert abs(h) <= 1e-12


def test_empty_mpc_list_rejected():
    with pytest.raises(PreconditionError):
        channel_response([], ISOTROPIC, 1e9)
    with pytest.raises(PreconditionError):
        Mpc(1, -1e-9)


def _random_mpcs(rng, n):
    return [Mpc(complex(*rng.standard_normal(2)), float(rng.uniform(0, 1e-7)),
                float(rng.uniform(-np.pi, np.pi)), float(rng.uniform(-1, 1))) for _ in range(n)]


def test_linearity_in_alpha(rng):
    for _ in range(20):
        a, b = _random_mpcs(rng, 3), _random_mpcs(rng, 4)
        f = float(rng.uniform(1e9, 6e9))
        lhs = channel_response(a + b, ISOTROPIC, f)
        rhs = channel_response(a, ISOTROPIC, f) + channel_response(b, ISOTROPIC, f)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
        scaled = [dataclasses.replace(p, alpha=2.5 * p.alpha) for p in a]
        assert abs(channel_response(scaled, ISOTROPIC, f) - 2.5 * channel_response(a, ISOTROPIC, f)) <= 1e-12


def test_single_path_magnitude_is_frequency_flat(rng):
    p = Mpc(0.3 - 0.4j, 37e-9)
    for f in rng.uniform(1e9, 6e9, 10):
        assert abs(abs(channel_response([p], ISOTROPIC, f)) - 0.5) <= 1e-12


def test_response_matrix_matches_scalar_oracle(rng):
    mpcs = _random_mpcs(rng, 6)
    freqs = np.linspace(5.17e9, 5.25e9, 9)
    H = response_matrix(mpcs, ISOTROPIC, freqs, 3)
    for j in range(3):
        for m, f in enumerate(freqs):
            assert abs(H[j, m] - oracle_response(mpcs, f)) <= 1e-12


def test_tabulated_pattern_applies_per_element():
    az = np.array([-np.pi, np.pi])
    el = np.array([-1.0, 1.0])
    fr = np.array([1e9, 6e9])
    gains = np.ones((2, 2, 2, 2), complex)
    gains[1] *= 2j
    pat = AntennaPattern("tabulated", az, el, fr, gains)
    assert pat.gain(0.3, 0.1, 3e9, 0) == pytest.approx(1)
    assert pat.gain(0.3, 0.1, 3e9, 1) == pytest.approx(2j)
    mpcs = [Mpc(1, 1e-9, 0.0, 0.0)]
    H = response_matrix(mpcs, pat, [2e9], 2)
    assert H[1, 0] == pytest.approx(2j * H[0, 0])
    assert channel_response(mpcs, pat, 2e9, element=1) == pytest.approx(H[1, 0])


def test_isotropic_gain_is_one():
    assert np.all(ISOTROPIC.gain(np.linspace(-3, 3, 5), 0.2, 5e9) == 1)


def test_noiseless_sample_reproduced_from_draws():
    sc = default_scenario(TensorDims(8, 2, 3), seed=3)
    ds = synthesize_dataset(sc, 6)
    for i in range(6):
        draw = draw_sample(sc, i)
        np.testing.assert_array_equal(ds.labels[i], draw.location)
        for k, paths in enumerate(draw.mpcs):
            for m, f in enumerate(sc.subcarrier_freqs):
                want = oracle_response(paths, f)
                for j in range(2):
                    assert abs(ds.csi[i, k, j, m] - want) <= 1e-12 * max(1, abs(want))


def test_single_fixed_path_noiseless_case():
    sc = default_scenario(TensorDims(4, 1, 1), seed=0, mpc_count_range=(1, 1))
    ds = synthesize_dataset(sc, 3)
    for i in range(3):
        path = draw_sample(sc, i).mpcs[0]
        assert len(path) == 1
        for m, f in enumerate(sc.subcarrier_freqs):
            assert ds.csi[i, 0, 0, m] == channel_response(path, ISOTROPIC, f)


def test_synthesis_deterministic_and_valid():
    sc = default_scenario(TensorDims(16, 2, 4), seed=11, noise_variance=1e-4)
    a = synthesize_dataset(sc, 1000)
    b = synthesize_dataset(sc, 1000)
    assert a.equals(b)
    assert len(a) == 1000 and validate(a) == []
    c = synthesize_dataset(dataclasses.replace(sc, seed=12), 10)
    assert not np.array_equal(a.csi[:10], c.csi)


def test_synthesis_schedule_independent():
    sc = default_scenario(TensorDims(8, 2, 4), seed=5, noise_variance=1e-3)
    whole = synthesize_dataset(sc, 40)
    threaded = synthesize_dataset(sc, 40, workers=4)
    tail = synthesize_dataset(sc, 15, start=25)
    assert whole.equals(threaded)
    assert np.array_equal(whole.csi[25:], tail.csi)


def test_labels_inside_area():
    sc = default_scenario(TensorDims(4, 1, 2), width=6, height=3)
    ds = synthesize_dataset(sc, 200)
    assert (ds.labels[:, 0] >= 0).all() and (ds.labels[:, 0] <= 6).all()
    assert (ds.labels[:, 1] >= 0).all() and (ds.labels[:, 1] <= 3).all()


def test_noise_variance_matches_config():
    sc = default_scenario(TensorDims(32, 2, 4), seed=1, noise_variance=0.0)
    noisy = dataclasses.replace(sc, noise_variance=0.25)
    diff = synthesize_dataset(noisy, 200).csi - synthesize_dataset(sc, 200).csi
    assert np.var(diff.real) == pytest.approx(0.125, rel=0.05)
    assert np.var(diff.imag) == pytest.approx(0.125, rel=0.05)


def test_snr_helper():
    sc = default_scenario(TensorDims(16, 1, 4), seed=2)
    var = noise_variance_for_snr(sc, 20.0, n_probe=128)
    power = np.mean(np.abs(synthesize_dataset(sc, 128).csi) ** 2)
    assert var == pytest.approx(power / 100)


def test_nlos_attenuates_direct_path():
    dims = TensorDims(4, 1, 1)
    los = draw_sample(default_scenario(dims, "LOS", seed=4), 0).mpcs[0][0]
    nlos = draw_sample(default_scenario(dims, "NLOS", seed=4), 0).mpcs[0][0]
    assert abs(nlos.alpha) == pytest.approx(abs(los.alpha) * 10 ** (-10 / 20))


def test_scenario_invariants():
    dims = TensorDims(3, 1, 2)
    ok = default_scenario(dims)
    with pytest.raises(ConfigError):
        Scenario(dims, ok.ap_positions[:1], ok.area, ok.subcarrier_freqs)
    with pytest.raises(ConfigError):
        Scenario(dims, ok.ap_positions, ok.area, ok.subcarrier_freqs[::-1])
    with pytest.raises(PreconditionError):
        synthesize_dataset(ok, 0)


def test_nonideality_identity_profiles(rng):
    ds = random_dataset(rng, TensorDims(6, 2, 3), 12)
    assert apply_nonideality(ds, NonidealityProfile(), 1).equals(ds)
    assert apply_nonideality(ds, NonidealityProfile(gain_drift_db=0.0), 1).equals(ds)


def test_phase_drift_preserves_magnitude_and_is_per_ap(rng):
    ds = random_dataset(rng, TensorDims(6, 2, 3), 12)
    out = apply_nonideality(ds, NonidealityProfile("uniform"), 9)
    np.testing.assert_allclose(np.abs(out.csi), np.abs(ds.csi), rtol=1e-6)
    ratio = out.csi / ds.csi
    np.testing.assert_allclose(ratio, ratio[:, :, :1, :1] * np.ones_like(ratio), rtol=1e-9)
    np.testing.assert_array_equal(out.labels, ds.labels)
    theta, _ = nonideality_draws(NonidealityProfile("uniform"), 3, 9, 4)
    np.testing.assert_allclose(ratio[4, :, 0, 0], np.exp(1j * theta))


def test_gain_drift_bounds(rng):
    ds = random_dataset(rng, TensorDims(6, 2, 3), 50)
    out = apply_nonideality(ds, NonidealityProfile(gain_drift_db=1.5), 2)
    r = np.abs(out.csi) / np.abs(ds.csi)
    assert r.min() >= 10 ** (-1.5 / 20) - 1e-12 and r.max() <= 10 ** (1.5 / 20) + 1e-12
    np.testing.assert_allclose(np.angle(out.csi / ds.csi), 0, atol=1e-9)
    again = apply_nonideality(ds, NonidealityProfile(gain_drift_db=1.5), 2)
    assert out.equals(again)
