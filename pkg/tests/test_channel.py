"""Generator and dataset-format tests.

Statistical checks run reduced realization counts for speed; the full
200-realization versions live in the acceptance suite. Tolerances here
were calibrated against observed worst cases across seeds, with margin.
"""

import struct

import numpy as np
import pytest
from scipy.stats import spearmanr

from cfchanpred.channel import (
    SCENARIO_DELAY_SPREAD,
    SPEED_OF_LIGHT,
    CsiDataset,
    SimConfig,
    Standardization,
    generate,
    jakes_time_correlation,
    load_dataset,
    place_aps,
    save_dataset,
    theoretical_freq_correlation,
)
from cfchanpred.errors import DataError


def _speed_for(fd_dt: float, cfg: SimConfig) -> float:
    """Terminal speed giving a target normalized Doppler f_d * dt."""
    return fd_dt / cfg.snapshot_interval * SPEED_OF_LIGHT / cfg.carrier_freq


# ---------------------------------------------------------------------------
# configuration


def test_scenario_presets_override_delay_spread():
    for name, sigma in SCENARIO_DELAY_SPREAD.items():
        cfg = SimConfig(scenario=name, rms_delay_spread=123e-9).resolved()
        assert cfg.rms_delay_spread == sigma
    assert SimConfig(scenario="UMa").resolved().rms_delay_spread == 100e-9


def test_unknown_scenario_rejected():
    with pytest.raises(DataError, match="scenario"):
        SimConfig(scenario="indoor").resolved()


@pytest.mark.parametrize(
    "bad",
    [
        dict(n_aps=0),
        dict(n_subcarriers=0),
        dict(n_snapshots=0),
        dict(n_paths=0),
        dict(n_sinusoids=0),
        dict(rms_delay_spread=-1e-9),
        dict(noise_std=-0.1),
        dict(ue_speed=-1.0),
        dict(spatial_mode="mesh"),
    ],
)
def test_config_validation_rejects(bad):
    with pytest.raises(DataError):
        SimConfig(**bad).resolved()


def test_derived_frequencies():
    cfg = SimConfig(ue_speed=29.9792458, carrier_freq=1e9, bandwidth=8e6, n_subcarriers=16)
    assert cfg.doppler_freq == pytest.approx(100.0, rel=1e-12)
    assert cfg.subcarrier_spacing == pytest.approx(0.5e6, rel=1e-12)


# ---------------------------------------------------------------------------
# generation basics


def test_generate_shapes_and_determinism():
    cfg = SimConfig(n_aps=3, n_subcarriers=5, n_snapshots=40, noise_std=0.1)
    a = generate(cfg, seed=7)
    b = generate(cfg, seed=7)
    c = generate(cfg, seed=8)
    assert a.data.shape == (40, 5, 3)
    assert a.data.dtype == np.complex128
    assert a.ap_positions.shape == (3, 3)
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.ap_positions, b.ap_positions)
    assert not np.array_equal(a.data, c.data)


def test_place_aps_matches_generate_and_bounds():
    cfg = SimConfig(n_aps=12, n_snapshots=2, area_side=300.0, ap_height=(5.0, 25.0))
    ds = generate(cfg, seed=11)
    pos = place_aps(cfg, seed=11)
    np.testing.assert_array_equal(pos, ds.ap_positions)
    assert np.all(pos[:, 0] >= 0.0) and np.all(pos[:, 0] <= 300.0)
    assert np.all(pos[:, 1] >= 0.0) and np.all(pos[:, 1] <= 300.0)
    assert np.all(pos[:, 2] >= 5.0) and np.all(pos[:, 2] <= 25.0)


def test_zero_delay_spread_gives_flat_frequency_response():
    cfg = SimConfig(n_aps=2, n_subcarriers=8, n_snapshots=30, rms_delay_spread=0.0)
    ds = generate(cfg, seed=3)
    for l in range(1, 8):
        np.testing.assert_allclose(ds.data[:, l, :], ds.data[:, 0, :], rtol=0, atol=1e-12)


def test_zero_speed_gives_constant_time_series():
    cfg = SimConfig(n_aps=2, n_subcarriers=4, n_snapshots=25, ue_speed=0.0)
    ds = generate(cfg, seed=5)
    for t in range(1, 25):
        np.testing.assert_allclose(ds.data[t], ds.data[0], rtol=0, atol=1e-12)


def test_unit_average_power():
    # fast fading and independent APs so 500 snapshots average well
    cfg = SimConfig(n_aps=16, n_subcarriers=16, n_snapshots=500,
                    spatial_corr_decay=0.0)
    cfg.ue_speed = _speed_for(0.3, cfg)
    for seed in range(3):
        ds = generate(cfg, seed=seed)
        power_db = 10.0 * np.log10(np.mean(np.abs(ds.data) ** 2))
        assert abs(power_db) < 0.5, f"seed {seed}: mean power {power_db:+.3f} dB"


def test_noise_adds_power_on_top():
    cfg = SimConfig(n_aps=8, n_subcarriers=8, n_snapshots=400,
                    spatial_corr_decay=0.0, noise_std=1.0)
    cfg.ue_speed = _speed_for(0.3, cfg)
    ds = generate(cfg, seed=1)
    power = np.mean(np.abs(ds.data) ** 2)
    assert abs(power - 2.0) < 0.2
    clean = generate(SimConfig(**{**cfg.__dict__, "noise_std": 0.0}), seed=1)
    np.testing.assert_array_equal(
        generate(cfg, seed=1).data, ds.data)
    assert not np.array_equal(clean.data, ds.data)


# ---------------------------------------------------------------------------
# statistical structure (reduced-size versions of the acceptance checks)


def test_time_autocorrelation_matches_bessel():
    cfg = SimConfig(n_aps=2, n_subcarriers=1, n_snapshots=250,
                    spatial_corr_decay=0.0)
    cfg.ue_speed = _speed_for(0.02, cfg)
    max_lag = 20
    acc = np.zeros(max_lag + 1, dtype=np.complex128)
    count = 0
    for seed in range(100):
        ds = generate(cfg, seed=seed)
        for ap in range(cfg.n_aps):
            x = ds.data[:, 0, ap]
            x = x - x.mean()
            denom = np.vdot(x, x).real
            for k in range(max_lag + 1):
                acc[k] += np.vdot(x[: len(x) - k], x[k:]) / denom
            count += 1
    acf = (acc / count).real
    lags = np.arange(max_lag + 1)
    ref = jakes_time_correlation(cfg.doppler_freq, lags, cfg.snapshot_interval)
    rms = float(np.sqrt(np.mean((acf - ref) ** 2)))
    assert rms < 0.06, f"ACF RMS deviation {rms:.4f}"


def test_frequency_coherence_matches_exponential_profile():
    cfg = SimConfig(n_aps=4, n_subcarriers=16, n_snapshots=300,
                    rms_delay_spread=100e-9, bandwidth=5e6,
                    spatial_corr_decay=0.0)
    cfg.ue_speed = _speed_for(0.05, cfg)
    l_sub = cfg.n_subcarriers
    acc = np.zeros((l_sub, l_sub), dtype=np.complex128)
    count = 0
    for seed in range(60):
        ds = generate(cfg, seed=seed)
        for ap in range(cfg.n_aps):
            x = ds.data[:, :, ap]
            x = x - x.mean(axis=0, keepdims=True)
            cov = x.conj().T @ x
            d = np.sqrt(np.real(np.diag(cov)))
            acc += cov / np.outer(d, d)
            count += 1
    emp = np.abs(acc / count)
    i, j = np.meshgrid(np.arange(l_sub), np.arange(l_sub), indexing="ij")
    delta_f = np.abs(i - j) * cfg.subcarrier_spacing
    ref = theoretical_freq_correlation(cfg.rms_delay_spread, delta_f)
    rms = float(np.sqrt(np.mean((emp - ref) ** 2)))
    assert rms < 0.04, f"frequency coherence RMS deviation {rms:.4f}"


def _ap_correlation_vs_distance(cfg: SimConfig, seed: int):
    ds = generate(cfg, seed=seed)
    m = cfg.n_aps
    cols = [ds.data[:, :, ap].ravel() for ap in range(m)]
    cols = [c - c.mean() for c in cols]
    norms = [np.sqrt(np.vdot(c, c).real) for c in cols]
    dists, corrs = [], []
    for i in range(m):
        for j in range(i + 1, m):
            rho = abs(np.vdot(cols[i], cols[j]) / (norms[i] * norms[j]))
            dists.append(np.linalg.norm(ds.ap_positions[i] - ds.ap_positions[j]))
            corrs.append(rho)
    return np.array(dists), np.array(corrs)


def test_spatial_correlation_tracks_distance():
    cfg = SimConfig(n_aps=10, n_subcarriers=4, n_snapshots=2500,
                    spatial_corr_decay=150.0, area_side=250.0)
    cfg.ue_speed = _speed_for(0.3, cfg)
    for seed in (0, 1):
        dists, corrs = _ap_correlation_vs_distance(cfg, seed)
        rho, _ = spearmanr(dists, corrs)
        assert rho < -0.75, f"seed {seed}: Spearman {rho:+.3f}"


def test_random_spatial_mode_decouples_distance():
    cfg = SimConfig(n_aps=10, n_subcarriers=4, n_snapshots=2500,
                    spatial_corr_decay=150.0, area_side=250.0,
                    spatial_mode="random")
    cfg.ue_speed = _speed_for(0.3, cfg)
    dists, corrs = _ap_correlation_vs_distance(cfg, 0)
    rho, _ = spearmanr(dists, corrs)
    assert abs(rho) < 0.6, f"Spearman {rho:+.3f} still tracks distance"
    # correlation itself is still present, just not tied to geometry
    assert corrs.max() > 0.35


def test_zero_decay_gives_independent_aps():
    cfg = SimConfig(n_aps=8, n_subcarriers=4, n_snapshots=3000,
                    spatial_corr_decay=0.0)
    cfg.ue_speed = _speed_for(0.3, cfg)
    _, corrs = _ap_correlation_vs_distance(cfg, 2)
    assert corrs.max() < 0.1


# ---------------------------------------------------------------------------
# closed forms


def test_jakes_correlation_reference_values():
    # J0 at small argument: 1 - x^2/4 + x^4/64
    x = 0.2
    expected = 1.0 - x * x / 4.0 + x**4 / 64.0
    got = jakes_time_correlation(x / (2.0 * np.pi), np.array([1.0]), 1.0)[0]
    assert got == pytest.approx(expected, abs=2e-7)
    assert jakes_time_correlation(0.0, np.arange(5), 1e-3) == pytest.approx([1.0] * 5)
    # first Bessel zero
    z1 = 2.404825557695773
    assert abs(jakes_time_correlation(z1 / (2.0 * np.pi), np.array([1.0]), 1.0)[0]) < 1e-12


def test_theoretical_freq_correlation_values():
    assert theoretical_freq_correlation(100e-9, 0.0) == pytest.approx(1.0)
    # 2 pi df sigma = 1  ->  1/sqrt(2)
    sigma = 1.0 / (2.0 * np.pi)
    assert theoretical_freq_correlation(sigma, 1.0) == pytest.approx(1.0 / np.sqrt(2.0), rel=1e-12)
    vals = theoretical_freq_correlation(100e-9, np.linspace(0, 5e6, 8))
    assert np.all(np.diff(vals) < 0)


# ---------------------------------------------------------------------------
# standardization


def test_standardization_roundtrip_and_parts():
    std = Standardization(mean_re=0.5, std_re=2.0, mean_im=-1.0, std_im=0.25)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 3)) + 1j * rng.normal(size=(4, 3))
    y = std.apply(x)
    np.testing.assert_allclose(std.invert(y), x, atol=1e-12)
    np.testing.assert_allclose(np.real(y), std.apply_part(np.real(x), imag=False))
    np.testing.assert_allclose(np.imag(y), std.apply_part(np.imag(x), imag=True))
    np.testing.assert_allclose(std.invert_part(np.imag(y), imag=True), np.imag(x), atol=1e-12)


# ---------------------------------------------------------------------------
# file format


def _small_dataset(std=None) -> CsiDataset:
    rng = np.random.default_rng(9)
    data = rng.normal(size=(6, 4, 3)) + 1j * rng.normal(size=(6, 4, 3))
    pos = rng.uniform(0, 100, size=(3, 3))
    return CsiDataset(data=data, ap_positions=pos, standardization=std)


def test_save_load_roundtrip_quantizes_to_f32(tmp_path):
    ds = _small_dataset(Standardization(0.1, 1.5, -0.2, 2.5))
    path = str(tmp_path / "ds.csif")
    save_dataset(ds, path)
    back = load_dataset(path)
    # payload and positions are stored as f32
    np.testing.assert_array_equal(np.real(back.data), np.real(ds.data).astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(np.imag(back.data), np.imag(ds.data).astype(np.float32).astype(np.float64))
    np.testing.assert_array_equal(back.ap_positions, ds.ap_positions.astype(np.float32).astype(np.float64))
    # standardization footer is f64, exact
    assert back.standardization == ds.standardization
    # second trip is bit-identical
    path2 = str(tmp_path / "ds2.csif")
    save_dataset(back, path2)
    assert (tmp_path / "ds.csif").read_bytes() == (tmp_path / "ds2.csif").read_bytes()


def test_save_load_without_standardization(tmp_path):
    ds = _small_dataset(None)
    path = str(tmp_path / "plain.csif")
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.standardization is None
    assert back.data.shape == ds.data.shape


def test_header_layout(tmp_path):
    ds = _small_dataset(None)
    path = str(tmp_path / "hdr.csif")
    save_dataset(ds, path)
    blob = (tmp_path / "hdr.csif").read_bytes()
    assert blob[:4] == b"CSIF"
    version, t, l, m = struct.unpack_from("<IIII", blob, 4)
    assert (version, t, l, m) == (1, 6, 4, 3)
    assert len(blob) == 20 + m * 12 + t * l * m * 8 + 1


def test_load_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.csif"
    p.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(DataError, match="magic"):
        load_dataset(str(p))


def test_load_rejects_bad_version(tmp_path):
    p = tmp_path / "ver.csif"
    p.write_bytes(b"CSIF" + struct.pack("<IIII", 9, 1, 1, 1) + b"\x00" * 64)
    with pytest.raises(DataError, match="version"):
        load_dataset(str(p))


def test_load_rejects_truncation_and_trailing(tmp_path):
    ds = _small_dataset(None)
    path = tmp_path / "t.csif"
    save_dataset(ds, str(path))
    blob = path.read_bytes()
    (tmp_path / "short.csif").write_bytes(blob[:-5])
    with pytest.raises(DataError, match="truncated"):
        load_dataset(str(tmp_path / "short.csif"))
    (tmp_path / "long.csif").write_bytes(blob + b"\x00\x00")
    with pytest.raises(DataError, match="trailing"):
        load_dataset(str(tmp_path / "long.csif"))


def test_load_rejects_bad_flag_and_nonfinite(tmp_path):
    ds = _small_dataset(None)
    path = tmp_path / "f.csif"
    save_dataset(ds, str(path))
    blob = bytearray(path.read_bytes())
    blob[-1] = 7
    (tmp_path / "flag.csif").write_bytes(bytes(blob))
    with pytest.raises(DataError, match="flag"):
        load_dataset(str(tmp_path / "flag.csif"))
    nan_ds = _small_dataset(None)
    nan_ds.data[0, 0, 0] = np.nan
    save_dataset(nan_ds, str(tmp_path / "nan.csif"))
    with pytest.raises(DataError, match="NaN"):
        load_dataset(str(tmp_path / "nan.csif"))


def test_load_missing_file():
    with pytest.raises(DataError, match="cannot read"):
        load_dataset("/nonexistent/nowhere.csif")


def test_save_rejects_mismatched_positions(tmp_path):
    ds = _small_dataset(None)
    ds.ap_positions = ds.ap_positions[:2]
    with pytest.raises(DataError, match="ap_positions"):
        save_dataset(ds, str(tmp_path / "x.csif"))
