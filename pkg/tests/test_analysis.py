"""Correlation analysis: PACF against a Yule-Walker solve oracle, window and
kernel selection on constructed cases, adjacency builders and normalization
against the Laplacian spectrum."""

import numpy as np
import pytest

from cfchanpred import analysis as an
from cfchanpred.errors import DataError


def _autocov_oracle(x, max_lag):
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    return np.array([np.sum(xc[: n - k] * xc[k:]) / n for k in range(max_lag + 1)])


def _pacf_oracle(x, max_lag):
    """Independent reference: solve the Yule-Walker system at each order and
    keep the last coefficient."""
    gamma = _autocov_oracle(x, max_lag)
    out = [1.0]
    for k in range(1, max_lag + 1):
        idx = np.abs(np.subtract.outer(np.arange(k), np.arange(k)))
        r = gamma[idx]
        phi = np.linalg.solve(r, gamma[1:k + 1])
        out.append(phi[-1])
    return np.array(out)


def _ar1(rng, n, phi=0.7, burn=200):
    e = rng.normal(size=n + burn)
    x = np.zeros(n + burn)
    for t in range(1, n + burn):
        x[t] = phi * x[t - 1] + e[t]
    return x[burn:]


def test_pacf_matches_yule_walker_oracle():
    rng = np.random.default_rng(10)
    for _ in range(5):
        x = _ar1(rng, 800, phi=rng.uniform(-0.8, 0.8))
        got = an.pacf(x, 12)
        want = _pacf_oracle(x, 12)
        np.testing.assert_allclose(got, want, rtol=1e-8, atol=1e-10)


def test_pacf_lag0_and_lag1_identities():
    rng = np.random.default_rng(11)
    x = rng.normal(size=500)
    gamma = _autocov_oracle(x, 2)
    out = an.pacf(x, 5)
    assert out[0] == 1.0
    np.testing.assert_allclose(out[1], gamma[1] / gamma[0], rtol=1e-12)


def test_pacf_constant_series_raises():
    with pytest.raises(DataError):
        an.pacf(np.ones(100), 5)


def test_pacf_pure_sinusoid_stays_finite():
    # perfectly predictable AR(2): innovation variance collapses; later
    # lags must come back as zeros, not NaNs
    t = np.arange(400)
    out = an.pacf(np.sin(0.3 * t), 10)
    assert np.all(np.isfinite(out))


def test_select_window_length_ar1_cuts_at_two():
    rng = np.random.default_rng(12)
    data = np.empty((3000, 2, 2), dtype=np.complex128)
    for l in range(2):
        for m in range(2):
            data[:, l, m] = _ar1(rng, 3000) + 1j * _ar1(rng, 3000)
    window, mean_abs, warning = an.select_window_length(data, max_lag=10)
    assert window == 2 and not warning
    assert mean_abs[1] > 0.5


def test_select_window_length_constant_dataset_warns():
    data = np.ones((300, 2, 2), dtype=np.complex128)
    window, _, warning = an.select_window_length(data, max_lag=10)
    assert window == 10 and warning


def test_pcc_hand_value():
    assert an.pcc(np.array([1.0, 2.0, 3.0]), np.array([1.0, 3.0, 2.0])) == pytest.approx(0.5)


def test_pcc_basic_properties():
    rng = np.random.default_rng(13)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert an.pcc(x, x) == pytest.approx(1.0)
    assert an.pcc(x, -x) == pytest.approx(-1.0)
    assert an.pcc(x, y) == pytest.approx(an.pcc(y, x))
    assert -1.0 <= an.pcc(x, y) <= 1.0


def _pcc_matrix_with_offsets(n, off1, off2, rest=0.1):
    mat = np.full((n, n), rest)
    np.fill_diagonal(mat, 1.0)
    for i in range(n - 1):
        mat[i, i + 1] = mat[i + 1, i] = off1
    for i in range(n - 2):
        mat[i, i + 2] = mat[i + 2, i] = off2
    return mat


def test_select_kernel_size_stops_at_first_weak_offset():
    # adjacent |PCC| 0.8, two-apart 0.4: a length-3 kernel covers offset 1
    # and the first uncovered offset (2) is already under the threshold
    mat = _pcc_matrix_with_offsets(16, 0.8, 0.4)
    assert an.select_kernel_size(mat, threshold=0.5) == 3


def test_select_kernel_size_caps_at_subcarrier_count():
    mat = np.full((8, 8), 0.9)
    np.fill_diagonal(mat, 1.0)
    assert an.select_kernel_size(mat, threshold=0.5) == 7  # largest odd <= 8


def test_select_kernel_size_uncorrelated_returns_one():
    mat = _pcc_matrix_with_offsets(16, 0.2, 0.1)
    assert an.select_kernel_size(mat, threshold=0.5) == 1


def test_compute_freq_pcc_shape_and_diagonal():
    rng = np.random.default_rng(14)
    data = rng.normal(size=(200, 6, 3)) + 1j * rng.normal(size=(200, 6, 3))
    mat = an.compute_freq_pcc(data)
    assert mat.shape == (6, 6)
    np.testing.assert_allclose(np.diag(mat), np.ones(6), rtol=1e-12)
    np.testing.assert_allclose(mat, mat.T, rtol=1e-12)
    assert np.all((mat >= 0) & (mat <= 1 + 1e-12))


def test_build_adjacency_distance_hand_value():
    pos = np.array([[0.0, 0.0, 0.0], [100.0, 0.0, 0.0]])
    adj = an.build_adjacency_distance(pos, sigma=100.0)
    assert adj[0, 0] == 0.0
    np.testing.assert_allclose(adj[0, 1], np.exp(-1.0), rtol=1e-12)  # 0.3679


def test_build_adjacency_constant():
    adj = an.build_adjacency_constant(4, 0.3)
    assert np.all(np.diag(adj) == 0)
    assert np.all(adj[~np.eye(4, dtype=bool)] == 0.3)
    with pytest.raises(DataError):
        an.build_adjacency_constant(4, 1.5)


def test_normalize_adjacency_fully_connected_pair():
    a_norm = an.normalize_adjacency(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(a_norm, np.full((2, 2), 0.5), rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_normalize_adjacency_properties(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 9)
    raw = np.abs(rng.normal(size=(n, n)))
    adj = 0.5 * (raw + raw.T)
    np.fill_diagonal(adj, 0.0)
    a_norm = an.normalize_adjacency(adj)
    np.testing.assert_allclose(a_norm, a_norm.T, rtol=1e-12)
    assert np.all(np.diag(a_norm) > 0)
    assert np.all((a_norm >= 0) & (a_norm <= 1 + 1e-12))
    # spectral radius <= 1 (numpy eigensolver as the oracle)
    eigs = np.linalg.eigvalsh(a_norm)
    assert np.max(np.abs(eigs)) <= 1 + 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_normalized_laplacian_spectrum_in_0_2(seed):
    rng = np.random.default_rng(100 + seed)
    n = rng.integers(2, 9)
    raw = np.abs(rng.normal(size=(n, n)))
    adj = 0.5 * (raw + raw.T)
    np.fill_diagonal(adj, 0.0)
    if seed == 0 and n > 2:
        adj[0, :] = adj[:, 0] = 0.0  # zero-degree convention
    lap = an.compute_normalized_laplacian(adj)
    eigs = np.linalg.eigvalsh(lap)
    assert np.min(eigs) >= -1e-9 and np.max(eigs) <= 2 + 1e-9


def test_normalization_is_identity_minus_selfloop_laplacian():
    rng = np.random.default_rng(15)
    raw = np.abs(rng.normal(size=(5, 5)))
    adj = 0.5 * (raw + raw.T)
    np.fill_diagonal(adj, 0.0)
    a_norm = an.normalize_adjacency(adj)
    lap_selfloop = an.compute_normalized_laplacian(adj + np.eye(5))
    np.testing.assert_allclose(a_norm, np.eye(5) - lap_selfloop, rtol=1e-12, atol=1e-12)


def test_pcc_cdf_staircase_and_quantiles():
    vals = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    xs, cdf = an.pcc_cdf(vals, grid=np.array([0.05, 0.25, 0.45, 0.6]))
    np.testing.assert_allclose(cdf, [0.0, 0.4, 0.8, 1.0])
    assert np.quantile(vals, 0.5) == pytest.approx(0.3)


def test_analyze_end_to_end_on_synthetic_data():
    rng = np.random.default_rng(16)
    t_total, n_sub, n_ap = 600, 4, 3
    base = np.empty((t_total, n_sub, n_ap), dtype=np.complex128)
    shared = _ar1(rng, t_total, 0.9) + 1j * _ar1(rng, t_total, 0.9)
    for l in range(n_sub):
        for m in range(n_ap):
            base[:, l, m] = shared + 0.4 * (rng.normal(size=t_total) + 1j * rng.normal(size=t_total))
    positions = rng.uniform(0, 100, size=(n_ap, 3))
    report = an.analyze(base, positions, max_lag=12, adjacency_kind="pcc")
    assert 1 <= report.recommended_window <= 12
    assert report.recommended_kernel % 2 == 1
    assert report.adjacency.shape == (n_ap, n_ap)
    assert np.all(np.diag(report.adjacency) == 0)
    assert 0.0 <= report.mean_space_pcc <= 1.0
    dist_report = an.analyze(base, positions, max_lag=12, adjacency_kind="distance")
    assert np.all(dist_report.adjacency >= 0)
    with pytest.raises(DataError):
        an.analyze(base, None, adjacency_kind="distance")
