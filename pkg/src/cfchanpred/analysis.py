"""Correlation analysis used to size the predictor and build its graph.

* time: partial autocorrelation (Durbin-Levinson) selects the input window
  length as the lag where mean |PACF| first drops under a threshold;
* frequency: inter-subcarrier Pearson correlation selects the depthwise
  kernel length;
* space: AP adjacency from pairwise distance, from measured PCC between
  per-AP series, or constant off-diagonals; self-loop normalization turns
  any adjacency into the propagation matrix used by the spatial layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import DataError

DEFAULT_PACF_THRESHOLD = 0.1
DEFAULT_KERNEL_THRESHOLD = 0.5
DEFAULT_MAX_LAG = 40
PCC_STRATEGIES = ("magnitude-mean", "per-subcarrier-mean", "real-part")


def autocovariances(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased (1/n) sample autocovariances gamma_0..gamma_max_lag."""
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if n <= max_lag:
        raise DataError(f"series length {n} too short for max_lag {max_lag}")
    x = x - x.mean()
    gamma = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        gamma[k] = np.dot(x[: n - k], x[k:]) / n
    return gamma


def pacf(series: np.ndarray, max_lag: int) -> np.ndarray:
    """Partial autocorrelation by the Durbin-Levinson recursion.

    Returns lags 0..max_lag with pacf[0] = 1 by convention and
    pacf[1] = gamma_1 / gamma_0 exactly. A (near-)constant series has no
    defined PACF and raises DataError. When the innovation variance hits
    zero (perfectly predictable series) the remaining lags are set to 0.
    """
    gamma = autocovariances(series, max_lag)
    g0 = gamma[0]
    if not np.isfinite(g0) or g0 <= 1e-30:
        raise DataError("pacf: series is constant (zero variance)")
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out

    phi = np.zeros((max_lag, max_lag))
    v = np.zeros(max_lag + 1)
    phi[0, 0] = gamma[1] / g0
    v[0] = g0
    v[1] = v[0] * (1.0 - phi[0, 0] ** 2)
    out[1] = phi[0, 0]
    for i in range(1, max_lag):
        if v[i] <= 1e-14 * g0:
            break  # innovations exhausted; later partials carry no signal
        prev = phi[i - 1, :i]
        phi[i, i] = (gamma[i + 1] - np.dot(prev, gamma[i:0:-1])) / v[i]
        phi[i, :i] = prev - phi[i, i] * prev[::-1]
        v[i + 1] = v[i] * (1.0 - phi[i, i] ** 2)
        out[i + 1] = phi[i, i]
    return out


def _sampled_pairs(data: np.ndarray, max_series: int) -> List[Tuple[int, int]]:
    """Up to max_series // 2 (subcarrier, AP) pairs on an even grid so the
    choice is deterministic."""
    t_total, n_sub, n_ap = data.shape
    pairs = [(l, m) for l in range(n_sub) for m in range(n_ap)]
    budget = max(1, max_series // 2)
    if len(pairs) > budget:
        idx = np.linspace(0, len(pairs) - 1, budget).astype(int)
        pairs = [pairs[i] for i in idx]
    return pairs


def select_window_length(data: np.ndarray, max_lag: int = DEFAULT_MAX_LAG,
                         threshold: float = DEFAULT_PACF_THRESHOLD,
                         max_series: int = 64) -> Tuple[int, np.ndarray, bool]:
    """Pick the input window length from mean |PACF| profiles.

    Real and imaginary parts are profiled separately over the sampled
    (l, m) series. Returns (window, mean_abs_pacf, warning) where the
    window is the smallest lag k >= 1 at which BOTH part profiles fall
    below the threshold, and mean_abs_pacf is their elementwise max (the
    profile the decision is made on). If no lag qualifies within max_lag,
    or either part is entirely degenerate, the fallback is max_lag with
    warning=True.
    """
    data = np.asarray(data)
    if data.ndim != 3:
        raise DataError(f"select_window_length: expected [T, L, M] data, got {data.shape}")
    parts = {"re": [], "im": []}
    for l, m in _sampled_pairs(data, max_series):
        for key, s in (("re", np.real(data[:, l, m])),
                       ("im", np.imag(data[:, l, m]))):
            try:
                parts[key].append(np.abs(pacf(s, max_lag)))
            except DataError:
                continue
    if not parts["re"] or not parts["im"]:
        return max_lag, np.ones(max_lag + 1), True
    mean_re = np.mean(parts["re"], axis=0)
    mean_im = np.mean(parts["im"], axis=0)
    decision = np.maximum(mean_re, mean_im)
    for k in range(1, max_lag + 1):
        if decision[k] < threshold:
            return k, decision, False
    return max_lag, decision, True


def pcc(series_a: np.ndarray, series_b: np.ndarray) -> float:
    """Pearson correlation coefficient between two real series."""
    a = np.asarray(series_a, dtype=np.float64)
    b = np.asarray(series_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"pcc: incompatible series {a.shape} vs {b.shape}")
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if denom == 0.0:
        raise DataError("pcc: zero-variance series")
    return float(np.dot(a, b) / denom)


def _complex_corr_matrix(x: np.ndarray) -> np.ndarray:
    """Complex correlation between columns of x [n, cols]."""
    xc = x - x.mean(axis=0, keepdims=True)
    cov = xc.conj().T @ xc
    d = np.sqrt(np.real(np.diag(cov)))
    if np.any(d == 0):
        raise DataError("zero-variance subcarrier series")
    return cov / np.outer(d, d)


def compute_freq_pcc(data: np.ndarray) -> np.ndarray:
    """|PCC| between subcarriers, [L x L] with unit diagonal.

    The per-AP complex correlations are averaged across APs before taking
    the magnitude, which keeps the estimate unbiased at low correlation.
    """
    t_total, n_sub, n_ap = data.shape
    acc = np.zeros((n_sub, n_sub), dtype=np.complex128)
    for m in range(n_ap):
        acc += _complex_corr_matrix(data[:, :, m])
    mat = np.abs(acc / n_ap)
    np.fill_diagonal(mat, 1.0)
    return mat


def select_kernel_size(freq_pcc_matrix: np.ndarray,
                       threshold: float = DEFAULT_KERNEL_THRESHOLD,
                       max_size: Optional[int] = None) -> int:
    """Smallest odd kernel length whose first uncovered subcarrier offset
    has mean |PCC| below the threshold, capped at the subcarrier count."""
    n_sub = freq_pcc_matrix.shape[0]
    cap = n_sub if max_size is None else min(max_size, n_sub)
    if cap % 2 == 0:
        cap -= 1
    size = 1
    while size <= cap:
        offset = (size - 1) // 2 + 1
        if offset > n_sub - 1:
            break
        vals = [freq_pcc_matrix[i, i + offset] for i in range(n_sub - offset)]
        if float(np.mean(np.abs(vals))) < threshold:
            return size
        size += 2
    return cap


def ap_series(data: np.ndarray, strategy: str = "magnitude-mean") -> np.ndarray:
    """One real series per AP, [T x M], per the chosen reduction."""
    if strategy == "magnitude-mean":
        return np.abs(data).mean(axis=1)
    if strategy == "real-part":
        return np.real(data).mean(axis=1)
    if strategy == "per-subcarrier-mean":
        raise DataError("per-subcarrier-mean reduces pairwise, not per AP")
    raise DataError(f"unknown PCC series strategy {strategy!r}; options: {PCC_STRATEGIES}")


def compute_space_pcc(data: np.ndarray, strategy: str = "magnitude-mean") -> np.ndarray:
    """|PCC| between AP pairs, [M x M] with unit diagonal."""
    t_total, n_sub, n_ap = data.shape
    if strategy == "per-subcarrier-mean":
        acc = np.zeros((n_ap, n_ap))
        for l in range(n_sub):
            acc += np.abs(_complex_corr_matrix(data[:, l, :]))
        mat = acc / n_sub
    else:
        series = ap_series(data, strategy)
        mat = np.abs(np.corrcoef(series, rowvar=False))
    np.fill_diagonal(mat, 1.0)
    return mat


def build_adjacency_distance(positions: np.ndarray, sigma: Optional[float] = None) -> np.ndarray:
    """a_ij = exp(-|s_i - s_j| / sigma), zero diagonal. When sigma is not
    given it defaults to a quarter of the larger planar extent."""
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise DataError(f"positions must be [M, 3], got {pos.shape}")
    if sigma is None:
        span = max(np.ptp(pos[:, 0]), np.ptp(pos[:, 1]))
        sigma = span / 4.0 if span > 0 else 1.0
    if sigma <= 0:
        raise DataError(f"adjacency sigma must be positive, got {sigma}")
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    adj = np.exp(-dist / sigma)
    np.fill_diagonal(adj, 0.0)
    return adj


def build_adjacency_pcc(data: np.ndarray, strategy: str = "magnitude-mean") -> np.ndarray:
    """a_ij = |r_ij| from measured AP series correlation, zero diagonal."""
    adj = compute_space_pcc(data, strategy).copy()
    np.fill_diagonal(adj, 0.0)
    return adj


def build_adjacency_constant(n_aps: int, value: float = 0.3) -> np.ndarray:
    """Constant off-diagonal adjacency (deployments with no usable geometry
    or measurement, e.g. a two-antenna rail-side capture)."""
    if not 0.0 <= value <= 1.0:
        raise DataError(f"constant adjacency value must be in [0, 1], got {value}")
    adj = np.full((n_aps, n_aps), float(value))
    np.fill_diagonal(adj, 0.0)
    return adj


def normalize_adjacency(adjacency: np.ndarray) -> np.ndarray:
    """Self-loop normalized propagation: D^-1/2 (A + I) D^-1/2 with degrees
    taken from A + I. Symmetric, entries in [0, 1], spectral radius <= 1."""
    adj = np.asarray(adjacency, dtype=np.float64)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise DataError(f"adjacency must be square, got {adj.shape}")
    if np.any(adj < 0):
        raise DataError("adjacency must be nonnegative")
    if not np.allclose(adj, adj.T, atol=1e-12):
        raise DataError("adjacency must be symmetric")
    a_tilde = adj + np.eye(adj.shape[0])
    d = a_tilde.sum(axis=0)
    inv_sqrt = 1.0 / np.sqrt(d)
    return a_tilde * np.outer(inv_sqrt, inv_sqrt)


def compute_normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    """L = I - D^-1/2 A D^-1/2 without self-loops; zero-degree nodes use
    the D^-1/2 = 0 convention. Eigenvalues lie in [0, 2]."""
    adj = np.asarray(adjacency, dtype=np.float64)
    d = adj.sum(axis=0)
    inv_sqrt = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    return np.eye(adj.shape[0]) - adj * np.outer(inv_sqrt, inv_sqrt)


def pcc_cdf(values: np.ndarray, grid: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Empirical CDF of a bag of PCC values on an evaluation grid (default:
    the sorted values themselves). Linear-interpolated quantiles are the
    inverse: np.quantile(values, q)."""
    vals = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if vals.size == 0:
        raise DataError("pcc_cdf: empty value set")
    xs = vals if grid is None else np.asarray(grid, dtype=np.float64)
    cdf = np.searchsorted(vals, xs, side="right") / vals.size
    return xs, cdf


def offdiag(matrix: np.ndarray) -> np.ndarray:
    """Upper-triangle off-diagonal entries as a flat vector."""
    m = np.asarray(matrix)
    iu = np.triu_indices(m.shape[0], k=1)
    return m[iu]


@dataclass
class CorrelationReport:
    """Everything the sizing/graph stage produces in one place."""
    pacf_mean_abs: np.ndarray          # mean |PACF| per lag, 0..max_lag
    recommended_window: int
    window_warning: bool
    freq_pcc: np.ndarray               # [L x L]
    recommended_kernel: int
    space_pcc: np.ndarray              # [M x M]
    adjacency: np.ndarray              # [M x M], zero diagonal
    adjacency_kind: str
    pcc_strategy: str
    mean_space_pcc: float
    warnings: List[str] = field(default_factory=list)


def analyze(data: np.ndarray, positions: Optional[np.ndarray] = None,
            max_lag: int = DEFAULT_MAX_LAG,
            pacf_threshold: float = DEFAULT_PACF_THRESHOLD,
            kernel_threshold: float = DEFAULT_KERNEL_THRESHOLD,
            adjacency_kind: str = "pcc",
            pcc_strategy: str = "magnitude-mean",
            distance_sigma: Optional[float] = None,
            constant_value: float = 0.3) -> CorrelationReport:
    """Run the full sizing pass over one dataset."""
    data = np.asarray(data)
    if data.ndim != 3:
        raise DataError(f"analyze: expected [T, L, M] data, got {data.shape}")
    warnings: List[str] = []

    effective_max_lag = min(max_lag, data.shape[0] - 2)
    if effective_max_lag < max_lag:
        warnings.append(f"max_lag truncated to {effective_max_lag} by series length")
    window, pacf_mean, window_warning = select_window_length(
        data, effective_max_lag, pacf_threshold)
    if window_warning:
        warnings.append("PACF never dropped under the threshold; window fell back to max_lag")

    freq = compute_freq_pcc(data)
    kernel = select_kernel_size(freq, kernel_threshold)

    space = compute_space_pcc(data, pcc_strategy)
    if adjacency_kind == "pcc":
        adjacency = build_adjacency_pcc(data, pcc_strategy)
    elif adjacency_kind == "distance":
        if positions is None:
            raise DataError("distance adjacency needs AP positions")
        adjacency = build_adjacency_distance(positions, distance_sigma)
    elif adjacency_kind == "constant":
        adjacency = build_adjacency_constant(data.shape[2], constant_value)
    else:
        raise DataError(f"unknown adjacency kind {adjacency_kind!r}")

    return CorrelationReport(
        pacf_mean_abs=pacf_mean,
        recommended_window=window,
        window_warning=window_warning,
        freq_pcc=freq,
        recommended_kernel=kernel,
        space_pcc=space,
        adjacency=adjacency,
        adjacency_kind=adjacency_kind,
        pcc_strategy=pcc_strategy,
        mean_space_pcc=float(np.mean(offdiag(space))),
        warnings=warnings,
    )
