"""Synthetic cell-free massive MIMO channel generator.

Sum-of-sinusoids Jakes fading per propagation path, an exponential power
delay profile with bounded support, and controllable correlation in all
three domains:

* time: Doppler from the terminal speed, autocorrelation J0(2 pi f_d k dt);
* frequency: path delay spread sigma_tau, coherence 1/sqrt(1+(2 pi df
  sigma_tau)^2) for the exponential profile;
* space: per-path fading processes mixed across APs so the inter-AP
  correlation is exp(-distance/d0) (or a distance-decoupled random matrix
  for ablations).

Path delays are a jittered quantile grid on [0, 6 sigma_tau], shared by
all APs within one realization, with powers proportional to
exp(-tau/sigma_tau); this realizes the exponential profile with bounded
support so the closed-form coherence holds to about a percent.

Everything is seed-deterministic: substreams are spawned from one
SeedSequence (placement, delays, spatial mixing, one Doppler stream per
AP, noise), so results do not depend on thread count or AP evaluation
order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import j0 as _bessel_j0

from .errors import DataError
from .fileio import atomic_write_bytes

SPEED_OF_LIGHT = 299_792_458.0
CSIF_MAGIC = b"CSIF"
CSIF_VERSION = 1

# RMS delay spread presets (seconds)
SCENARIO_DELAY_SPREAD = {"umi": 50e-9, "uma": 100e-9, "rma": 300e-9}

_DELAY_SUPPORT_SIGMAS = 6.0  # delay grid spans [0, 6 sigma_tau]


@dataclass
class SimConfig:
    """Knobs for one synthetic deployment."""
    n_aps: int = 16
    n_subcarriers: int = 16
    n_snapshots: int = 10000
    area_side: float = 250.0            # metres; APs uniform in the square
    ap_height: tuple = (5.0, 25.0)      # metres, uniform
    carrier_freq: float = 13e9          # Hz
    bandwidth: float = 5e6              # Hz across all subcarriers
    ue_speed: float = 27.78             # m/s
    snapshot_interval: float = 1e-3     # seconds between CSI snapshots
    n_paths: int = 12
    n_sinusoids: int = 16               # per path
    rms_delay_spread: float = 100e-9    # seconds
    spatial_corr_decay: float = 100.0   # d0 metres; 0 disables correlation
    spatial_mode: str = "distance"      # or "random": decoupled from geometry
    noise_std: float = 0.0              # additive complex noise std
    tx_power: float = 1.0               # metadata only; not in the fading path
    scenario: Optional[str] = None      # umi | uma | rma preset for the delay spread

    def resolved(self) -> "SimConfig":
        cfg = self
        if cfg.scenario is not None:
            key = cfg.scenario.lower()
            if key not in SCENARIO_DELAY_SPREAD:
                raise DataError(f"unknown scenario {cfg.scenario!r}; options: {sorted(SCENARIO_DELAY_SPREAD)}")
            cfg = replace(cfg, rms_delay_spread=SCENARIO_DELAY_SPREAD[key])
        if cfg.n_aps < 1 or cfg.n_subcarriers < 1 or cfg.n_snapshots < 1:
            raise DataError("n_aps, n_subcarriers and n_snapshots must be positive")
        if cfg.n_paths < 1 or cfg.n_sinusoids < 1:
            raise DataError("n_paths and n_sinusoids must be positive")
        if cfg.rms_delay_spread < 0 or cfg.noise_std < 0 or cfg.ue_speed < 0:
            raise DataError("rms_delay_spread, noise_std and ue_speed must be nonnegative")
        if cfg.spatial_mode not in ("distance", "random"):
            raise DataError(f"unknown spatial_mode {cfg.spatial_mode!r}")
        return cfg

    @property
    def doppler_freq(self) -> float:
        return self.ue_speed * self.carrier_freq / SPEED_OF_LIGHT

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.n_subcarriers


@dataclass
class Standardization:
    """Per-part affine statistics, computed on the training split only."""
    mean_re: float
    std_re: float
    mean_im: float
    std_im: float

    def apply(self, data: np.ndarray) -> np.ndarray:
        re = (np.real(data) - self.mean_re) / self.std_re
        im = (np.imag(data) - self.mean_im) / self.std_im
        return re + 1j * im

    def invert(self, data: np.ndarray) -> np.ndarray:
        re = np.real(data) * self.std_re + self.mean_re
        im = np.imag(data) * self.std_im + self.mean_im
        return re + 1j * im

    def apply_part(self, part: np.ndarray, imag: bool) -> np.ndarray:
        mean, std = (self.mean_im, self.std_im) if imag else (self.mean_re, self.std_re)
        return (part - mean) / std

    def invert_part(self, part: np.ndarray, imag: bool) -> np.ndarray:
        mean, std = (self.mean_im, self.std_im) if imag else (self.mean_re, self.std_re)
        return part * std + mean


@dataclass
class CsiDataset:
    """CSI frequency responses [T_total x L x M] plus AP geometry."""
    data: np.ndarray                    # complex128
    ap_positions: np.ndarray            # float64 [M x 3]
    standardization: Optional[Standardization] = None

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[0]

    @property
    def n_subcarriers(self) -> int:
        return self.data.shape[1]

    @property
    def n_aps(self) -> int:
        return self.data.shape[2]


def _draw_positions(cfg: SimConfig, rng) -> np.ndarray:
    pos = np.empty((cfg.n_aps, 3))
    pos[:, 0] = rng.uniform(0.0, cfg.area_side, cfg.n_aps)
    pos[:, 1] = rng.uniform(0.0, cfg.area_side, cfg.n_aps)
    pos[:, 2] = rng.uniform(cfg.ap_height[0], cfg.ap_height[1], cfg.n_aps)
    return pos


def place_aps(cfg: SimConfig, seed: int = 0) -> np.ndarray:
    """Uniform AP drop over the square, heights uniform in the given band.
    Matches the placement generate() draws for the same seed."""
    cfg = cfg.resolved()
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    return _draw_positions(cfg, rng)


def _path_profile(cfg: SimConfig, rng) -> tuple:
    """Jittered-quantile delays on [0, 6 sigma] and normalized powers."""
    p = cfg.n_paths
    sigma = cfg.rms_delay_spread
    if sigma == 0.0:
        return np.zeros(p), np.full(p, 1.0 / p)
    jitter = rng.uniform(0.0, 1.0, p)
    delays = (np.arange(p) + jitter) / p * (_DELAY_SUPPORT_SIGMAS * sigma)
    powers = np.exp(-delays / sigma)
    return delays, powers / powers.sum()


def _spatial_correlation(cfg: SimConfig, positions: np.ndarray, rng) -> np.ndarray:
    """Target inter-AP correlation matrix (unit diagonal, PSD)."""
    m = cfg.n_aps
    if cfg.spatial_corr_decay <= 0.0 or m == 1:
        return np.eye(m)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    if cfg.spatial_mode == "random":
        # decouple correlation from geometry: permute the pair distances
        iu = np.triu_indices(m, k=1)
        vals = dist[iu]
        shuffled = vals[rng.permutation(vals.size)]
        dist = np.zeros_like(dist)
        dist[iu] = shuffled
        dist = dist + dist.T
    corr = np.exp(-dist / cfg.spatial_corr_decay)
    np.fill_diagonal(corr, 1.0)
    return _nearest_unit_diag_psd(corr)


def _nearest_unit_diag_psd(corr: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(corr)
    vals = np.clip(vals, 0.0, None)
    fixed = (vecs * vals) @ vecs.T
    d = np.sqrt(np.clip(np.diag(fixed), 1e-12, None))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def _psd_sqrt(corr: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(corr)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def generate(cfg: SimConfig, seed: int = 0) -> CsiDataset:
    """Draw one deployment and its CSI history.

    The per-(t, l, m) average power is unit by construction (unit-power
    Doppler processes, normalized path powers, correlation-preserving
    mixing); measurement noise, when enabled, adds on top.
    """
    cfg = cfg.resolved()
    root = np.random.SeedSequence(seed)
    ss_place, ss_delay, ss_spatial, ss_doppler, ss_noise = root.spawn(5)

    positions = _draw_positions(cfg, np.random.default_rng(ss_place))

    delays, powers = _path_profile(cfg, np.random.default_rng(ss_delay))
    corr = _spatial_correlation(cfg, positions, np.random.default_rng(ss_spatial))
    mix = _psd_sqrt(corr)

    m, p, n_sin = cfg.n_aps, cfg.n_paths, cfg.n_sinusoids
    t_total, l_sub = cfg.n_snapshots, cfg.n_subcarriers
    omega_d = 2.0 * np.pi * cfg.doppler_freq * cfg.snapshot_interval
    tvec = np.arange(t_total, dtype=np.float64)

    # independent per-AP Doppler processes, then correlate across APs
    z = np.empty((m, p, t_total), dtype=np.complex128)
    for ap, ss in enumerate(ss_doppler.spawn(m)):
        rng = np.random.default_rng(ss)
        theta = rng.uniform(0.0, 2.0 * np.pi, (p, n_sin))
        phase = rng.uniform(0.0, 2.0 * np.pi, (p, n_sin))
        arg = (omega_d * np.cos(theta))[:, :, None] * tvec[None, None, :] + phase[:, :, None]
        z[ap] = np.exp(1j * arg).sum(axis=1) / np.sqrt(n_sin)
    gains = np.einsum("mn,npt->mpt", mix, z)
    gains *= np.sqrt(powers)[None, :, None]

    freqs = np.arange(l_sub, dtype=np.float64) * cfg.subcarrier_spacing
    steering = np.exp(-2j * np.pi * np.outer(delays, freqs))   # [P x L]
    data = np.einsum("mpt,pl->tlm", gains, steering)

    if cfg.noise_std > 0.0:
        rng_noise = np.random.default_rng(ss_noise)
        scale = cfg.noise_std / np.sqrt(2.0)
        data = data + scale * (rng_noise.standard_normal(data.shape)
                               + 1j * rng_noise.standard_normal(data.shape))

    return CsiDataset(data=data, ap_positions=positions)


def jakes_time_correlation(doppler_freq: float, lags: np.ndarray, dt: float) -> np.ndarray:
    """Theoretical fading autocorrelation J0(2 pi f_d k dt)."""
    return _bessel_j0(2.0 * np.pi * doppler_freq * np.asarray(lags, dtype=np.float64) * dt)


def theoretical_freq_correlation(rms_delay_spread: float, delta_f) -> np.ndarray:
    """|coherence| between subcarriers delta_f apart for an exponential
    power delay profile: 1 / sqrt(1 + (2 pi delta_f sigma_tau)^2)."""
    x = 2.0 * np.pi * np.asarray(delta_f, dtype=np.float64) * rms_delay_spread
    return 1.0 / np.sqrt(1.0 + x * x)


# ---------------------------------------------------------------------------
# dataset file format
#
# magic "CSIF" | u32 version=1 | u32 T | u32 L | u32 M
# f32 ap_positions [M x 3] | f32 payload interleaved (re, im), row-major
# [t][l][m] | u8 standardized flag | 4 x f64 (mean_re, std_re, mean_im,
# std_im) when the flag is 1. Everything little-endian.

def save_dataset(dataset: CsiDataset, path: str) -> None:
    data = dataset.data
    if data.ndim != 3:
        raise DataError(f"dataset payload must be [T, L, M], got {data.shape}")
    t_total, l_sub, m = data.shape
    if dataset.ap_positions.shape != (m, 3):
        raise DataError(f"ap_positions {dataset.ap_positions.shape} do not match M={m}")
    parts = [CSIF_MAGIC, struct.pack("<IIII", CSIF_VERSION, t_total, l_sub, m)]
    parts.append(dataset.ap_positions.astype("<f4").tobytes(order="C"))
    payload = np.empty((t_total, l_sub, m, 2), dtype="<f4")
    payload[..., 0] = np.real(data)
    payload[..., 1] = np.imag(data)
    parts.append(payload.tobytes(order="C"))
    std = dataset.standardization
    if std is None:
        parts.append(struct.pack("<B", 0))
    else:
        parts.append(struct.pack("<B", 1))
        parts.append(struct.pack("<dddd", std.mean_re, std.std_re, std.mean_im, std.std_im))
    atomic_write_bytes(path, b"".join(parts))


def load_dataset(path: str) -> CsiDataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as err:
        raise DataError(f"cannot read dataset {path}: {err}") from err
    if len(blob) < 20 or blob[:4] != CSIF_MAGIC:
        raise DataError(f"{path}: not a CSIF dataset (bad magic)")
    version, t_total, l_sub, m = struct.unpack_from("<IIII", blob, 4)
    if version != CSIF_VERSION:
        raise DataError(f"{path}: unsupported CSIF version {version}")
    off = 20
    pos_bytes = m * 3 * 4
    payload_bytes = t_total * l_sub * m * 2 * 4
    if len(blob) < off + pos_bytes + payload_bytes + 1:
        raise DataError(f"{path}: truncated CSIF payload")
    positions = np.frombuffer(blob, dtype="<f4", count=m * 3, offset=off).reshape(m, 3).astype(np.float64)
    off += pos_bytes
    raw = np.frombuffer(blob, dtype="<f4", count=t_total * l_sub * m * 2, offset=off)
    off += payload_bytes
    flag = blob[off]
    off += 1
    std = None
    if flag == 1:
        if len(blob) < off + 32:
            raise DataError(f"{path}: truncated standardization footer")
        std = Standardization(*struct.unpack_from("<dddd", blob, off))
        off += 32
    elif flag != 0:
        raise DataError(f"{path}: bad standardization flag {flag}")
    if len(blob) != off:
        raise DataError(f"{path}: {len(blob) - off} trailing bytes")
    shaped = raw.reshape(t_total, l_sub, m, 2).astype(np.float64)
    if not np.all(np.isfinite(shaped)):
        raise DataError(f"{path}: payload contains NaN or Inf")
    data = shaped[..., 0] + 1j * shaped[..., 1]
    return CsiDataset(data=data, ap_positions=positions, standardization=std)
