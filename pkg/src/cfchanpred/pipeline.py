"""Measurement-style processing chain.

CFR snapshots convert to impulse responses with a unitary transform pair
(energy is preserved exactly, so partition bookkeeping can be checked to
1e-10), power delay profiles locate per-source delay supports, and
delay-window partitioning splits a mixed capture into per-AP CIR sequences
that reassemble into a standard dataset.

Delay windows are half-open [start, end) in delay-bin units; physical
seconds enter only through the delay_resolution carried by each frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .channel import CsiDataset
from .errors import DataError, ShapeError

PDP_DB_FLOOR = -300.0


@dataclass
class CirFrame:
    """One impulse response: N_delay taps at uniform delay spacing."""
    taps: np.ndarray                 # complex [N_delay]
    delay_resolution: float = 1.0    # seconds per bin (1.0 = unit bins)
    index: int = 0                   # snapshot index within its sequence

    @property
    def n_delay(self) -> int:
        return self.taps.shape[0]


def cfr_to_cir(cfr: np.ndarray, subcarrier_spacing: Optional[float] = None,
               index: int = 0) -> CirFrame:
    """Unitary IFFT of one frequency response; N_delay == L."""
    cfr = np.asarray(cfr, dtype=np.complex128)
    if cfr.ndim != 1 or cfr.shape[0] < 1:
        raise ShapeError(f"cfr_to_cir: expected a 1-D CFR, got shape {cfr.shape}")
    resolution = 1.0 if subcarrier_spacing is None else \
        1.0 / (cfr.shape[0] * subcarrier_spacing)
    return CirFrame(taps=np.fft.ifft(cfr, norm="ortho"),
                    delay_resolution=resolution, index=index)


def cir_to_cfr(frame: CirFrame) -> np.ndarray:
    """Unitary FFT back to the frequency response."""
    return np.fft.fft(np.asarray(frame.taps, dtype=np.complex128), norm="ortho")


def compute_pdp(cirs: Sequence[CirFrame]) -> np.ndarray:
    """Mean |tap|^2 per delay bin over frames (linear scale)."""
    if len(cirs) == 0:
        raise DataError("compute_pdp: no frames")
    n_delay = cirs[0].n_delay
    acc = np.zeros(n_delay)
    for frame in cirs:
        if frame.n_delay != n_delay:
            raise ShapeError(f"compute_pdp: frame {frame.index} has "
                             f"{frame.n_delay} taps, expected {n_delay}")
        acc += np.abs(frame.taps) ** 2
    return acc / len(cirs)


def pdp_db(pdp: np.ndarray) -> np.ndarray:
    """dB relative to the peak bin, floored at -300."""
    pdp = np.asarray(pdp, dtype=np.float64)
    peak = pdp.max()
    if peak <= 0.0:
        return np.full(pdp.shape, PDP_DB_FLOOR)
    rel = pdp / peak
    floor_lin = 10.0 ** (PDP_DB_FLOOR / 10.0)
    return np.where(rel <= floor_lin, PDP_DB_FLOOR, 10.0 * np.log10(
        np.where(rel <= floor_lin, 1.0, rel)))


@dataclass
class PartitionSpec:
    """Delay-window to source assignment, bins half-open [start, end)."""
    windows: List[Tuple[int, int]]   # one (start, end) per source
    tau_th: Optional[float] = None   # threshold that produced the windows
    delay_unit: str = "bin"          # unit tau_th is expressed in

    def __post_init__(self):
        for start, end in self.windows:
            if start < 0 or end <= start:
                raise DataError(f"bad delay window [{start}, {end})")
        ordered = sorted(self.windows)
        for (s0, e0), (s1, e1) in zip(ordered, ordered[1:]):
            if s1 < e0:
                raise DataError(
                    f"delay windows [{s0},{e0}) and [{s1},{e1}) overlap")

    @classmethod
    def two_source(cls, tau_th: int) -> "PartitionSpec":
        """[0, tau) for the near source, [tau, 2 tau) for the far one."""
        tau = int(tau_th)
        if tau < 1:
            raise DataError("tau_th must be >= 1 bin")
        return cls(windows=[(0, tau), (tau, 2 * tau)], tau_th=float(tau))

    @property
    def n_sources(self) -> int:
        return len(self.windows)


@dataclass
class PartitionReport:
    per_source: List[List[CirFrame]]     # [source][frame]
    source_energies: List[float]
    leakage_energy: float
    total_energy: float


def partition_by_delay_window(cirs: Sequence[CirFrame],
                              spec: PartitionSpec) -> PartitionReport:
    """Copy each window's taps into its source's CIR (zeros elsewhere).

    Energy outside every window is reported as leakage; the per-source
    energies plus leakage reproduce the input energy exactly.
    """
    if len(cirs) == 0:
        raise DataError("partition_by_delay_window: no frames")
    if spec.n_sources == 0:
        raise DataError("partition_by_delay_window: no windows")
    n_delay = cirs[0].n_delay
    for start, end in spec.windows:
        if end > n_delay:
            raise DataError(f"delay window [{start}, {end}) exceeds "
                            f"N_delay={n_delay}")
    covered = np.zeros(n_delay, dtype=bool)
    for start, end in spec.windows:
        covered[start:end] = True

    per_source: List[List[CirFrame]] = [[] for _ in spec.windows]
    energies = [0.0] * spec.n_sources
    leakage = 0.0
    total = 0.0
    for frame in cirs:
        if frame.n_delay != n_delay:
            raise ShapeError(f"partition: frame {frame.index} has "
                             f"{frame.n_delay} taps, expected {n_delay}")
        power = np.abs(frame.taps) ** 2
        total += float(power.sum())
        leakage += float(power[~covered].sum())
        for src, (start, end) in enumerate(spec.windows):
            taps = np.zeros(n_delay, dtype=np.complex128)
            taps[start:end] = frame.taps[start:end]
            per_source[src].append(CirFrame(
                taps=taps, delay_resolution=frame.delay_resolution,
                index=frame.index))
            energies[src] += float(power[start:end].sum())
    return PartitionReport(per_source=per_source, source_energies=energies,
                           leakage_energy=leakage, total_energy=total)


def cirs_to_cfr_array(cirs: Sequence[CirFrame]) -> np.ndarray:
    """Stack one source's frames back into a [T, L] CFR array."""
    if len(cirs) == 0:
        raise DataError("cirs_to_cfr_array: no frames")
    return np.stack([cir_to_cfr(frame) for frame in cirs], axis=0)


def build_dataset_from_cfrs(per_ap_cfrs: Sequence[np.ndarray],
                            ap_positions: Optional[np.ndarray] = None
                            ) -> CsiDataset:
    """Assemble per-AP [T, L] CFR sequences into a [T, L, M] dataset."""
    if len(per_ap_cfrs) == 0:
        raise DataError("build_dataset_from_cfrs: no AP sequences")
    arrays = [np.asarray(a, dtype=np.complex128) for a in per_ap_cfrs]
    shape = arrays[0].shape
    if len(shape) != 2:
        raise ShapeError(f"per-AP CFRs must be [T, L], got {shape}")
    for i, a in enumerate(arrays):
        if a.shape != shape:
            raise DataError(f"ragged AP sequences: AP 0 is {shape}, "
                            f"AP {i} is {a.shape}")
    data = np.stack(arrays, axis=-1)
    m = data.shape[2]
    if ap_positions is None:
        ap_positions = np.zeros((m, 3))
    ap_positions = np.asarray(ap_positions, dtype=np.float64)
    if ap_positions.shape != (m, 3):
        raise ShapeError(f"ap_positions {ap_positions.shape} do not match M={m}")
    return CsiDataset(data=data, ap_positions=ap_positions)


def dataset_frames_to_cirs(data: np.ndarray,
                           subcarrier_spacing: Optional[float] = None
                           ) -> List[CirFrame]:
    """Convert a single-capture [T, L] CFR array to CIR frames."""
    arr = np.asarray(data, dtype=np.complex128)
    if arr.ndim != 2:
        raise ShapeError(f"expected [T, L] CFR array, got {arr.shape}")
    return [cfr_to_cir(arr[t], subcarrier_spacing, index=t)
            for t in range(arr.shape[0])]
