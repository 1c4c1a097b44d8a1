"""Optimization and evaluation.

Training operates on one real-valued channel part at a time; by default the
real and imaginary parts are stacked as extra samples through one shared
model ("both"), the separate-weights mode trains one model per part.

NMSE follows the expectation-of-ratio convention: one ratio per sample
(error energy over all K predicted steps divided by true energy), then the
mean across samples; dB values are floored at -300.

Complexity accounting is analytic. A multiply-accumulate counts as two
floating-point operations; element-wise costs are fixed at relu 1, tanh and
sigmoid 5, softmax 4, layer norm 7 per element, add 1.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from . import models as mdl
from .autodiff import Node
from .channel import CsiDataset, Standardization
from .errors import DataError, NumericError, ShapeError

NMSE_DB_FLOOR = -300.0

_PARTS = ("both", "real", "imag")


# ---------------------------------------------------------------------------
# initialization


def glorot_bound(shape) -> float:
    """Uniform bound sqrt(6 / (fan_in + fan_out)); rank-1 arrays count as
    column vectors, higher ranks use their matricized fans."""
    dims = tuple(int(s) for s in shape)
    if len(dims) == 0:
        raise ShapeError("glorot_bound: scalar weights are not supported")
    if len(dims) == 1:
        fan_in, fan_out = dims[0], 1
    else:
        fan_in, fan_out = dims[0], int(np.prod(dims[1:]))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_glorot(shape, seed: int = 0) -> np.ndarray:
    bound = glorot_bound(shape)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return rng.uniform(-bound, bound, shape)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eta: float = 1e-8                   # added outside the square root
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    train_fraction: float = 0.8
    part: str = "both"                  # both | real | imag
    early_stop_patience: int = 0        # 0 disables early stopping

    def resolved(self) -> "TrainConfig":
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DataError("beta1 and beta2 must lie in [0, 1)")
        if self.learning_rate <= 0.0:
            raise DataError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise DataError("epochs and batch_size must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise DataError("train_fraction must lie in (0, 1)")
        if self.part not in _PARTS:
            raise DataError(f"unknown part {self.part!r}; options: {_PARTS}")
        if self.eta <= 0.0:
            raise DataError("eta must be positive")
        return self


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_weights(cls, weights: Dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(w) for k, w in weights.items()},
                   v={k: np.zeros_like(w) for k, w in weights.items()})


def adam_step(weights: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, cfg: TrainConfig) -> AdamState:
    """One in-place Adam update: w <- w - lr * m_hat / (sqrt(v_hat) + eta)."""
    if set(weights) != set(grads) or set(weights) != set(state.m):
        raise ShapeError("adam_step: weight/grad/state key mismatch")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, w in weights.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(f"adam_step: grad {name} {g.shape} vs weight {w.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eta)
    return state


# ---------------------------------------------------------------------------
# losses and metrics


def mse_loss(pred: Node, target) -> Node:
    target = target if isinstance(target, Node) else ad.constant(
        np.asarray(target, dtype=pred.value.dtype))
    diff = ad.sub(pred, target)
    return ad.scale(ad.sum_all(ad.mul(diff, diff)), 1.0 / diff.value.size)


def _sample_ratios(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"nmse: pred {pred.shape} vs truth {truth.shape}")
    if pred.ndim == 3:
        pred, truth = pred[None], truth[None]
    if pred.ndim != 4:
        raise ShapeError(f"nmse: expected [K,L,M] or [B,K,L,M], got {pred.shape}")
    axes = (1, 2, 3)
    err = np.sum(np.abs(pred - truth) ** 2, axis=axes)
    energy = np.sum(np.abs(truth) ** 2, axis=axes)
    if np.any(energy == 0.0):
        raise DataError("nmse: zero-energy truth sample")
    return err / energy


def nmse(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean over samples of per-sample error-to-signal energy ratios."""
    return float(np.mean(_sample_ratios(pred, truth)))


def nmse_db(ratio: float) -> float:
    if ratio <= 10.0 ** (NMSE_DB_FLOOR / 10.0):
        return NMSE_DB_FLOOR
    return float(10.0 * np.log10(ratio))


def nmse_per_horizon(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-step ratios, mean over samples: one value per horizon k."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.ndim == 3:
        pred, truth = pred[None], truth[None]
    if pred.shape != truth.shape or pred.ndim != 4:
        raise ShapeError(f"nmse_per_horizon: bad shapes {pred.shape} vs {truth.shape}")
    err = np.sum(np.abs(pred - truth) ** 2, axis=(2, 3))
    energy = np.sum(np.abs(truth) ** 2, axis=(2, 3))
    if np.any(energy == 0.0):
        raise DataError("nmse_per_horizon: zero-energy truth step")
    return np.mean(err / energy, axis=0)


# ---------------------------------------------------------------------------
# data preparation


def standardize(dataset: CsiDataset, train_fraction: float = 0.8
                ) -> Tuple[CsiDataset, Standardization]:
    """Shift/scale each part to zero mean, unit variance, with statistics
    from the chronological training split only."""
    if dataset.standardization is not None:
        raise DataError("dataset is already standardized")
    if not (0.0 < train_fraction < 1.0):
        raise DataError("train_fraction must lie in (0, 1)")
    n_train = int(dataset.n_snapshots * train_fraction)
    if n_train < 2:
        raise DataError("training split too short to estimate statistics")
    train = dataset.data[:n_train]
    re, im = np.real(train), np.imag(train)
    std = Standardization(mean_re=float(re.mean()), std_re=float(re.std()),
                          mean_im=float(im.mean()), std_im=float(im.std()))
    if std.std_re == 0.0 or std.std_im == 0.0:
        raise DataError("zero variance in a channel part; cannot standardize")
    out = CsiDataset(data=std.apply(dataset.data),
                     ap_positions=dataset.ap_positions,
                     standardization=std)
    return out, std


def _prepare(dataset: CsiDataset, train_fraction: float
             ) -> Tuple[np.ndarray, np.ndarray, Standardization, int]:
    """Return (raw complex data, standardized data, stats, n_train)."""
    if dataset.standardization is not None:
        std = dataset.standardization
        raw = std.invert(dataset.data)
        std_data = dataset.data
    else:
        std_ds, std = standardize(dataset, train_fraction)
        raw = dataset.data
        std_data = std_ds.data
    n_train = int(raw.shape[0] * train_fraction)
    return raw, std_data, std, n_train


def split_windows(series: np.ndarray, window: int, horizon: int
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Stride-1 sliding samples over one region: inputs [N,T,L,M] and
    targets [N,K,L,M], N = len - T - K + 1. Windows never cross the
    region boundary because the caller passes each region separately."""
    series = np.asarray(series)
    total = series.shape[0]
    n_samples = total - window - horizon + 1
    if n_samples < 1:
        raise DataError(
            f"region of {total} snapshots too short for T={window}, K={horizon}")
    idx = np.arange(n_samples)[:, None]
    x = series[idx + np.arange(window)[None, :]]
    y = series[idx + window + np.arange(horizon)[None, :]]
    return x, y


def _part_arrays(std_data: np.ndarray, part: str) -> List[np.ndarray]:
    if part == "real":
        return [np.real(std_data)]
    if part == "imag":
        return [np.imag(std_data)]
    return [np.real(std_data), np.imag(std_data)]


# ---------------------------------------------------------------------------
# reports


@dataclass
class HardwareProfile:
    f_gpu: float = 1.35e9
    n_unit: float = 1.0
    n_core: float = 5120.0


@dataclass
class ComplexityReport:
    kind: str
    n_parameters: int
    n_flops: int
    memory_mb: float
    est_time_s: float
    hardware: HardwareProfile


@dataclass
class TrainReport:
    kind: str
    part: str
    epochs_run: int
    n_train_samples: int
    n_test_samples: int
    epoch_losses: List[float]
    epoch_seconds: List[float]
    test_nmse_db: float
    test_nmse_per_horizon_db: List[float]
    complexity: ComplexityReport
    batch_size: int
    learning_rate: float
    seed: int


@dataclass
class EvalReport:
    nmse_db: float
    nmse_per_horizon_db: List[float]
    n_samples: int


# ---------------------------------------------------------------------------
# training loop


def _wrap_params(model: mdl.PredictorModel) -> Dict[str, Node]:
    params = {}
    for name, arr in model.weights.items():
        node = ad.parameter(arr)
        model.weights[name] = node.value   # share storage with the optimizer
        params[name] = node
    return params


def _batched_forward(model: mdl.PredictorModel, x: np.ndarray,
                     chunk: int = 256) -> np.ndarray:
    outs = [mdl.forward_batch(model, x[i:i + chunk]).value
            for i in range(0, x.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def train(model: mdl.PredictorModel, dataset: CsiDataset,
          cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Mini-batch Adam on MSE over sliding windows of the training split.

    Deterministic for a fixed seed: one shuffle stream drives every epoch.
    Raises NumericError if the loss goes non-finite.
    """
    cfg = cfg.resolved()
    mcfg = model.config
    raw, std_data, _, n_train = _prepare(dataset, cfg.train_fraction)
    parts_train = [split_windows(p[:n_train], mcfg.window, mcfg.horizon)
                   for p in _part_arrays(std_data, cfg.part)]
    x_train = np.concatenate([x for x, _ in parts_train], axis=0)
    y_train = np.concatenate([y for _, y in parts_train], axis=0)
    n_samples = x_train.shape[0]

    params = _wrap_params(model)
    opt_state = AdamState.for_weights(model.weights)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))

    epoch_losses: List[float] = []
    epoch_seconds: List[float] = []
    best = np.inf
    stale = 0
    for epoch in range(cfg.epochs):
        started = time.perf_counter()
        order = rng.permutation(n_samples)
        total = 0.0
        for lo in range(0, n_samples, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            pred = mdl.forward_batch(model, x_train[sel], params=params)
            loss = mse_loss(pred, y_train[sel])
            value = float(loss.value)
            if not np.isfinite(value):
                raise NumericError(
                    f"training diverged: loss={value} at epoch {epoch}, "
                    f"batch {lo // cfg.batch_size}")
            ad.backward(loss)
            grads = {name: node.grad for name, node in params.items()}
            adam_step(model.weights, grads, opt_state, cfg)
            for node in params.values():
                node.grad = None
            total += value * sel.size
        epoch_losses.append(total / n_samples)
        epoch_seconds.append(time.perf_counter() - started)
        if cfg.early_stop_patience > 0:
            if epoch_losses[-1] < best - 1e-12:
                best = epoch_losses[-1]
                stale = 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break

    eval_report = evaluate(model, dataset, train_fraction=cfg.train_fraction,
                           part=cfg.part)
    return TrainReport(
        kind=mcfg.kind, part=cfg.part, epochs_run=len(epoch_losses),
        n_train_samples=n_samples, n_test_samples=eval_report.n_samples,
        epoch_losses=epoch_losses, epoch_seconds=epoch_seconds,
        test_nmse_db=eval_report.nmse_db,
        test_nmse_per_horizon_db=eval_report.nmse_per_horizon_db,
        complexity=count_complexity(model), batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, seed=cfg.seed)


def evaluate(model: mdl.PredictorModel, dataset: CsiDataset,
             model_im: Optional[mdl.PredictorModel] = None,
             train_fraction: float = 0.8, part: str = "both") -> EvalReport:
    """NMSE on the chronological test split, in the raw (de-standardized)
    channel domain. ``part="both"`` recombines complex predictions, using
    ``model`` for the real part and ``model_im`` (default: shared) for the
    imaginary part."""
    if part not in _PARTS:
        raise DataError(f"unknown part {part!r}; options: {_PARTS}")
    model_im = model_im if model_im is not None else model
    mcfg = model.config
    raw, std_data, std, n_train = _prepare(dataset, train_fraction)
    raw_test = raw[n_train:]
    std_test = std_data[n_train:]
    _, y_raw = split_windows(raw_test, mcfg.window, mcfg.horizon)

    if part == "both":
        x_re, _ = split_windows(np.real(std_test), mcfg.window, mcfg.horizon)
        x_im, _ = split_windows(np.imag(std_test), mcfg.window, mcfg.horizon)
        pred_re = std.invert_part(_batched_forward(model, x_re), imag=False)
        pred_im = std.invert_part(_batched_forward(model_im, x_im), imag=True)
        pred = pred_re + 1j * pred_im
        truth = y_raw
    else:
        imag = part == "imag"
        series = np.imag(std_test) if imag else np.real(std_test)
        x, _ = split_windows(series, mcfg.window, mcfg.horizon)
        pred = std.invert_part(_batched_forward(model, x), imag=imag)
        truth = np.imag(y_raw) if imag else np.real(y_raw)

    ratios = _sample_ratios(pred, truth)
    per_h = nmse_per_horizon(pred, truth)
    return EvalReport(nmse_db=nmse_db(float(np.mean(ratios))),
                      nmse_per_horizon_db=[nmse_db(float(r)) for r in per_h],
                      n_samples=int(ratios.size))


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CrossValReport:
    best_index: int
    mean_nmse_db: List[float]           # one entry per candidate
    fold_nmse_db: List[List[float]]     # [candidate][fold]
    folds: int


def k_fold_cross_validate(dataset: CsiDataset,
                          candidates: Sequence[mdl.ModelConfig],
                          train_cfg: TrainConfig = TrainConfig(),
                          folds: int = 5,
                          a_norm: Optional[np.ndarray] = None
                          ) -> Tuple[mdl.ModelConfig, CrossValReport]:
    """Rotate a held-out contiguous block; pick the candidate with the
    lowest mean test NMSE across folds."""
    if len(candidates) == 0:
        raise DataError("candidate grid is empty")
    if folds < 2:
        raise DataError("folds must be >= 2")
    if dataset.standardization is not None:
        raise DataError("cross-validation expects a raw dataset")
    total = dataset.n_snapshots
    if total % folds != 0:
        raise DataError(
            f"{total} snapshots not divisible into {folds} equal blocks; "
            "truncate the dataset first")
    block = total // folds
    train_cfg = train_cfg.resolved()

    fold_db: List[List[float]] = []
    for ci, cand in enumerate(candidates):
        mcfg = cand.resolved()
        scores = []
        for fold in range(folds):
            test = dataset.data[fold * block:(fold + 1) * block]
            train_blocks = [dataset.data[f * block:(f + 1) * block]
                            for f in range(folds) if f != fold]
            train_cat = np.concatenate(train_blocks, axis=0)
            re, im = np.real(train_cat), np.imag(train_cat)
            std = Standardization(float(re.mean()), float(re.std()),
                                  float(im.mean()), float(im.std()))
            if std.std_re == 0.0 or std.std_im == 0.0:
                raise DataError("zero variance in a training fold")
            seed = int(np.random.SeedSequence(
                (train_cfg.seed, ci, fold)).generate_state(1)[0])
            model = mdl.build_model(mcfg, a_norm=a_norm, seed=seed)
            # fit on per-block windows so no window crosses a block junction
            xs, ys = [], []
            for blk in train_blocks:
                for p in _part_arrays(std.apply(blk), train_cfg.part):
                    x, y = split_windows(p, mcfg.window, mcfg.horizon)
                    xs.append(x)
                    ys.append(y)
            x_train = np.concatenate(xs, axis=0)
            y_train = np.concatenate(ys, axis=0)
            _fit_arrays(model, x_train, y_train, train_cfg, seed)
            scores.append(_score_block(model, test, std, train_cfg.part))
        fold_db.append(scores)

    means = [float(np.mean(s)) for s in fold_db]
    best = int(np.argmin(means))
    report = CrossValReport(best_index=best, mean_nmse_db=means,
                            fold_nmse_db=fold_db, folds=folds)
    return candidates[best], report


def _fit_arrays(model: mdl.PredictorModel, x_train: np.ndarray,
                y_train: np.ndarray, cfg: TrainConfig, seed: int) -> None:
    params = _wrap_params(model)
    opt_state = AdamState.for_weights(model.weights)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_samples = x_train.shape[0]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_samples)
        for lo in range(0, n_samples, cfg.batch_size):
            sel = order[lo:lo + cfg.batch_size]
            pred = mdl.forward_batch(model, x_train[sel], params=params)
            loss = mse_loss(pred, y_train[sel])
            if not np.isfinite(float(loss.value)):
                raise NumericError(f"cross-validation diverged at epoch {epoch}")
            ad.backward(loss)
            grads = {name: node.grad for name, node in params.items()}
            adam_step(model.weights, grads, opt_state, cfg)
            for node in params.values():
                node.grad = None


def _score_block(model: mdl.PredictorModel, block: np.ndarray,
                 std: Standardization, part: str) -> float:
    mcfg = model.config
    std_block = std.apply(block)
    _, y_raw = split_windows(block, mcfg.window, mcfg.horizon)
    if part == "both":
        x_re, _ = split_windows(np.real(std_block), mcfg.window, mcfg.horizon)
        x_im, _ = split_windows(np.imag(std_block), mcfg.window, mcfg.horizon)
        pred = (std.invert_part(_batched_forward(model, x_re), imag=False)
                + 1j * std.invert_part(_batched_forward(model, x_im), imag=True))
        truth = y_raw
    else:
        imag = part == "imag"
        series = np.imag(std_block) if imag else np.real(std_block)
        x, _ = split_windows(series, mcfg.window, mcfg.horizon)
        pred = std.invert_part(_batched_forward(model, x), imag=imag)
        truth = np.imag(y_raw) if imag else np.real(y_raw)
    return nmse_db(nmse(pred, truth))


# ---------------------------------------------------------------------------
# complexity


def memory_megabytes(n_parameters: int) -> float:
    """4 bytes per parameter, in binary megabytes."""
    return 4.0 * n_parameters / (1024.0 * 1024.0)


def matmul_flops(m: int, k: int, n: int) -> int:
    """[m x k] @ [k x n]: one multiply and one add per inner element."""
    return 2 * m * k * n


def flops_per_forward(config: mdl.ModelConfig) -> int:
    """Analytic FLOPs of one single-window forward pass (see module
    docstring for the element-wise cost convention)."""
    cfg = config.resolved()
    t, k = cfg.window, cfg.horizon
    l, m = cfg.n_subcarriers, cfg.n_aps
    d, h = cfg.d_model, cfg.n_heads
    d_k, d_v, d_ff = cfg.d_k, cfg.d_v, cfg.d_ff
    hid = cfg.hidden
    total = 0
    if cfg.kind in mdl._ENCODER_KINDS:
        if cfg.kind in ("proposed", "variant_b"):
            total += t * 2 * matmul_flops(l, m, m)           # (H a_norm) W_s
        if cfg.kind in ("proposed", "variant_c"):
            total += t * 2 * cfg.kernel_size * l * m         # depthwise
            total += t * 2 * t * l * m                       # pointwise mix
        embed_in = 2 * l * m if cfg.kind == "proposed" else l * m
        total += t * matmul_flops(1, embed_in, d)            # embedding
        total += t * d                                       # + alpha P
        per_head = (2 * matmul_flops(t, d, d_k)              # Q, K
                    + matmul_flops(t, d, d_v)                # V
                    + matmul_flops(t, d_k, t)                # Q K^T
                    + t * t                                  # 1/sqrt(d_k)
                    + 4 * t * t                              # softmax
                    + matmul_flops(t, t, d_v))               # weights @ V
        per_block = (h * per_head
                     + matmul_flops(t, h * d_v, d)           # W_O
                     + 2 * t * d                             # two residuals
                     + 2 * 7 * t * d                         # two layer norms
                     + matmul_flops(t, d, d_ff) + t * d_ff   # FF in + relu
                     + matmul_flops(t, d_ff, d))             # FF out
        total += cfg.n_blocks * per_block
        total += matmul_flops(1, t * d, k * l * m)           # output head
    elif cfg.kind == "dnn":
        total += (matmul_flops(1, t * l * m, hid) + hid
                  + matmul_flops(1, hid, k * l * m))
    elif cfg.kind == "rnn":
        per_step = (matmul_flops(1, l * m, hid) + matmul_flops(1, hid, hid)
                    + hid + 5 * hid
                    + 2 * matmul_flops(1, hid, hid) + hid + 5 * hid)
        total += t * per_step + matmul_flops(1, hid, k * l * m)
    elif cfg.kind == "lstm":
        for n_in in (l * m, hid):
            gates = 4 * (matmul_flops(1, n_in, hid)
                         + matmul_flops(1, hid, hid) + hid)
            elementwise = 3 * 5 * hid + 5 * hid + 4 * hid + 5 * hid
            total += t * (gates + elementwise)
        total += matmul_flops(1, hid, k * l * m)
    return int(total)


def count_complexity(model: mdl.PredictorModel,
                     hardware: HardwareProfile = HardwareProfile()
                     ) -> ComplexityReport:
    n_params = model.parameter_count()
    n_flops = flops_per_forward(model.config)
    return ComplexityReport(
        kind=model.config.kind,
        n_parameters=n_params,
        n_flops=n_flops,
        memory_mb=memory_megabytes(n_params),
        est_time_s=n_flops / (hardware.f_gpu * hardware.n_unit * hardware.n_core),
        hardware=hardware)
