"""Command-line thin client for the service.

Every subcommand issues one request. By default the app is mounted
in-process (no socket involved); --server points the same client at a
remote instance, where paths are interpreted server-side.

Flags, `key = value` config entries, and request fields share one
vocabulary: a config file supplies defaults, explicit flags win. Exit
codes: 0 success, 2 usage, 3 data, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import asyncio
import os
import sys
from typing import Dict, Optional, Tuple

import httpx

from .errors import DataError
from .fileio import read_config_file

_BLAS_ENV = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "VECLIB_MAXIMUM_THREADS", "NUMEXPR_NUM_THREADS")


def _pin_blas_threads() -> None:
    # outputs must be byte-identical across host thread counts, so BLAS
    # threading is pinned before numpy ever loads
    for var in _BLAS_ENV:
        os.environ[var] = "1"


class _UsageError(Exception):
    pass


def _windows_arg(text: str):
    """'0:8,8:16' -> [[0, 8], [8, 16]]"""
    try:
        return [[int(a), int(b)] for a, b in
                (part.split(":") for part in text.split(","))]
    except ValueError as err:
        raise argparse.ArgumentTypeError(
            f"expected start:end[,start:end...], got {text!r}") from err


def _kinds_arg(text: str):
    return [k.strip() for k in text.split(",") if k.strip()]


# ---------------------------------------------------------------------------
# parser

def _add(sub, name: str, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text)
    p.add_argument("--config", help="key = value defaults file; flags win")
    p.add_argument("--server", default=argparse.SUPPRESS,
                   help="remote service URL (default: run in-process)")
    return p


def _opt(parser, flag: str, **kwargs) -> None:
    parser.add_argument(flag, default=argparse.SUPPRESS, **kwargs)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfchanpred",
        description="CSI dataset generation, analysis, prediction, and "
                    "delay-domain processing for cell-free deployments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = _add(sub, "generate", "synthesize a CSI dataset")
    _opt(p, "--out", help="dataset file to write")
    _opt(p, "--seed", type=int)
    _opt(p, "--n-aps", type=int)
    _opt(p, "--n-subcarriers", type=int)
    _opt(p, "--n-snapshots", type=int)
    _opt(p, "--area-side", type=float)
    _opt(p, "--ap-height-min", type=float)
    _opt(p, "--ap-height-max", type=float)
    _opt(p, "--carrier-freq", type=float)
    _opt(p, "--bandwidth", type=float)
    _opt(p, "--ue-speed", type=float)
    _opt(p, "--snapshot-interval", type=float)
    _opt(p, "--n-paths", type=int)
    _opt(p, "--n-sinusoids", type=int)
    _opt(p, "--rms-delay-spread", type=float)
    _opt(p, "--spatial-corr-decay", type=float)
    _opt(p, "--spatial-mode", choices=("distance", "random"))
    _opt(p, "--noise-std", type=float)
    _opt(p, "--tx-power", type=float)
    _opt(p, "--scenario")

    p = _add(sub, "analyze", "correlation report and sizing recommendations")
    _opt(p, "--data", help="dataset file")
    _opt(p, "--out", help="directory for report.txt and CSVs")
    _opt(p, "--max-lag", type=int)
    _opt(p, "--pacf-threshold", type=float)
    _opt(p, "--kernel-threshold", type=float)
    _opt(p, "--adjacency-kind", choices=("pcc", "distance", "constant"))
    _opt(p, "--pcc-strategy")
    _opt(p, "--distance-sigma", type=float)
    _opt(p, "--constant-value", type=float)
    p.add_argument("--no-csv", dest="write_csv", action="store_false",
                   default=argparse.SUPPRESS, help="report.txt only")

    p = _add(sub, "train", "fit a predictor and write a checkpoint")
    _opt(p, "--data", help="dataset file")
    _opt(p, "--out", help="checkpoint file; reports land beside it")
    _opt(p, "--seed", type=int)
    _opt(p, "--model", help="model kind")
    _opt(p, "--window", type=int)
    _opt(p, "--horizon", type=int)
    _opt(p, "--n-subcarriers", type=int)
    _opt(p, "--n-aps", type=int)
    _opt(p, "--d-model", type=int)
    _opt(p, "--n-heads", type=int)
    _opt(p, "--d-k", type=int)
    _opt(p, "--d-v", type=int)
    _opt(p, "--kernel-size", type=int)
    _opt(p, "--hidden", type=int)
    _opt(p, "--d-ff", type=int)
    _opt(p, "--n-blocks", type=int)
    _opt(p, "--alpha", type=float)
    _opt(p, "--eps", type=float)
    _opt(p, "--layer-norm-axis", choices=("time", "feature"))
    _opt(p, "--lr", type=float)
    _opt(p, "--beta1", type=float)
    _opt(p, "--beta2", type=float)
    _opt(p, "--eta", type=float)
    _opt(p, "--epochs", type=int)
    _opt(p, "--batch", type=int)
    _opt(p, "--train-fraction", type=float)
    _opt(p, "--part", choices=("both", "real", "imag"))
    _opt(p, "--early-stop-patience", type=int)
    _opt(p, "--adjacency",
         choices=("pcc", "distance", "constant", "identity"))
    _opt(p, "--pcc-strategy")
    _opt(p, "--distance-sigma", type=float)
    _opt(p, "--constant-value", type=float)

    p = _add(sub, "evaluate", "test-split accuracy of a checkpoint")
    _opt(p, "--data", help="dataset file")
    _opt(p, "--checkpoint", help="real-part (or shared) checkpoint")
    _opt(p, "--checkpoint-im", help="separate imaginary-part checkpoint")
    _opt(p, "--out", help="directory for nmse_vs_horizon.csv")
    _opt(p, "--train-fraction", type=float)
    _opt(p, "--part", choices=("both", "real", "imag"))

    p = _add(sub, "predict", "predict the next snapshots from a window")
    _opt(p, "--data", help="dataset file")
    _opt(p, "--checkpoint")
    _opt(p, "--checkpoint-im")
    _opt(p, "--out", help="predictions dataset file")
    _opt(p, "--at", type=int, help="window end index (default: capture end)")
    _opt(p, "--train-fraction", type=float)

    p = _add(sub, "complexity", "parameter/FLOP/memory comparison table")
    _opt(p, "--kinds", type=_kinds_arg, help="comma-separated model kinds")
    _opt(p, "--out", help="optional CSV path")
    _opt(p, "--window", type=int)
    _opt(p, "--horizon", type=int)
    _opt(p, "--n-subcarriers", type=int)
    _opt(p, "--n-aps", type=int)
    _opt(p, "--d-model", type=int)
    _opt(p, "--n-heads", type=int)
    _opt(p, "--d-k", type=int)
    _opt(p, "--d-v", type=int)
    _opt(p, "--kernel-size", type=int)
    _opt(p, "--hidden", type=int)
    _opt(p, "--d-ff", type=int)
    _opt(p, "--n-blocks", type=int)
    _opt(p, "--f-gpu", type=float)
    _opt(p, "--n-unit", type=float)
    _opt(p, "--n-core", type=float)

    p = _add(sub, "partition", "split a mixed capture by delay windows")
    _opt(p, "--data", help="mixed-capture dataset file (M = 1)")
    _opt(p, "--out", help="directory for per-source outputs")
    _opt(p, "--tau-th", type=int, help="two-source threshold, delay bins")
    _opt(p, "--windows", type=_windows_arg,
         help="explicit start:end[,start:end...] delay windows")

    p = _add(sub, "info", "package, dataset, and checkpoint details")
    _opt(p, "--data", help="describe this dataset file")
    _opt(p, "--checkpoint", help="describe this checkpoint file")

    p = sub.add_parser("serve", help="run the service over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


# ---------------------------------------------------------------------------
# flag -> request routing

_FLAT = ""

_GENERATE_KEYS = (
    "out", "seed", "n_aps", "n_subcarriers", "n_snapshots", "area_side",
    "ap_height_min", "ap_height_max", "carrier_freq", "bandwidth", "ue_speed",
    "snapshot_interval", "n_paths", "n_sinusoids", "rms_delay_spread",
    "spatial_corr_decay", "spatial_mode", "noise_std", "tx_power", "scenario")

_ANALYZE_KEYS = (
    "data", "out", "max_lag", "pacf_threshold", "kernel_threshold",
    "adjacency_kind", "pcc_strategy", "distance_sigma", "constant_value",
    "write_csv")

_EVALUATE_KEYS = ("data", "checkpoint", "checkpoint_im", "out",
                  "train_fraction", "part")

_PREDICT_KEYS = ("data", "checkpoint", "checkpoint_im", "out", "at",
                 "train_fraction")

_PARTITION_KEYS = ("data", "out", "tau_th", "windows")

_INFO_KEYS = ("data", "checkpoint")

_MODEL_FIELDS = ("window", "horizon", "n_subcarriers", "n_aps", "d_model",
                 "n_heads", "d_k", "d_v", "kernel_size", "hidden", "d_ff",
                 "n_blocks", "alpha", "eps", "layer_norm_axis")

_TRAIN_ROUTE: Dict[str, Tuple[str, str]] = {
    **{k: (_FLAT, k) for k in ("data", "out", "seed", "adjacency",
                               "pcc_strategy", "distance_sigma",
                               "constant_value")},
    "model": ("model", "kind"),
    **{k: ("model", k) for k in _MODEL_FIELDS},
    "lr": ("train", "learning_rate"),
    "batch": ("train", "batch_size"),
    **{k: ("train", k) for k in ("beta1", "beta2", "eta", "epochs",
                                 "train_fraction", "part",
                                 "early_stop_patience")},
}

_COMPLEXITY_ROUTE: Dict[str, Tuple[str, str]] = {
    **{k: (_FLAT, k) for k in ("kinds", "out", "f_gpu", "n_unit", "n_core")},
    **{k: ("model", k) for k in _MODEL_FIELDS if k not in ("alpha", "eps",
                                                           "layer_norm_axis")},
}

_ROUTES: Dict[str, Dict[str, Tuple[str, str]]] = {
    "generate": {k: (_FLAT, k) for k in _GENERATE_KEYS},
    "analyze": {k: (_FLAT, k) for k in _ANALYZE_KEYS},
    "train": _TRAIN_ROUTE,
    "evaluate": {k: (_FLAT, k) for k in _EVALUATE_KEYS},
    "predict": {k: (_FLAT, k) for k in _PREDICT_KEYS},
    "complexity": _COMPLEXITY_ROUTE,
    "partition": {k: (_FLAT, k) for k in _PARTITION_KEYS},
    "info": {k: (_FLAT, k) for k in _INFO_KEYS},
}


def _assemble(command: str, merged: Dict[str, object]) -> Dict[str, object]:
    route = _ROUTES[command]
    payload: Dict[str, object] = {}
    for key, value in merged.items():
        if key not in route:
            raise _UsageError(
                f"unknown option {key!r} for {command}; valid: "
                + ", ".join(sorted(route)))
        section, field = route[key]
        # config-file values arrive as strings; structured ones need parsing
        if isinstance(value, str):
            if field == "windows":
                value = _windows_arg(value)
            elif field == "kinds":
                value = _kinds_arg(value)
        if section == _FLAT:
            payload[field] = value
        else:
            payload.setdefault(section, {})[field] = value    # type: ignore
    return payload


# ---------------------------------------------------------------------------
# transport

_ENDPOINTS = {
    "generate": ("POST", "/generate"),
    "analyze": ("POST", "/analyze"),
    "train": ("POST", "/train"),
    "evaluate": ("POST", "/evaluate"),
    "predict": ("POST", "/predict"),
    "complexity": ("POST", "/complexity"),
    "partition": ("POST", "/partition"),
    "info": ("GET", "/info"),
}


def _call(server: Optional[str], method: str, path: str,
          payload: Dict[str, object]) -> Tuple[int, dict]:
    body = None if method == "GET" else payload
    params = payload if method == "GET" else None
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.request(method, path, json=body, params=params)
    else:
        from .service.app import create_app

        async def _go():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(transport=transport,
                                         base_url="http://service",
                                         timeout=None) as client:
                return await client.request(method, path, json=body,
                                            params=params)

        response = asyncio.run(_go())
    try:
        parsed = response.json()
    except ValueError:
        parsed = {"error_kind": "data",
                  "message": f"non-JSON response: {response.text[:200]}"}
    return response.status_code, parsed


_EXIT_BY_KIND = {"usage": 2, "data": 3, "numeric": 4}


# ---------------------------------------------------------------------------
# rendering

def _wrote(body: dict):
    return [f"wrote {path}" for path in body.get("files", [])]


def _render_generate(body: dict):
    return [
        f"generated {body['n_snapshots']} snapshots x "
        f"{body['n_subcarriers']} subcarriers x {body['n_aps']} aps",
        f"doppler_freq_hz = {body['doppler_freq_hz']!r}",
        f"subcarrier_spacing_hz = {body['subcarrier_spacing_hz']!r}",
    ] + _wrote(body)


def _render_analyze(body: dict):
    lines = [
        f"recommended_window = {body['recommended_window']}",
        f"recommended_kernel = {body['recommended_kernel']}",
        f"adjacency_kind = {body['adjacency_kind']}",
        f"mean_space_pcc = {body['mean_space_pcc']!r}",
    ]
    lines += [f"warning: {w}" for w in body["warnings"]]
    return lines + _wrote(body)


def _render_train(body: dict):
    lines = [
        f"trained {body['kind']} (part={body['part']}, seed={body['seed']}) "
        f"for {body['epochs_run']} epochs",
        f"samples: {body['n_train_samples']} train / "
        f"{body['n_test_samples']} test",
        f"final_epoch_loss = {body['final_epoch_loss']!r}",
        f"test_nmse_db = {body['test_nmse_db']!r}",
    ]
    lines += [f"horizon {k + 1}: nmse_db = {v!r}"
              for k, v in enumerate(body["test_nmse_per_horizon_db"])]
    return lines + _wrote(body)


def _render_evaluate(body: dict):
    lines = [f"nmse_db = {body['nmse_db']!r} "
             f"over {body['n_samples']} test windows"]
    lines += [f"horizon {k + 1}: nmse_db = {v!r}"
              for k, v in enumerate(body["nmse_per_horizon_db"])]
    return lines + _wrote(body)


def _render_predict(body: dict):
    return [
        f"predicted {body['horizon']} snapshots from window "
        f"[{body['window_start']}, {body['first_predicted_index']})",
    ] + _wrote(body)


def _render_complexity(body: dict):
    lines = [f"{'kind':<12} {'parameters':>12} {'flops':>16} "
             f"{'memory_mb':>10} {'est_time_s':>12}"]
    for row in body["rows"]:
        lines.append(
            f"{row['kind']:<12} {row['n_parameters']:>12} "
            f"{row['n_flops']:>16} {row['memory_mb']:>10.2f} "
            f"{row['est_time_s']:>12.3e}")
    return lines + _wrote(body)


def _render_partition(body: dict):
    lines = [
        f"n_sources = {body['n_sources']}",
        f"total_energy = {body['total_energy']!r}",
        f"leakage_energy = {body['leakage_energy']!r}",
        f"leakage_fraction = {body['leakage_fraction']!r}",
    ]
    lines += [f"source_{i:02d}_energy = {e!r}"
              for i, e in enumerate(body["source_energies"])]
    return lines + _wrote(body)


def _render_info(body: dict):
    lines = [
        f"name = {body['name']}",
        f"version = {body['version']}",
        f"model_kinds = {','.join(body['model_kinds'])}",
        f"dataset_format = {body['dataset_format']}",
        f"checkpoint_format = {body['checkpoint_format']}",
        f"nmse_db_floor = {body['nmse_db_floor']!r}",
        f"pdp_db_floor = {body['pdp_db_floor']!r}",
        f"default_f_gpu = {body['default_f_gpu']!r}",
        f"default_n_unit = {body['default_n_unit']!r}",
        f"default_n_core = {body['default_n_core']!r}",
    ]
    for block in ("dataset", "checkpoint"):
        info = body.get(block)
        if info:
            lines += [f"{block}.{key} = {value!r}"
                      if isinstance(value, float) else
                      f"{block}.{key} = {value}"
                      for key, value in info.items()]
    return lines


_RENDERERS = {
    "generate": _render_generate,
    "analyze": _render_analyze,
    "train": _render_train,
    "evaluate": _render_evaluate,
    "predict": _render_predict,
    "complexity": _render_complexity,
    "partition": _render_partition,
    "info": _render_info,
}


# ---------------------------------------------------------------------------
# entry point

def _cmd_serve(opts: Dict[str, object]) -> int:
    import uvicorn

    from .service.app import create_app
    uvicorn.run(create_app(), host=opts["host"], port=opts["port"])
    return 0


def main(argv=None) -> int:
    _pin_blas_threads()
    args = _build_parser().parse_args(argv)
    opts = vars(args)
    command = opts.pop("command")
    if command == "serve":
        return _cmd_serve(opts)

    config_path = opts.pop("config", None)
    try:
        merged: Dict[str, object] = \
            dict(read_config_file(config_path)) if config_path else {}
    except DataError as err:
        print(f"error (usage): {err}", file=sys.stderr)
        return 2
    merged.update(opts)
    server = merged.pop("server", None)

    try:
        payload = _assemble(command, merged)
    except (_UsageError, argparse.ArgumentTypeError) as err:
        print(f"error (usage): {err}", file=sys.stderr)
        return 2

    method, path = _ENDPOINTS[command]
    try:
        status, body = _call(server, method, path, payload)
    except httpx.HTTPError as err:
        print(f"error (transport): cannot reach service: {err}",
              file=sys.stderr)
        return 3

    kind = body.get("error_kind")
    if status >= 400 or kind is not None:
        message = body.get("message", str(body))
        print(f"error ({kind or 'unknown'}): {message}", file=sys.stderr)
        return _EXIT_BY_KIND.get(kind, 3 if status < 500 else 4)

    for line in _RENDERERS[command](body):
        print(line)
    return 0
