"""HTTP face of the package: one POST endpoint per pipeline stage.

The service owns all file IO, so requests carry server-side paths. The CLI
mounts this app in-process by default; "service" does not imply a network
hop. Failures map onto a JSON body {error_kind, message} that clients
translate into exit codes (usage 2, data 3, numeric 4).

Report files deliberately exclude wall-clock timings: a command rerun with
the same flags and seed must produce byte-identical artifacts.
"""

from __future__ import annotations

import os
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .. import __version__
from .. import analysis
from .. import models as mdl
from ..channel import (CSIF_VERSION, CsiDataset, SimConfig, generate,
                       load_dataset, save_dataset)
from ..errors import DataError, NumericError, ShapeError
from ..fileio import atomic_write_text, write_csv, write_matrix_csv
from ..pipeline import (PDP_DB_FLOOR, PartitionSpec, build_dataset_from_cfrs,
                        cirs_to_cfr_array, compute_pdp, dataset_frames_to_cirs,
                        partition_by_delay_window, pdp_db)
from ..training import (NMSE_DB_FLOOR, HardwareProfile, TrainConfig, _prepare,
                        count_complexity, evaluate, memory_megabytes, train)
from . import schemas as sc

_ADJACENCY_CHOICES = ("pcc", "distance", "constant", "identity")


def _kv_lines(pairs) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _load(path: str) -> CsiDataset:
    return load_dataset(path)


def _build_a_norm(req, data: np.ndarray, positions: np.ndarray,
                  n_train: int) -> Optional[np.ndarray]:
    """Adjacency from the training split only, so the propagation matrix
    never sees test-period statistics."""
    if req.adjacency == "identity":
        return None
    if req.adjacency == "pcc":
        adj = analysis.build_adjacency_pcc(data[:n_train], req.pcc_strategy)
    elif req.adjacency == "distance":
        adj = analysis.build_adjacency_distance(positions, req.distance_sigma)
    elif req.adjacency == "constant":
        adj = analysis.build_adjacency_constant(data.shape[2], req.constant_value)
    else:
        raise DataError(f"unknown adjacency {req.adjacency!r}; "
                        f"options: {_ADJACENCY_CHOICES}")
    return analysis.normalize_adjacency(adj)


def create_app() -> FastAPI:
    app = FastAPI(title="cfchanpred", version=__version__)

    @app.exception_handler(DataError)
    @app.exception_handler(ShapeError)
    @app.exception_handler(OSError)
    async def _data_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=422, content={
            "error_kind": "data", "message": str(exc)})

    @app.exception_handler(NumericError)
    @app.exception_handler(ArithmeticError)
    async def _numeric_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=500, content={
            "error_kind": "numeric", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _usage_error(request: Request,
                           exc: RequestValidationError) -> JSONResponse:
        parts = []
        for err in exc.errors():
            where = ".".join(str(p) for p in err["loc"] if p != "body")
            parts.append(f"{where}: {err['msg']}")
        return JSONResponse(status_code=422, content={
            "error_kind": "usage", "message": "; ".join(parts)})

    @app.post("/generate", response_model=sc.GenerateResponse)
    def generate_endpoint(req: sc.GenerateRequest) -> sc.GenerateResponse:
        cfg = SimConfig(
            n_aps=req.n_aps, n_subcarriers=req.n_subcarriers,
            n_snapshots=req.n_snapshots, area_side=req.area_side,
            ap_height=(req.ap_height_min, req.ap_height_max),
            carrier_freq=req.carrier_freq, bandwidth=req.bandwidth,
            ue_speed=req.ue_speed, snapshot_interval=req.snapshot_interval,
            n_paths=req.n_paths, n_sinusoids=req.n_sinusoids,
            rms_delay_spread=req.rms_delay_spread,
            spatial_corr_decay=req.spatial_corr_decay,
            spatial_mode=req.spatial_mode, noise_std=req.noise_std,
            tx_power=req.tx_power, scenario=req.scenario)
        dataset = generate(cfg, seed=req.seed)
        out = os.path.abspath(req.out)
        save_dataset(dataset, out)
        resolved = cfg.resolved()
        return sc.GenerateResponse(
            out=out, n_snapshots=dataset.n_snapshots,
            n_subcarriers=dataset.n_subcarriers, n_aps=dataset.n_aps,
            doppler_freq_hz=float(resolved.doppler_freq),
            subcarrier_spacing_hz=float(resolved.subcarrier_spacing),
            files=[out])

    @app.post("/analyze", response_model=sc.AnalyzeResponse)
    def analyze_endpoint(req: sc.AnalyzeRequest) -> sc.AnalyzeResponse:
        dataset = _load(req.data)
        report = analysis.analyze(
            dataset.data, positions=dataset.ap_positions, max_lag=req.max_lag,
            pacf_threshold=req.pacf_threshold,
            kernel_threshold=req.kernel_threshold,
            adjacency_kind=req.adjacency_kind, pcc_strategy=req.pcc_strategy,
            distance_sigma=req.distance_sigma,
            constant_value=req.constant_value)
        out_dir = os.path.abspath(req.out)
        os.makedirs(out_dir, exist_ok=True)
        report_path = os.path.join(out_dir, "report.txt")
        pairs = [
            ("recommended_window", report.recommended_window),
            ("recommended_kernel", report.recommended_kernel),
            ("window_warning", _fmt(report.window_warning)),
            ("adjacency_kind", report.adjacency_kind),
            ("pcc_strategy", report.pcc_strategy),
            ("mean_space_pcc", _fmt(float(report.mean_space_pcc))),
        ] + [("warning", w) for w in report.warnings]
        atomic_write_text(report_path, _kv_lines(pairs))
        files = [report_path]
        if req.write_csv:
            pacf_path = os.path.join(out_dir, "pacf.csv")
            write_csv(pacf_path, ("lag", "mean_abs_pacf"),
                      list(enumerate(float(v) for v in report.pacf_mean_abs)))
            freq_path = os.path.join(out_dir, "freq_pcc.csv")
            write_matrix_csv(freq_path, report.freq_pcc)
            adj_path = os.path.join(out_dir, "adjacency.csv")
            write_matrix_csv(adj_path, report.adjacency)
            files += [pacf_path, freq_path, adj_path]
        return sc.AnalyzeResponse(
            recommended_window=int(report.recommended_window),
            recommended_kernel=int(report.recommended_kernel),
            window_warning=bool(report.window_warning),
            adjacency_kind=report.adjacency_kind,
            pcc_strategy=report.pcc_strategy,
            mean_space_pcc=float(report.mean_space_pcc),
            warnings=list(report.warnings), files=files)

    @app.post("/train", response_model=sc.TrainResponse)
    def train_endpoint(req: sc.TrainRequest) -> sc.TrainResponse:
        dataset = _load(req.data)
        mp = req.model
        explicit = mp.model_fields_set
        for field, actual in (("n_subcarriers", dataset.n_subcarriers),
                              ("n_aps", dataset.n_aps)):
            if field in explicit and getattr(mp, field) != actual:
                raise DataError(f"model {field}={getattr(mp, field)} does not "
                                f"match dataset ({actual})")
        config = mdl.ModelConfig(
            kind=mp.kind, window=mp.window, horizon=mp.horizon,
            n_subcarriers=dataset.n_subcarriers, n_aps=dataset.n_aps,
            d_model=mp.d_model, n_heads=mp.n_heads, d_k=mp.d_k, d_v=mp.d_v,
            kernel_size=mp.kernel_size, hidden=mp.hidden, d_ff=mp.d_ff,
            n_blocks=mp.n_blocks, alpha=mp.alpha, eps=mp.eps,
            layer_norm_axis=mp.layer_norm_axis).resolved()
        a_norm = None
        if config.kind in ("proposed", "variant_b"):
            raw, _, _, n_train = _prepare(dataset, req.train.train_fraction)
            a_norm = _build_a_norm(req, raw, dataset.ap_positions, n_train)
        model = mdl.build_model(config, a_norm=a_norm, seed=req.seed)
        tp = req.train
        tcfg = TrainConfig(
            learning_rate=tp.learning_rate, beta1=tp.beta1, beta2=tp.beta2,
            eta=tp.eta, epochs=tp.epochs, batch_size=tp.batch_size,
            seed=req.seed, train_fraction=tp.train_fraction, part=tp.part,
            early_stop_patience=tp.early_stop_patience)
        report = train(model, dataset, tcfg)
        out = os.path.abspath(req.out)
        mdl.save_model(model, out)
        out_dir = os.path.dirname(out) or "."
        report_path = os.path.join(out_dir, "train_report.txt")
        pairs = [
            ("kind", report.kind),
            ("part", report.part),
            ("seed", report.seed),
            ("epochs_run", report.epochs_run),
            ("n_train_samples", report.n_train_samples),
            ("n_test_samples", report.n_test_samples),
            ("batch_size", report.batch_size),
            ("learning_rate", _fmt(report.learning_rate)),
            ("n_parameters", report.complexity.n_parameters),
            ("n_flops", report.complexity.n_flops),
            ("memory_mb", _fmt(report.complexity.memory_mb)),
            ("est_time_s", _fmt(report.complexity.est_time_s)),
            ("test_nmse_db", _fmt(report.test_nmse_db)),
        ] + [(f"epoch_loss_{i:03d}", _fmt(loss))
             for i, loss in enumerate(report.epoch_losses)]
        atomic_write_text(report_path, _kv_lines(pairs))
        csv_path = os.path.join(out_dir, "nmse_vs_horizon.csv")
        write_csv(csv_path, ("horizon_k", "nmse_db"),
                  [(k + 1, v) for k, v in
                   enumerate(report.test_nmse_per_horizon_db)])
        return sc.TrainResponse(
            kind=report.kind, part=report.part, seed=report.seed,
            epochs_run=report.epochs_run,
            n_train_samples=report.n_train_samples,
            n_test_samples=report.n_test_samples,
            final_epoch_loss=float(report.epoch_losses[-1]),
            test_nmse_db=float(report.test_nmse_db),
            test_nmse_per_horizon_db=[float(v) for v in
                                      report.test_nmse_per_horizon_db],
            epoch_losses=[float(v) for v in report.epoch_losses],
            epoch_seconds=[float(v) for v in report.epoch_seconds],
            n_parameters=report.complexity.n_parameters,
            n_flops=report.complexity.n_flops,
            memory_mb=report.complexity.memory_mb,
            est_time_s=report.complexity.est_time_s,
            checkpoint=out, files=[out, report_path, csv_path])

    @app.post("/evaluate", response_model=sc.EvaluateResponse)
    def evaluate_endpoint(req: sc.EvaluateRequest) -> sc.EvaluateResponse:
        dataset = _load(req.data)
        model = mdl.load_model(req.checkpoint)
        model_im = mdl.load_model(req.checkpoint_im) if req.checkpoint_im else None
        report = evaluate(model, dataset, model_im=model_im,
                          train_fraction=req.train_fraction, part=req.part)
        out_dir = os.path.abspath(req.out)
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "nmse_vs_horizon.csv")
        write_csv(csv_path, ("horizon_k", "nmse_db"),
                  [(k + 1, v) for k, v in enumerate(report.nmse_per_horizon_db)])
        return sc.EvaluateResponse(
            nmse_db=float(report.nmse_db),
            nmse_per_horizon_db=[float(v) for v in report.nmse_per_horizon_db],
            n_samples=report.n_samples, files=[csv_path])

    @app.post("/predict", response_model=sc.PredictResponse)
    def predict_endpoint(req: sc.PredictRequest) -> sc.PredictResponse:
        dataset = _load(req.data)
        model_re = mdl.load_model(req.checkpoint)
        model_im = mdl.load_model(req.checkpoint_im) if req.checkpoint_im \
            else model_re
        raw, _, std, _ = _prepare(dataset, req.train_fraction)
        t_total = raw.shape[0]
        window = model_re.config.window
        at = req.at if req.at is not None else t_total
        if not window <= at <= t_total:
            raise DataError(f"window end {at} outside [{window}, {t_total}]")
        pred = mdl.predict_complex(model_re, model_im,
                                   raw[at - window:at], std)
        out = os.path.abspath(req.out)
        save_dataset(CsiDataset(data=pred,
                                ap_positions=dataset.ap_positions), out)
        return sc.PredictResponse(
            out=out, horizon=pred.shape[0], window_start=at - window,
            first_predicted_index=at, files=[out])

    @app.post("/complexity", response_model=sc.ComplexityResponse)
    def complexity_endpoint(req: sc.ComplexityRequest) -> sc.ComplexityResponse:
        kinds = req.kinds if req.kinds else list(mdl.KINDS)
        hardware = HardwareProfile(f_gpu=req.f_gpu, n_unit=req.n_unit,
                                   n_core=req.n_core)
        mp = req.model
        rows: List[sc.ComplexityRow] = []
        for kind in kinds:
            config = mdl.ModelConfig(
                kind=kind, window=mp.window, horizon=mp.horizon,
                n_subcarriers=mp.n_subcarriers, n_aps=mp.n_aps,
                d_model=mp.d_model, n_heads=mp.n_heads, d_k=mp.d_k,
                d_v=mp.d_v, kernel_size=mp.kernel_size, hidden=mp.hidden,
                d_ff=mp.d_ff, n_blocks=mp.n_blocks, alpha=mp.alpha,
                eps=mp.eps, layer_norm_axis=mp.layer_norm_axis)
            report = count_complexity(mdl.build_model(config), hardware)
            rows.append(sc.ComplexityRow(
                kind=report.kind, n_parameters=report.n_parameters,
                n_flops=report.n_flops, memory_mb=report.memory_mb,
                est_time_s=report.est_time_s))
        files: List[str] = []
        if req.out:
            out = os.path.abspath(req.out)
            write_csv(out, ("kind", "n_parameters", "n_flops", "memory_mb",
                            "est_time_s"),
                      [(r.kind, r.n_parameters, r.n_flops, r.memory_mb,
                        r.est_time_s) for r in rows])
            files.append(out)
        return sc.ComplexityResponse(rows=rows, files=files)

    @app.post("/partition", response_model=sc.PartitionResponse)
    def partition_endpoint(req: sc.PartitionRequest) -> sc.PartitionResponse:
        dataset = _load(req.data)
        if dataset.n_aps != 1:
            raise DataError("partition expects a single mixed capture "
                            f"(M = 1), got M = {dataset.n_aps}")
        if req.windows is not None and req.tau_th is not None:
            raise DataError("give either tau_th or windows, not both")
        if req.windows is not None:
            spec = PartitionSpec(windows=[tuple(w) for w in req.windows])
        elif req.tau_th is not None:
            spec = PartitionSpec.two_source(req.tau_th)
        else:
            raise DataError("partition needs tau_th or windows")
        cirs = dataset_frames_to_cirs(dataset.data[:, :, 0])
        report = partition_by_delay_window(cirs, spec)
        pdp = compute_pdp(cirs)
        out_dir = os.path.abspath(req.out)
        os.makedirs(out_dir, exist_ok=True)
        pdp_path = os.path.join(out_dir, "pdp.csv")
        db_vals = pdp_db(pdp)
        write_csv(pdp_path, ("bin", "power_linear", "power_db"),
                  [(i, float(p), float(d))
                   for i, (p, d) in enumerate(zip(pdp, db_vals))])
        files = [pdp_path]
        per_source_cfrs = []
        for i, frames in enumerate(report.per_source):
            cfrs = cirs_to_cfr_array(frames)
            per_source_cfrs.append(cfrs)
            src_path = os.path.join(out_dir, f"source_{i:02d}.csif")
            save_dataset(build_dataset_from_cfrs(
                [cfrs], ap_positions=dataset.ap_positions), src_path)
            files.append(src_path)
        combined_path = os.path.join(out_dir, "combined.csif")
        save_dataset(build_dataset_from_cfrs(per_source_cfrs), combined_path)
        files.append(combined_path)
        report_path = os.path.join(out_dir, "partition_report.txt")
        fraction = report.leakage_energy / report.total_energy \
            if report.total_energy > 0.0 else 0.0
        pairs = [
            ("n_sources", spec.n_sources),
            ("total_energy", _fmt(report.total_energy)),
            ("leakage_energy", _fmt(report.leakage_energy)),
            ("leakage_fraction", _fmt(fraction)),
        ] + [(f"source_{i:02d}_energy", _fmt(e))
             for i, e in enumerate(report.source_energies)]
        atomic_write_text(report_path, _kv_lines(pairs))
        files.append(report_path)
        return sc.PartitionResponse(
            n_sources=spec.n_sources, total_energy=report.total_energy,
            leakage_energy=report.leakage_energy, leakage_fraction=fraction,
            source_energies=list(report.source_energies), files=files)

    @app.get("/info", response_model=sc.InfoResponse)
    def info_endpoint(data: Optional[str] = None,
                      checkpoint: Optional[str] = None) -> sc.InfoResponse:
        dataset_info = None
        if data:
            dataset = _load(data)
            dataset_info = sc.DatasetInfo(
                path=os.path.abspath(data),
                n_snapshots=dataset.n_snapshots,
                n_subcarriers=dataset.n_subcarriers, n_aps=dataset.n_aps,
                standardized=dataset.standardization is not None,
                file_bytes=os.path.getsize(data))
        checkpoint_info = None
        if checkpoint:
            model = mdl.load_model(checkpoint)
            cfg = model.config
            checkpoint_info = sc.CheckpointInfo(
                path=os.path.abspath(checkpoint), kind=cfg.kind,
                window=cfg.window, horizon=cfg.horizon,
                n_subcarriers=cfg.n_subcarriers, n_aps=cfg.n_aps,
                d_model=cfg.d_model, n_heads=cfg.n_heads, d_k=cfg.d_k,
                d_v=cfg.d_v, kernel_size=cfg.kernel_size, hidden=cfg.hidden,
                d_ff=cfg.d_ff, n_blocks=cfg.n_blocks,
                layer_norm_axis=cfg.layer_norm_axis,
                n_parameters=model.parameter_count(),
                memory_mb=memory_megabytes(model.parameter_count()),
                file_bytes=os.path.getsize(checkpoint))
        return sc.InfoResponse(
            name="cfchanpred", version=__version__,
            model_kinds=list(mdl.KINDS),
            dataset_format=f"CSIF v{CSIF_VERSION}",
            checkpoint_format=f"CFWT v{mdl.CFWT_VERSION}",
            nmse_db_floor=NMSE_DB_FLOOR, pdp_db_floor=PDP_DB_FLOOR,
            default_f_gpu=HardwareProfile().f_gpu,
            default_n_unit=HardwareProfile().n_unit,
            default_n_core=HardwareProfile().n_core,
            dataset=dataset_info, checkpoint=checkpoint_info)

    return app


app = create_app()
