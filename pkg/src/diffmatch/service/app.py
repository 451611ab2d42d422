"""FastAPI service exposing the matching engine.

Endpoints take filesystem paths (the service and its clients share a
filesystem) and write heavyweight artifacts (maps, masks, overlays) next to
returning compact JSON. All endpoints are stateless and deterministic.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..benchmark import SchemaError, build_manifest, save_manifest
from ..config import MODE_ALIASES
from ..fmap import FeatureBundle, FmapError, load_fmap, validate_bundle
from ..matching import MatchOptions, downsample_mask, match
from ..metrics import (
    load_pairs,
    load_retrieval_records,
    propagation_report,
    retrieval_report,
    segmentation_report,
    write_report_csv,
    write_report_json,
)
from ..retrieval import (
    RankedList,
    external_ranking,
    load_manifest,
    load_ranking,
    rerank,
    save_ranking,
    score_gallery,
)
from ..segmentation import (
    binarize,
    load_mask,
    mask_to_rle,
    point_prompt,
    render_overlay,
    upsample_map,
    write_mask_png,
    write_point_prompt_json,
)
from . import schemas


def _stem(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "output"


def _match_options(params: schemas.MatchParams,
                   reference: FeatureBundle) -> MatchOptions:
    if params.mode not in MODE_ALIASES:
        raise ValueError(f"unknown mode {params.mode!r}")
    external = None
    if params.external_mask is not None:
        external = _feature_mask(params.external_mask, reference)
    return MatchOptions(
        tau=params.tau,
        mode=MODE_ALIASES[params.mode],
        external_mask=external,
        use_cosine=params.cosine,
    )


def _feature_mask(path: str, reference: FeatureBundle) -> np.ndarray:
    """Load an external mask and bring it to the reference feature grid."""
    mask = load_mask(path)
    grid = reference.appearance.shape[:2]
    if mask.shape == grid:
        return mask
    if mask.shape == (reference.source_height, reference.source_width):
        return downsample_mask(mask, *grid)
    raise ValueError(
        f"external mask shape {mask.shape} matches neither the feature grid "
        f"{grid} nor the source size "
        f"{(reference.source_height, reference.source_width)}"
    )


def create_app() -> FastAPI:
    app = FastAPI(title="diffmatch", version=__version__)

    @app.exception_handler(FmapError)
    async def _fmap_error(request: Request, exc: FmapError):
        return _error_response(exc.code, str(exc))

    @app.exception_handler(SchemaError)
    async def _schema_error(request: Request, exc: SchemaError):
        return _error_response("schema_error", str(exc))

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return _error_response("invalid_input", str(exc))

    @app.exception_handler(FileNotFoundError)
    async def _missing_file(request: Request, exc: FileNotFoundError):
        return _error_response("io_error", str(exc))

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/fmap/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ValidateRequest):
        bundle = load_fmap(req.path)
        return schemas.ValidateResponse(
            image_id=bundle.image_id,
            shape=bundle.shape,
            diagnostics=validate_bundle(bundle),
        )

    @app.post("/match", response_model=schemas.MatchResponse)
    def run_match(req: schemas.MatchRequest):
        reference = load_fmap(req.reference)
        target = load_fmap(req.target)
        options = _match_options(req.params, reference)
        result = match(reference, target, options)
        artifacts = {}
        if req.out_dir is not None:
            out_dir = Path(req.out_dir)
            out_dir.mkdir(parents=True, exist_ok=True)
            stem = req.stem or _stem(target.image_id)
            if req.save_maps:
                named = {
                    "fused_map": result.fused_map,
                    "appearance_map": result.appearance_map,
                    "semantic_map": result.semantic_map,
                }
                for name, score_map in named.items():
                    if score_map is None:
                        continue
                    path = out_dir / f"{stem}.{name}.npy"
                    np.save(path, score_map.values)
                    artifacts[name] = str(path)
            up = upsample_map(result.fused_map, target.source_height,
                              target.source_width)
            overlay_path = out_dir / f"{stem}.overlay.png"
            render_overlay(up.values).save(overlay_path, format="PNG")
            artifacts["overlay"] = str(overlay_path)
        h, w = result.fused_map.shape
        return schemas.MatchResponse(
            global_score=result.global_score,
            height=h,
            width=w,
            reference_mask_cells=int(result.reference_mask.sum()),
            artifacts=artifacts,
        )

    @app.post("/segment", response_model=schemas.SegmentResponse)
    def run_segment(req: schemas.SegmentRequest):
        reference = load_fmap(req.reference)
        target = load_fmap(req.target)
        options = _match_options(req.params, reference)
        result = match(reference, target, options)
        H, W = target.source_height, target.source_width
        upsampled = upsample_map(result.fused_map, H, W)
        mask = binarize(upsampled, req.seg_threshold)
        point = point_prompt(result.fused_map, H, W)

        out_dir = Path(req.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = req.stem or _stem(target.image_id)
        mask_png = out_dir / f"{stem}.mask.png"
        write_mask_png(mask, mask_png)
        rle_path = out_dir / f"{stem}.mask.json"
        with open(rle_path, "w") as fh:
            json.dump(mask_to_rle(mask), fh, sort_keys=True)
            fh.write("\n")
        point_path = out_dir / f"{stem}.point.json"
        write_point_prompt_json(point, target.image_id, point_path)
        return schemas.SegmentResponse(
            global_score=result.global_score,
            point=schemas.PointModel(**point.to_dict(target.image_id)),
            mask_pixels=int(mask.sum()),
            artifacts={
                "mask_png": str(mask_png),
                "mask_rle": str(rle_path),
                "point_json": str(point_path),
            },
        )

    def _ranking_response(ranking: RankedList, out: str | None):
        output = None
        if out is not None:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            save_ranking(ranking, out)
            output = out
        return schemas.RankingResponse(
            provenance=ranking.provenance,
            entries=[
                schemas.RankEntry(rank=i, image_id=image_id, score=score)
                for i, (image_id, score) in enumerate(ranking.entries, start=1)
            ],
            output=output,
        )

    @app.post("/retrieve", response_model=schemas.RankingResponse)
    def run_retrieve(req: schemas.RetrieveRequest):
        query = load_fmap(req.query)
        gallery = load_manifest(req.gallery)
        options = _match_options(req.params, query)
        ranking = score_gallery(query, gallery, options)
        return _ranking_response(ranking, req.out)

    @app.post("/rerank", response_model=schemas.RankingResponse)
    def run_rerank(req: schemas.RerankRequest):
        query = load_fmap(req.query)
        gallery = load_manifest(req.gallery)
        if req.initial is not None:
            initial = load_ranking(req.initial)
        else:
            initial = external_ranking(gallery)
        options = _match_options(req.params, query)
        ranking = rerank(initial, query, gallery, req.k, options)
        return _ranking_response(ranking, req.out)

    def _report_response(report: dict, out_json: str | None,
                         out_csv: str | None):
        artifacts = {}
        if out_json is not None:
            Path(out_json).parent.mkdir(parents=True, exist_ok=True)
            write_report_json(report, out_json)
            artifacts["json"] = out_json
        if out_csv is not None:
            Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
            write_report_csv(report, out_csv)
            artifacts["csv"] = out_csv
        return schemas.ReportResponse(report=report, artifacts=artifacts)

    @app.post("/eval/segmentation", response_model=schemas.ReportResponse)
    def eval_segmentation(req: schemas.EvalMasksRequest):
        records = load_pairs(req.pairs)
        report = segmentation_report(records, req.boundary_tol)
        return _report_response(report, req.out_json, req.out_csv)

    @app.post("/eval/propagation", response_model=schemas.ReportResponse)
    def eval_propagation(req: schemas.EvalMasksRequest):
        records = load_pairs(req.pairs)
        report = propagation_report(records, req.boundary_tol)
        return _report_response(report, req.out_json, req.out_csv)

    @app.post("/eval/retrieval", response_model=schemas.ReportResponse)
    def eval_retrieval(req: schemas.EvalRetrievalRequest):
        records = load_retrieval_records(req.records)
        report = retrieval_report(records)
        return _report_response(report, req.out_json, req.out_csv)

    @app.post("/benchmark/build", response_model=schemas.BuildBenchmarkResponse)
    def benchmark_build(req: schemas.BuildBenchmarkRequest):
        manifest = build_manifest(req.annotations, req.task, req.seed,
                                  req.gallery_mode)
        output = None
        if req.out is not None:
            Path(req.out).parent.mkdir(parents=True, exist_ok=True)
            save_manifest(manifest, req.out)
            output = req.out
        return schemas.BuildBenchmarkResponse(
            query_count=len(manifest.entries),
            gallery_count=len(manifest.gallery),
            excluded_count=len(manifest.excluded),
            stats=manifest.stats,
            output=output,
        )

    return app


def _error_response(code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=400,
        content={"error": {"code": code, "message": message}},
    )
