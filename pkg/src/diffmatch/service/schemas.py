"""Request/response models for the matching service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class MatchParams(BaseModel):
    """Pipeline knobs shared by match-driven endpoints."""

    tau: float = Field(default=0.7, gt=0.0, le=1.0)
    mode: str = "both"
    cosine: bool = False
    external_mask: str | None = None  # mask file (PNG or RLE JSON)


class MatchRequest(BaseModel):
    reference: str                    # reference FMAP path
    target: str                       # target FMAP path
    params: MatchParams = MatchParams()
    out_dir: str | None = None
    stem: str | None = None
    save_maps: bool = True


class MatchResponse(BaseModel):
    global_score: float
    height: int
    width: int
    reference_mask_cells: int
    artifacts: dict[str, str] = {}


class PointModel(BaseModel):
    image_id: str
    x: int
    y: int
    confidence: float


class SegmentRequest(BaseModel):
    reference: str
    target: str
    params: MatchParams = MatchParams()
    seg_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    out_dir: str
    stem: str | None = None


class SegmentResponse(BaseModel):
    global_score: float
    point: PointModel
    mask_pixels: int
    artifacts: dict[str, str]


class RetrieveRequest(BaseModel):
    query: str
    gallery: str                      # gallery manifest path
    params: MatchParams = MatchParams()
    out: str | None = None


class RankEntry(BaseModel):
    rank: int
    image_id: str
    score: float


class RankingResponse(BaseModel):
    provenance: str
    entries: list[RankEntry]
    output: str | None = None


class RerankRequest(BaseModel):
    query: str
    gallery: str
    initial: str | None = None        # ranking file; None uses manifest scores
    k: int = Field(default=400, ge=0)
    params: MatchParams = MatchParams()
    out: str | None = None


class EvalMasksRequest(BaseModel):
    pairs: str                        # pairs manifest path
    boundary_tol: float = Field(default=0.008, gt=0.0)
    out_json: str | None = None
    out_csv: str | None = None


class EvalRetrievalRequest(BaseModel):
    records: str                      # retrieval eval records path
    out_json: str | None = None
    out_csv: str | None = None


class ReportResponse(BaseModel):
    report: dict
    artifacts: dict[str, str] = {}


class BuildBenchmarkRequest(BaseModel):
    annotations: str
    task: str = "retrieval"
    seed: int = 0
    gallery_mode: str = "disjoint"
    out: str | None = None


class BuildBenchmarkResponse(BaseModel):
    query_count: int
    gallery_count: int
    excluded_count: int
    stats: dict
    output: str | None = None


class ValidateRequest(BaseModel):
    path: str


class ValidateResponse(BaseModel):
    image_id: str
    shape: tuple[int, int, int]
    diagnostics: list[str]


class HealthResponse(BaseModel):
    status: str
    version: str
