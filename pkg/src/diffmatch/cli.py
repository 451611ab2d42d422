"""Command-line client for the matching service.

Every subcommand is a thin wrapper over one service endpoint. By default the
service runs in-process; pass ``--server URL`` to talk to a remote instance
started with ``diffmatch serve``. Outputs are byte-stable: rerunning a
command with the same inputs and config reproduces identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import CONFIG_ENV_VAR, RunConfig, resolve_config

CONFIG_FLAGS = ("tau", "mode", "seg_threshold", "topk", "boundary_tol",
                "seed", "cosine", "external_mask", "gallery", "out")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE",
                        help=f"config file (fallback: ${CONFIG_ENV_VAR})")
    common.add_argument("--server", metavar="URL",
                        help="remote service URL (default: run in-process)")
    common.add_argument("--tau", type=float, default=None,
                        help="reference-mask threshold in (0, 1]")
    common.add_argument("--mode", choices=("both", "appearance", "semantic"),
                        default=None, help="which maps drive the match")
    common.add_argument("--cosine", action="store_true", default=None,
                        help="cosine similarity instead of raw dot products")
    common.add_argument("--external-mask", metavar="PATH", default=None,
                        help="reference mask file replacing the attention mask")
    common.add_argument("--seg-threshold", type=float, default=None,
                        help="binarization threshold on the fused map")
    common.add_argument("--topk", type=int, default=None,
                        help="number of leading entries to re-rank")
    common.add_argument("--boundary-tol", type=float, default=None,
                        help="boundary tolerance as a fraction of the diagonal")
    common.add_argument("--seed", type=int, default=None,
                        help="sampling seed for benchmark construction")
    common.add_argument("--gallery", metavar="MANIFEST", default=None,
                        help="gallery manifest JSON")
    common.add_argument("--out", metavar="DIR", default=None,
                        help="output directory")
    common.add_argument("--format", choices=("json", "tsv"), default="json",
                        help="ranking file format")

    parser = argparse.ArgumentParser(
        prog="diffmatch",
        description="Personalized instance matching, segmentation and retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", parents=[common],
                       help="score one reference/target pair")
    p.add_argument("reference", help="reference FMAP file")
    p.add_argument("target", help="target FMAP file")

    p = sub.add_parser("segment", parents=[common],
                       help="segment the reference instance in a target image")
    p.add_argument("reference")
    p.add_argument("target")

    p = sub.add_parser("retrieve", parents=[common],
                       help="rank a gallery against a query")
    p.add_argument("query", help="query FMAP file")

    p = sub.add_parser("rerank", parents=[common],
                       help="re-rank the head of an initial ranking")
    p.add_argument("query")
    p.add_argument("--initial", metavar="RANKING", default=None,
                   help="initial ranking (JSON/TSV); default: manifest scores")

    p = sub.add_parser("eval-seg", parents=[common],
                       help="mIoU / boundary IoU over mask pairs")
    p.add_argument("pairs", help="pairs manifest JSON")

    p = sub.add_parser("eval-prop", parents=[common],
                       help="J / F / J&F over per-video mask pairs")
    p.add_argument("pairs")

    p = sub.add_parser("eval-retrieval", parents=[common],
                       help="mAP over ranking records")
    p.add_argument("records", help="retrieval eval records JSON")

    p = sub.add_parser("build-benchmark", parents=[common],
                       help="build benchmark splits from video annotations")
    p.add_argument("annotations", help="annotation JSON document")
    p.add_argument("--task", choices=("retrieval", "image_seg", "video_prop"),
                   default="retrieval")
    p.add_argument("--gallery-mode", choices=("disjoint", "inclusive"),
                   default="disjoint")

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8035)

    return parser


def _make_client(server: str | None):
    if server:
        import httpx

        return httpx.Client(base_url=server, timeout=600.0)
    from fastapi.testclient import TestClient

    from .service.app import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _resolve(args) -> RunConfig:
    cli_values = {name: getattr(args, name, None) for name in CONFIG_FLAGS}
    config = resolve_config(cli_values, args.config)
    print(json.dumps({"resolved_config": config.to_dict()}, sort_keys=True),
          file=sys.stderr)
    return config


def _params(config: RunConfig) -> dict:
    return {
        "tau": config.tau,
        "mode": config.pipeline_mode,
        "cosine": config.cosine,
        "external_mask": config.external_mask,
    }


def _fail(payload: dict) -> int:
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return 1


def _call(client, endpoint: str, payload: dict) -> int:
    response = client.post(endpoint, json=payload)
    if response.status_code != 200:
        try:
            body = response.json()
        except ValueError:
            body = {"error": {"code": "http_error", "message": response.text}}
        if "error" not in body:
            body = {"error": {"code": f"http_{response.status_code}",
                              "message": json.dumps(body)}}
        return _fail(body)
    print(json.dumps(response.json(), indent=2, sort_keys=True))
    return 0


def _require(value, flag: str):
    if value is None:
        raise SystemExit(f"error: {flag} is required for this command")
    return value


def run(args) -> int:
    if args.command == "serve":
        import uvicorn

        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return 0

    config = _resolve(args)
    client = _make_client(args.server)
    out = config.out

    if args.command == "match":
        return _call(client, "/match", {
            "reference": args.reference,
            "target": args.target,
            "params": _params(config),
            "out_dir": out,
            "save_maps": True,
        })
    if args.command == "segment":
        return _call(client, "/segment", {
            "reference": args.reference,
            "target": args.target,
            "params": _params(config),
            "seg_threshold": config.seg_threshold,
            "out_dir": _require(out, "--out"),
        })
    if args.command == "retrieve":
        ranking_out = None
        if out is not None:
            ranking_out = str(Path(out) / f"ranking.{args.format}")
        return _call(client, "/retrieve", {
            "query": args.query,
            "gallery": _require(config.gallery, "--gallery"),
            "params": _params(config),
            "out": ranking_out,
        })
    if args.command == "rerank":
        ranking_out = None
        if out is not None:
            ranking_out = str(Path(out) / f"reranked.{args.format}")
        return _call(client, "/rerank", {
            "query": args.query,
            "gallery": _require(config.gallery, "--gallery"),
            "initial": args.initial,
            "k": config.topk,
            "params": _params(config),
            "out": ranking_out,
        })
    if args.command in ("eval-seg", "eval-prop"):
        endpoint = "/eval/segmentation" if args.command == "eval-seg" \
            else "/eval/propagation"
        payload = {
            "pairs": args.pairs,
            "boundary_tol": config.boundary_tol,
        }
        if out is not None:
            payload["out_json"] = str(Path(out) / "report.json")
            payload["out_csv"] = str(Path(out) / "report.csv")
        return _call(client, endpoint, payload)
    if args.command == "eval-retrieval":
        payload = {"records": args.records}
        if out is not None:
            payload["out_json"] = str(Path(out) / "report.json")
            payload["out_csv"] = str(Path(out) / "report.csv")
        return _call(client, "/eval/retrieval", payload)
    if args.command == "build-benchmark":
        payload = {
            "annotations": args.annotations,
            "task": args.task,
            "seed": config.seed,
            "gallery_mode": args.gallery_mode,
        }
        if out is not None:
            payload["out"] = str(Path(out) / "manifest.json")
        return _call(client, "/benchmark/build", payload)
    raise SystemExit(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except SystemExit:
        raise
    except (ValueError, OSError) as exc:
        return _fail({"error": {"code": "invalid_input", "message": str(exc)}})


if __name__ == "__main__":
    sys.exit(main())
