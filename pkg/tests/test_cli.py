import json

import pytest

from diffmatch.cli import main
from diffmatch.fmap import save_fmap
from diffmatch.segmentation import write_mask_png

from conftest import make_multi_instance_doc, random_bundle


@pytest.fixture
def workspace(rng, tmp_path):
    ref = random_bundle(rng, image_id="ref", source=64)
    target = random_bundle(rng, image_id="scene", source=64)
    save_fmap(ref, tmp_path / "ref.fmap")
    save_fmap(target, tmp_path / "target.fmap")
    entries = []
    for i in range(3):
        bundle = random_bundle(rng, image_id=f"g{i}")
        save_fmap(bundle, tmp_path / f"g{i}.fmap")
        entries.append({"image_id": f"g{i}", "path": f"g{i}.fmap",
                        "global_score": 1.0 - 0.1 * i})
    (tmp_path / "gallery.json").write_text(json.dumps(entries))
    return tmp_path


def run_cli(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestMatchCommand:
    def test_exit_zero_and_score(self, workspace, capsys):
        code, out, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "target.fmap")])
        assert code == 0
        payload = json.loads(out)
        assert 0.0 <= payload["global_score"] <= 1.0

    def test_resolved_config_echoed(self, workspace, capsys):
        code, _, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "target.fmap"),
            "--tau", "0.4"])
        assert code == 0
        echo = json.loads(err.splitlines()[0])
        assert echo["resolved_config"]["tau"] == 0.4

    def test_writes_maps_and_overlay(self, workspace, capsys):
        out_dir = workspace / "out"
        code, out, _ = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "target.fmap"),
            "--out", str(out_dir)])
        assert code == 0
        artifacts = json.loads(out)["artifacts"]
        assert (out_dir / "scene.fused_map.npy").exists()
        assert (out_dir / "scene.overlay.png").exists()
        assert set(artifacts) == {"fused_map", "appearance_map",
                                  "semantic_map", "overlay"}

    def test_missing_input_fails_with_machine_readable_error(self, workspace,
                                                             capsys):
        code, _, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "nope.fmap")])
        assert code == 1
        error = json.loads(err.splitlines()[-1])["error"]
        assert error["code"]


class TestSegmentCommand:
    def test_mask_file_exists(self, workspace, capsys):
        out_dir = workspace / "seg"
        code, out, _ = run_cli(capsys, [
            "segment", str(workspace / "ref.fmap"),
            str(workspace / "target.fmap"), "--out", str(out_dir)])
        assert code == 0
        payload = json.loads(out)
        assert (out_dir / "scene.mask.png").exists()
        assert (out_dir / "scene.point.json").exists()
        assert payload["point"]["confidence"] <= 1.0

    def test_byte_stable_across_two_runs(self, workspace, capsys):
        blobs = []
        for name in ("s1", "s2"):
            out_dir = workspace / name
            code, out, _ = run_cli(capsys, [
                "segment", str(workspace / "ref.fmap"),
                str(workspace / "target.fmap"), "--out", str(out_dir)])
            assert code == 0
            blobs.append((
                (out_dir / "scene.mask.png").read_bytes(),
                (out_dir / "scene.mask.json").read_bytes(),
                (out_dir / "scene.point.json").read_bytes(),
            ))
        assert blobs[0] == blobs[1]

    def test_requires_out(self, workspace, capsys):
        with pytest.raises(SystemExit):
            main(["segment", str(workspace / "ref.fmap"),
                  str(workspace / "target.fmap")])


class TestRetrieveCommand:
    def test_ranking_written(self, workspace, capsys):
        out_dir = workspace / "ret"
        code, out, _ = run_cli(capsys, [
            "retrieve", str(workspace / "ref.fmap"),
            "--gallery", str(workspace / "gallery.json"),
            "--out", str(out_dir)])
        assert code == 0
        payload = json.loads(out)
        assert len(payload["entries"]) == 3
        assert (out_dir / "ranking.json").exists()

    def test_empty_gallery_nonzero_exit(self, workspace, capsys):
        (workspace / "empty.json").write_text("[]")
        code, _, err = run_cli(capsys, [
            "retrieve", str(workspace / "ref.fmap"),
            "--gallery", str(workspace / "empty.json")])
        assert code == 1
        error = json.loads(err.splitlines()[-1])["error"]
        assert "empty" in error["message"]

    def test_tsv_format(self, workspace, capsys):
        out_dir = workspace / "ret2"
        code, _, _ = run_cli(capsys, [
            "retrieve", str(workspace / "ref.fmap"),
            "--gallery", str(workspace / "gallery.json"),
            "--out", str(out_dir), "--format", "tsv"])
        assert code == 0
        lines = (out_dir / "ranking.tsv").read_text().splitlines()
        assert lines[0] == "rank\timage_id\tscore"


class TestRerankCommand:
    def test_rerank_from_manifest_scores(self, workspace, capsys):
        code, out, _ = run_cli(capsys, [
            "rerank", str(workspace / "ref.fmap"),
            "--gallery", str(workspace / "gallery.json"), "--topk", "2"])
        assert code == 0
        payload = json.loads(out)
        assert payload["provenance"] == "reranked"
        # tail untouched: g2 had the lowest external score
        assert payload["entries"][2]["image_id"] == "g2"
        assert payload["entries"][2]["score"] == pytest.approx(0.8)


class TestEvalCommands:
    def test_eval_retrieval_derived_fixture(self, workspace, capsys):
        records = [{"query_id": "q", "ranking": ["x", "a", "y", "b"],
                    "relevant": ["a", "b"]}]
        path = workspace / "records.json"
        path.write_text(json.dumps(records))
        out_dir = workspace / "er"
        code, out, _ = run_cli(capsys, [
            "eval-retrieval", str(path), "--out", str(out_dir)])
        assert code == 0
        payload = json.loads(out)
        assert payload["report"]["metrics"]["map"] == pytest.approx(0.5)
        report = json.loads((out_dir / "report.json").read_text())
        assert report["metrics"]["map"] == pytest.approx(0.5)

    def test_eval_seg_and_prop(self, workspace, rng, capsys):
        mask = rng.random((16, 16)) < 0.5
        write_mask_png(mask, workspace / "pred.png")
        write_mask_png(mask, workspace / "gt.png")
        pairs = [{"image_id": "f", "video_id": "v",
                  "pred": "pred.png", "gt": "gt.png"}]
        path = workspace / "pairs.json"
        path.write_text(json.dumps(pairs))

        code, out, _ = run_cli(capsys, ["eval-seg", str(path)])
        assert code == 0
        assert json.loads(out)["report"]["metrics"]["miou"] == 1.0

        code, out, _ = run_cli(capsys, ["eval-prop", str(path)])
        assert code == 0
        assert json.loads(out)["report"]["metrics"]["J_and_F"] == 1.0


class TestBuildBenchmarkCommand:
    def test_build_and_determinism(self, workspace, capsys):
        ann = workspace / "ann.json"
        ann.write_text(json.dumps(make_multi_instance_doc(num_videos=4)))
        outputs = []
        for name in ("b1", "b2"):
            out_dir = workspace / name
            code, out, _ = run_cli(capsys, [
                "build-benchmark", str(ann), "--seed", "5",
                "--out", str(out_dir)])
            assert code == 0
            outputs.append((out_dir / "manifest.json").read_bytes())
        assert outputs[0] == outputs[1]
        assert json.loads(outputs[0])["task"] == "retrieval"


class TestConfigIntegration:
    def test_config_file_through_cli(self, workspace, capsys):
        cfg = workspace / "run.cfg"
        cfg.write_text("tau = 0.2\nmode = semantic\n")
        code, _, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "target.fmap"),
            "--config", str(cfg)])
        assert code == 0
        echo = json.loads(err.splitlines()[0])["resolved_config"]
        assert echo["tau"] == 0.2
        assert echo["mode"] == "semantic"

    def test_env_var_fallback(self, workspace, capsys, monkeypatch):
        cfg = workspace / "env.cfg"
        cfg.write_text("tau = 0.3\n")
        monkeypatch.setenv("PDM_CONFIG", str(cfg))
        code, _, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"),
            str(workspace / "target.fmap")])
        assert code == 0
        assert json.loads(err.splitlines()[0])["resolved_config"]["tau"] == 0.3

    def test_flag_beats_config_file(self, workspace, capsys):
        cfg = workspace / "run.cfg"
        cfg.write_text("tau = 0.2\n")
        code, _, err = run_cli(capsys, [
            "match", str(workspace / "ref.fmap"), str(workspace / "target.fmap"),
            "--config", str(cfg), "--tau", "0.9"])
        assert code == 0
        assert json.loads(err.splitlines()[0])["resolved_config"]["tau"] == 0.9
