import json
from pathlib import Path

import pytest

from sandpose.cli import main
from sandpose.evaluation import read_curve_csv

SPEC = {
    "classes": ["ball_small", "can_small"],
    "object_count": 2,
    "sigma_depth": 0.0,
    "dropout": 0.0,
}
FAST_SAND = {"m": 40, "max_iters": 6, "seed": 0}
FAST_ICP = {"max_iterations": 10}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("scenes")
    spec = write_json(root / "spec.json", SPEC)
    assert main(["synth", "--spec", spec, "--seeds", "2", "--out", str(root / "out")]) == 0
    return root / "out"


class TestSynth:
    def test_bundle_layout(self, scene_dir):
        for name in ("scene_0000", "scene_0001"):
            d = scene_dir / name
            assert (d / "depth.png").exists()
            assert (d / "intrinsics.json").exists()
            assert (d / "ground_truth.json").exists()
            assert (d / "detections.json").exists()
            truth = json.loads((d / "ground_truth.json").read_text())
            assert len(truth["objects"]) == 2
            for obj in truth["objects"]:
                assert (d / obj["mesh"]).exists()


class TestEstimate:
    def test_sand_report(self, scene_dir, tmp_path):
        cfg = write_json(tmp_path / "sand.json", FAST_SAND)
        out = tmp_path / "report.json"
        rc = main(["estimate", "--method", "sand", "--scene", str(scene_dir),
                   "--config", cfg, "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["method"] == "sand"
        assert report["config"]["m"] == 40
        assert len(report["scenes"]) == 2
        row = report["scenes"][0]["estimates"][0]
        assert set(row) >= {"class", "translation", "quaternion", "weight",
                            "converged", "iterations", "refined_box"}

    def test_icp_report_has_mse(self, scene_dir, tmp_path):
        cfg = write_json(tmp_path / "icp.json", FAST_ICP)
        out = tmp_path / "icp_report.json"
        rc = main(["estimate", "--method", "icp", "--scene", str(scene_dir),
                   "--config", cfg, "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        rows = [r for s in report["scenes"] for r in s["estimates"]]
        assert rows and all("mse" in r for r in rows)

    def test_single_scene_dir(self, scene_dir, tmp_path):
        cfg = write_json(tmp_path / "sand.json", FAST_SAND)
        out = tmp_path / "one.json"
        rc = main(["estimate", "--method", "sand", "--scene", str(scene_dir / "scene_0000"),
                   "--config", cfg, "--out", str(out)])
        assert rc == 0
        assert len(json.loads(out.read_text())["scenes"]) == 1

    def test_unknown_config_key_fails(self, scene_dir, tmp_path):
        cfg = write_json(tmp_path / "bad.json", {"samples": 10})
        with pytest.raises(ValueError, match="unknown"):
            main(["estimate", "--method", "sand", "--scene", str(scene_dir),
                  "--config", cfg, "--out", str(tmp_path / "x.json")])


@pytest.fixture(scope="module")
def reports(scene_dir, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("reports")
    sand_cfg = write_json(tmp / "sand.json", FAST_SAND)
    icp_cfg = write_json(tmp / "icp.json", FAST_ICP)
    sand_report = tmp / "sand_report.json"
    icp_report = tmp / "icp_report.json"
    main(["estimate", "--method", "sand", "--scene", str(scene_dir),
          "--config", sand_cfg, "--out", str(sand_report)])
    main(["estimate", "--method", "icp", "--scene", str(scene_dir),
          "--config", icp_cfg, "--out", str(icp_report)])
    return tmp, sand_report, icp_report


class TestEvalAndCompare:
    def test_eval_writes_curve(self, scene_dir, reports):
        tmp, sand_report, _ = reports
        out = tmp / "sand_curve.csv"
        rc = main(["eval", "--report", str(sand_report), "--truth", str(scene_dir),
                   "--thresholds", "0.02,0.05,0.1", "--out", str(out)])
        assert rc == 0
        curve, meta = read_curve_csv(out)
        assert meta["method"] == "sand"
        assert curve.thresholds == (0.02, 0.05, 0.1)
        assert all(0 <= a <= 1 for a in curve.accuracy)

    def test_compare_summary(self, scene_dir, reports):
        tmp, sand_report, icp_report = reports
        sand_curve = tmp / "s.csv"
        icp_curve = tmp / "i.csv"
        main(["eval", "--report", str(sand_report), "--truth", str(scene_dir),
              "--thresholds", "0.02,0.05", "--out", str(sand_curve)])
        main(["eval", "--report", str(icp_report), "--truth", str(scene_dir),
              "--thresholds", "0.02,0.05", "--out", str(icp_curve)])
        out = tmp / "summary.txt"
        rc = main(["compare", "--reports", f"{sand_curve},{icp_curve}", "--out", str(out)])
        assert rc == 0
        text = out.read_text()
        assert "sand" in text and "icp" in text and "threshold" in text

    def test_compare_rejects_mismatched_thresholds(self, scene_dir, reports, tmp_path):
        tmp, sand_report, icp_report = reports
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(["eval", "--report", str(sand_report), "--truth", str(scene_dir),
              "--thresholds", "0.02", "--out", str(a)])
        main(["eval", "--report", str(icp_report), "--truth", str(scene_dir),
              "--thresholds", "0.05", "--out", str(b)])
        with pytest.raises(SystemExit, match="thresholds"):
            main(["compare", "--reports", f"{a},{b}", "--out", str(tmp_path / "s.txt")])
