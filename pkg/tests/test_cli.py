import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from surroundslot import formats
from surroundslot.cli import ENTRANCE_COLOR, main


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    assert main(["synth", "--kind", "perp", "--slots", "4", "--seed", "1", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def stitched(bundle):
    bev = bundle / "bev.ppm"
    assert main(["stitch", "--rig", str(bundle / "rig.json"), "--images", str(bundle), "--out", str(bev)]) == 0
    return bev


class TestSynth:
    def test_bundle_contents(self, bundle):
        names = {p.name for p in bundle.iterdir()}
        assert {"texture.ppm", "rig.json", "labels.json"} <= names
        assert {f"cam_{c}.ppm" for c in ("front", "left", "rear", "right")} <= names
        assert formats.read_pnm(bundle / "texture.ppm").shape == (1024, 1024, 3)
        assert len(formats.read_labels(bundle / "labels.json")) == 4

    def test_byte_identical(self, bundle, tmp_path):
        assert main(["synth", "--kind", "perp", "--slots", "4", "--seed", "1", "--out", str(tmp_path)]) == 0
        for path in bundle.glob("*"):
            if path.name in {"bev.ppm", "dets.json", "overlay.ppm"} or path.name.startswith("report"):
                continue
            assert (tmp_path / path.name).read_bytes() == path.read_bytes(), path.name

    def test_does_not_fit(self, tmp_path, capsys):
        assert main(["synth", "--kind", "perp", "--slots", "30", "--out", str(tmp_path)]) == 1
        assert "exceed" in capsys.readouterr().err

    def test_bad_kind(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["synth", "--kind", "diagonal", "--slots", "2", "--out", str(tmp_path)])


class TestPipeline:
    def test_detect_and_eval(self, bundle, stitched, tmp_path, capsys):
        dets = tmp_path / "dets.json"
        assert main(["detect", "--bev", str(stitched), "--out", str(dets)]) == 0
        assert len(formats.read_detections(dets)) == 4
        capsys.readouterr()
        report = tmp_path / "report"
        assert main(["eval", "--dets", str(dets), "--gt", str(bundle / "labels.json"), "--out", str(report),
                     "--figures", str(tmp_path / "fig")]) == 0
        text = capsys.readouterr().out
        assert text.startswith("Class")
        assert (tmp_path / "report.txt").read_text() in text
        assert json.loads((tmp_path / "report.json").read_text())["mean_ap"] == 1.0
        assert (tmp_path / "fig" / "pr_curves.png").stat().st_size > 0

    def test_eval_on_ground_truth_copy(self, bundle, tmp_path, capsys):
        doc = json.loads((bundle / "labels.json").read_text())
        for rec in doc["records"]:
            rec["confidence"] = 1.0
        (tmp_path / "dets.json").write_text(json.dumps(doc))
        assert main(["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(bundle / "labels.json")]) == 0
        rows = capsys.readouterr().out.splitlines()[1:]
        assert len(rows) == 4
        for row in rows:
            assert row.split()[1:] == ["1.000"] * 4

    def test_detect_with_config(self, stitched, tmp_path):
        cfg = tmp_path / "det.json"
        cfg.write_text('{"format_version": 1, "min_confidence": 0.99}')
        out = tmp_path / "dets.json"
        assert main(["detect", "--bev", str(stitched), "--config", str(cfg), "--out", str(out)]) == 0
        assert all(d.confidence >= 0.99 for d in formats.read_detections(out))

    def test_render_overlay(self, bundle, stitched, tmp_path):
        out = tmp_path / "overlay.ppm"
        assert main(["render-overlay", "--bev", str(stitched), "--labels", str(bundle / "labels.json"),
                     "--out", str(out)]) == 0
        img = formats.read_color_image(out)
        assert np.any(np.all(img == ENTRANCE_COLOR, axis=-1))
        assert img.shape == formats.read_pnm(stitched).shape

    def test_threads_do_not_change_output(self, bundle, stitched, tmp_path):
        out = tmp_path / "bev4.ppm"
        assert main(["stitch", "--rig", str(bundle / "rig.json"), "--images", str(bundle),
                     "--threads", "4", "--out", str(out)]) == 0
        assert out.read_bytes() == stitched.read_bytes()


class TestErrors:
    def test_malformed_json(self, bundle, stitched, tmp_path, capsys):
        bad = tmp_path / "labels.json"
        bad.write_text('{"format_version": 1,\n "records": [}\n')
        assert main(["render-overlay", "--bev", str(stitched), "--labels", str(bad), "--out",
                     str(tmp_path / "o.ppm")]) == 1
        assert "line 2 column" in capsys.readouterr().err

    def test_bad_field(self, bundle, tmp_path, capsys):
        dets = json.loads((bundle / "labels.json").read_text())
        for rec in dets["records"]:
            rec["confidence"] = 0.5
        (tmp_path / "dets.json").write_text(json.dumps(dets))
        doc = json.loads((bundle / "labels.json").read_text())
        doc["records"][2]["class"] = "bus"
        (tmp_path / "gt.json").write_text(json.dumps(doc))
        assert main(["eval", "--dets", str(tmp_path / "dets.json"), "--gt", str(tmp_path / "gt.json")]) == 1
        assert "records[2]" in capsys.readouterr().err

    def test_missing_image(self, bundle, tmp_path):
        images = tmp_path / "imgs"
        shutil.copytree(bundle, images)
        (images / "cam_left.ppm").unlink()
        assert main(["stitch", "--rig", str(bundle / "rig.json"), "--images", str(images),
                     "--out", str(tmp_path / "b.ppm")]) == 1


class TestChecks:
    def test_gradcheck(self, capsys):
        assert main(["gradcheck", "--trials", "10"]) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 2

    def test_short_bench(self, tmp_path, capsys):
        code = main(["bench", "--scenes", "3", "--out", str(tmp_path / "bench"), "--figures", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == 0
        assert "scenes 3" in out
        assert (tmp_path / "bench.json").exists() and (tmp_path / "metrics.png").exists()

    def test_console_script(self):
        result = subprocess.run([sys.executable, "-m", "surroundslot.cli", "--help"], capture_output=True, text=True)
        assert result.returncode == 0
        for command in ("synth", "stitch", "detect", "eval", "render-overlay", "gradcheck", "bench"):
            assert command in result.stdout
