import csv
import io
import json

import numpy as np
import pytest

from harmonidiff import harness
from harmonidiff.cli import main
from harmonidiff.errors import ConfigError, ManifestError
from harmonidiff.harmonize import Candidate, CandidateSet
from harmonidiff.imagecore import load_image, quantize, save_image
from harmonidiff.metrics import HarmonyScorer
from harmonidiff.synthetic import random_task

FAST = {"codec": {"kind": "identity"}}


def write_tasks(tmp_path, n=3, broken=()):
    rng = np.random.default_rng(0)
    entries = []
    for i in range(n):
        t = random_task(rng, size=32, min_patch=8, max_patch=12, margin=4)
        save_image(t.source, tmp_path / f"s{i}.png")
        save_image(t.target, tmp_path / f"t{i}.png")
        entries.append({"source_path": "nope.png" if i in broken else f"s{i}.png",
                        "target_path": f"t{i}.png", "paste_x": t.paste_origin[0],
                        "paste_y": t.paste_origin[1], "src_gsd": 1.0, "tar_gsd": 1.0})
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(entries, indent=2))
    (tmp_path / "config.json").write_text(json.dumps(FAST))
    return path


def test_manifest_minimal_entry(tmp_path):
    path = write_tasks(tmp_path, 1)
    m = harness.load_manifest(path)
    assert len(m) == 1
    task = m.entries[0].load_task()
    assert task.source_mask.all() and task.conditioning is None
    assert m.entries[0].source_path == tmp_path / "s0.png"


def test_manifest_labels_make_prompt():
    doc = [{"source_path": "a.png", "target_path": "b.png", "paste_x": 0, "paste_y": 0,
            "src_gsd": 0.5, "tar_gsd": 1.0, "source_label": "port", "target_country": "Japan"}]
    entry = harness.parse_manifest(doc).entries[0]
    assert entry.prompt == "A satellite image of a port in Japan"


@pytest.mark.parametrize("field,value", [("src_gsd", 0), ("tar_gsd", -1.0), ("paste_x", -3),
                                         ("paste_y", 1.5), ("src_gsd", "1")])
def test_manifest_bad_values_name_field(field, value):
    doc = [{"source_path": "a.png", "target_path": "b.png", "paste_x": 0, "paste_y": 0,
            "src_gsd": 1.0, "tar_gsd": 1.0}]
    doc[0][field] = value
    with pytest.raises(ManifestError) as err:
        harness.parse_manifest(doc)
    assert err.value.field == field and err.value.index == 0


def test_manifest_missing_field():
    with pytest.raises(ManifestError) as err:
        harness.parse_manifest([{"source_path": "a.png"}])
    assert err.value.field == "target_path"
    assert "target_path" in str(err.value)


def test_manifest_parse_error_has_line(tmp_path):
    path = tmp_path / "m.json"
    path.write_text('[\n  {"source_path": "a.png",\n  oops}\n]')
    with pytest.raises(ManifestError, match="line 3"):
        harness.load_manifest(path)
    with pytest.raises(ManifestError):
        harness.parse_manifest({"not": "a list"})


def test_config_defaults_and_sections(tmp_path, monkeypatch):
    cfg = harness.config_from_dict({})
    assert cfg.harmonize.harmonious_depths == tuple(range(7, 16)) and cfg.seed == 0
    cfg = harness.config_from_dict({"schedule": {"inference_steps": 30}, "codec": {"factor": 4},
                                    "harmonize": {"harmonious_depths": [3, 4], "preservation_depth": 2}, "seed": 7,
                                    "metrics": {"bgd_width": 2}, "predictor": {"kind": "zero"}})
    assert cfg.harmonize.schedule["inference_steps"] == 30
    assert cfg.harmonize.codec == {"kind": "patch_average", "factor": 4}
    assert cfg.harmonize.predictor == {"kind": "zero"}
    assert cfg.metrics.bgd_width == 2 and cfg.seed == 7
    path = tmp_path / "c.json"
    path.write_text('{"seed": 3}')
    monkeypatch.setenv(harness.CONFIG_ENV, str(path))
    assert harness.load_config().seed == 3
    monkeypatch.delenv(harness.CONFIG_ENV)
    assert harness.load_config().seed == 0


@pytest.mark.parametrize("doc", [
    [], {"extra": {}}, {"harmonize": {"nope": 1}}, {"harmonize": {"preservation_depth": 20}},
    {"codec": {"kind": "vae"}}, {"seed": "x"}, {"schedule": {"inference_steps": 0}},
    {"harmonize": {"codec": {}}}, {"poisson": {"solver": "fft"}},
])
def test_config_errors(doc):
    with pytest.raises(ConfigError):
        harness.config_from_dict(doc)


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n,")
    with pytest.raises(ConfigError, match="line 2"):
        harness.load_config(bad)
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "missing.json")


def bench(tmp_path, n=1, broken=(), out="out"):
    manifest = harness.load_manifest(write_tasks(tmp_path, n, broken))
    cfg = harness.config_from_dict(FAST)
    return harness.run_benchmark(manifest, set(harness.METHODS), cfg, tmp_path / out,
                                 scorer=HarmonyScorer.untrained())


def test_bench_single_task_structure(tmp_path):
    report = bench(tmp_path, 1)
    assert [r.method for r in report.rows] == list(harness.METHODS)
    assert len(list((tmp_path / "out" / "composites").glob("*.png"))) == 3
    assert all(a["n_ok"] == 1 and a["frechet_distance"] is None for a in report.aggregates)
    assert report.rows[2].selected_depth in range(7, 16)
    assert report.rows[0].selected_depth is None
    assert all(r.runtime_ms >= 0 for r in report.rows)


def test_bench_partial_failure_and_aggregates(tmp_path):
    report = bench(tmp_path, 3, broken=(1,))
    assert len(report.rows) == 3 * 3
    failed = [r for r in report.rows if r.status != "ok"]
    assert {r.task_id for r in failed} == {"task0001"} and all(r.reason for r in failed)
    for agg in report.aggregates:
        ok = [r for r in report.rows if r.method == agg["method"] and r.status == "ok"]
        assert agg["n_ok"] == 2 and agg["n_failed"] == 1
        assert agg["mean_bgd"] == pytest.approx(np.mean([r.bgd for r in ok]))
        assert agg["mean_hs"] == pytest.approx(np.mean([r.harmony_score for r in ok]))
        assert agg["frechet_distance"] >= 0
    doc = json.loads((tmp_path / "out" / "report.json").read_text())
    assert "reference_set" in doc["header"] and len(doc["rows"]) == 9


def test_bench_csv_format_and_determinism(tmp_path):
    a = bench(tmp_path, 2, out="a")
    bench(tmp_path, 2, out="b")
    text = (tmp_path / "a" / "report.csv").read_text()
    assert text == (tmp_path / "b" / "report.csv").read_text()
    assert (tmp_path / "a" / "aggregates.csv").read_bytes() == (tmp_path / "b" / "aggregates.csv").read_bytes()
    rows = list(csv.reader(io.StringIO(text)))
    assert tuple(rows[0]) == harness.ROW_FIELDS
    for row in rows[1:]:
        for cell in row[3:5]:
            assert len(cell.replace(".", "").replace("-", "").lstrip("0").split("e")[0]) <= 6
    assert float(rows[1][3]) == pytest.approx(a.rows[0].bgd, rel=1e-5)


def test_bench_parallel_matches_serial(tmp_path):
    manifest = harness.load_manifest(write_tasks(tmp_path, 3))
    cfg = harness.config_from_dict(FAST)
    scorer = HarmonyScorer.untrained()
    serial = harness.run_benchmark(manifest, ["copy_paste", "harmonidiff"], cfg, None, scorer)
    parallel = harness.run_benchmark(manifest, ["harmonidiff", "copy_paste"], cfg, None, scorer, workers=3)
    assert serial.rows_csv() == parallel.rows_csv()


def test_bench_rejects_unknown_method(tmp_path):
    from harmonidiff.errors import ContractError
    with pytest.raises(ContractError):
        harness.run_benchmark([], ["inpaint"])


def cand_set(n, scores=None):
    rng = np.random.default_rng(n)
    scores = scores or list(rng.random(n))
    return CandidateSet([Candidate(7 + i, rng.random((6, 5, 3)), s) for i, s in enumerate(scores)])


def test_sheet_layouts():
    assert harness.sheet_layout(9) == (3, 3)
    assert harness.sheet_layout(1) == (1, 1)
    assert harness.sheet_layout(5) == (2, 3)
    assert harness.sheet_layout(10) == (3, 4)


def test_contact_sheet_nine(tmp_path):
    cands = cand_set(9)
    doc = harness.contact_sheet(cands, tmp_path / "sheet.png")
    assert (doc["rows"], doc["cols"]) == (3, 3)
    assert load_image(tmp_path / "sheet.png").shape == (18, 15, 3)
    side = json.loads((tmp_path / "sheet.json").read_text())
    assert sum(t["selected"] for t in side["tiles"]) == 1
    assert [t["depth"] for t in side["tiles"]] == list(range(7, 16))
    best = max(cands, key=lambda c: c.score)
    assert next(t for t in side["tiles"] if t["selected"])["depth"] == best.depth


def test_contact_sheet_single_and_ties(tmp_path):
    cands = cand_set(1)
    harness.contact_sheet(cands, tmp_path / "one.png")
    assert np.array_equal(load_image(tmp_path / "one.png"), quantize(cands.entries[0].image) / 255.0)
    side = harness.contact_sheet(cand_set(4, [0.5] * 4), tmp_path / "tie.png")
    assert [t["selected"] for t in side["tiles"]] == [True, False, False, False]


def test_cli_bench_exit_codes(tmp_path, capsys):
    manifest = write_tasks(tmp_path, 3, broken=(1,))
    cfg = str(tmp_path / "config.json")
    assert main(["bench", "--manifest", str(manifest), "--methods", "copy_paste",
                 "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "report.csv").read_text().splitlines()[1:]
    assert sum(",ok," in r for r in rows) == 2 and sum(",failed," in r for r in rows) == 1
    all_bad = write_tasks(tmp_path, 2, broken=(0, 1))
    assert main(["bench", "--manifest", str(all_bad), "--methods", "copy_paste",
                 "--config", cfg, "--out", str(tmp_path / "o2")]) == 4
    assert main(["bench", "--manifest", str(manifest), "--methods", "magic", "--out", str(tmp_path)]) == 2
    with pytest.raises(SystemExit) as err:
        main(["bench", "--manifest", str(manifest)])
    assert err.value.code == 2
    (tmp_path / "bad.json").write_text('{"harmonize": {"fusion": true, "zzz": 1}}')
    assert main(["bench", "--manifest", str(manifest), "--methods", "copy_paste",
                 "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "o3")]) == 3


def test_cli_metrics_prints_float(tmp_path, capsys):
    img = np.ones((20, 20, 1))
    img[5:15, 5:15] = 0.0
    mask = np.zeros((20, 20))
    mask[5:15, 5:15] = 1.0
    save_image(img, tmp_path / "i.png")
    save_image(mask, tmp_path / "m.png")
    assert main(["metrics", "--image", str(tmp_path / "i.png"), "--mask", str(tmp_path / "m.png"), "--w", "2"]) == 0
    from harmonidiff.metrics import bgd_abs
    assert float(capsys.readouterr().out.strip()) == pytest.approx(bgd_abs(img, mask.astype(bool), 2), rel=1e-5)


def test_cli_compose_with_sheet(tmp_path):
    write_tasks(tmp_path, 1)
    entry = json.loads((tmp_path / "manifest.json").read_text())[0]
    (tmp_path / "c.json").write_text(json.dumps({**FAST, "metrics": {"scorer_samples": 20}}))
    code = main(["compose", "--source", str(tmp_path / "s0.png"), "--target", str(tmp_path / "t0.png"),
                 "--paste-x", str(entry["paste_x"]), "--paste-y", str(entry["paste_y"]),
                 "--src-gsd", "1", "--tar-gsd", "1", "--config", str(tmp_path / "c.json"),
                 "--out", str(tmp_path / "res"), "--sheet"])
    assert code == 0
    listing = json.loads((tmp_path / "res" / "candidates.json").read_text())
    assert len(listing["candidates"]) == 9
    assert (tmp_path / "res" / "composite.png").exists() and (tmp_path / "res" / "sheet.json").exists()
    assert main(["compose", "--source", str(tmp_path / "s0.png"), "--target", str(tmp_path / "t0.png"),
                 "--paste-x", "30", "--paste-y", "0", "--src-gsd", "1", "--tar-gsd", "1",
                 "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "res2")]) == 4


def test_cli_scorer_data_roundtrip(tmp_path):
    manifest = write_tasks(tmp_path, 3)
    assert main(["gen-negatives", "--manifest", str(manifest), "--out", str(tmp_path / "neg")]) == 0
    assert len(list((tmp_path / "neg").glob("*_mask.png"))) == 6
    pos = tmp_path / "pos"
    pos.mkdir()
    for i in range(3):
        (pos / f"t{i}.png").write_bytes((tmp_path / f"t{i}.png").read_bytes())
    assert main(["train-scorer", "--positives", str(pos), "--negatives", str(tmp_path / "neg"),
                 "--out", str(tmp_path / "scorer.json"), "--seed", "4"]) == 0
    HarmonyScorer.load(tmp_path / "scorer.json")
    cfg = harness.config_from_dict({"metrics": {"scorer_path": str(tmp_path / "scorer.json")}})
    assert isinstance(harness.scorer_for(cfg), HarmonyScorer)


def test_module_entry_point(tmp_path):
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-m", "harmonidiff", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "bench" in out.stdout
