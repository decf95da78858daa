import json
import logging
import os
import re

import numpy as np
import pytest

from fedscore_surv import plots
from fedscore_surv.cli import main
from fedscore_surv.config import build_config
from fedscore_surv.dataio import CSVFormatError, ingest_csv, write_dataset_csv
from fedscore_surv.evaluation import ParsimonyCurve
from fedscore_surv.survival import CATEGORICAL, kaplan_meier

from conftest import make_data

FAST = ["--n-trees", "40", "--n-bootstrap", "30", "--cv-folds", "3"]


def test_ingest_well_formed(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("time,event,age,male\n1.5,1,60,0\n2,0,70,1\n3,1,50,1\n")
    d = ingest_csv(p, site_id=2, categorical=["male"])
    assert d.n == 3 and d.site_id == 2
    assert d.variable_kinds == ("continuous", CATEGORICAL)


def test_ingest_bad_event_names_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("time,event,x\n1,1,3\n2,2,4\n")
    with pytest.raises(CSVFormatError, match="row 3"):
        ingest_csv(p)
    p.write_text("time,event,x\n1,1,3\nabc,0,4\n")
    with pytest.raises(CSVFormatError, match="row 3"):
        ingest_csv(p)


def test_ingest_drops_rows_with_missing_cells(tmp_path, caplog):
    p = tmp_path / "a.csv"
    p.write_text("time,event,x\n1,1,3\n2,0,\n3,1,NA\n4,1,5\n")
    with caplog.at_level(logging.WARNING):
        d = ingest_csv(p)
    assert d.n == 2
    assert "dropped 2 row(s)" in caplog.text and "rows 3, 4" in caplog.text


def test_dataset_csv_round_trip(tmp_path):
    d = make_data([1.25, 2.0], [1, 0], [[60, 1], [70.5, 0]], names=["age", "male"],
                  kinds=["continuous", CATEGORICAL], site_id=4)
    write_dataset_csv(d, tmp_path / "d.csv")
    back = ingest_csv(tmp_path / "d.csv", site_id=4)
    assert np.array_equal(back.X, d.X) and back.variable_kinds == d.variable_kinds
    assert np.array_equal(back.time, d.time)


def test_config_precedence(tmp_path):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nseed = 5\n[pipeline]\nD = 4\ndelta = 0.02\nweights = 1, 3\n")
    cfg = build_config(ini, {"pipeline.D": 7})
    assert cfg.seed == 5 and cfg.pipeline.seed == 5 and cfg.generator.seed == 5
    assert cfg.pipeline.D == 7 and cfg.pipeline.delta == 0.02
    assert cfg.pipeline.weights == (0.25, 0.75)
    assert build_config().pipeline.D == 10
    with pytest.raises(ValueError):
        build_config(None, {"pipeline.D": 0})
    with pytest.raises(ValueError):
        build_config(None, {"pipeline.percentiles": "50,20"})
    with pytest.raises(ValueError):
        build_config(None, {"pipeline.bogus": 1})


def test_missing_artifact_reports_stage(tmp_path, capsys):
    code = main(["select", "--run-dir", str(tmp_path)])
    assert code != 0
    report = json.loads(capsys.readouterr().err)
    assert report["error"] == "MissingArtifactError"
    assert report["required_stage"] == "parsimony"


def test_select_respects_cap(tmp_path):
    psi = np.linspace(0.6, 0.9, 12)
    ParsimonyCurve.from_values(psi, [f"v{k}" for k in range(12)]).to_csv(tmp_path / "parsimony.csv")
    assert main(["select", "--run-dir", str(tmp_path), "--D", "10", "--delta", "0"]) == 0
    sel = json.loads((tmp_path / "selection.json").read_text())
    assert sel["d"] == 10 and len(sel["variables"]) == 10


@pytest.fixture(scope="module")
def single_site_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("k1")
    assert main(["run-all", "--run-dir", str(root), "--sites", "600", "--seed", "3"] + FAST) == 0
    return root


def test_single_site_federated_table_equals_local(single_site_run):
    r = single_site_run
    assert (r / "scoring_table.csv").read_bytes() == (r / "local/site1/scoring_table.csv").read_bytes()
    assert (r / "cutoffs_final.csv").read_bytes() == (r / "local/site1/cutoffs_final.csv").read_bytes()
    assert len((r / "transcript.bin").read_bytes()) > 0


def test_manifest_references_every_artifact(single_site_run):
    r = single_site_run
    manifest = json.loads((r / "manifest.json").read_text())
    files = {os.path.relpath(os.path.join(dp, f), r).replace(os.sep, "/")
             for dp, _, fs in os.walk(r) for f in fs}
    assert files - {"manifest.json"} == set(manifest["artifacts"])
    assert manifest["seed"] == 3
    assert manifest["config"]["pipeline"]["n_trees"] == 40


def test_rerunning_a_stage_is_bit_identical(single_site_run):
    r = single_site_run
    before = {p: (r / p).read_bytes() for p in ("selection.json", "scoring_table.csv",
                                                "auc_t_site1.csv", "manifest.json")}
    args = ["--run-dir", str(r), "--sites", "600", "--seed", "3"] + FAST
    for stage in ("select", "fit-federated", "score", "evaluate"):
        assert main([stage] + args) == 0
    after = {p: (r / p).read_bytes() for p in before}
    assert before == after


def test_ingested_data_pipeline(tmp_path):
    rng = np.random.default_rng(0)
    files = []
    for j, n in enumerate((300, 400)):
        x = rng.normal(size=(n, 3))
        t = rng.exponential(10, n) * np.exp(-x[:, 0])
        e = (rng.random(n) < 0.8).astype(int)
        d = make_data(np.round(t, 2) + 0.01, e, x.round(2), names=["a", "b", "c"])
        files.append(tmp_path / f"in{j}.csv")
        write_dataset_csv(d, files[-1])
    run = tmp_path / "run"
    assert main(["run-all", "--run-dir", str(run), "--data", *map(str, files)] + FAST) == 0
    assert (run / "auc_t_site2.svg").exists() and (run / "evaluation.csv").exists()


def test_svgs_are_self_contained():
    km = kaplan_meier(make_data([1, 2, 3], [1, 1, 0]))
    svgs = [plots.km_svg([("a", km, 3.0)]),
            plots.parsimony_svg([0.6, np.nan, 0.7], ["a", "b", "c"], 1),
            plots.auc_curves_svg([("f", np.arange(1, 4), [0.5, np.nan, 0.7],
                                   [0.4, np.nan, 0.6], [0.6, np.nan, 0.8])])]
    for s in svgs:
        assert s.startswith("<svg") and "href" not in s and not re.search(r"\bnan\b", s)
