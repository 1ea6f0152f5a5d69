import json
import shutil

import pytest

import synthetic_ehr
from build_case_fixtures import Case2Responder, _Recorder, case2_registry, case2_visits, CASE2_CATALOG
from mdtconsult.backend import ReplayScript
from mdtconsult.cli import main
from mdtconsult.domain import DrugCatalog
from mdtconsult.engine import ConsultConfig, consult
from mdtconsult.memory import seed_store
from mdtconsult.roster import load_pool


def case1_args(fx, out):
    d = fx / "case1"
    return ["consult", "--case", str(d / "cases.jsonl"), "--script", str(d / "scripts" / "case1.jsonl"),
            "--memory-seed", str(d / "memory_seed.jsonl"), "--tool-fixtures", str(d / "tools.jsonl"), "--out", str(out)]


def test_consult_case1_and_determinism(fixtures_dir, tmp_path, capsys):
    assert main(case1_args(fixtures_dir, tmp_path / "a")) == 0
    assert main(case1_args(fixtures_dir, tmp_path / "b")) == 0
    a = (tmp_path / "a" / "transcript.json").read_bytes()
    assert a == (tmp_path / "b" / "transcript.json").read_bytes()
    decision = json.loads((tmp_path / "a" / "decision.json").read_text())
    assert decision["ranked"][0] == "Brugada Syndrome"
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["command"] == "consult" and manifest["seed"] == 42
    assert any(k.endswith("case1.jsonl") for k in manifest["input_hashes"])


def test_consult_treatment_case2(fixtures_dir, tmp_path):
    d = fixtures_dir / "case2"
    rc = main(["consult", "--task", "treatment", "--case", str(d / "visits.jsonl"), "--case-id", "P2#4",
               "--script", str(d / "scripts" / "P2#4.jsonl"), "--catalog", str(d / "catalog.txt"),
               "--ddi", str(d / "ddi.csv"), "--drug-info", str(d / "drug_info.jsonl"), "--out", str(tmp_path)])
    assert rc == 0
    assert len(json.loads((tmp_path / "decision.json").read_text())["medications"]) == 21


def test_missing_pool_is_hard_error(fixtures_dir, tmp_path, capsys):
    args = case1_args(fixtures_dir, tmp_path) + ["--pool", str(tmp_path / "nope.json")]
    assert main(args) == 1
    assert "nope.json" in capsys.readouterr().err


def test_ablated_consult_has_empty_sections(fixtures_dir, tmp_path):
    script = tmp_path / "s.jsonl"
    ReplayScript().add("attending", "DIAGNOSIS:\n1. Brugada syndrome").dump(script)
    args = case1_args(fixtures_dir, tmp_path / "o")
    args[args.index("--script") + 1] = str(script)
    assert main(args + ["--no-mdt", "--no-memory", "--no-tools"]) == 0
    tr = json.loads((tmp_path / "o" / "transcript.json").read_text())
    assert tr["team"] == [] and tr["rounds"] == []
    assert tr["report"] == tr["memory_text"] == tr["tool_text"] == ""


def test_unparseable_decision_exit_2(fixtures_dir, tmp_path):
    script = tmp_path / "s.jsonl"
    ReplayScript().add("attending", "no idea").dump(script)
    args = case1_args(fixtures_dir, tmp_path / "o")
    args[args.index("--script") + 1] = str(script)
    assert main(args + ["--no-mdt"]) == 2
    assert json.loads((tmp_path / "o" / "transcript.json").read_text())["decision_raw"] == "no idea"


def diag_batch(tmp_path):
    rows, sdir = [], tmp_path / "scripts"
    sdir.mkdir()
    finals = {"c1": "1. G1\n2. X", "c2": "1. X\n2. G2", "c3": "1. X\n2. Y"}
    for cid, body in finals.items():
        rows.append({"case_id": cid, "symptoms": [{"id": f"HP:{i}", "label": f"s{i}"} for i in range(3)],
                     "gold_diagnoses": ["G" + cid[1]]})
        ReplayScript().add("attending", "DIAGNOSIS:\n" + body).dump(sdir / f"{cid}.jsonl")
    data = tmp_path / "cases.jsonl"
    data.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return data, sdir


def test_eval_diagnosis_report(tmp_path, capsys):
    data, sdir = diag_batch(tmp_path)
    out = tmp_path / "out"
    assert main(["eval", "--dataset", str(data), "--script-dir", str(sdir), "--no-mdt", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["hit_at"] == {"1": 1 / 3, "3": 2 / 3, "10": 2 / 3}
    assert rep["median_rank"] == 2.0
    assert [json.loads(l)["rank"] for l in (out / "cases.jsonl").read_text().splitlines()] == [1, 2, None]
    assert (out / "participation.csv").read_text().startswith("department,rate\n")
    assert "Hit@1" in capsys.readouterr().out


def test_eval_case_error_is_recorded(tmp_path):
    data, sdir = diag_batch(tmp_path)
    (sdir / "c3.jsonl").unlink()
    out = tmp_path / "out"
    assert main(["eval", "--dataset", str(data), "--script-dir", str(sdir), "--no-mdt", "--out", str(out)]) == 2
    cases = [json.loads(l) for l in (out / "cases.jsonl").read_text().splitlines()]
    assert cases[2]["error"] and cases[0]["error"] is None


def test_eval_rejects_unsafe_parallel(tmp_path):
    data, sdir = diag_batch(tmp_path)
    base = ["eval", "--dataset", str(data), "--no-mdt", "--out", str(tmp_path / "o"), "--parallel", "2"]
    assert main(base + ["--script-dir", str(sdir), "--write-back"]) == 1
    assert main(base + ["--script", str(sdir / "c1.jsonl")]) == 1


@pytest.fixture()
def treatment_scripts(fixtures_dir, tmp_path):
    """Per-visit scripts for all four Case 2 visits."""
    sdir = tmp_path / "scripts"
    sdir.mkdir()
    visits = case2_visits()
    catalog = DrugCatalog(CASE2_CATALOG)
    pool = load_pool()
    for v in visits[:-1]:
        rec = _Recorder(Case2Responder())
        consult(v, ConsultConfig("treatment"), pool, seed_store(visits), case2_registry(catalog), rec, catalog)
        rec.script.dump(sdir / f"{v.key}.jsonl")
    shutil.copy(fixtures_dir / "case2" / "scripts" / "P2#4.jsonl", sdir / "P2#4.jsonl")
    return sdir


def test_eval_treatment_parallel_matches_serial(fixtures_dir, tmp_path, treatment_scripts):
    d = fixtures_dir / "case2"
    base = ["eval", "--task", "treatment", "--dataset", str(d / "visits.jsonl"), "--script-dir", str(treatment_scripts),
            "--catalog", str(d / "catalog.txt"), "--ddi", str(d / "ddi.csv"), "--drug-info", str(d / "drug_info.jsonl")]
    assert main(base + ["--out", str(tmp_path / "s")]) == 0
    assert main(base + ["--out", str(tmp_path / "p"), "--parallel", "4"]) == 0
    for name in ("report.json", "cases.jsonl", "transcripts.jsonl", "participation.csv"):
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()
    rep = json.loads((tmp_path / "s" / "report.json").read_text())
    assert rep["n_cases"] == 4 and rep["avg_med"] == 21.0 and rep["ddi"] is not None


def test_extract_cohort(tmp_path, capsys):
    tables, mapping = synthetic_ehr.write_all(tmp_path)
    out = tmp_path / "cohort.jsonl"
    assert main(["extract-cohort", "--tables", str(tables), "--mapping", str(mapping), "--out", str(out)]) == 0
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    assert sorted({r["patient_id"] for r in rows}) == synthetic_ehr.QUALIFYING
    assert json.loads(capsys.readouterr().out)["n_patients"] == 4
    assert (tmp_path / "cohort.jsonl.manifest.json").exists()


def test_extract_cohort_empty_mapping(tmp_path, capsys):
    tables, _ = synthetic_ehr.write_all(tmp_path)
    empty = synthetic_ehr.write_mapping(tmp_path / "empty.csv", rows=[])
    out = tmp_path / "cohort.jsonl"
    assert main(["extract-cohort", "--tables", str(tables), "--mapping", str(empty), "--out", str(out)]) == 0
    assert out.read_text() == ""
    assert "warning" in capsys.readouterr().err


def test_extract_cohort_malformed(tmp_path, capsys):
    tables, mapping = synthetic_ehr.write_all(tmp_path)
    (tables / "prescriptions.csv").write_text("patient_id,visit_id,drug_name\nP1,v1\n")
    assert main(["extract-cohort", "--tables", str(tables), "--mapping", str(mapping), "--out", str(tmp_path / "c.jsonl")]) == 1
    assert "prescriptions.csv:2" in capsys.readouterr().err
