import json
import time

import pytest
from fastapi.testclient import TestClient

from flatsearch.cli import main
from flatsearch.engine import Archive, EngineConfig
from flatsearch.objectives import EvalRecord
from flatsearch.search_space import sample_uniform
from flatsearch.service import create_app

from test_engine import quick_config, strip_clock


@pytest.fixture
def client():
    with TestClient(create_app()) as c:
        yield c


def small_config(tmp_path) -> dict:
    return quick_config(tmp_path).to_dict()


def wait(client, job_id, timeout=300):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.2)
    raise TimeoutError(job_id)


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_search_job_lifecycle(client, tmp_path):
    cfg = small_config(tmp_path)
    resp = client.post("/search", json={"config": cfg, "seed": 3, "alpha": 0.5})
    assert resp.status_code == 202
    job = wait(client, resp.json()["id"])
    assert job["state"] == "done", job["error"]
    result = job["result"]
    assert result["archive_size"] == 12 and 1 <= len(result["top_k"]) <= 3
    assert len(Archive.read(cfg["archive_path"])) == 12


def test_search_without_resume_fails_on_existing_archive(client, tmp_path):
    cfg = small_config(tmp_path)
    Archive(cfg["archive_path"]).append(EvalRecord(sample_uniform(EngineConfig().space, 0), 0.5, 0.0, 10, 0.05, "sgd", 0))
    job = wait(client, client.post("/search", json={"config": cfg}).json()["id"])
    assert job["state"] == "failed" and "FlatSearchError" in job["error"]


def test_unknown_job_and_bad_requests(client, tmp_path):
    assert client.get("/jobs/nope").status_code == 404
    assert client.post("/search", json={"alpha": 2.0}).status_code == 422
    assert client.post("/search", json={"config": {"n_start": 2}}).status_code == 422
    assert client.post("/evaluate", json={"gene": [99]}).status_code == 422
    assert client.post("/corrupt", json={"types": ["fog"], "out": str(tmp_path)}).status_code == 422
    assert client.post("/report", json={"archive": str(tmp_path / "none"), "out": str(tmp_path)}).status_code == 404


def test_evaluate_endpoint(client, tmp_path):
    cfg = small_config(tmp_path)
    gene = list(sample_uniform(EngineConfig().space, 4))
    rec = client.post("/evaluate", json={"gene": gene, "config": cfg}).json()
    assert rec["gene"] == gene and 0.0 <= rec["top1_accuracy"] <= 1.0 and not rec["failed"]


def test_corrupt_endpoint(client, tmp_path):
    cfg = small_config(tmp_path)
    out = tmp_path / "c"
    resp = client.post("/corrupt", json={"types": ["contrast", "impulse_noise"], "out": str(out),
                                         "config": cfg, "resolution": 16})
    assert resp.status_code == 200
    assert len(resp.json()["files"]) == 10 and (out / "contrast_s5.bin").exists()


def run_cli(argv, capsys):
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


def test_cli_search_resume_and_report(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small_config(tmp_path)))
    archive = tmp_path / "archive.jsonl"
    out = run_cli(["search", "--config", str(cfg_path), "--seed", "1", "--optimizer", "sgd",
                   "--alpha", "1.0", "--poll", "0.1"], capsys)
    assert out["archive_size"] == 12
    first = Archive.read(archive)
    assert all(r.optimizer == "sgd" for r in first)

    # resuming a finished run replays it and adds nothing
    out = run_cli(["search", "--config", str(cfg_path), "--seed", "1", "--optimizer", "sgd",
                   "--alpha", "1.0", "--resume", "--poll", "0.1"], capsys)
    assert strip_clock(Archive.read(archive)) == strip_clock(first)

    out = run_cli(["report", "--archive", str(archive), "--out", str(tmp_path / "rep"),
                   "--config", str(cfg_path), "--types", "gaussian_noise"], capsys)
    assert set(out["files"]) >= {"table", "summary", "mean_curves", "type_curves"}
    table = (tmp_path / "rep" / "table.md").read_text()
    assert "top1" in table and "| - |" not in table


def test_cli_eval_and_corrupt(tmp_path, capsys):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(small_config(tmp_path)))
    gene = sample_uniform(EngineConfig().space, 0)
    rec = run_cli(["eval", "--gene", ",".join(map(str, gene)), "--config", str(cfg_path)], capsys)
    assert rec["gene"] == list(gene)
    out = run_cli(["corrupt", "--types", "brightness", "--out", str(tmp_path / "c"),
                   "--config", str(cfg_path), "--resolution", "16"], capsys)
    assert len(out["files"]) == 5


def test_cli_reports_errors(tmp_path):
    with pytest.raises(SystemExit):
        main(["eval", "--gene", "1,2"])
