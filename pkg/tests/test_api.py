import pytest
from fastapi.testclient import TestClient

from app import main
from app.dependencies import get_output_root
from app.main import app

TABULATE = "kind = tabulate-coefficients\n[dims]\nmin = 3\nmax = 7\n"


@pytest.fixture
def client(tmp_path):
    app.dependency_overrides[get_output_root] = lambda: str(tmp_path)
    yield TestClient(app)
    app.dependency_overrides.clear()


def test_coefficients(client):
    response = client.get("/coefficients/7")
    assert response.status_code == 200
    body = response.json()
    assert body["d"] == 7
    assert {"family": "c", "index": 1, "numerator": 3, "denominator": 1} in body["rows"]
    residuals = [row for row in body["rows"] if row["family"].startswith("residual:")]
    assert residuals and all(row["numerator"] == 0 for row in residuals)


@pytest.mark.parametrize("d", [4, 1])
def test_coefficients_need_odd_dimension(client, d):
    assert client.get(f"/coefficients/{d}").status_code == 422


def test_submit_and_fetch_manifest(client, tmp_path):
    response = client.post("/experiments", json={"config": TABULATE})
    assert response.status_code == 200
    manifest = response.json()
    assert manifest["kind"] == "tabulate-coefficients"
    assert (tmp_path / manifest["run_id"] / "coefficients.csv").exists()

    fetched = client.get(f"/experiments/{manifest['run_id']}/manifest")
    assert fetched.status_code == 200
    assert fetched.json() == manifest


def test_overrides_are_applied(client):
    response = client.post("/experiments", json={"config": TABULATE, "overrides": ["output.dir=small", "dims.max=5"]})
    assert response.status_code == 200
    assert response.json()["run_id"] == "small"


def test_unknown_run(client):
    assert client.get("/experiments/nothing-here/manifest").status_code == 404


def test_invalid_config_lists_violations(client):
    response = client.post("/experiments", json={"config": "kind = shoot\nell = 0\nfoo = 1\n"})
    assert response.status_code == 422
    detail = response.json()["detail"]
    assert {"line": 2, "key": "ell", "message": "ell must be ≥ 1, got 0"} in detail
    assert {"line": 3, "key": "foo", "message": "unknown key"} in detail


def test_failed_experiment(client, monkeypatch):
    def broken(config, output_root=None):
        raise RuntimeError("integrator failed")

    monkeypatch.setattr(main, "run", broken)
    response = client.post("/experiments", json={"config": TABULATE})
    assert response.status_code == 500
    assert "integrator failed" in response.json()["detail"]
