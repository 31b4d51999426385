import logging

import pytest

from app.schemas import METRIC_COLUMNS

SMALL = {
    "device_count": 4,
    "sample_count": 200,
    "feature_dim": 5,
    "num_classes": 3,
    "rounds": 3,
    "policy": "full",
    "master_seed": 3,
}


@pytest.fixture
def experiment(client):
    response = client.post("/api/v1/experiments", json=SMALL)
    assert response.status_code == 201
    return response.json()


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    assert "experimentos" in response.json()["rutas_disponibles"]


def test_create_experiment(experiment):
    assert experiment["policy"] == "full"
    assert experiment["rounds"] == 3
    assert experiment["master_seed"] == 3
    assert experiment["summary"]["completed_rounds"] == 3


def test_list_and_filter(client, experiment):
    listed = client.get("/api/v1/experiments").json()
    assert experiment["id"] in [item["id"] for item in listed]
    filtered = client.get("/api/v1/experiments", params={"policy": "random"}).json()
    assert experiment["id"] not in [item["id"] for item in filtered]


def test_detail_includes_metrics(client, experiment):
    response = client.get(f"/api/v1/experiments/{experiment['id']}")
    assert response.status_code == 200
    detail = response.json()
    assert [m["round"] for m in detail["metrics"]] == [1, 2, 3]
    assert detail["config"]["device_count"] == 4


def test_metrics_csv(client, experiment):
    response = client.get(f"/api/v1/experiments/{experiment['id']}/metrics.csv")
    assert response.status_code == 200
    assert response.headers["content-type"].startswith("text/csv")
    lines = response.text.splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len([line for line in lines[1:] if not line.startswith("#")]) == 3


def test_delete_then_not_found(client, experiment):
    experiment_id = experiment["id"]
    assert client.delete(f"/api/v1/experiments/{experiment_id}").status_code == 200
    response = client.get(f"/api/v1/experiments/{experiment_id}")
    assert response.status_code == 404
    body = response.json()
    assert body["success"] is False
    assert body["error"] == "HTTPException"
    assert client.delete(f"/api/v1/experiments/{experiment_id}").status_code == 404


def test_invalid_config_rejected(client):
    response = client.post("/api/v1/experiments", json={**SMALL, "rounds": 0})
    assert response.status_code == 422
    response = client.post("/api/v1/experiments", json={**SMALL, "unknown": 1})
    assert response.status_code == 422


def test_domain_error_is_structured(client):
    response = client.post("/api/v1/experiments", json={**SMALL, "dataset_path": "/no/such/data.csv"})
    assert response.status_code == 422
    body = response.json()
    assert body == {"message": body["message"], "success": False, "error": "DomainError"}


def test_malformed_dataset_is_a_domain_error(client, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0,2.0,0\na,b,c\n")
    response = client.post("/api/v1/experiments", json={**SMALL, "dataset_path": str(bad)})
    assert response.status_code == 422
    assert response.json()["error"] == "DomainError"


def test_rate_limit_adds_no_query_parameters(client):
    schema = client.get("/openapi.json").json()
    listing = schema["paths"]["/api/v1/experiments"]["get"]
    assert {param["name"] for param in listing["parameters"]} == {"policy", "skip", "limit"}
    download = schema["paths"]["/api/v1/experiments/{experiment_id}/metrics.csv"]["get"]
    assert [param["name"] for param in download.get("parameters", [])] == ["experiment_id"]


def test_app_logging_enabled_after_startup(client):
    assert logging.getLogger("app.main").isEnabledFor(logging.INFO)
