import io

import pytest
from fastapi.testclient import TestClient

from vidcap.config import default_mock_config
from vidcap.fixtures import build_corpus
from vidcap.pipeline import Pipeline
from vidcap.service import AnnotationService, create_app


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    sources = tmp_path_factory.mktemp("sources")
    workdir = tmp_path_factory.mktemp("work")
    build_corpus(sources, count=6, seed=2)
    Pipeline(default_mock_config(), sources, workdir).run_all()
    return sources, workdir


def make_client(workspace, tmp_path, mode="best_caption", **kwargs):
    sources, workdir = workspace
    service = AnnotationService.from_workdir(
        workdir, sources, mode, shuffle_seed=3, **kwargs)
    service.results_path = tmp_path / "results.jsonl"
    return TestClient(create_app(service)), service


class TestLeaseEndpoint:
    def test_lease_returns_task_payload(self, workspace, tmp_path):
        client, service = make_client(workspace, tmp_path)
        resp = client.get("/tasks/lease", params={"annotator": "a1"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["mode"] == "best_caption"
        assert len(body["captions"]) >= 1
        assert body["instruction"]
        assert body["media_url"].endswith("/media")
        assert body["lease_expiry"] is not None

    def test_exhausted_pool_404(self, workspace, tmp_path):
        client, service = make_client(workspace, tmp_path)
        n_tasks = len(service.tasks_by_id)
        for i in range(n_tasks):
            task = client.get("/tasks/lease", params={"annotator": "solo"}).json()
            client.post(f"/tasks/{task['task_id']}/result",
                        json={"annotator_id": "solo", "positions": [0]})
        resp = client.get("/tasks/lease", params={"annotator": "solo"})
        assert resp.status_code == 404
        assert resp.json()["detail"]["error"] == "pool_exhausted"


class TestSubmitEndpoint:
    def test_submit_and_progress(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client.post(f"/tasks/{task['task_id']}/result",
                           json={"annotator_id": "a1", "positions": [2]})
        assert resp.status_code == 200
        body = resp.json()
        assert body["stored"] is True
        assert body["progress"]["submitted"] == 1

    def test_duplicate_submit_stores_once(self, workspace, tmp_path):
        client, service = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        r1 = client.post(f"/tasks/{task['task_id']}/result",
                         json={"annotator_id": "a1", "positions": [1]})
        r2 = client.post(f"/tasks/{task['task_id']}/result",
                         json={"annotator_id": "a1", "positions": [1]})
        assert r1.status_code == r2.status_code == 200
        assert r1.json()["selection"] == r2.json()["selection"]
        assert len(service.pool.results()) == 1

    def test_stale_lease_conflict(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        resp = client.post("/tasks/unknown/result",
                           json={"annotator_id": "nobody", "positions": [0]})
        assert resp.status_code in (404, 409)
        client2, service2 = make_client(workspace, tmp_path)
        task = client2.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client2.post(f"/tasks/{task['task_id']}/result",
                            json={"annotator_id": "intruder", "positions": [0]})
        assert resp.status_code == 409
        assert resp.json()["detail"]["error"] == "stale_lease"

    def test_mutual_exclusion_rejected(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path, mode="every_good")
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client.post(f"/tasks/{task['task_id']}/result",
                           json={"annotator_id": "a1", "positions": [0],
                                 "all_bad": True})
        assert resp.status_code == 400
        assert resp.json()["detail"]["error"] == "invalid_selection"

    def test_empty_submission_rejected(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client.post(f"/tasks/{task['task_id']}/result",
                           json={"annotator_id": "a1", "positions": []})
        assert resp.status_code == 400

    def test_all_bad_accepted(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client.post(f"/tasks/{task['task_id']}/result",
                           json={"annotator_id": "a1", "all_bad": True})
        assert resp.status_code == 200
        assert resp.json()["selection"] == "ALL_BAD"

    def test_results_replayed_after_restart(self, workspace, tmp_path):
        sources, workdir = workspace
        client, service = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        client.post(f"/tasks/{task['task_id']}/result",
                    json={"annotator_id": "a1", "positions": [0]})
        fresh = AnnotationService.from_workdir(workdir, sources, "best_caption",
                                               shuffle_seed=3)
        fresh.results_path = service.results_path
        fresh._replay_results()
        assert len(fresh.pool.results()) == 1


class TestMediaEndpoint:
    def test_png_strip_of_per_second_keyframes(self, workspace, tmp_path):
        from PIL import Image

        client, service = make_client(workspace, tmp_path)
        task = client.get("/tasks/lease", params={"annotator": "a1"}).json()
        resp = client.get(f"/clips/{task['clip_id']}/media")
        assert resp.status_code == 200
        assert resp.headers["content-type"] == "image/png"
        image = Image.open(io.BytesIO(resp.content))
        info = service.media[task["clip_id"]]
        seconds = max(1, int((info.end_frame - info.start_frame) / info.fps))
        assert image.width == 64 * seconds
        assert image.height == 48

    def test_unknown_clip_404(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        assert client.get("/clips/nope/media").status_code == 404


class TestStatsAndExport:
    def submit_all(self, client, n, annotator="a1", position=0):
        for _ in range(n):
            resp = client.get("/tasks/lease", params={"annotator": annotator})
            if resp.status_code == 404:
                break
            task = resp.json()
            client.post(f"/tasks/{task['task_id']}/result",
                        json={"annotator_id": annotator,
                              "positions": [position % len(task["captions"])]})

    def test_selective_rates_sum_to_one(self, workspace, tmp_path):
        client, service = make_client(workspace, tmp_path)
        self.submit_all(client, len(service.tasks_by_id))
        rates = client.get("/stats/selective-rates").json()
        assert rates
        assert sum(rates.values()) == pytest.approx(1.0)

    def test_export_counts(self, workspace, tmp_path):
        client, service = make_client(workspace, tmp_path)
        n = len(service.tasks_by_id)
        self.submit_all(client, n)
        body = client.get("/export/retrieval",
                          params={"train_fraction": 0.8, "seed": 1}).json()
        total = len(body["train"]) + len(body["val"])
        assert total == n
        for record in body["train"] + body["val"]:
            assert record["positive"]
            assert len(record["hard_negatives"]) >= 1

    def test_export_empty_404(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        resp = client.get("/export/retrieval")
        assert resp.status_code == 404

    def test_health(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path)
        assert client.get("/health").json() == {"v": 1, "status": "ok"}

    def test_goodness_export_feeds_teacher_pick(self, workspace, tmp_path):
        import numpy as np

        from vidcap.model import GoodnessMatrix
        from vidcap.teacher_pick import greedy_select

        client, service = make_client(workspace, tmp_path, mode="every_good")
        for _ in range(len(service.tasks_by_id)):
            resp = client.get("/tasks/lease", params={"annotator": "a1"})
            if resp.status_code == 404:
                break
            task = resp.json()
            client.post(f"/tasks/{task['task_id']}/result",
                        json={"annotator_id": "a1", "positions": [0, 1]})
        body = client.get("/export/goodness").json()
        matrix = GoodnessMatrix(video_ids=tuple(body["video_ids"]),
                                model_ids=tuple(body["model_ids"]),
                                cells=np.array(body["cells"], dtype=bool))
        picks = greedy_select(matrix, min(2, len(matrix.model_ids)))
        assert picks
        assert body["all_bad_rate"] == 0.0

    def test_goodness_export_empty_404(self, workspace, tmp_path):
        client, _ = make_client(workspace, tmp_path, mode="every_good")
        assert client.get("/export/goodness").status_code == 404
