import io

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from moto_helmet_service import ROLES, create_app


def png_bytes(arr):
    buf = io.BytesIO()
    Image.fromarray(arr.astype("uint8"), "RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_field(data, name="img.png"):
    return {"image": (name, data, "image/png")}


GRAY = png_bytes(np.full((240, 320, 3), 128))

# One saturated red rectangle on a dark background.
_blob = np.full((240, 320, 3), 30)
_blob[60:180, 80:240] = (220, 40, 40)
RED_BLOB = png_bytes(_blob)

_multi = np.full((256, 256, 3), 20)
_multi[32:96, 32:96] = (210, 30, 30)     # motorcycle-colored
_multi[140:220, 60:150] = (30, 210, 30)  # person-colored
_multi[100:130, 180:230] = (30, 30, 210)  # helmet-colored
MULTI = png_bytes(_multi)


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


def detect(client, image, prompt, threshold):
    return client.post("/detect", files=image_field(image),
                       data={"prompt": prompt, "threshold": threshold})


class TestHealth:
    def test_ok(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        assert r.json() == {"status": "ok"}

    def test_stable_across_100_calls(self, client):
        for i in range(100):
            assert client.get("/health").json() == {"status": "ok"}
            if i % 10 == 0:  # interleave real inference to hunt state corruption
                detect(client, RED_BLOB, "motorcycle", "0.3")
                client.post("/classify_seat", files=image_field(GRAY))


class TestDetectValidation:
    def test_threshold_above_one_rejected(self, client):
        r = detect(client, RED_BLOB, "motorcycle", "1.01")
        assert r.status_code == 400
        assert "outside [0,1]" in r.json()["error"]

    def test_negative_threshold_rejected(self, client):
        r = detect(client, RED_BLOB, "motorcycle", "-0.2")
        assert r.status_code == 400

    def test_non_numeric_threshold_rejected(self, client):
        r = detect(client, RED_BLOB, "motorcycle", "soon")
        assert r.status_code == 400
        assert "error" in r.json()

    def test_blank_prompt_rejected(self, client):
        r = detect(client, RED_BLOB, "  ", "0.5")
        assert r.status_code == 400

    def test_undecodable_image_rejected(self, client):
        r = detect(client, b"definitely not an image", "motorcycle", "0.5")
        assert r.status_code == 400
        assert "undecodable" in r.json()["error"]

    def test_missing_field_is_400_with_error_body(self, client):
        r = client.post("/detect", files=image_field(RED_BLOB))
        assert r.status_code == 400
        assert set(r.json()) == {"error"}


class TestDetectBehavior:
    def test_blank_image_no_detections(self, client):
        r = detect(client, GRAY, "motorcycle", "0.5")
        assert r.status_code == 200
        assert r.json() == {"detections": []}

    def test_red_blob_found_as_motorcycle(self, client):
        r = detect(client, RED_BLOB, "motorcycle", "0.3")
        dets = r.json()["detections"]
        assert len(dets) >= 1
        assert all(d["score"] >= 0.3 for d in dets)

    def test_scores_in_unit_interval_and_boxes_in_bounds(self, client):
        r = detect(client, MULTI, "person", "0.0")
        for d in r.json()["detections"]:
            assert 0.0 <= d["score"] <= 1.0
            assert d["x"] >= 0 and d["y"] >= 0
            assert d["x"] + d["w"] <= 256
            assert d["y"] + d["h"] <= 256

    def test_prompt_selects_object_kind(self, client):
        # Each prompt should find its own color and ignore the others.
        for prompt, (cx, cy) in (("motorcycle", (64, 64)),
                                 ("person", (105, 180)),
                                 ("helmet", (205, 115))):
            dets = detect(client, MULTI, prompt, "0.1").json()["detections"]
            assert len(dets) == 1, prompt
            d = dets[0]
            assert d["x"] <= cx <= d["x"] + d["w"], prompt
            assert d["y"] <= cy <= d["y"] + d["h"], prompt

    def test_threshold_filters(self, client):
        low = detect(client, MULTI, "motorcycle", "0.0").json()["detections"]
        high = detect(client, MULTI, "motorcycle", "0.99").json()["detections"]
        assert len(high) <= len(low)

    def test_unknown_prompt_finds_nothing(self, client):
        r = detect(client, MULTI, "zeppelin", "0.0")
        assert r.json() == {"detections": []}

    def test_frozen_response_fixture(self, client):
        # Contract freeze: same bytes in, same JSON out, byte-stable boxes.
        r1 = detect(client, RED_BLOB, "motorcycle", "0.3").json()
        r2 = detect(client, RED_BLOB, "motorcycle", "0.3").json()
        assert r1 == r2
        assert r1 == {"detections": [
            {"x": 80.0, "y": 60.0, "w": 160.0, "h": 120.0, "score": 0.97}]}

    def test_detector_failure_is_500(self):
        class Exploding:
            def detect(self, image, prompt):
                raise RuntimeError("weights melted")

        broken = TestClient(create_app(detector=Exploding()))
        r = broken.post("/detect", files=image_field(RED_BLOB),
                        data={"prompt": "motorcycle", "threshold": "0.5"})
        assert r.status_code == 500
        assert "weights melted" in r.json()["error"]


class TestClassifySeat:
    def test_probabilities_contract(self, client):
        r = client.post("/classify_seat", files=image_field(MULTI))
        assert r.status_code == 200
        body = r.json()
        probs = body["probabilities"]
        assert len(probs) == 4
        assert abs(sum(probs) - 1.0) <= 1e-5
        assert all(0.0 <= p <= 1.0 for p in probs)
        assert body["role"] == ROLES[probs.index(max(probs))]

    def test_undecodable_crop_rejected(self, client):
        r = client.post("/classify_seat", files=image_field(b"nope"))
        assert r.status_code == 400
        assert "undecodable" in r.json()["error"]

    def test_deterministic(self, client):
        a = client.post("/classify_seat", files=image_field(GRAY)).json()
        b = client.post("/classify_seat", files=image_field(GRAY)).json()
        assert a == b
