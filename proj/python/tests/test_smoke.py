import json

import pytest

import ricebot


def test_iou_and_points():
    assert ricebot.iou((0, 0, 10, 10), (5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert ricebot.atp_image_point(["blast"], ["blast", "bsp"]) == 0.5
    assert ricebot.atp_image_point(["blast"], []) == 0.0
    with pytest.raises(ricebot.UnknownClass):
        ricebot.atp_image_point(["tungro"], ["blast"])


def test_atp_report_totals():
    r = ricebot.atp_report([(["blast"], ["blast"]), (["bsp"], ["blast"])])
    assert r["total"]["atp_percent"] == pytest.approx(50.0)


def test_evaluate_text():
    gt = "\n".join(json.dumps(r) for r in [
        {"image_id": "a", "class_name": "blast", "x_min": 0, "y_min": 0, "x_max": 10, "y_max": 10},
        {"image_id": "a", "class_name": "nbs", "x_min": 20, "y_min": 20, "x_max": 40, "y_max": 40},
    ])
    pred = json.dumps({"image_id": "a", "class_name": "blast", "confidence": 0.9,
                       "x_min": 0, "y_min": 0, "x_max": 10, "y_max": 10})
    r = ricebot.evaluate(pred, gt)
    aps = {c["class_name"]: c["ap"] for c in r["ap"]["per_class"]}
    assert aps == {"blast": 1.0, "nbs": 0.0}
    with pytest.raises(ricebot.ParseError):
        ricebot.evaluate("{oops", gt)


def test_synthetic_detection_round_trip():
    png, gt = ricebot.synth_image([("blight", (10, 10, 60, 50)), ("leaf", (80, 20, 100, 90))])
    assert gt == [("blight", (10.0, 10.0, 60.0, 50.0))]
    r = ricebot.detect(png)
    assert [d["class_name"] for d in r["detections"]] == ["blight"]
    box = r["detections"][0]["box"]
    assert (box["x_min"], box["y_max"]) == (10, 50)
    out = ricebot.render_annotation(png, [("blight", 0.8, (10, 10, 60, 50))])
    assert out[:8] == b"\x89PNG\r\n\x1a\n" and out != png
    with pytest.raises(ricebot.DecodeError):
        ricebot.detect(b"nope")


def test_manifest_tools(tmp_path):
    lines = [{"image_id": f"i{k}", "content_hash": f"h{k}", "width": 50, "height": 50,
              "labels": [{"class": "blast" if k % 2 else "rrsv",
                          "x_min": 0, "y_min": 0, "x_max": 5, "y_max": 5}]}
             for k in range(20)]
    src = tmp_path / "m.jsonl"
    src.write_text("\n".join(json.dumps(l) for l in lines) + "\n")
    split = tmp_path / "s.jsonl"
    ricebot.split_manifest(str(src), str(split), 0.8, 0.2, 1)
    a = ricebot.audit_manifest(str(split))
    assert a["total_images"]["train"] == 16
    assert a["total_images"]["validate"] == 4
    pruned = tmp_path / "p.jsonl"
    ricebot.remove_class(str(split), str(pruned), "rrsv")
    assert ricebot.audit_manifest(str(pruned))["total_boxes"]["total"] == 10
    merged = tmp_path / "x.jsonl"
    dups = ricebot.merge_manifests(str(pruned), str(src), str(merged))
    assert len(dups) == 10
    assert ricebot.audit_manifest(str(merged))["total_images"]["total"] == 20


def test_commands_and_signatures():
    assert ricebot.parse_command("hello") is None
    assert ricebot.parse_command("/correct J4 none") == {
        "kind": "correct", "job_ref": "J4", "class_name": None}
    sig = ricebot.compute_signature("s", b"{}")
    assert ricebot.verify_signature("s", b"{}", sig)
    assert not ricebot.verify_signature("s", b"{ }", sig)
    text = ricebot.render_reply_text("{class} {confidence}\nJob {job-ref}",
                                     [("bsp", 0.6, (0, 0, 1, 1)), ("blast", 0.9, (0, 0, 1, 1))], "J2")
    assert text == "blast 0.90\nbsp 0.60\nJob J2"


def test_gateway_rejects_and_records(tmp_path):
    g = ricebot.Gateway({"data_dir": str(tmp_path / "data"), "channel_secret": "k",
                         "platform_base_url": "http://127.0.0.1:9"})
    body = json.dumps({"destination": "x", "events": [{
        "type": "message", "timestamp": 1, "replyToken": "rt",
        "source": {"type": "user", "userId": "U1"},
        "message": {"id": "m1", "type": "image"}}]}).encode()
    assert g.handle_webhook(body, "bad")[0] == 401
    assert g.handle_webhook(body, ricebot.compute_signature("k", body))[0] == 200
    # Without workers the job waits in the queue.
    assert g.queue_depth() == 1
    jobs = g.store().jobs()
    assert [j["job_id"] for j in jobs] == ["J1"]
    assert jobs[0]["status"] == "queued"
    assert g.serve_content("00", False) is None
    assert g.store().latency_report()["count"] == 0
    assert g.store().deployment_atp()["included"] == 0
