import json
import threading

from stagerag.telemetry import TelemetryLog


def test_in_memory_records_and_filter():
    log = TelemetryLog()
    log.record("llm_call", model="m1")
    log.record("stage", stage="refine")
    log.record("llm_call", model="m2")
    calls = log.by_event("llm_call")
    assert [c["model"] for c in calls] == ["m1", "m2"]
    assert all("ts" in c for c in calls)


def test_file_sink_appends_json_lines(tmp_path):
    path = tmp_path / "telemetry.jsonl"
    log = TelemetryLog(path)
    log.record("stage", stage="refine", index=1)
    log.record("stage", stage="cite", index=6)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["stage"] for l in lines] == ["refine", "cite"]


def test_concurrent_writes_lose_nothing(tmp_path):
    path = tmp_path / "telemetry.jsonl"
    log = TelemetryLog(path)

    def worker(worker_id):
        for i in range(50):
            log.record("tick", worker=worker_id, i=i)

    threads = [threading.Thread(target=worker, args=(w,)) for w in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(log.by_event("tick")) == 400
    lines = path.read_text().splitlines()
    assert len(lines) == 400
    for line in lines:
        json.loads(line)
