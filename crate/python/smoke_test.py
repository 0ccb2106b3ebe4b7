"""Runs a seeded session through the bindings and checks its artifacts."""

import json
import tempfile
from pathlib import Path

import climb


def main():
    train, test = climb.synthetic_dataset(3)
    with tempfile.TemporaryDirectory() as root:
        sid, status = climb.run_session(
            root, train, climb.climb_script_json(), climb.default_persona_json(), seed=3
        )
        assert status == "completed", status

        events = json.loads(climb.events_json(root, sid))
        assert events[-1]["kind"] == "session_closed", events[-1]

        found = json.loads(climb.detect_json(root, sid))
        assert not any(found["flags"].values()), found["flags"]

        metrics = json.loads(climb.evaluate_json(root, sid, test))
        assert metrics["r2"] > 0.95, metrics

        report = climb.render_report(root, sid)
        assert "## Models" in report

        archive = Path(root) / "archive.json"
        climb.persist(root, sid, str(archive))
        with tempfile.TemporaryDirectory() as other:
            assert climb.resume(other, str(archive)) == sid
            assert climb.render_report(other, sid) == report

    m = json.loads(climb.metrics_json([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]))
    assert abs(m["mse"] - 1.0 / 3.0) < 1e-12, m
    print("smoke test passed")


if __name__ == "__main__":
    main()
