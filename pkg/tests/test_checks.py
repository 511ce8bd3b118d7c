import json

from wsym.checks import check_negative_control, run_check_suite


def test_check_suite_passes():
    report = run_check_suite()
    failed = [c["name"] for c in report["checks"] if not c["passed"]]
    assert report["passed"], failed
    json.dumps(report)  # every measured value is JSON-serializable


def test_negative_control_separates_meshes():
    r = check_negative_control()
    assert r["passed"]
    assert r["growth"]["plain"] > 2 * r["growth"]["split"]
