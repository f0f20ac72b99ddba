import json

import pytest

from aukai import verify


def test_gradient_suite_passes_small():
    report = verify.gradient_suite(draws_per_loss=3, seed=0)
    assert report.passed, report.table()


def test_gradient_suite_covers_every_loss_and_route():
    report = verify.gradient_suite(draws_per_loss=1, seed=1)
    names = [c.name for c in report.checks]
    for loss in verify.LOSS_BUILDERS:
        assert f"fd/{loss}" in names
    routing = [n for n in names if n.startswith("routing/")]
    # four traced losses x five parameter groups
    assert len(routing) == 20


def test_sabotaged_gradient_suite_fails():
    report = verify.gradient_suite(draws_per_loss=2, seed=0, sabotage="kl-sign")
    assert not report.passed
    bad = {c.name: c for c in report.checks}["fd/pred_meso"]
    assert not bad.passed
    assert bad.value > verify.FD_TOL


def test_unknown_sabotage_rejected():
    with pytest.raises(ValueError):
        verify.gradient_suite(draws_per_loss=1, sabotage="nope")


def test_pcgrad_suite_passes_small():
    report = verify.pcgrad_suite(trials=100, dims=(2, 10), seed=0)
    assert report.passed, report.table()


def test_bayes_suite_passes():
    report = verify.bayes_suite()
    assert report.passed, report.table()
    assert any(c.name == "posterior-9-11" for c in report.checks)


def test_contraction_suite_passes_small():
    report = verify.contraction_suite(n_mdps=4, pairs=40, seed=0)
    assert report.passed, report.table()


def test_schedule_suite_passes():
    report = verify.schedule_suite()
    assert report.passed, report.table()


def test_run_suite_dispatch():
    report = verify.run_suite("bayes")
    assert report.suite == "bayes"
    with pytest.raises(KeyError):
        verify.run_suite("no-such-suite")


def test_report_table_and_json():
    report = verify.bayes_suite()
    text = report.table()
    assert text.startswith("suite: bayes")
    assert "result: pass" in text
    parsed = json.loads(report.to_json())
    assert parsed["suite"] == "bayes"
    assert parsed["passed"] is True
    assert {c["name"] for c in parsed["checks"]} == {c.name for c in report.checks}


def test_failed_check_marks_report():
    report = verify.SuiteReport(suite="demo")
    report.add("ok", True, 0.0, 1.0)
    report.add("bad", False, 2.0, 1.0, "oops")
    assert not report.passed
    assert "FAIL" in report.table()
