import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrforge.algebra import FlatLayout, MRSet, catalogue_mr, dense_mr, identity_mr, manual_catalogue
from mrforge.errors import ValidationError
from mrforge.harness import (
    CampaignReport,
    MRTestResult,
    ReportIOError,
    campaign_inputs,
    export_report,
    load_report,
    relative_deviation,
    run_campaign,
    run_mr_test,
    thread_cap,
)
from mrforge.model import GridSpec, Variant, energy_pipeline, random_sea_level

GRID = GridSpec(nx=8, ny=6, nt=5)


@pytest.fixture(scope="module")
def inputs():
    return campaign_inputs(GRID, [1, 2, 3])


@pytest.fixture(scope="module")
def layout(inputs):
    return FlatLayout.of(inputs[0])


def test_relative_deviation():
    assert relative_deviation([1.0, 2.0], [1.0, 2.2]) == pytest.approx(0.1)
    assert relative_deviation([0.0], [0.0]) == 0.0
    assert relative_deviation([0.0], [1e-40]) == pytest.approx(1e-10)


@pytest.mark.parametrize("variant", list(Variant))
def test_identity_is_exact(inputs, layout, variant):
    r = run_mr_test(identity_mr(layout), variant, inputs)
    assert r.deviations == [0.0, 0.0, 0.0] and r.passed and r.verdict == "pass"


def test_shift_by_three(inputs, layout):
    g = catalogue_mr("cyclic_shift_x", {"k": 3}, layout)
    cyc = run_mr_test(g, "cyclic", inputs)
    non = run_mr_test(g, "noncyclic", inputs)
    assert cyc.max_deviation < 1e-12 and cyc.passed
    assert min(non.deviations) > 1e-3 and not non.passed


def test_deviation_matches_direct_evaluation(inputs, layout):
    g = catalogue_mr("cyclic_shift_y", {"k": 2}, layout)
    r = run_mr_test(g, "noncyclic", inputs[:1])
    inp = inputs[0]
    shifted = type(inp)(eta=np.roll(inp.eta, 2, axis=1), xs=inp.xs, ys=inp.ys, ts=inp.ts, G=inp.G, F=inp.F)
    es, em = energy_pipeline(inp, "noncyclic").e, energy_pipeline(shifted, "noncyclic").e
    worst = max(abs(m - s) / (abs(s) + 1e-30) for s, m in zip(es, em))
    assert r.deviations[0] == pytest.approx(worst, rel=1e-15)


def test_run_mr_test_preconditions(inputs, layout):
    with pytest.raises(ValidationError):
        run_mr_test(identity_mr(layout), "cyclic", [])
    with pytest.raises(ValidationError):
        run_mr_test(identity_mr(layout), "cyclic", inputs, tolerance=0.0)
    with pytest.raises(ValidationError):
        run_mr_test(identity_mr(FlatLayout(1, 2, 2)), "cyclic", inputs)


def test_invalid_morphed_input_fails(inputs, layout):
    n = layout.total_dim
    beta = np.zeros(n)
    beta[-1] = -inputs[0].F      # F -> 0
    r = run_mr_test(dense_mr(np.eye(n), beta, layout, label="kill_F"), "cyclic", inputs[:1])
    assert r.deviations == [float("inf")] and not r.passed


def test_symmetry_suite_both_variants(inputs, layout):
    report = run_campaign(manual_catalogue(layout), inputs)
    assert len(report.results) == 16
    assert len({(r.mr_label, r.variant) for r in report.results}) == 16
    for r in report.results:
        shift = r.mr_label.startswith("cyclic_shift")
        if r.variant is Variant.CYCLIC or not shift:
            assert r.passed, (r.mr_label, r.variant, r.deviations)
        else:
            assert not r.passed
    assert report.defect_revealing() == ["cyclic_shift_x", "cyclic_shift_y"]
    keys = [(r.mr_label, r.variant.value) for r in report.results]
    assert keys == sorted(keys)


def test_campaign_variants_and_preconditions(inputs, layout):
    report = run_campaign([identity_mr(layout)], inputs, variants=["cyclic"])
    assert [r.variant for r in report.results] == [Variant.CYCLIC]
    assert report.detection == [{"mr": "identity", "defect_revealing": False}]
    with pytest.raises(ValidationError):
        run_campaign([], inputs)
    with pytest.raises(ValidationError):
        run_campaign([identity_mr(layout)], [])
    with pytest.raises(ValidationError):
        run_campaign([identity_mr(layout), identity_mr(layout)], inputs)


def test_campaign_accepts_mrsets_and_threads(inputs, layout, monkeypatch):
    s = MRSet.start(layout)
    s.add(catalogue_mr("reverse_x", {}, layout))
    serial = run_campaign([s], inputs, max_workers=1)
    threaded = run_campaign([s], inputs, max_workers=4)
    assert serial == threaded
    monkeypatch.setenv("MRFORGE_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("MRFORGE_THREADS", "bogus")
    assert thread_cap() == 1


def test_export_roundtrip_and_determinism(tmp_path, inputs, layout):
    report = run_campaign(manual_catalogue(layout), inputs, manifest={"seeds": [1, 2, 3]})
    a = export_report(report, tmp_path / "a")
    b = export_report(report, tmp_path / "b")
    assert [p.name for p in a] == [p.name for p in b]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    back = load_report(tmp_path / "a")
    assert back == report
    data = json.loads((tmp_path / "a" / "report.json").read_text())
    assert data["manifest"]["grid"] == {"nt": 5, "ny": 6, "nx": 8}
    assert data["manifest"]["seeds"] == [1, 2, 3] and data["manifest"]["tolerance"] == 1e-9
    series = (tmp_path / "a" / "series" / "reverse_x__cyclic.csv").read_text().splitlines()
    assert series[0] == "t,e_source,e_morphed"
    assert len(series) == 1 + GRID.nt


def test_tampered_verdict_is_rejected(tmp_path, inputs, layout):
    report = run_campaign([identity_mr(layout)], inputs)
    data = report.to_json()
    data["results"][0]["verdict"] = "fail"
    with pytest.raises(ValidationError):
        CampaignReport.from_json(data)


def test_export_io_error(tmp_path, inputs, layout):
    report = run_campaign([identity_mr(layout)], inputs[:1])
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError) as err:
        export_report(report, blocker / "sub")
    assert "file" in str(err.value)


@settings(max_examples=50, deadline=None)
@given(devs=st.lists(st.floats(0, 1e3), min_size=1, max_size=6), t1=st.floats(1e-12, 1e3),
       t2=st.floats(1e-12, 1e3))
def test_monotone_tolerance(devs, t1, t2):
    lo, hi = sorted((t1, t2))
    low = MRTestResult("m", Variant.CYCLIC, devs, lo)
    high = MRTestResult("m", Variant.CYCLIC, devs, hi)
    assert not (low.passed and not high.passed)
    assert low.passed == (max(devs) < lo)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.integers(1, 7))
def test_cyclic_shift_symmetry_property(seed, k):
    inp = random_sea_level(GRID, seed)
    g = catalogue_mr("cyclic_shift_x", {"k": k}, FlatLayout.of(inp))
    assert run_mr_test(g, "cyclic", [inp]).max_deviation < 1e-12
