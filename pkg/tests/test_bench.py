import json

import pytest

from contverify.bench import SVBTV, SVUDC, BenchSpec, bench_problems, cmd_bench, summarize
from contverify.box import box_contains

SMALL = BenchSpec(layers=3, width=6, input_dim=2, seed=3, n_variants=2)


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(layers=0)
    with pytest.raises(ValueError):
        BenchSpec(n_variants=-1)
    with pytest.raises(ValueError):
        BenchSpec(enlargement_fraction=0.0)


def test_problems_shape():
    base, cases = bench_problems(SMALL)
    assert [c[1] for c in cases] == [SVUDC, SVBTV, SVBTV]
    dom = cases[0][2]
    assert box_contains(dom.d_in, base.d_in) and not box_contains(base.d_in, dom.d_in)
    assert dom.network.digest() == base.network.digest()
    for _, _, prob in cases[1:]:
        assert prob.d_in == base.d_in and prob.d_out == base.d_out
        assert prob.network.digest() != base.network.digest()
    # variants all derive from the base network, not from each other
    assert cases[1][2].network.digest() != cases[2][2].network.digest()


def test_no_variants_gives_domain_row_only():
    report = cmd_bench(BenchSpec(layers=3, width=6, input_dim=2, n_variants=0), repeats=1)
    assert [r.change for r in report.rows] == [SVUDC]


def test_report_rows_and_file(tmp_path):
    path = tmp_path / "report.json"
    report = cmd_bench(SMALL, repeats=1, report_path=path)
    assert len(report.rows) == 3
    for row in report.rows:
        assert row.sound
        assert row.verdict.startswith("Proven")
        if row.by_reuse:
            assert row.ratio < 1.0
    doc = json.loads(path.read_text())
    assert doc["spec"]["layers"] == 3 and len(doc["rows"]) == 3
    assert "baseline" in doc
    assert "case" in report.table()
    summary = summarize(report)
    assert summary["rows"] == 3 and summary["all_sound"]


def test_verdicts_deterministic_across_runs_and_workers():
    a = cmd_bench(SMALL, repeats=1, workers=1)
    b = cmd_bench(SMALL, repeats=1, workers=3)
    key = [(r.case, r.verdict, r.mechanism, r.full_verdict) for r in a.rows]
    assert key == [(r.case, r.verdict, r.mechanism, r.full_verdict) for r in b.rows]
