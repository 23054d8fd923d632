"""Desk-scale benchmark: time proof reuse against from-scratch verification."""

from __future__ import annotations

import gc
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .box import Box
from .domains import SYMBOLIC, propagate_symbolic
from .exact import DEFAULT_BUDGET, Budget, verify_full
from .network import VerificationProblem, perturb, random_network
from .reuse import FULL, Outcome, reverify, verify_and_record

SVUDC = "SVuDC"
SVBTV = "SVbTV"


@dataclass(frozen=True)
class BenchSpec:
    layers: int = 6
    width: int = 16
    input_dim: int = 4
    seed: int = 7
    n_variants: int = 4
    perturb_magnitude: float = 1e-4
    enlargement_fraction: float = 0.05
    # d_out is the symbolic output bound over the base domain grown by this fraction of its width
    output_margin: float = 0.25
    abstraction_target: int | None = None
    abstraction_margin: float = 1e-3

    def __post_init__(self):
        for name in ("layers", "width", "input_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_variants < 0:
            raise ValueError("n_variants must be non-negative")
        if self.perturb_magnitude < 0 or self.output_margin < 0:
            raise ValueError("perturb_magnitude and output_margin must be non-negative")
        if not 0.0 < self.enlargement_fraction <= 1.0:
            raise ValueError("enlargement_fraction must lie in (0, 1]")


@dataclass
class BenchRow:
    case: str
    change: str
    verdict: str
    mechanism: str | None
    reuse_time: float
    full_time: float
    full_verdict: str
    # charged time of the reuse path including failed earlier mechanisms
    cascade_time: float = 0.0

    @property
    def ratio(self) -> float:
        return self.reuse_time / self.full_time if self.full_time > 0 else float("inf")

    @property
    def by_reuse(self) -> bool:
        return self.verdict == Outcome.PROVEN_BY_REUSE.value

    @property
    def sound(self) -> bool:
        """A reuse proof never meets a refutation from scratch."""
        return not (self.verdict.startswith("Proven") and self.full_verdict == "refuted")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ratio_percent"] = 100.0 * self.ratio
        return d


@dataclass
class SavingsReport:
    spec: BenchSpec
    rows: list[BenchRow] = field(default_factory=list)
    baseline: str = "full verification in the same process"

    def median_ratio(self, change: str) -> float | None:
        vals = [r.ratio for r in self.rows if r.change == change and r.by_reuse]
        return statistics.median(vals) if vals else None

    def to_dict(self) -> dict:
        return {
            "spec": asdict(self.spec),
            "baseline": self.baseline,
            "rows": [r.to_dict() for r in self.rows],
            "median_ratio": {c: self.median_ratio(c) for c in (SVUDC, SVBTV)},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def table(self) -> str:
        head = f"{'case':<10}{'change':<8}{'verdict':<18}{'mechanism':<12}" \
               f"{'reuse[s]':>10}{'full[s]':>10}{'ratio':>9}"
        lines = [f"# baseline: {self.baseline}", head, "-" * len(head)]
        for r in self.rows:
            lines.append(f"{r.case:<10}{r.change:<8}{r.verdict:<18}{str(r.mechanism):<12}"
                         f"{r.reuse_time:>10.5f}{r.full_time:>10.5f}{100 * r.ratio:>8.2f}%")
        return "\n".join(lines)


def bench_problems(spec: BenchSpec):
    """Base problem plus the modified problems ``(case, change, problem)``."""
    widths = [spec.width] * (spec.layers - 1) + [1]
    base_net = random_network(spec.input_dim, widths, spec.seed, name="bench-base")
    d_in = Box.cube(-1.0, 1.0, spec.input_dim)
    out = propagate_symbolic(base_net, 1, base_net.n_layers, d_in).box
    d_out = out.widen(spec.output_margin * out.width + 1e-6)
    base = VerificationProblem(base_net, d_in, d_out)
    cases = []
    grow = spec.enlargement_fraction * d_in.width / 2.0
    cases.append(("domain", SVUDC, VerificationProblem(base_net, d_in.widen(grow), d_out)))
    for k in range(spec.n_variants):
        f_k = perturb(base_net, spec.perturb_magnitude, spec.seed + 1000 + k)
        cases.append((f"variant{k + 1}", SVBTV, VerificationProblem(f_k, d_in, d_out)))
    return base, cases


def _timed_full(problem: VerificationProblem, budget: Budget, mode: str):
    t0 = time.perf_counter()
    res, _ = verify_full(problem, budget, mode)
    return res, time.perf_counter() - t0


def cmd_bench(spec: BenchSpec, budget: Budget = DEFAULT_BUDGET, mode: str = SYMBOLIC,
              workers: int = 1, repeats: int = 5, strategy=None, cuts=None,
              report_path=None) -> SavingsReport:
    """Run every case through reuse and from scratch; timings are the best of ``repeats``.

    Cases run one after another so the two timings of a case share the same conditions.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    base, cases = bench_problems(spec)
    res, artifact = verify_and_record(base, budget, mode,
                                      abstraction_target=spec.abstraction_target,
                                      abstraction_margin=spec.abstraction_margin)
    if artifact is None:
        raise RuntimeError(
            f"base problem is not proven ({res.verdict.value}); adjust the BenchSpec")
    report = SavingsReport(spec)
    for case, change, problem in cases:
        # like timeit, keep collector pauses out of sub-millisecond timings
        gc_was_enabled = gc.isenabled()
        gc.collect()
        gc.disable()
        try:
            outcomes = [reverify(problem, artifact, strategy, budget, mode=mode, cuts=cuts,
                                 workers=workers) for _ in range(repeats)]
            fulls = [_timed_full(problem, budget, mode) for _ in range(repeats)]
        finally:
            if gc_was_enabled:
                gc.enable()
        o = outcomes[0]
        full_res = fulls[0][0]
        full_time = min(t for _, t in fulls)
        if o.mechanism == FULL:
            reuse_time = full_time
        else:
            reuse_time = min(x.reuse_time for x in outcomes)
        report.rows.append(BenchRow(case, change, o.verdict.value, o.mechanism, reuse_time,
                                    full_time, full_res.verdict.value,
                                    min(x.cascade_time for x in outcomes)))
    if report_path is not None:
        Path(report_path).write_text(report.dumps(), encoding="utf-8")
    return report


def summarize(report: SavingsReport) -> dict:
    reuse_rows = [r for r in report.rows if r.by_reuse]
    return {
        "rows": len(report.rows),
        "by_reuse": len(reuse_rows),
        "all_sound": all(r.sound for r in report.rows),
        "max_reuse_ratio": max((r.ratio for r in reuse_rows), default=np.nan),
    }
