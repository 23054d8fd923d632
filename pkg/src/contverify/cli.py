"""Command line: verify, reverify, bench, inspect.

Exit codes: 0 proven, 1 refuted, 2 unknown, 3 usage error, 4 input/output error,
5 internal error.
Boxes are given as JSON lists of ``[lo, hi]`` pairs, inline or as ``@path``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .bench import BenchSpec, cmd_bench
from .box import Box, box_contains
from .domains import MODES, SYMBOLIC
from .exact import Budget, Verdict
from .network import NetworkFormatError, VerificationProblem, eval_network, load_network
from .reuse import MECHANISMS, Outcome, reverify, verify_and_record
from .store import ArtifactError, load_artifact, save_artifact

EXIT_PROVEN, EXIT_REFUTED, EXIT_UNKNOWN, EXIT_USAGE, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_box(text: str) -> Box:
    if text.startswith("@"):
        text = Path(text[1:]).read_text(encoding="utf-8")
    try:
        return Box.from_list(json.loads(text))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        raise UsageError(f"bad box {text.strip()[:60]!r}: {exc}") from exc


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad integer list {text!r}") from exc


def _budget(args) -> Budget:
    try:
        return Budget(args.budget_splits, args.budget_time)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _add_common(p):
    p.add_argument("--mode", choices=MODES, default=None,
                   help="bounding domain (default: symbolic, or the artifact's for reverify)")
    p.add_argument("--norm", default="LINF", choices=["L1", "L2", "LINF", "Linf"],
                   help="norm of the Lipschitz bound")
    p.add_argument("--budget-splits", type=int, default=100_000)
    p.add_argument("--budget-time", type=float, default=60.0, help="seconds per exact check")
    p.add_argument("--sound-margin", type=float, default=0.0,
                   help="require containment with this much room on every side")
    p.add_argument("--workers", type=int, default=1, help="threads for independent sub-checks")
    p.add_argument("--report", type=Path, help="write a JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="contverify", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", help="verify from scratch and store a proof artifact")
    p.add_argument("network", type=Path)
    p.add_argument("--d-in", required=True)
    p.add_argument("--d-out", required=True)
    p.add_argument("--artifact", type=Path, help="where to store the proof (default: NETWORK.proof.json)")
    p.add_argument("--abstraction-target", type=int,
                   help="also build and prove a merged abstraction with this many neurons per layer")
    p.add_argument("--abstraction-margin", type=float, default=0.0)
    _add_common(p)

    p = sub.add_parser("reverify", help="verify a modified problem by reusing an artifact")
    p.add_argument("network", type=Path, help="the (possibly fine-tuned) network")
    p.add_argument("artifact", type=Path)
    p.add_argument("--d-in", help="new input box (default: the proven one)")
    p.add_argument("--d-out", help="new output box (default: the proven one)")
    p.add_argument("--strategy", help=f"comma-separated order from {','.join(MECHANISMS)}")
    p.add_argument("--cuts", help="comma-separated cut layers for multi-layer reuse")
    p.add_argument("--kappa", type=float, help="distance bound of the enlarged domain")
    p.add_argument("--out-artifact", type=Path,
                   help="where to store a fresh artifact after a full verification")
    _add_common(p)

    p = sub.add_parser("bench", help="time reuse against verification from scratch")
    d = BenchSpec()
    p.add_argument("--layers", type=int, default=d.layers)
    p.add_argument("--width", type=int, default=d.width)
    p.add_argument("--input-dim", type=int, default=d.input_dim)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--variants", type=int, default=d.n_variants)
    p.add_argument("--perturb", type=float, default=d.perturb_magnitude)
    p.add_argument("--enlarge", type=float, default=d.enlargement_fraction)
    p.add_argument("--output-margin", type=float, default=d.output_margin)
    p.add_argument("--abstraction-target", type=int, default=d.abstraction_target)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--strategy")
    p.add_argument("--cuts")
    _add_common(p)

    p = sub.add_parser("inspect", help="print an artifact summary")
    p.add_argument("artifact", type=Path)
    p.add_argument("--network", type=Path, help="also re-check the chain against this network")
    return parser


def _write_report(path, doc: dict) -> None:
    if path is not None:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _print_witness(net, x, d_out: Box) -> None:
    y = eval_network(net, x)
    print(f"witness: x = {np.array2string(np.asarray(x), precision=6)}")
    print(f"         f(x) = {np.array2string(y, precision=6)} not in {d_out}")


def cmd_verify(args) -> int:
    net = load_network(args.network)
    problem = VerificationProblem(net, parse_box(args.d_in), parse_box(args.d_out))
    res, artifact = verify_and_record(problem, _budget(args), args.mode or SYMBOLIC, args.norm,
                                      args.sound_margin,
                                      abstraction_target=args.abstraction_target,
                                      abstraction_margin=args.abstraction_margin)
    print(f"verdict: {res.verdict.value} ({res.stats.splits} splits, {res.stats.wall_time:.4f}s)")
    doc = res.summary()
    if artifact is not None:
        path = args.artifact or args.network.with_suffix(".proof.json")
        save_artifact(artifact, path)
        print(f"artifact: {path}")
        doc["artifact"] = str(path)
    elif res.refuted:
        _print_witness(net, res.witness, problem.d_out)
    elif res.reason:
        print(f"reason: {res.reason}")
    _write_report(args.report, doc)
    return {Verdict.PROVEN: EXIT_PROVEN, Verdict.REFUTED: EXIT_REFUTED}.get(res.verdict,
                                                                          EXIT_UNKNOWN)


def cmd_reverify(args) -> int:
    net = load_network(args.network)
    artifact = load_artifact(args.artifact)
    d_in = parse_box(args.d_in) if args.d_in else artifact.d_in
    d_out = parse_box(args.d_out) if args.d_out else artifact.d_out
    problem = VerificationProblem(net, d_in, d_out)
    strategy = args.strategy.split(",") if args.strategy else None
    cuts = parse_int_list(args.cuts) if args.cuts else None
    try:
        outcome = reverify(problem, artifact, strategy, _budget(args), mode=args.mode, cuts=cuts,
                           kappa=args.kappa, workers=args.workers,
                           sound_margin=args.sound_margin, norm=args.norm)
    except ArtifactError:
        raise
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"verdict: {outcome.verdict.value}")
    print(f"mechanism: {outcome.mechanism}")
    n_checks = len(outcome.subproblem_stats)
    print(f"checks run: {n_checks}")
    if outcome.ratio is not None:
        print(f"time: {outcome.reuse_time:.5f}s vs full {outcome.full_time_estimate:.5f}s "
              f"({100 * outcome.ratio:.2f}%)")
    if outcome.witness is not None:
        _print_witness(net, outcome.witness, d_out)
    if outcome.mechanism == "Full" and outcome.artifact is not None:
        path = args.out_artifact or args.network.with_suffix(".proof.json")
        save_artifact(outcome.artifact, path)
        print(f"artifact: {path}")
    _write_report(args.report, outcome.report())
    if outcome.proven:
        return EXIT_PROVEN
    return EXIT_REFUTED if outcome.verdict is Outcome.REFUTED else EXIT_UNKNOWN


def run_bench(args) -> int:
    try:
        spec = BenchSpec(args.layers, args.width, args.input_dim, args.seed, args.variants,
                         args.perturb, args.enlarge, args.output_margin, args.abstraction_target)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = cmd_bench(spec, _budget(args), args.mode or SYMBOLIC, args.workers, args.repeats,
                       args.strategy.split(",") if args.strategy else None,
                       parse_int_list(args.cuts) if args.cuts else None, args.report)
    print(report.table())
    if any(r.verdict == Outcome.REFUTED.value for r in report.rows):
        return EXIT_REFUTED
    return EXIT_PROVEN if all(r.verdict.startswith("Proven") for r in report.rows) \
        else EXIT_UNKNOWN


def cmd_inspect(args) -> int:
    net = load_network(args.network) if args.network else None
    art = load_artifact(args.artifact, net)
    sa = art.state_abs
    print(f"problem hash: {art.problem_hash}")
    print(f"network hash: {art.network_hash}")
    print(f"tool version: {art.tool_version}")
    print(f"d_in:  {art.d_in}")
    print(f"d_out: {art.d_out}")
    print(f"mode: {sa.mode}, chain certified from S_{sa.chain_start}")
    for k, box in enumerate(sa.boxes, start=1):
        print(f"  S_{k}: width {box.dim:>4}  volume {box.volume():.6g}")
    print(f"S_n inside d_out: {box_contains(art.d_out, sa.output_box)}")
    if art.lipschitz:
        print(f"lipschitz: {art.lipschitz.value:.6g} ({art.lipschitz.norm})")
    else:
        print("lipschitz: none")
    if art.net_abs:
        a = art.net_abs
        print(f"network abstraction: widths {a.widths()}, margin {a.margin:g}, "
              f"proven {a.proven}")
    else:
        print("network abstraction: none")
    for phase, t in sorted(art.timings.items()):
        print(f"timing {phase}: {t:.5f}s")
    if net is not None:
        print("chain re-checked against the network: ok")
    return EXIT_PROVEN


COMMANDS = {"verify": cmd_verify, "reverify": cmd_reverify, "bench": run_bench,
            "inspect": cmd_inspect}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, NetworkFormatError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logging.getLogger(__name__).exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
