"""Proof artifacts: persistence, validation and applicability to a modified problem."""

from __future__ import annotations

import enum
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .abstraction import AbstractNetwork, AbstractSide, MergePlan
from .box import Box, box_contains
from .domains import StateAbstraction, check_dims, link_holds
from .lipschitz import LipschitzBound, lipschitz_upper_bound
from .network import Network, canonical_json, network_from_dict, sha256_hex

log = logging.getLogger(__name__)

FORMAT = 1


class ArtifactError(ValueError):
    """The artifact file is corrupt or violates an invariant; it must not be used."""


class Prop(str, enum.Enum):
    PROP1 = "Prop1"
    PROP2 = "Prop2"
    PROP3 = "Prop3"
    PROP4 = "Prop4"
    PROP5 = "Prop5"
    PROP6 = "Prop6"


SVUDC_PROPS = frozenset({Prop.PROP1, Prop.PROP2, Prop.PROP3})
SVBTV_PROPS = frozenset({Prop.PROP4, Prop.PROP5, Prop.PROP6})


def problem_hash(network_hash: str, d_in: Box, d_out: Box) -> str:
    return sha256_hex(canonical_json(
        {"network": network_hash, "d_in": d_in.to_list(), "d_out": d_out.to_list()}))


@dataclass(frozen=True, eq=False)
class ProofArtifact:
    network_hash: str
    d_in: Box
    d_out: Box
    state_abs: StateAbstraction
    lipschitz: LipschitzBound | None = None
    net_abs: AbstractNetwork | None = None
    tool_version: str = __version__
    timings: dict = field(default_factory=dict)
    verdict: str = "proven"

    @property
    def problem_hash(self) -> str:
        return problem_hash(self.network_hash, self.d_in, self.d_out)

    def validate(self, net: Network | None = None) -> None:
        """Re-check every stored invariant; with ``net`` also the chain links."""
        if self.verdict != "proven":
            raise ArtifactError("only proven problems produce artifacts")
        sa = self.state_abs
        if sa.network_hash != self.network_hash:
            raise ArtifactError("state abstraction belongs to a different network")
        if not sa.input_box == self.d_in:
            raise ArtifactError("state abstraction input box differs from d_in")
        if sa.output_box.dim != self.d_out.dim:
            raise ArtifactError("output abstraction dimension differs from d_out")
        if not box_contains(self.d_out, sa.output_box):
            raise ArtifactError("stored S_n is not contained in d_out")
        if net is not None:
            if net.digest() != self.network_hash:
                raise ArtifactError("network does not match the artifact's network hash")
            try:
                check_dims(net, sa)
            except ValueError as exc:
                raise ArtifactError(str(exc)) from exc
            first = 0 if sa.chain_start == 1 else sa.chain_start
            for i in range(first, sa.n):
                if not link_holds(net, sa, i):
                    raise ArtifactError(f"stored chain is broken at S_{i} -> S_{i + 1}")
            if self.lipschitz is not None:
                bound = lipschitz_upper_bound(net, self.lipschitz.norm).value
                if self.lipschitz.value < bound * (1.0 - 1e-12):
                    raise ArtifactError(
                        f"stored Lipschitz bound {self.lipschitz.value} is below {bound}")
        if self.net_abs is not None:
            for side in self.net_abs.sides:
                side.plan.validate()
                if side.state is None:
                    raise ArtifactError("network abstraction stored without its proof")

    def to_dict(self) -> dict:
        doc = {
            "format": FORMAT,
            "problem_hash": self.problem_hash,
            "network_hash": self.network_hash,
            "d_in": self.d_in.to_list(),
            "d_out": self.d_out.to_list(),
            "state_abs": self.state_abs.to_dict(),
            "lipschitz": self.lipschitz.to_dict() if self.lipschitz else None,
            "net_abs": _net_abs_to_dict(self.net_abs) if self.net_abs else None,
            "verdict": self.verdict,
            "tool_version": self.tool_version,
            "timings": {k: float(v) for k, v in self.timings.items()},
        }
        return doc


def _side_to_dict(side: AbstractSide) -> dict:
    return {
        "objective": side.objective,
        "network": side.network.to_dict(),
        "plan": side.plan.to_dict(),
        "first_bias_t": [float(v) for v in side.first_bias_t],
        "state": side.state.to_dict() if side.state else None,
        "lipschitz": side.lipschitz.to_dict() if side.lipschitz else None,
    }


def _side_from_dict(doc: dict) -> AbstractSide:
    return AbstractSide(
        doc["objective"], network_from_dict(doc["network"]), MergePlan.from_dict(doc["plan"]),
        np.array(doc["first_bias_t"], dtype=np.float64),
        StateAbstraction.from_dict(doc["state"]) if doc.get("state") else None,
        LipschitzBound.from_dict(doc["lipschitz"]) if doc.get("lipschitz") else None)


def _net_abs_to_dict(a: AbstractNetwork) -> dict:
    return {
        "upper": _side_to_dict(a.upper),
        "lower": _side_to_dict(a.lower),
        "source_hash": a.source_hash,
        "d_in": a.d_in.to_list(),
        "margin": float(a.margin),
        "source_widths": list(a.source_widths),
    }


def _net_abs_from_dict(doc: dict) -> AbstractNetwork:
    return AbstractNetwork(_side_from_dict(doc["upper"]), _side_from_dict(doc["lower"]),
                           doc["source_hash"], Box.from_list(doc["d_in"]), float(doc["margin"]),
                           tuple(int(w) for w in doc["source_widths"]))


def artifact_from_dict(doc: dict) -> ProofArtifact:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ArtifactError(f"unsupported artifact format {doc.get('format') if isinstance(doc, dict) else doc!r}")
    try:
        art = ProofArtifact(
            network_hash=doc["network_hash"],
            d_in=Box.from_list(doc["d_in"]),
            d_out=Box.from_list(doc["d_out"]),
            state_abs=StateAbstraction.from_dict(doc["state_abs"]),
            lipschitz=LipschitzBound.from_dict(doc["lipschitz"]) if doc.get("lipschitz") else None,
            net_abs=_net_abs_from_dict(doc["net_abs"]) if doc.get("net_abs") else None,
            tool_version=doc.get("tool_version", ""),
            timings=dict(doc.get("timings", {})),
            verdict=doc.get("verdict", ""),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ArtifactError(f"corrupt artifact: {exc}") from exc
    if doc.get("problem_hash") != art.problem_hash:
        raise ArtifactError("problem hash does not match the stored network hash and domains")
    return art


def dumps_artifact(artifact: ProofArtifact) -> str:
    return json.dumps(artifact.to_dict(), sort_keys=True, indent=1, allow_nan=False) + "\n"


def save_artifact(artifact: ProofArtifact, path) -> None:
    """Validate and write atomically (temp file in the same directory, then rename)."""
    artifact.validate()
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name, suffix=".tmp", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(dumps_artifact(artifact))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def loads_artifact(text: str, net: Network | None = None) -> ProofArtifact:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"corrupt artifact: line {exc.lineno}: {exc.msg}") from exc
    art = artifact_from_dict(doc)
    try:
        art.validate(net)
    except ValueError as exc:
        raise ArtifactError(str(exc)) from exc
    return art


def load_artifact(path, net: Network | None = None) -> ProofArtifact:
    """Load and fully re-validate; pass the original network to also re-check the chain."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ArtifactError(f"corrupt artifact: {exc}") from exc
    return loads_artifact(text, net)


@dataclass(frozen=True)
class Applicability:
    props: frozenset
    change: str  # "none", "domain", "network", "network+domain", "d_out"
    enlarged: Box | None = None
    network_changed: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def already_proven(self) -> bool:
        return self.change == "none"


def artifact_applicability(artifact: ProofArtifact, network: Network, d_in: Box,
                           d_out: Box) -> Applicability:
    """Classify how the new problem differs from the proven one.

    The new input set is handled through ``hull(old d_in, new d_in)`` so the
    reuse checks always see an enlargement of the proven domain.
    """
    if d_in.dim != artifact.d_in.dim or d_out.dim != artifact.d_out.dim:
        raise ValueError("artifact and new problem have different dimensions")
    if network.input_dim != artifact.d_in.dim or network.output_dim != artifact.d_out.dim:
        raise ValueError("network dimensions do not match the artifact")
    if not d_out == artifact.d_out:
        return Applicability(frozenset(), "d_out")
    same_net = network.digest() == artifact.network_hash
    enlarged = artifact.d_in.hull(d_in)
    grown = not box_contains(artifact.d_in, d_in)
    if same_net:
        if not grown:
            return Applicability(frozenset(), "none", artifact.d_in)
        return Applicability(SVUDC_PROPS, "domain", enlarged)
    warnings = []
    props = set(SVBTV_PROPS)
    if artifact.net_abs is None:
        props.discard(Prop.PROP6)
    elif artifact.net_abs.source_hash != artifact.network_hash:
        props.discard(Prop.PROP6)
        warnings.append("network abstraction was built for a different network; Prop6 disabled")
    if [b.dim for b in artifact.state_abs.boxes] != network.widths:
        raise ValueError("modified network has a different architecture than the artifact")
    change = "network+domain" if grown else "network"
    return Applicability(frozenset(props), change, enlarged if grown else artifact.d_in, True,
                         tuple(warnings))
