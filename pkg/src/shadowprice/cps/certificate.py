"""Consistent-price-system certificates and their text format.

A certificate lists, per node, the pivot, the shadow value, the tilted and
original weights and the checked bounds. It is written as INI sections, one
``[certificate]`` header and one ``[node <id>]`` section per node, with every
float in ``repr`` form so that parsing gives back the identical values.
"""

import configparser
import io
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from ..core import DiversityRegion, PathEnsemble
from ..errors import CertificateFailedError, DomainError
from ..logger import get_logger
from .epsilon import build_epsilon
from .tree import ShadowPrices, TiltedTree, shadow_price
from .walk import TUBE_TOL, retirement_walk, tube_check

logger = get_logger(__name__)

RATIO_TOL = 1e-12
SCHEMA_VERSION = "1"


@dataclass
class NodeRecord:
    node_id: str
    depth: int
    time: float
    pivot: np.ndarray
    shadow: np.ndarray
    q: np.ndarray
    p: np.ndarray
    mart_residual: float
    tube_slack: float
    ratio_min: float
    ratio_max: float
    in_region: bool

    def violations(self, eta: float) -> List[str]:
        found = []
        if self.ratio_min < 1.0 / (1.0 + eta) - RATIO_TOL:
            found.append("ratio below 1/(1+eta)")
        if self.ratio_max > 1.0 + eta + RATIO_TOL:
            found.append("ratio above 1+eta")
        if not self.in_region:
            found.append("shadow price outside O(delta)")
        if self.tube_slack > TUBE_TOL * max(1.0, float(np.max(np.abs(self.pivot)))):
            found.append("tube inequality violated")
        return found


@dataclass
class Certificate:
    status: str
    source: str
    eta: float
    delta: float
    nodes: List[NodeRecord] = field(default_factory=list)
    failed_node: Optional[str] = None

    @property
    def max_mart_residual(self) -> float:
        return max((r.mart_residual for r in self.nodes), default=0.0)

    @property
    def max_tube_slack(self) -> float:
        return max((r.tube_slack for r in self.nodes), default=-np.inf)

    @property
    def ratio_range(self):
        return min(r.ratio_min for r in self.nodes), max(r.ratio_max for r in self.nodes)

    def summary(self) -> dict:
        low, high = self.ratio_range
        return {
            "status": self.status,
            "source": self.source,
            "eta": self.eta,
            "delta": self.delta,
            "n_nodes": len(self.nodes),
            "max_mart_residual": self.max_mart_residual,
            "max_tube_slack": self.max_tube_slack,
            "ratio_min": low,
            "ratio_max": high,
            "ratio_bounds": [1.0 / (1.0 + self.eta), 1.0 + self.eta],
            "failed_node": self.failed_node,
        }

    def dumps(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser["certificate"] = {
            "schema_version": SCHEMA_VERSION,
            "status": self.status,
            "source": self.source,
            "eta": repr(float(self.eta)),
            "delta": repr(float(self.delta)),
            "n_nodes": str(len(self.nodes)),
            "failed_node": self.failed_node or "",
        }
        for r in self.nodes:
            parser[f"node {r.node_id}"] = {
                "depth": str(r.depth),
                "time": _fmt(r.time),
                "pivot": _fmt_array(r.pivot),
                "shadow": _fmt_array(r.shadow),
                "q": _fmt_array(r.q),
                "p": _fmt_array(r.p),
                "mart_residual": _fmt(r.mart_residual),
                "tube_slack": _fmt(r.tube_slack),
                "ratio_min": _fmt(r.ratio_min),
                "ratio_max": _fmt(r.ratio_max),
                "in_region": "true" if r.in_region else "false",
            }
        buffer = io.StringIO()
        parser.write(buffer)
        return buffer.getvalue()

    @classmethod
    def loads(cls, text: str) -> "Certificate":
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(text)
        head = parser["certificate"]
        nodes = []
        for section in parser.sections():
            if not section.startswith("node "):
                continue
            s = parser[section]
            nodes.append(
                NodeRecord(
                    node_id=section[len("node "):],
                    depth=int(s["depth"]),
                    time=float(s["time"]),
                    pivot=_parse_array(s["pivot"]),
                    shadow=_parse_array(s["shadow"]),
                    q=_parse_array(s["q"]),
                    p=_parse_array(s["p"]),
                    mart_residual=float(s["mart_residual"]),
                    tube_slack=float(s["tube_slack"]),
                    ratio_min=float(s["ratio_min"]),
                    ratio_max=float(s["ratio_max"]),
                    in_region=s.getboolean("in_region"),
                )
            )
        return cls(
            status=head["status"],
            source=head["source"],
            eta=float(head["eta"]),
            delta=float(head["delta"]),
            nodes=nodes,
            failed_node=head.get("failed_node") or None,
        )


def _fmt(value: float) -> str:
    return repr(float(value))


def _fmt_array(values) -> str:
    return " ".join(repr(float(v)) for v in np.ravel(values))


def _parse_array(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split()], dtype=float)


def _ratios(shadow: np.ndarray, prices: np.ndarray):
    ratio = shadow[None, :] / np.atleast_2d(prices)
    return float(ratio.min()), float(ratio.max())


def _tree_records(tree: TiltedTree, shadows: ShadowPrices, region: DiversityRegion) -> List[NodeRecord]:
    records = []
    for node in tree.nodes.values():
        shadow = shadows.values[node.node_id]
        low, high = _ratios(shadow, node.segment_prices)
        tilt = node.tilt
        records.append(
            NodeRecord(
                node_id=node.node_id,
                depth=node.depth,
                time=node.time,
                pivot=node.state,
                shadow=shadow,
                q=tilt.q if tilt is not None else np.zeros(0),
                p=tilt.p if tilt is not None else np.zeros(0),
                mart_residual=tilt.martingale_residual if tilt is not None else 0.0,
                tube_slack=shadows.tube_slacks[node.node_id],
                ratio_min=low,
                ratio_max=high,
                in_region=region.contains(shadow),
            )
        )
    return records


def _ensemble_records(ensemble: PathEnsemble, eta: float, region: DiversityRegion, crossing: str) -> List[NodeRecord]:
    records = []
    for i, path in enumerate(ensemble):
        eps = build_epsilon(path, eta, region)
        walk = retirement_walk(path, eps, crossing)
        report = tube_check(path, eps, walk, raise_on_failure=False)
        # pathwise shadow candidate at t_k: X_{n+1} for the last n with tau_n <= t_k
        steps = np.searchsorted(walk.pivot_indices, np.arange(path.grid.steps + 1), side="right")
        candidate = walk.pivots[np.minimum(steps, walk.n_steps)]
        ratio = candidate / path.values
        inside = bool(region.contains_rows(candidate).all())
        records.append(
            NodeRecord(
                node_id=f"path-{i}",
                depth=walk.n_steps,
                time=path.grid.horizon,
                pivot=walk.pivots[-1],
                shadow=candidate[-1],
                q=np.zeros(0),
                p=np.zeros(0),
                mart_residual=0.0,
                tube_slack=report.max_slack,
                ratio_min=float(ratio.min()),
                ratio_max=float(ratio.max()),
                in_region=inside,
            )
        )
    return records


def cps_certificate(
    source: Union[TiltedTree, PathEnsemble],
    eta: float,
    region: Optional[DiversityRegion] = None,
    shadows: Optional[ShadowPrices] = None,
    crossing: str = "interpolated",
    raise_on_failure: bool = True,
) -> Certificate:
    """Check 1/(1+eta) <= S~_i/S_i <= 1+eta and S~ in O(delta) node by node."""
    if not np.isfinite(eta) or eta <= 0:
        raise DomainError(f"eta must be positive, got {eta}")
    if isinstance(source, TiltedTree):
        region = region or source.region
        records = _tree_records(source, shadows or shadow_price(source), region)
        kind = "tree"
    else:
        if region is None:
            raise DomainError("a region is required to certify a path ensemble")
        records = _ensemble_records(source, eta, region, crossing)
        kind = "ensemble"

    certificate = Certificate("certified", kind, float(eta), region.delta, records)
    for record in records:
        problems = record.violations(eta)
        if problems:
            certificate.status = "failed"
            certificate.failed_node = record.node_id
            logger.error(
                "Certificate failed",
                extra={"extra_fields": {"node_id": record.node_id, "violations": problems}},
            )
            if raise_on_failure:
                raise CertificateFailedError(
                    record.node_id,
                    f"node {record.node_id}: {', '.join(problems)}",
                    {
                        "ratio_min": record.ratio_min,
                        "ratio_max": record.ratio_max,
                        "in_region": record.in_region,
                        "tube_slack": record.tube_slack,
                    },
                )
            break
    return certificate
