"""Finite scenario trees of the walk with retirement, their tilt and shadow prices.

Each internal node holds a pivot X_n at time tau_n. Its children come from
fresh continuations of the model started at (tau_n, X_n), each run until the
next exit from the pivot ball (or retirement at the horizon). Every child
keeps the piece of path between the two pivot times so the tube inequality can
be checked along it.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Protocol, Tuple

import numpy as np

from .. import parallel
from ..core import DiversityRegion, RngStream, TimeGrid
from ..errors import ConstructionError, NumericalTiltError, PreconditionError
from ..logger import get_logger
from .epsilon import epsilon_on_knots
from .hull import zero_in_interior
from .tilt import DEFAULT_BUDGET_N, DEFAULT_RETIREMENT_FLOOR, NodeTilt, tilt_node
from .walk import CROSSINGS, TUBE_TOL, first_exit

logger = get_logger(__name__)

DEFAULT_MART_TOL = 1e-10
ROOT_ID = "0"


class ScenarioModel(Protocol):
    def continue_from(
        self, start_time: float, state, grid: TimeGrid, rng: RngStream
    ) -> Tuple[np.ndarray, np.ndarray]: ...


@dataclass(frozen=True)
class TreeNode:
    node_id: str
    depth: int
    time: float
    state: np.ndarray
    eps: float
    retired: bool
    segment_times: np.ndarray
    segment_prices: np.ndarray
    segment_eps: np.ndarray
    parent: Optional[str] = None
    children: Tuple[str, ...] = ()
    tilt: Optional[NodeTilt] = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class TiltedTree:
    """Scenario tree; ``tilt`` is set on internal nodes once :func:`martingale_tilt` ran."""

    nodes: Dict[str, TreeNode]
    grid: TimeGrid
    eta: float
    region: DiversityRegion
    crossing: str = "interpolated"
    meta: Dict[str, float] = field(default_factory=dict)

    @property
    def root(self) -> TreeNode:
        return self.nodes[ROOT_ID]

    def children(self, node: TreeNode) -> List[TreeNode]:
        return [self.nodes[c] for c in node.children]

    def increments(self, node: TreeNode) -> np.ndarray:
        return np.array([child.state - node.state for child in self.children(node)])

    def internal_nodes(self) -> List[TreeNode]:
        return [node for node in self.nodes.values() if not node.is_leaf]

    def by_depth(self) -> List[List[TreeNode]]:
        levels: List[List[TreeNode]] = []
        for node in self.nodes.values():
            while len(levels) <= node.depth:
                levels.append([])
            levels[node.depth].append(node)
        return levels

    @property
    def is_tilted(self) -> bool:
        return all(node.tilt is not None for node in self.internal_nodes())


def _child_stream(rng: RngStream, node_id: str, k: int) -> RngStream:
    stream = rng
    for part in node_id.split(".")[1:]:
        stream = stream.substream(int(part))
    return stream.substream(k)


def _grow_child(model, parent: TreeNode, k: int, grid: TimeGrid, eta: float, region, crossing, rng) -> TreeNode:
    knots, prices = model.continue_from(parent.time, parent.state, grid, _child_stream(rng, parent.node_id, k))
    prices = np.asarray(prices, dtype=float)
    if prices.ndim == 1:
        prices = prices[:, None]
    eps = epsilon_on_knots(knots, prices, eta, region, carry=parent.eps)
    found = first_exit(knots, prices, eps.values, prices[0], 0, 0.0, crossing)
    last = knots.size - 1
    child_id = f"{parent.node_id}.{k}"

    if found is None or (found.on_knot and found.index == last):
        return TreeNode(
            node_id=child_id,
            depth=parent.depth + 1,
            time=float(knots[last]),
            state=parent.state.copy(),
            eps=float(eps.values[last]),
            retired=True,
            segment_times=knots,
            segment_prices=prices,
            segment_eps=eps.values,
            parent=parent.node_id,
        )

    if found.on_knot:
        stop = found.index + 1
        seg_times, seg_prices, seg_eps = knots[:stop], prices[:stop], eps.values[:stop]
        eps_at_exit = float(eps.values[found.index])
    else:
        stop = found.index
        eps_at_exit = float(eps.values[found.index - 1])
        seg_times = np.r_[knots[:stop], found.time]
        seg_prices = np.vstack([prices[:stop], found.point])
        seg_eps = np.r_[eps.values[:stop], eps_at_exit]
    return TreeNode(
        node_id=child_id,
        depth=parent.depth + 1,
        time=found.time,
        state=found.point.copy(),
        eps=eps_at_exit,
        retired=False,
        segment_times=seg_times,
        segment_prices=seg_prices,
        segment_eps=seg_eps,
        parent=parent.node_id,
    )


def build_scenario_tree(
    model: ScenarioModel,
    s0,
    eta: float,
    region: DiversityRegion,
    grid: TimeGrid,
    depth: int,
    branching: int,
    rng: RngStream,
    crossing: str = "interpolated",
    max_branching: Optional[int] = None,
) -> TiltedTree:
    """Grow a tree of walk pivots.

    Each internal node draws ``branching`` children; while zero is not in the
    interior of the hull of their increments, further children are drawn, up
    to ``max_branching`` (default 4 * branching). Child k of node ``0.i.j``
    uses substream path (i, j, k) of ``rng``.
    """
    if depth < 0 or branching < 1:
        raise PreconditionError("depth must be >= 0 and branching >= 1")
    if crossing not in CROSSINGS:
        raise PreconditionError(f"crossing must be one of {CROSSINGS}")
    max_branching = 4 * branching if max_branching is None else max(max_branching, branching)
    s0 = np.asarray(s0, dtype=float)
    if not region.contains(s0):
        raise PreconditionError("s0 must lie in O(delta)", {"s0": s0.tolist()})
    eps0 = epsilon_on_knots([0.0], s0[None, :], eta, region)
    root = TreeNode(
        node_id=ROOT_ID,
        depth=0,
        time=0.0,
        state=s0.copy(),
        eps=float(eps0.values[0]),
        retired=False,
        segment_times=eps0.times,
        segment_prices=s0[None, :],
        segment_eps=eps0.values,
    )
    nodes: Dict[str, TreeNode] = {ROOT_ID: root}
    frontier = [root]
    top_ups = 0
    for _ in range(depth):
        next_frontier: List[TreeNode] = []
        for node in frontier:
            if node.retired or node.time >= grid.horizon:
                continue
            children = [_grow_child(model, node, k, grid, eta, region, crossing, rng) for k in range(branching)]
            while len(children) < max_branching:
                increments = np.array([c.state - node.state for c in children])
                if not np.any(increments) or zero_in_interior(increments):
                    break
                children.append(_grow_child(model, node, len(children), grid, eta, region, crossing, rng))
                top_ups += 1
            for child in children:
                nodes[child.node_id] = child
            nodes[node.node_id] = replace(node, children=tuple(c.node_id for c in children))
            next_frontier.extend(c for c in children if not c.retired)
        frontier = next_frontier

    tree = TiltedTree(nodes, grid, float(eta), region, crossing, {"depth": depth, "branching": branching})
    logger.info(
        "Scenario tree built",
        extra={"extra_fields": {"nodes": len(nodes), "depth": depth, "branching": branching, "top_ups": top_ups}},
    )
    return tree


def martingale_tilt(
    tree: TiltedTree,
    retirement_mass_floor: float = DEFAULT_RETIREMENT_FLOOR,
    budget_n: int = DEFAULT_BUDGET_N,
) -> TiltedTree:
    """Tilt every internal node; nodes of one depth are solved in parallel."""
    nodes = dict(tree.nodes)
    relaxed = 0
    for level in tree.by_depth():
        internal = [node for node in level if not node.is_leaf]

        def run(indices: range) -> List[NodeTilt]:
            out = []
            for i in indices:
                node = internal[i]
                retired = np.array([c.retired for c in tree.children(node)])
                out.append(
                    tilt_node(
                        tree.increments(node),
                        retired=retired,
                        retirement_mass_floor=retirement_mass_floor,
                        budget_n=budget_n,
                    )
                )
            return out

        tilts = [t for chunk in parallel.map_chunks(run, len(internal)) for t in chunk]
        for node, tilt in zip(internal, tilts):
            nodes[node.node_id] = replace(node, tilt=tilt)
            relaxed += int(tilt.budget_relaxed)
    if relaxed:
        logger.warning(
            "Second-moment budget relaxed at some nodes",
            extra={"extra_fields": {"relaxed_nodes": relaxed, "budget_n": budget_n}},
        )
    return replace(tree, nodes=nodes)


@dataclass(frozen=True)
class ShadowPrices:
    values: Dict[str, np.ndarray]
    martingale_residuals: Dict[str, float]
    tube_slacks: Dict[str, float]

    @property
    def max_martingale_residual(self) -> float:
        return max(self.martingale_residuals.values(), default=0.0)

    @property
    def max_tube_slack(self) -> float:
        return max(self.tube_slacks.values())


def shadow_price(tree: TiltedTree, mart_tol: float = DEFAULT_MART_TOL) -> ShadowPrices:
    """Backward induction S~ = sum q S~(child), checked against the pivots and the tube."""
    if not tree.is_tilted:
        raise PreconditionError("the tree must be tilted first")
    values: Dict[str, np.ndarray] = {}
    residuals: Dict[str, float] = {}
    for level in reversed(tree.by_depth()):
        for node in level:
            if node.is_leaf:
                values[node.node_id] = node.state.copy()
                continue
            shadow = node.tilt.q @ np.array([values[c] for c in node.children])
            gap = float(np.max(np.abs(shadow - node.state)))
            residuals[node.node_id] = gap
            if gap > mart_tol * max(1.0, float(np.max(np.abs(node.state)))):
                raise NumericalTiltError(
                    f"shadow price at node {node.node_id} differs from its pivot",
                    {"node_id": node.node_id, "residual": gap},
                )
            values[node.node_id] = shadow

    slacks: Dict[str, float] = {}
    for node in tree.nodes.values():
        gaps = np.linalg.norm(node.segment_prices - values[node.node_id], axis=1) - node.segment_eps
        slacks[node.node_id] = float(gaps.max())
        if slacks[node.node_id] > TUBE_TOL * max(1.0, float(np.max(np.abs(node.segment_prices)))):
            raise ConstructionError(
                f"tube inequality violated on the segment of node {node.node_id}",
                {"node_id": node.node_id, "max_slack": slacks[node.node_id]},
            )
    return ShadowPrices(values, residuals, slacks)
