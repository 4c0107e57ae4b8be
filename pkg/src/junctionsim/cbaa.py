"""Consensus-based auction for ordering vehicles at a shared collision point.

Each of the S participating agents keeps a winners vector and a bids vector
of length S.  A synchronous round has two phases: every agent bids itself
into its own copy (phase 1), then folds in the vectors received from its
in-neighbors by positionwise maximum (phase 2).  On a fully connected
graph the vectors converge, within S rounds, to all agents sorted by
descending bid.

Winner slots hold an explicit EMPTY marker (None) rather than a reserved
agent id, so ids are unconstrained positive integers.  Ties on equal bids
resolve to the lowest agent id, which keeps every run deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

logger = logging.getLogger(__name__)

EMPTY = None


@dataclass(frozen=True)
class AuctionVectors:
    """One agent's view of the auction: winner ids and their bids per slot."""

    winners: tuple[Optional[int], ...]
    bids: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.winners) != len(self.bids):
            raise ValueError("winners and bids must have equal length")
        for w, b in zip(self.winners, self.bids):
            if (w is EMPTY) != (b == 0.0):
                raise ValueError(f"slot pairing broken: winner={w} bid={b}")
            if b < 0.0:
                raise ValueError(f"negative bid {b}")
        filled = [w for w in self.winners if w is not EMPTY]
        if len(filled) != len(set(filled)):
            raise ValueError(f"duplicate winner in {self.winners}")

    @staticmethod
    def blank(size: int) -> "AuctionVectors":
        return AuctionVectors((EMPTY,) * size, (0.0,) * size)

    def is_complete(self) -> bool:
        return all(w is not EMPTY for w in self.winners)


@dataclass(frozen=True)
class CommGraph:
    """Directed communication graph with self-loops on every node."""

    nodes: frozenset[int]
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        for i, j in self.edges:
            if i not in self.nodes or j not in self.nodes:
                raise ValueError(f"edge ({i}, {j}) references unknown node")

    @staticmethod
    def complete(nodes: Iterable[int]) -> "CommGraph":
        ns = frozenset(nodes)
        return CommGraph(ns, frozenset((i, j) for i in ns for j in ns))

    def in_neighbors(self, node: int) -> set[int]:
        got = {i for i, j in self.edges if j == node}
        got.add(node)  # an agent always sees its own vectors
        return got

    def is_complete(self) -> bool:
        n = len(self.nodes)
        want = {(i, j) for i in self.nodes for j in self.nodes if i != j}
        return want <= self.edges


def phase1_bid(self_id: int, bid: float, vecs: AuctionVectors) -> AuctionVectors:
    """Bidding phase for one agent.

    If the agent already appears in the winners vector, nothing changes.
    Otherwise it overwrites the first slot whose recorded bid its own bid
    beats (strictly); with no beatable slot the vectors stay as they are.
    """
    if bid <= 0.0:
        raise ValueError(f"bid must be positive, got {bid}")
    if self_id in vecs.winners:
        return vecs
    for j, held in enumerate(vecs.bids):
        if bid > held:
            winners = list(vecs.winners)
            bids = list(vecs.bids)
            winners[j] = self_id
            bids[j] = bid
            return AuctionVectors(tuple(winners), tuple(bids))
    return vecs


def phase2_update(
    mine: AuctionVectors, received: Iterable[AuctionVectors], round_index: int
) -> AuctionVectors:
    """Consensus phase for one agent after round_index rounds (1-based).

    For each of the first round_index slots, adopt the highest received bid
    and that sender's recorded winner; later slots are left untouched since
    they cannot be settled yet.  Equal bids resolve to the lowest winner id.
    """
    vecs = list(received)
    if not vecs:
        raise ValueError("received must be nonempty (it includes the agent's own vectors)")
    size = len(mine.winners)
    upto = min(round_index, size)
    winners = list(mine.winners)
    bids = list(mine.bids)
    for j in range(upto):
        best = max(v.bids[j] for v in vecs)
        if best == 0.0:
            winners[j], bids[j] = EMPTY, 0.0
            continue
        cands = [v.winners[j] for v in vecs if v.bids[j] == best]
        winners[j], bids[j] = min(cands), best
    return AuctionVectors(tuple(winners), tuple(bids))


def _check_bids(bids: Mapping[int, float]) -> list[int]:
    if not bids:
        raise ValueError("auction needs at least one agent")
    for i, b in bids.items():
        if not (isinstance(i, int) and i > 0):
            raise ValueError(f"agent ids must be positive integers, got {i!r}")
        if b <= 0.0:
            raise ValueError(f"agent {i} has non-positive bid {b}")
    if len(set(bids.values())) != len(bids):
        logger.warning("auction bids are not distinct; ties break to the lowest id")
    return sorted(bids)


def run_auction_rounds(
    bids: Mapping[int, float],
    graph: CommGraph | None = None,
    force_general: bool = False,
) -> list[dict[int, AuctionVectors]]:
    """Run S synchronous rounds; return each agent's vectors after every round.

    On a complete graph every agent receives the same message set, so the
    consensus result of a round is computed once and shared; the general
    per-agent exchange (force_general, or any non-complete graph) produces
    identical results there and is kept for inspection and cross-checks.
    """
    agents = _check_bids(bids)
    size = len(agents)
    if graph is None:
        graph = CommGraph.complete(agents)
    if graph.nodes != set(agents):
        raise ValueError("graph nodes must match the bidding agents")

    rounds: list[dict[int, AuctionVectors]] = []
    if graph.is_complete() and not force_general:
        shared = AuctionVectors.blank(size)
        for r in range(1, size + 1):
            sent = [phase1_bid(i, bids[i], shared) for i in agents]
            shared = phase2_update(sent[0], sent, r)
            rounds.append({i: shared for i in agents})
        return rounds

    state = {i: AuctionVectors.blank(size) for i in agents}
    neigh = {i: sorted(graph.in_neighbors(i)) for i in agents}
    for r in range(1, size + 1):
        sent = {i: phase1_bid(i, bids[i], state[i]) for i in agents}
        state = {
            i: phase2_update(sent[i], [sent[h] for h in neigh[i]], r) for i in agents
        }
        rounds.append(dict(state))
    return rounds


def run_auction(
    bids: Mapping[int, float], graph: CommGraph | None = None
) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Auction the agents; return the agreed (winners, bids) ordering.

    On a fully connected graph this equals the agents sorted by descending
    bid (ties to the lowest id).  On sparser graphs consensus may not be
    reached within S rounds; that raises, and run_auction_rounds is the
    tool for inspecting such runs.
    """
    rounds = run_auction_rounds(bids, graph)
    final = rounds[-1]
    vecs = set(final.values())
    if len(vecs) != 1:
        raise ValueError(
            "agents did not agree within S rounds (graph not fully connected?); "
            "use run_auction_rounds to inspect"
        )
    result = next(iter(vecs))
    if not result.is_complete():
        raise ValueError("auction ended with unfilled slots")
    return tuple(w for w in result.winners), result.bids
