"""Auction rounds, consensus behavior, and ordering equivalence."""

import numpy as np
import pytest

from junctionsim import cbaa


def test_phase1_bids_into_first_beatable_slot():
    vecs = cbaa.AuctionVectors((2, None, None), (5.0, 0.0, 0.0))
    out = cbaa.phase1_bid(7, 3.0, vecs)
    assert out.winners == (2, 7, None)
    assert out.bids == (5.0, 3.0, 0.0)
    # A bid beating the leader takes the first slot instead.
    out = cbaa.phase1_bid(7, 9.0, vecs)
    assert out.winners == (7, None, None)
    assert out.bids == (9.0, 0.0, 0.0)


def test_phase1_idempotent_once_placed():
    vecs = cbaa.AuctionVectors((4, None), (2.0, 0.0))
    assert cbaa.phase1_bid(4, 2.0, vecs) is vecs


def test_phase1_rejects_bad_bids():
    vecs = cbaa.AuctionVectors.blank(2)
    with pytest.raises(ValueError):
        cbaa.phase1_bid(1, 0.0, vecs)


def test_phase2_adopts_highest_and_breaks_ties_low():
    a = cbaa.AuctionVectors((1, None), (4.0, 0.0))
    b = cbaa.AuctionVectors((2, None), (4.0, 0.0))
    merged = cbaa.phase2_update(a, [a, b], round_index=1)
    assert merged.winners[0] == 1
    # Slots beyond the round index stay untouched.
    c = cbaa.AuctionVectors((3, 1), (9.0, 8.0))
    merged = cbaa.phase2_update(a, [a, c], round_index=1)
    assert merged.winners == (3, None)


def test_vector_invariants():
    with pytest.raises(ValueError):
        cbaa.AuctionVectors((1, None), (0.0, 0.0))
    with pytest.raises(ValueError):
        cbaa.AuctionVectors((None, 2), (1.0, 0.0))
    with pytest.raises(ValueError):
        cbaa.AuctionVectors((3, 3), (2.0, 1.0))


def test_run_auction_matches_descending_sort():
    rng = np.random.default_rng(17)
    for _ in range(200):
        size = int(rng.integers(2, 12))
        ids = list(rng.choice(np.arange(1, 200), size=size, replace=False))
        values = rng.uniform(0.1, 10.0, size=size)
        bids = {int(i): float(b) for i, b in zip(ids, values)}
        winners, won_bids = cbaa.run_auction(bids)
        order = sorted(bids, key=lambda i: -bids[i])
        assert list(winners) == order
        assert list(won_bids) == [bids[i] for i in order]


def test_agents_agree_within_size_rounds():
    rng = np.random.default_rng(19)
    bids = {int(i): float(b) for i, b in zip(range(1, 9), rng.uniform(1, 5, 8))}
    rounds = cbaa.run_auction_rounds(bids, force_general=True)
    assert len(rounds) == len(bids)
    final = rounds[-1]
    assert len(set(final.values())) == 1
    assert next(iter(final.values())).is_complete()


def test_general_exchange_matches_fast_path():
    rng = np.random.default_rng(21)
    for _ in range(25):
        size = int(rng.integers(2, 9))
        bids = {
            int(i): float(b)
            for i, b in zip(
                rng.choice(np.arange(1, 60), size=size, replace=False),
                rng.uniform(0.5, 8.0, size=size),
            )
        }
        fast = cbaa.run_auction_rounds(bids)
        general = cbaa.run_auction_rounds(bids, force_general=True)
        for r in range(size):
            for agent in bids:
                assert fast[r][agent] == general[r][agent]


def test_tie_bids_resolve_to_lowest_id():
    winners, _ = cbaa.run_auction({3: 2.0, 9: 2.0, 5: 2.0})
    assert winners == (3, 5, 9)


def test_single_agent():
    winners, bids = cbaa.run_auction({12: 1.5})
    assert winners == (12,)
    assert bids == (1.5,)


def test_incomplete_graph_raises_on_disagreement():
    # A directed chain: 1 -> 2 -> 3 with no return edges.  Agent 1 never
    # hears about agent 3's bid, so the vectors cannot agree.
    nodes = frozenset({1, 2, 3})
    edges = frozenset({(1, 2), (2, 3)})
    graph = cbaa.CommGraph(nodes, edges)
    bids = {1: 1.0, 2: 2.0, 3: 3.0}
    with pytest.raises(ValueError, match="did not agree"):
        cbaa.run_auction(bids, graph)


def test_input_validation():
    with pytest.raises(ValueError):
        cbaa.run_auction({})
    with pytest.raises(ValueError):
        cbaa.run_auction({-1: 2.0})
    with pytest.raises(ValueError):
        cbaa.run_auction({1: -2.0})
    with pytest.raises(ValueError):
        cbaa.run_auction({1: 1.0, 2: 2.0}, cbaa.CommGraph.complete([1, 3]))
