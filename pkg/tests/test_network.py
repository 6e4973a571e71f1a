import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pagerank_linear_solve
from riskbench.network import (
    ConvergenceError, DailyContactGraph, WardTransferGraph, build_daily_graphs, build_ward_graph, closeness,
    compute_network_features, degree, episode_network_features, exposure_flags, pagerank, ward_sequence,
)
from riskbench.records import BedDayRecord, Episode

D = dt.date(2020, 3, 1)


def day(offset):
    return D + dt.timedelta(days=offset)


def graph(**wards):
    return DailyContactGraph(D, {w: tuple(m) for w, m in wards.items()})


class TestDailyGraphs:
    def test_shared_ward_makes_edge(self):
        (g,) = build_daily_graphs([BedDayRecord("A", "e1", "W", D), BedDayRecord("B", "e2", "W", D)])
        assert g.edges == {("A", "B")}

    def test_different_wards_no_edge(self):
        (g,) = build_daily_graphs([BedDayRecord("A", "e1", "W1", D), BedDayRecord("B", "e2", "W2", D)])
        assert g.edges == frozenset()
        assert g.nodes == ("A", "B")

    def test_three_in_a_ward_is_a_triangle(self):
        g = graph(W=["A", "B", "C"])
        assert len(g.edges) == 3
        assert all(degree(g, n) == 2 for n in g.nodes)

    def test_one_graph_per_day(self):
        rows = [BedDayRecord("A", "e", "W", day(i)) for i in (0, 1, 3)]
        assert [g.date for g in build_daily_graphs(rows)] == [day(0), day(1), day(3)]

    @settings(max_examples=50)
    @given(st.dictionaries(st.sampled_from("WXYZ"), st.sets(st.sampled_from("abcdefg"), min_size=1), min_size=1))
    def test_edges_symmetric_and_irreflexive(self, wards):
        g = DailyContactGraph(D, {w: tuple(sorted(m)) for w, m in wards.items()})
        for u, nbrs in g.adjacency.items():
            assert u not in nbrs
            for v in nbrs:
                assert u in g.adjacency[v]
                assert any(u in m and v in m for m in wards.values())


class TestCentrality:
    def test_star_and_isolated(self):
        star = {"c": frozenset("xyz"), "x": frozenset("c"), "y": frozenset("c"), "z": frozenset("c"), "i": frozenset()}
        assert degree(star, "c") == 3
        assert degree(star, "i") == 0
        assert closeness(star, "i") == 0.0

    def test_path_p3(self):
        p3 = {"a": frozenset("b"), "b": frozenset("ac"), "c": frozenset("b")}
        assert closeness(p3, "b") == 1.0
        assert closeness(p3, "a") == pytest.approx(2 / 3, abs=0)

    def test_unknown_node(self):
        with pytest.raises(KeyError, match="not in graph"):
            degree(graph(W=["A"]), "B")
        with pytest.raises(KeyError):
            closeness(graph(W=["A"]), "B")


class TestPageRank:
    def test_k3_uniform(self):
        k3 = WardTransferGraph(("a", "b", "c"), {(x, y): 1 for x in "abc" for y in "abc" if x != y})
        assert all(v == pytest.approx(1 / 3, abs=1e-12) for v in pagerank(k3).values())

    def test_single_node(self):
        assert pagerank(WardTransferGraph(("a",), {})) == {"a": pytest.approx(1.0, abs=1e-15)}

    def test_chain_solved(self):
        pr = pagerank(WardTransferGraph(("A", "B"), {("A", "B"): 1}))
        assert pr["A"] == pytest.approx(20 / 57, abs=1e-9)
        assert pr["B"] == pytest.approx(37 / 57, abs=1e-9)

    def test_non_convergence_carries_residual(self):
        g = WardTransferGraph(("A", "B"), {("A", "B"): 1})
        with pytest.raises(ConvergenceError) as info:
            pagerank(g, max_iter=2)
        assert info.value.residual > 1e-10

    def test_empty_graph(self):
        with pytest.raises(ValueError):
            pagerank(WardTransferGraph((), {}))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 10_000))
    def test_matches_linear_solve_and_residuals_shrink(self, n, seed):
        rng = np.random.default_rng(seed)
        nodes = tuple(f"W{i}" for i in range(n))
        weights = {(a, b): int(rng.integers(1, 9)) for a in nodes for b in nodes if a != b and rng.random() < 0.5}
        pr, residuals = pagerank(WardTransferGraph(nodes, weights), return_residuals=True)
        oracle = pagerank_linear_solve(nodes, weights)
        assert max(abs(pr[w] - oracle[w]) for w in nodes) < 1e-9
        assert all(b <= a + 1e-15 for a, b in zip(residuals, residuals[1:]))
        # relabelling the nodes in another order changes nothing
        rev = pagerank(WardTransferGraph(tuple(reversed(nodes)), dict(reversed(list(weights.items())))))
        assert max(abs(pr[w] - rev[w]) for w in nodes) < 1e-10


class TestWardGraph:
    def test_consecutive_pairs_counted(self):
        rows = [BedDayRecord("p", "e1", w, day(i)) for i, w in enumerate(["A", "A", "B", "A"])]
        rows += [BedDayRecord("q", "e2", w, day(i)) for i, w in enumerate(["A", "B"])]
        g = build_ward_graph(rows)
        assert g.weights == {("A", "B"): 2, ("B", "A"): 1}

    def test_window_cuts_late_rows(self):
        rows = [BedDayRecord("p", "e1", w, day(i)) for i, w in enumerate(["A", "B", "C"])]
        assert build_ward_graph(rows, until=day(1)).weights == {("A", "B"): 1}

    def test_same_day_transfer_keeps_previous_ward_first(self):
        rows = [BedDayRecord("p", "e", "B", day(0)), BedDayRecord("p", "e", "A", day(1)),
                BedDayRecord("p", "e", "B", day(1))]
        assert ward_sequence(rows) == ["B", "A"]


def _episode(eid, pid, start, end, ward="W"):
    return Episode(eid, pid, day(start), day(end), 50, admission_ward=ward)


class TestEpisodeFeatures:
    def test_solo_patient_is_isolated(self):
        rows = [BedDayRecord("A", "e", "W", day(i)) for i in range(3)]
        f = episode_network_features(_episode("e", "A", 0, 2), build_daily_graphs(rows), {}, {})
        assert f.episode_isolated and not f.exposed
        assert f.mean_daily_degree == f.max_daily_degree == f.total_contact_days == f.unique_contacts == 0.0

    def test_degree_aggregation(self):
        rows = [BedDayRecord("A", "e", "W", day(0)), BedDayRecord("B", "x", "W", day(0))]
        rows += [BedDayRecord("A", "e", "W", day(1))] + [BedDayRecord(p, f"x{p}", "W", day(1)) for p in "BCD"]
        f = episode_network_features(_episode("e", "A", 0, 1), build_daily_graphs(rows), {}, {})
        assert (f.mean_daily_degree, f.max_daily_degree) == (2.0, 3.0)
        assert f.total_contact_days == 4.0 and f.unique_contacts == 3.0
        assert f.mean_closeness == 1.0 and not f.episode_isolated

    def test_exposure_needs_flag_on_or_before_the_day(self):
        rows = [BedDayRecord("A", "e", "W", day(0)), BedDayRecord("B", "x", "W", day(0))]
        graphs = build_daily_graphs(rows)
        ep = _episode("e", "A", 0, 0)
        assert episode_network_features(ep, graphs, {}, {"B": day(0)}).exposed
        assert not episode_network_features(ep, graphs, {}, {"B": day(1)}).exposed

    def test_ward_centrality_of_admission_ward(self):
        rows = [BedDayRecord("A", "e", w, day(i)) for i, w in enumerate("WV")]
        feats, g, _ = compute_network_features([_episode("e", "A", 0, 1)], rows)
        assert feats["e"].ward_pagerank == pytest.approx(pagerank(g)["W"])
        assert feats["e"].ward_degree_centrality == 1.0

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 6)), min_size=1, max_size=40),
           st.lists(st.tuples(st.integers(0, 5), st.integers(0, 2), st.integers(0, 6)), max_size=10),
           st.dictionaries(st.integers(0, 5), st.integers(0, 6)))
    def test_exposure_is_monotone_in_rows(self, rows, extra, flags):
        def exposed(triples):
            triples = sorted(set(triples))
            p, w, d = (np.array(x, dtype=np.int64) for x in zip(*triples))
            flag_day = np.full(6, 10**9, dtype=np.int64)
            for k, v in flags.items():
                flag_day[k] = v
            hit = exposure_flags(p, w, d, flag_day)
            return {(int(a), int(c)) for a, c, h in zip(p, d, hit) if h}

        before = exposed(rows)
        after = exposed(rows + extra)
        assert before <= after

    def test_vectorised_exposure_agrees_with_graph_walk(self, small_corpus):
        episodes, beddays = small_corpus["episodes"], small_corpus["beddays"]
        feats, _, _ = compute_network_features(episodes, beddays)
        patients = sorted({r.patient_id for r in beddays})
        wards = sorted({r.ward_id for r in beddays})
        pi, wi = {p: i for i, p in enumerate(patients)}, {w: i for i, w in enumerate(wards)}
        origin = min(r.date for r in beddays)
        flag_day = np.full(len(patients), 10**9, dtype=np.int64)
        for e in episodes:
            if e.cpe_result == "positive" and e.patient_id in pi:
                k = pi[e.patient_id]
                flag_day[k] = min(flag_day[k], (e.admission_date - origin).days)
        hit = exposure_flags(np.array([pi[r.patient_id] for r in beddays]), np.array([wi[r.ward_id] for r in beddays]),
                             np.array([(r.date - origin).days for r in beddays]), flag_day)
        by_row = {}
        for r, h in zip(beddays, hit):
            by_row[r.episode_id] = by_row.get(r.episode_id, False) or bool(h)
        assert any(by_row.values())
        for eid, flag in by_row.items():
            assert feats[eid].exposed == flag, eid
