"""Ward-level patient contact networks and ward-transfer centralities."""

from __future__ import annotations

import csv
import datetime as dt
import io
from collections import defaultdict, deque
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .records import BedDayRecord, Episode


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class DailyContactGraph:
    """Patients present on one day; an edge joins two patients sharing a ward."""

    date: dt.date
    wards: Mapping[str, tuple[str, ...]]
    adjacency: Mapping[str, frozenset[str]] = field(repr=False, default=None)

    def __post_init__(self):
        if self.adjacency is None:
            adj: dict[str, set] = defaultdict(set)
            for members in self.wards.values():
                for p in members:
                    adj[p].update(members)
            object.__setattr__(
                self, "adjacency", {p: frozenset(n - {p}) for p, n in adj.items()}
            )

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(sorted(self.adjacency))

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return frozenset(
            (u, v) for u, nbrs in self.adjacency.items() for v in nbrs if u < v
        )

    def edge_wards(self):
        """Yield ``(u, v, ward)`` for every ward-level co-location, u < v."""
        for ward in sorted(self.wards):
            for u, v in combinations(sorted(self.wards[ward]), 2):
                yield u, v, ward


def build_daily_graphs(beddays: Iterable[BedDayRecord]) -> list[DailyContactGraph]:
    by_day: dict[dt.date, dict[str, set]] = defaultdict(lambda: defaultdict(set))
    for r in beddays:
        by_day[r.date][r.ward_id].add(r.patient_id)
    return [
        DailyContactGraph(day, {w: tuple(sorted(ps)) for w, ps in by_day[day].items()})
        for day in sorted(by_day)
    ]


def _neighbours(graph, node):
    adj = graph.adjacency if isinstance(graph, DailyContactGraph) else graph
    try:
        return adj[node]
    except KeyError:
        raise KeyError(f"node {node!r} not in graph") from None


def degree(graph, node) -> int:
    return len(_neighbours(graph, node))


def bfs_distances(graph, source) -> dict:
    adj = graph.adjacency if isinstance(graph, DailyContactGraph) else graph
    _neighbours(graph, source)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def closeness(graph, node) -> float:
    """(k - 1) / sum of distances inside the node's component; 0 when isolated.

    ``graph`` is a :class:`DailyContactGraph` or a plain adjacency mapping.
    """
    dist = bfs_distances(graph, node)
    total = sum(dist.values())
    if total == 0:
        return 0.0
    return (len(dist) - 1) / total


def daily_node_stats(graph: DailyContactGraph) -> dict[str, tuple[int, float]]:
    """Degree and closeness of every node on one day.

    Components that are a single ward are cliques, so closeness is 1 there;
    BFS only runs on components bridged by a patient seen in two wards.
    """
    ward_of: dict[str, list] = defaultdict(list)
    for w, members in graph.wards.items():
        for p in members:
            ward_of[p].append(w)
    parent = {w: w for w in graph.wards}

    def find(w):
        while parent[w] != w:
            parent[w] = parent[parent[w]]
            w = parent[w]
        return w

    for wards in ward_of.values():
        for w in wards[1:]:
            a, b = find(wards[0]), find(w)
            if a != b:
                parent[max(a, b)] = min(a, b)
    comp_wards: dict[str, list] = defaultdict(list)
    for w in graph.wards:
        comp_wards[find(w)].append(w)

    stats = {}
    for wards in comp_wards.values():
        members = set().union(*(graph.wards[w] for w in wards))
        if len(wards) == 1:
            c = 1.0 if len(members) > 1 else 0.0
            for p in members:
                stats[p] = (len(members) - 1, c)
        else:
            for p in members:
                stats[p] = (degree(graph, p), closeness(graph, p))
    return stats


# ---------------------------------------------------------------------------
# ward-transfer graph


@dataclass(frozen=True)
class WardTransferGraph:
    nodes: tuple[str, ...]
    weights: Mapping[tuple[str, str], int]

    def out_weight(self, ward):
        return sum(w for (a, _), w in self.weights.items() if a == ward)

    def undirected_adjacency(self) -> dict[str, frozenset[str]]:
        adj = {n: set() for n in self.nodes}
        for a, b in self.weights:
            if a != b:
                adj[a].add(b)
                adj[b].add(a)
        return {n: frozenset(s) for n, s in adj.items()}


def ward_sequence(rows: Sequence[BedDayRecord]) -> list[str]:
    """Ward runs of one episode in date order, consecutive repeats collapsed.

    On a day with several wards the ward held the day before comes first.
    """
    by_day: dict[dt.date, set] = defaultdict(set)
    for r in rows:
        by_day[r.date].add(r.ward_id)
    seq: list[str] = []
    for day in sorted(by_day):
        wards = sorted(by_day[day])
        if seq and seq[-1] in by_day[day]:
            wards.remove(seq[-1])
            wards.insert(0, seq[-1])
        for w in wards:
            if not seq or seq[-1] != w:
                seq.append(w)
    return seq


def rows_by_episode(beddays: Iterable[BedDayRecord]) -> dict[str, list[BedDayRecord]]:
    out: dict[str, list] = defaultdict(list)
    for r in beddays:
        out[r.episode_id].append(r)
    return out


def build_ward_graph(beddays: Iterable[BedDayRecord], until: dt.date | None = None) -> WardTransferGraph:
    """Count consecutive ward pairs within episodes, using rows dated <= ``until``."""
    rows = [r for r in beddays if until is None or r.date <= until]
    weights: dict[tuple[str, str], int] = defaultdict(int)
    nodes = {r.ward_id for r in rows}
    for ep_rows in rows_by_episode(rows).values():
        seq = ward_sequence(ep_rows)
        for a, b in zip(seq, seq[1:]):
            weights[(a, b)] += 1
    return WardTransferGraph(tuple(sorted(nodes)), dict(sorted(weights.items())))


def pagerank(graph: WardTransferGraph, damping=0.85, tol=1e-10, max_iter=200, return_residuals=False):
    """Weighted PageRank by power iteration; dangling mass spreads uniformly.

    Raises :class:`ConvergenceError` when the L1 residual is still above
    ``tol`` after ``max_iter`` iterations.
    """
    nodes = list(graph.nodes)
    n = len(nodes)
    if n == 0:
        raise ValueError("pagerank needs at least one node")
    idx = {w: i for i, w in enumerate(nodes)}
    T = np.zeros((n, n))
    for (a, b), w in graph.weights.items():
        T[idx[a], idx[b]] += w
    out = T.sum(axis=1)
    dangling = out == 0
    T[~dangling] /= out[~dangling, None]
    r = np.full(n, 1.0 / n)
    residuals = []
    for _ in range(max_iter):
        nxt = damping * (r @ T + r[dangling].sum() / n) + (1.0 - damping) / n
        nxt /= nxt.sum()
        res = float(np.abs(nxt - r).sum())
        residuals.append(res)
        r = nxt
        if res < tol:
            break
    else:
        raise ConvergenceError(f"pagerank did not converge in {max_iter} iterations", residuals[-1])
    ranks = {w: float(r[idx[w]]) for w in nodes}
    return (ranks, residuals) if return_residuals else ranks


def ward_centralities(graph: WardTransferGraph, damping=0.85) -> dict[str, dict[str, float]]:
    """PageRank, degree centrality and closeness for every ward."""
    n = len(graph.nodes)
    if n == 0:
        return {}
    pr = pagerank(graph, damping=damping)
    adj = graph.undirected_adjacency()
    norm = max(n - 1, 1)
    return {
        w: {
            "pagerank": pr[w],
            "degree_centrality": len(adj[w]) / norm,
            "closeness_centrality": closeness(adj, w),
        }
        for w in graph.nodes
    }


# ---------------------------------------------------------------------------
# per-episode features


@dataclass(frozen=True)
class NetworkFeatures:
    mean_daily_degree: float = 0.0
    max_daily_degree: float = 0.0
    mean_closeness: float = 0.0
    max_closeness: float = 0.0
    total_contact_days: float = 0.0
    unique_contacts: float = 0.0
    exposed: bool = False
    episode_isolated: bool = True
    ward_pagerank: float = 0.0
    ward_degree_centrality: float = 0.0
    ward_closeness_centrality: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {k: float(v) for k, v in self.__dict__.items()}


NETWORK_FEATURES = tuple(NetworkFeatures.__dataclass_fields__)


def positive_flag_dates(episodes: Iterable[Episode]) -> dict[str, dt.date]:
    """Date from which each patient counts as CPE-positive.

    The screening day is not recorded, so a positive result is assumed
    known from the admission date of the episode that produced it.
    """
    flags: dict[str, dt.date] = {}
    for e in episodes:
        if e.cpe_result == "positive":
            cur = flags.get(e.patient_id)
            if cur is None or e.admission_date < cur:
                flags[e.patient_id] = e.admission_date
    return flags


def episode_network_features(
    episode: Episode,
    daily_graphs: Mapping[dt.date, DailyContactGraph] | Sequence[DailyContactGraph],
    ward_stats: Mapping[str, Mapping[str, float]] | WardTransferGraph,
    positives: Mapping[str, dt.date],
    stay_days: Iterable[dt.date] | None = None,
    node_stats: Mapping[dt.date, Mapping[str, tuple[int, float]]] | None = None,
) -> NetworkFeatures:
    """Aggregate the patient's daily contact metrics over the stay.

    ``stay_days`` defaults to every day of the stay on which the patient
    appears in a graph. ``node_stats`` is an optional per-day cache of
    :func:`daily_node_stats`.
    """
    if not isinstance(daily_graphs, Mapping):
        daily_graphs = {g.date: g for g in daily_graphs}
    if isinstance(ward_stats, WardTransferGraph):
        ward_stats = ward_centralities(ward_stats)
    pid = episode.patient_id
    if stay_days is None:
        stay_days = [
            d for d, g in daily_graphs.items()
            if episode.admission_date <= d <= episode.discharge_date and pid in g.adjacency
        ]
    degrees, closes = [], []
    contacts: set = set()
    exposed = False
    for day in sorted(set(stay_days)):
        g = daily_graphs.get(day)
        if g is None or pid not in g.adjacency:
            continue
        nbrs = g.adjacency[pid]
        if node_stats is not None:
            deg, clo = node_stats[day][pid]
        else:
            deg, clo = len(nbrs), closeness(g, pid)
        degrees.append(deg)
        closes.append(clo)
        contacts.update(nbrs)
        if not exposed:
            exposed = any(v in positives and positives[v] <= day for v in nbrs)
    ws = ward_stats.get(episode.admission_ward, {})
    ward_part = dict(
        ward_pagerank=ws.get("pagerank", 0.0),
        ward_degree_centrality=ws.get("degree_centrality", 0.0),
        ward_closeness_centrality=ws.get("closeness_centrality", 0.0),
    )
    if not degrees:
        return NetworkFeatures(**ward_part)
    return NetworkFeatures(
        mean_daily_degree=float(np.mean(degrees)),
        max_daily_degree=float(max(degrees)),
        mean_closeness=float(np.mean(closes)),
        max_closeness=float(max(closes)),
        total_contact_days=float(sum(degrees)),
        unique_contacts=float(len(contacts)),
        exposed=exposed,
        episode_isolated=all(d == 0 for d in degrees),
        **ward_part,
    )


def compute_network_features(
    episodes: Sequence[Episode],
    beddays: Sequence[BedDayRecord],
    ward_window_end: dt.date | None = None,
    damping: float = 0.85,
    positives: Mapping[str, dt.date] | None = None,
) -> tuple[dict[str, NetworkFeatures], WardTransferGraph, list[DailyContactGraph]]:
    """Network features for every episode.

    The ward-transfer graph only sees bed-days up to ``ward_window_end``
    (the training window); patient contacts use every day.
    """
    graphs = build_daily_graphs(beddays)
    by_date = {g.date: g for g in graphs}
    stats = {g.date: daily_node_stats(g) for g in graphs}
    ward_graph = build_ward_graph(beddays, until=ward_window_end)
    ward_stats = ward_centralities(ward_graph, damping=damping)
    if positives is None:
        positives = positive_flag_dates(episodes)
    days_of: dict[str, set] = defaultdict(set)
    for r in beddays:
        days_of[r.episode_id].add(r.date)
    feats = {
        e.episode_id: episode_network_features(
            e, by_date, ward_stats, positives, stay_days=days_of.get(e.episode_id, ()), node_stats=stats
        )
        for e in episodes
    }
    return feats, ward_graph, graphs


def exposure_flags(
    patient_idx: np.ndarray,
    ward_idx: np.ndarray,
    day: np.ndarray,
    flag_day: np.ndarray,
) -> np.ndarray:
    """Vectorised exposure test over bed-day rows.

    Row i is exposed when another row shares its (ward, day) and belongs to a
    patient whose flag day is <= that day. ``flag_day`` is indexed by patient
    and holds a large sentinel for never-positive patients. Inputs must be
    deduplicated on (patient, ward, day).
    """
    flagged = (flag_day[patient_idx] <= day).astype(np.int64)
    key = ward_idx.astype(np.int64) * (int(day.max(initial=0)) + 1) + day
    _, inv = np.unique(key, return_inverse=True)
    per_slot = np.bincount(inv, weights=flagged).astype(np.int64)
    return (per_slot[inv] - flagged) > 0


def write_edge_lists(directory, graphs: Iterable[DailyContactGraph]) -> list[Path]:
    """One ``date,patient_a,patient_b,ward_id`` CSV per day."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for g in graphs:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date", "patient_a", "patient_b", "ward_id"])
        for u, v, ward in g.edge_wards():
            w.writerow([g.date.isoformat(), u, v, ward])
        path = directory / f"edges_{g.date.isoformat()}.csv"
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(buf.getvalue())
        tmp.replace(path)
        paths.append(path)
    return paths
