"""Merge peak-hour groups into K clusters by average-linkage on 1 - r."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import MissingInputError, ParseError, UndefinedCorrelationError, ValidationError
from .ingest import HourlyCellSeries
from .profile import GroupProfile, pearson

log = logging.getLogger(__name__)

TIE_TOL = 1e-12


@dataclass(frozen=True)
class CorrelationMatrix:
    group_ids: tuple[int, ...]
    r: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.float64)
        n = len(self.group_ids)
        if r.shape != (n, n):
            raise ValidationError(f"matrix shape {r.shape} does not match {n} group ids")
        r.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "group_ids", tuple(int(g) for g in self.group_ids))

    @property
    def n(self) -> int:
        return len(self.group_ids)


@dataclass(frozen=True)
class ClusterAssignment:
    k: int
    group_to_cluster: dict[int, int]
    cell_to_cluster: dict[int, int] = field(default_factory=dict)
    quality: float = 1.0
    # constant-profile groups placed by member-traffic correlation instead of linkage
    flagged_groups: tuple[int, ...] = ()

    def clusters(self) -> list[list[int]]:
        out = [[] for _ in range(self.k)]
        for gid in sorted(self.group_to_cluster):
            out[self.group_to_cluster[gid]].append(gid)
        return out


def correlation_matrix(profiles: Mapping[int, GroupProfile]) -> CorrelationMatrix:
    """Pairwise Pearson correlation between group profiles, ordered by group id."""
    ids = sorted(profiles)
    if len(ids) < 2:
        raise ValidationError("correlation_matrix needs at least two profiles")
    constant = [g for g in ids if profiles[g].is_constant]
    if constant:
        raise UndefinedCorrelationError(f"constant profiles in groups {constant}", constant)
    n = len(ids)
    r = np.eye(n)
    for i, j in itertools.combinations(range(n), 2):
        r[i, j] = r[j, i] = pearson(profiles[ids[i]], profiles[ids[j]])
    return CorrelationMatrix(tuple(ids), r)


def _within_quality(r: np.ndarray, clusters: list[list[int]]) -> float:
    values = [r[a, b] for members in clusters for a, b in itertools.combinations(members, 2)]
    return float(np.mean(values)) if values else 1.0


def merge_groups(matrix: CorrelationMatrix, k: int) -> ClusterAssignment:
    """Agglomerate singleton groups down to ``k`` clusters.

    Distance is ``1 - r`` with average linkage. Equal distances (within
    1e-12) are broken toward the pair whose smallest group ids are
    lexicographically smallest. Cluster indices are ordered by each
    cluster's smallest group id.
    """
    n = matrix.n
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} outside [1, {n}]")
    dist = 1.0 - matrix.r
    ids = matrix.group_ids
    clusters = [[i] for i in range(n)]

    while len(clusters) > k:
        clusters.sort(key=lambda members: ids[members[0]])
        best, best_pair = None, None
        for a, b in itertools.combinations(range(len(clusters)), 2):
            d = dist[np.ix_(clusters[a], clusters[b])].mean()
            if best is None or d < best - TIE_TOL:
                best, best_pair = d, (a, b)
        a, b = best_pair
        clusters[a] = sorted(clusters[a] + clusters[b], key=lambda i: ids[i])
        del clusters[b]

    clusters.sort(key=lambda members: ids[members[0]])
    group_to_cluster = {ids[i]: c for c, members in enumerate(clusters) for i in members}
    return ClusterAssignment(k, group_to_cluster, {}, _within_quality(matrix.r, clusters))


def assign_cells(groups: Mapping[int, GroupProfile], assignment: ClusterAssignment) -> dict[int, int]:
    """Each member cell inherits its group's cluster."""
    cells = {}
    for gid in sorted(groups):
        if gid not in assignment.group_to_cluster:
            raise ValidationError(f"group {gid} has no cluster in the assignment")
        for cid in groups[gid].members:
            cells[cid] = assignment.group_to_cluster[gid]
    return dict(sorted(cells.items()))


def _member_total(group: GroupProfile, series: Mapping[int, HourlyCellSeries], hours: int) -> np.ndarray:
    return np.sum([series[cid].values[:hours] for cid in sorted(group.members)], axis=0)


def cluster_groups(
    groups: Mapping[int, GroupProfile],
    k: int = 2,
    series: Mapping[int, HourlyCellSeries] | None = None,
) -> ClusterAssignment:
    """Full group-to-cluster step including degenerate groups.

    Groups with a constant profile cannot enter the correlation matrix. They
    join the cluster whose members' summed training traffic correlates best
    with their own members' summed traffic (needs ``series``); if that is
    undefined too, they join the largest cluster. Such groups are flagged.
    """
    if not groups:
        raise ValidationError("no groups to cluster")
    usable = {g: p for g, p in groups.items() if not p.is_constant}
    flagged = tuple(sorted(set(groups) - set(usable)))
    if not usable:
        raise UndefinedCorrelationError("every group profile is constant", flagged)

    if len(usable) == 1:
        if k != 1:
            raise ValidationError(f"k={k} outside [1, 1]")
        base = ClusterAssignment(1, {next(iter(usable)): 0})
    else:
        base = merge_groups(correlation_matrix(usable), k)

    group_to_cluster = dict(base.group_to_cluster)
    if flagged:
        hours = len(next(iter(groups.values())).profile)
        totals = {}
        if series is not None:
            for c in range(base.k):
                members = [usable[g] for g, cl in base.group_to_cluster.items() if cl == c]
                totals[c] = sum(_member_total(p, series, hours) for p in members)
        sizes = [sum(usable[g].size for g, cl in base.group_to_cluster.items() if cl == c) for c in range(base.k)]
        for gid in flagged:
            choice = None
            if series is not None:
                own = _member_total(groups[gid], series, hours)
                scores = []
                for c in range(base.k):
                    try:
                        scores.append((pearson(own, totals[c]), -c))
                    except UndefinedCorrelationError:
                        pass
                if scores:
                    choice = -max(scores)[1]
            if choice is None:
                choice = int(np.argmax(sizes))
            group_to_cluster[gid] = choice
            log.warning("group %d has a constant profile; assigned to cluster %d", gid, choice)

    result = ClusterAssignment(base.k, dict(sorted(group_to_cluster.items())), {}, base.quality, flagged)
    cells = assign_cells(groups, result)
    return ClusterAssignment(result.k, result.group_to_cluster, cells, result.quality, flagged)


def write_correlation_csv(matrix: CorrelationMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["group_i", "group_j", "r"])
        for i, gi in enumerate(matrix.group_ids):
            for j, gj in enumerate(matrix.group_ids):
                writer.writerow([gi, gj, repr(float(matrix.r[i, j]))])


def write_assignment_csv(groups: Mapping[int, GroupProfile], assignment: ClusterAssignment, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_id", "group_id", "cluster"])
        rows = [(cid, gid, assignment.group_to_cluster[gid]) for gid in groups for cid in groups[gid].members]
        for row in sorted(rows):
            writer.writerow(row)


def read_assignment_csv(path: str | Path) -> tuple[dict[int, int], dict[int, int]]:
    """Return (cell -> cluster, cell -> group) from an assignment CSV."""
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"assignment file {path} does not exist")
    cell_cluster, cell_group = {}, {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["cell_id", "group_id", "cluster"]:
            raise ParseError(f"unexpected header {header}", 1)
        for number, row in enumerate(reader, start=2):
            try:
                cid, gid, cl = (int(v) for v in row)
            except ValueError:
                raise ParseError(f"malformed row {row}", number) from None
            cell_cluster[cid] = cl
            cell_group[cid] = gid
    return cell_cluster, cell_group
