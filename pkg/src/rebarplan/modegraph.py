"""Mode-transition graph over coparameter slices, and A* lead search."""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .env import RebarGrid, point_on_bar
from .experience import ExperienceStore, landing_prior_values
from .kinematics import FEET, FOOT_INDEX, RobotModel, Superquadric
from .modes import Mode, ModeFamily
from .torso import TorsoPath, polyline_distances

DEFAULT_BINS = 5
MIN_FOOT_SEPARATION = 0.05
# front feet stay ahead of rear feet and left feet left of right feet
LEG_ORDER_MARGIN = 0.05
# nominal CoM must sit this far inside its support triangle
SUPPORT_MARGIN = 0.03


class GraphBuildError(RuntimeError):
    pass


class LeadSearchFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchWeights:
    w_D: float = 1.0
    w_d: float = 1.0
    w_tau: float = 2.0
    goal_radius: float = 0.10


@dataclass(frozen=True)
class SliceVertex:
    family: ModeFamily
    bins: tuple[int, int, int]
    K: int

    @property
    def chi_repr(self) -> tuple[float, float, float]:
        return tuple((b + 0.5) / self.K for b in self.bins)

    def mode(self) -> Mode:
        return Mode(self.family, self.chi_repr)


def next_swing(sequence, foot: str) -> str:
    i = list(sequence).index(foot)
    return sequence[(i + 1) % len(sequence)]


@dataclass
class ModeTransitionGraph:
    """Slices and their transitions, stored as flat arrays.

    Vertex ``v`` has swing foot ``FEET[swing[v]]`` and stance candidates
    ``cand[v]`` (one per stance foot, FL < FR < BL < BR order). A
    candidate is a ``(bar, bin)`` foothold.
    """

    grid: RebarGrid
    model: RobotModel
    K: int
    contact_sequence: tuple[str, ...]
    reach: dict[str, Superquadric]
    cand_bar: np.ndarray
    cand_bin: np.ndarray
    cand_pts: np.ndarray
    swing: np.ndarray
    cand: np.ndarray
    com: np.ndarray
    family_id: np.ndarray
    families: list[ModeFamily]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_landing: np.ndarray
    edge_chi: np.ndarray
    edge_dcom: np.ndarray
    indptr: np.ndarray
    _pair_index: dict = field(default_factory=dict, repr=False)
    _vertex_key: np.ndarray = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.swing)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def stance_feet(self, v: int) -> tuple[str, ...]:
        s = FEET[self.swing[v]]
        return tuple(f for f in FEET if f != s)

    def vertex(self, v: int) -> SliceVertex:
        return SliceVertex(self.families[self.family_id[v]], tuple(int(self.cand_bin[c]) for c in self.cand[v]), self.K)

    def vertex_mode(self, v: int) -> Mode:
        return self.vertex(v).mode()

    def nominal_com(self, v: int) -> np.ndarray:
        return np.array([self.com[v, 0], self.com[v, 1], self.model.nominal_com_height])

    def candidate_index(self, bar_id: int, chi: float) -> int:
        b = min(int(chi * self.K), self.K - 1)
        hit = np.nonzero((self.cand_bar == bar_id) & (self.cand_bin == b))[0]
        if not len(hit):
            raise KeyError((bar_id, b))
        return int(hit[0])

    def find_vertex(self, mode: Mode) -> int:
        """Slice containing ``mode`` (coparameters snapped to bins), or -1."""
        fam = mode.family
        cands = [self.candidate_index(b, c) for (_, b), c in zip(fam.stance, mode.chi)]
        key = _vertex_key(FOOT_INDEX[fam.swing_foot], cands, len(self.cand_bar))
        i = int(np.searchsorted(self._vertex_key, key))
        if i < len(self._vertex_key) and self._vertex_key[i] == key:
            return i
        return -1

    def find_edge(self, u: int, v: int) -> int:
        lo, hi = self.indptr[u], self.indptr[u + 1]
        hits = np.nonzero(self.edge_dst[lo:hi] == v)[0]
        if not len(hits):
            raise KeyError((u, v))
        return int(lo + hits[0])

    def edges_of_pair(self, fid_src: int, fid_dst: int) -> np.ndarray:
        if not self._pair_index:
            codes = self.family_id[self.edge_src].astype(np.int64) * len(self.families) + self.family_id[self.edge_dst]
            order = np.argsort(codes, kind="stable")
            sorted_codes = codes[order]
            uniq, starts = np.unique(sorted_codes, return_index=True)
            ends = np.append(starts[1:], len(order))
            self._pair_index = {int(c): order[s:e] for c, s, e in zip(uniq, starts, ends)}
            self._pair_index[-1] = None
        return self._pair_index.get(fid_src * len(self.families) + fid_dst, np.empty(0, dtype=np.int64))

    def family_lookup(self) -> dict[str, int]:
        return {f.key(): i for i, f in enumerate(self.families)}

    def edge_families(self, e: int) -> tuple[ModeFamily, ModeFamily]:
        return self.families[self.family_id[self.edge_src[e]]], self.families[self.family_id[self.edge_dst[e]]]

    def summary(self) -> dict:
        return {"vertices": self.n_vertices, "edges": self.n_edges, "families": len(self.families), "bins": self.K}


def _vertex_key(swing_idx, cands, M):
    k = swing_idx
    for c in cands:
        k = k * M + int(c)
    return k


def _candidates(grid: RebarGrid, K: int):
    bars, bins, pts = [], [], []
    for b in grid.bars:
        for i in range(K):
            bars.append(b.id)
            bins.append(i)
            pts.append(point_on_bar(b, (i + 0.5) / K))
    return np.array(bars), np.array(bins), np.array(pts)


def triangle_depth(a, b, c) -> np.ndarray:
    """Distance from each triangle's centroid to its nearest edge, for ``(n, 2)`` vertex arrays."""
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))
    out = np.full(len(a), np.inf)
    for u, v in ((a, b), (b, c), (c, a)):
        n = np.maximum(np.hypot(v[:, 0] - u[:, 0], v[:, 1] - u[:, 1]), 1e-12)
        # centroid height over an edge is a third of the triangle height
        out = np.minimum(out, area2 / n / 3.0)
    return out


def _inside(sq: Superquadric, rel_xy: np.ndarray) -> np.ndarray:
    dx = np.abs((rel_xy[..., 0] - sq.center[0]) / sq.A)
    dy = np.abs((rel_xy[..., 1] - sq.center[1]) / sq.B)
    return dx ** sq.a + dy ** sq.b <= 1.0


def build_graph(grid: RebarGrid, model: RobotModel, reach: dict[str, Superquadric],
                contact_sequence=("BR", "BL", "FR", "FL"), K: int = DEFAULT_BINS) -> ModeTransitionGraph:
    """Enumerate reachable slices and the transitions between them."""
    if K < 1:
        raise ValueError("K must be at least 1")
    seq = tuple(contact_sequence)
    if sorted(seq) != sorted(FEET):
        raise ValueError("contact sequence must be a permutation of the four feet")
    cand_bar, cand_bin, cand_pts = _candidates(grid, K)
    M = len(cand_bar)
    xy = cand_pts[:, :2]

    swing_l, cand_l, com_l = [], [], []
    for s_idx, s in enumerate(FEET):
        feet = [f for f in FEET if f != s]
        hips = [model.hip(f)[:2] for f in feet]
        sqs = [reach[f] for f in feet]
        a_all = np.arange(M)
        for a in range(M):
            # pairwise separation prefilter for the second foot
            b_ok = np.nonzero(np.linalg.norm(xy - xy[a], axis=1) >= MIN_FOOT_SEPARATION)[0]
            if not len(b_ok):
                continue
            B, C = np.meshgrid(b_ok, a_all, indexing="ij")
            B = B.ravel()
            C = C.ravel()
            pa = xy[a][None, :]
            pb = xy[B]
            pc = xy[C]
            ok = (np.linalg.norm(pc - pa, axis=1) >= MIN_FOOT_SEPARATION) & \
                 (np.linalg.norm(pc - pb, axis=1) >= MIN_FOOT_SEPARATION)
            P = (pa + np.zeros_like(pb), pb, pc)
            for i in range(3):
                for j in range(3):
                    fi, fj = feet[i], feet[j]
                    if fi[0] == "F" and fj[0] == "B":
                        ok &= P[i][:, 0] - P[j][:, 0] >= LEG_ORDER_MARGIN
                    if fi[0] == fj[0] and fi[1] == "L" and fj[1] == "R":
                        ok &= P[i][:, 1] - P[j][:, 1] >= LEG_ORDER_MARGIN
            c = (pa + pb + pc) / 3.0
            ok &= triangle_depth(pa + np.zeros_like(pb), pb, pc) >= SUPPORT_MARGIN
            ok &= _inside(sqs[0], pa - c - hips[0])
            ok &= _inside(sqs[1], pb - c - hips[1])
            ok &= _inside(sqs[2], pc - c - hips[2])
            if not ok.any():
                continue
            n = int(ok.sum())
            swing_l.append(np.full(n, s_idx))
            cand_l.append(np.stack([np.full(n, a), B[ok], C[ok]], axis=1))
            com_l.append(c[ok])
    if not swing_l:
        raise GraphBuildError(
            f"no reachable slices: {len(grid.bars)} bars, K={K}, spacing {grid.spacing:.3f} m; "
            "footholds are out of reach of the fitted reachability regions")
    swing = np.concatenate(swing_l)
    cand = np.concatenate(cand_l)
    com = np.concatenate(com_l)
    keys = np.array([_vertex_key(s, c, M) for s, c in zip(swing, cand)], dtype=np.int64)
    order = np.argsort(keys, kind="stable")
    swing, cand, com, keys = swing[order], cand[order], com[order], keys[order]

    # mode families
    fam_index: dict[tuple, int] = {}
    families: list[ModeFamily] = []
    family_id = np.empty(len(swing), dtype=np.int64)
    for v in range(len(swing)):
        s = FEET[swing[v]]
        feet = [f for f in FEET if f != s]
        sig = (int(swing[v]),) + tuple(int(cand_bar[c]) for c in cand[v])
        fid = fam_index.get(sig)
        if fid is None:
            fid = len(families)
            fam_index[sig] = fid
            families.append(ModeFamily(tuple((f, int(cand_bar[c])) for f, c in zip(feet, cand[v])), s))
        family_id[v] = fid

    # transitions
    e_src, e_dst, e_land = [], [], []
    for s_idx, s1 in enumerate(FEET):
        vs = np.nonzero(swing == s_idx)[0]
        if not len(vs):
            continue
        s2 = next_swing(seq, s1)
        src_feet = [f for f in FEET if f != s1]
        dst_feet = [f for f in FEET if f != s2]
        hip1 = model.hip(s1)[:2]
        # landing reachable from the source slice's nominal hip projection
        rel = xy[None, :, :] - com[vs][:, None, :] - hip1
        land_ok = _inside(reach[s1], rel)
        vv, LL = np.nonzero(land_ok)
        if not len(vv):
            continue
        src_v = vs[vv]
        by_foot = {f: cand[src_v, i] for i, f in enumerate(src_feet)}
        by_foot[s1] = LL
        dst_cands = np.stack([by_foot[f] for f in dst_feet], axis=1)
        dkeys = np.full(len(src_v), FOOT_INDEX[s2], dtype=np.int64)
        for i in range(3):
            dkeys = dkeys * M + dst_cands[:, i]
        pos = np.searchsorted(keys, dkeys)
        pos = np.minimum(pos, len(keys) - 1)
        found = keys[pos] == dkeys
        e_src.append(src_v[found])
        e_dst.append(pos[found])
        e_land.append(LL[found])
    if e_src:
        edge_src = np.concatenate(e_src)
        edge_dst = np.concatenate(e_dst)
        edge_land = np.concatenate(e_land)
    else:
        edge_src = edge_dst = edge_land = np.empty(0, dtype=np.int64)
    order = np.lexsort((edge_dst, edge_src))
    edge_src, edge_dst, edge_land = edge_src[order], edge_dst[order], edge_land[order]

    # joint coparameters: one per foot, FL, FR, BL, BR
    chi_of_cand = (cand_bin + 0.5) / K
    edge_chi = np.zeros((len(edge_src), 4))
    for s_idx, s1 in enumerate(FEET):
        m = swing[edge_src] == s_idx
        src_feet = [f for f in FEET if f != s1]
        for i, f in enumerate(src_feet):
            edge_chi[m, FOOT_INDEX[f]] = chi_of_cand[cand[edge_src[m], i]]
        edge_chi[m, s_idx] = chi_of_cand[edge_land[m]]
    edge_dcom = np.linalg.norm(com[edge_src] - com[edge_dst], axis=1)
    indptr = np.searchsorted(edge_src, np.arange(len(swing) + 1))

    graph = ModeTransitionGraph(grid, model, K, seq, reach, cand_bar, cand_bin, cand_pts, swing, cand, com,
                                family_id, families, edge_src, edge_dst, edge_land, edge_chi, edge_dcom, indptr)
    graph._vertex_key = keys
    return graph


# --------------------------------------------------------------------------
# edge weights

@dataclass
class WorkCounter:
    """Deterministic operation counts for one search."""

    expansions: int = 0
    relaxations: int = 0
    rbf_evals: int = 0
    path_evals: int = 0

    def units(self) -> float:
        return self.expansions + self.relaxations + 0.25 * self.rbf_evals + 0.25 * self.path_evals


def experience_values(graph: ModeTransitionGraph, experience: ExperienceStore | None,
                      counter: WorkCounter | None = None) -> np.ndarray:
    """Difficulty D for every edge: prior, plus RBF sums on edges with experience."""
    if experience is None:
        return np.full(graph.n_edges, 0.01)
    if experience.prior_kind == "obstacle" and graph.grid.obstacles:
        cand_prior = landing_prior_values(graph.grid, graph.cand_pts, experience.prior_scale, experience.r_infl)
        D = cand_prior[graph.edge_landing]
    else:
        D = np.full(graph.n_edges, 0.01)
    if experience.edges:
        lookup = graph.family_lookup()
        for (sk, dk), dist in experience.edges.items():
            fs, fd = lookup.get(sk), lookup.get(dk)
            if fs is None or fd is None or not dist.weights:
                continue
            idx = graph.edges_of_pair(fs, fd)
            if idx is None or not len(idx):
                continue
            D[idx] = D[idx] + dist.rbf_sum(graph.edge_chi[idx])
            if counter is not None:
                counter.rbf_evals += len(idx) * len(dist.weights)
    return np.maximum(D, 0.0)


def vertex_path_distance(graph: ModeTransitionGraph, torso_path: TorsoPath | None,
                         counter: WorkCounter | None = None) -> np.ndarray:
    if torso_path is None:
        return np.zeros(graph.n_vertices)
    pts = torso_path.as_array()
    if counter is not None:
        counter.path_evals += graph.n_vertices * max(1, len(pts) - 1)
    return polyline_distances(pts, graph.com)


def edge_weights(graph, experience, torso_path, weights: SearchWeights, counter=None) -> np.ndarray:
    D = experience_values(graph, experience, counter)
    w = weights.w_D * D + weights.w_d * graph.edge_dcom
    if torso_path is not None and weights.w_tau:
        dt = vertex_path_distance(graph, torso_path, counter)
        w = w + weights.w_tau * (dt[graph.edge_src] + dt[graph.edge_dst])
    return w


def edge_weight(graph: ModeTransitionGraph, experience, torso_path, src: int, dst: int,
                weights: SearchWeights = SearchWeights()) -> float:
    """Weight of the single edge ``src -> dst`` (vertex indices)."""
    e = graph.find_edge(src, dst)
    chi = graph.edge_chi[e]
    if experience is None:
        D = 0.01
    else:
        fs, fd = graph.edge_families(e)
        dist = experience.distribution(fs, fd, create=False)
        if dist is None:
            dist = experience.distribution(fs, fd, create=True)
            D = _query(dist, chi)
            del experience.edges[(fs.key(), fd.key())]
        else:
            D = _query(dist, chi)
    w = weights.w_D * D + weights.w_d * float(np.linalg.norm(graph.com[src] - graph.com[dst]))
    if torso_path is not None and weights.w_tau:
        pts = torso_path.as_array()
        d = polyline_distances(pts, graph.com[[src, dst]])
        w += weights.w_tau * float(d.sum())
    return float(w)


def _query(dist, chi):
    from .experience import query
    return query(dist, chi)


# --------------------------------------------------------------------------
# lead search

@dataclass
class Lead:
    vertices: list[int]
    modes: list[Mode]
    families: list[ModeFamily]
    total_cost: float
    edge_costs: list[float]
    expansions: int = 0
    work_units: float = 0.0
    search_ms: float = 0.0

    def __len__(self):
        return len(self.modes)

    def to_dict(self) -> dict:
        return {
            "modes": [m.to_dict() for m in self.modes],
            "edge_weights": list(self.edge_costs),
            "total_cost": self.total_cost,
        }


def goal_heuristic(graph: ModeTransitionGraph, goal_com, weights: SearchWeights) -> np.ndarray:
    d = np.linalg.norm(graph.com - np.asarray(goal_com, dtype=float)[:2], axis=1)
    return weights.w_d * np.maximum(d - weights.goal_radius, 0.0)


def search_lead(graph: ModeTransitionGraph, start: Mode | int, goal_com, experience=None,
                torso_path: TorsoPath | None = None, weights: SearchWeights = SearchWeights(),
                edge_w: np.ndarray | None = None) -> Lead:
    """A* from the start slice to any slice whose nominal CoM is within the goal radius."""
    t0 = time.perf_counter()
    counter = WorkCounter()
    s = start if isinstance(start, (int, np.integer)) else graph.find_vertex(start)
    if s < 0:
        raise LeadSearchFailure("start mode does not map to a reachable slice")
    if edge_w is None:
        edge_w = edge_weights(graph, experience, torso_path, weights, counter)
    goal = np.asarray(goal_com, dtype=float)[:2]
    dist_goal = np.linalg.norm(graph.com - goal, axis=1)
    h = weights.w_d * np.maximum(dist_goal - weights.goal_radius, 0.0)
    is_goal = dist_goal <= weights.goal_radius

    indptr, dst = graph.indptr, graph.edge_dst
    g = {s: 0.0}
    steps = {s: 0}
    parent = {s: (-1, -1)}
    closed = set()
    heap = [(h[s], 0, s)]
    ew = edge_w.tolist()
    dl = dst.tolist()
    hl = h.tolist()
    ip = indptr.tolist()
    found = -1
    while heap:
        f, n, u = heapq.heappop(heap)
        if u in closed:
            continue
        closed.add(u)
        counter.expansions += 1
        if is_goal[u]:
            found = u
            break
        gu = g[u]
        for e in range(ip[u], ip[u + 1]):
            v = dl[e]
            counter.relaxations += 1
            if v in closed:
                continue
            nv = gu + ew[e]
            old = g.get(v)
            if old is None or nv < old or (nv == old and n + 1 < steps[v]):
                g[v] = nv
                steps[v] = n + 1
                parent[v] = (u, e)
                heapq.heappush(heap, (nv + hl[v], n + 1, v))
    if found < 0:
        raise LeadSearchFailure("goal unreachable in the mode-transition graph")
    path, edges = [found], []
    while parent[path[-1]][0] != -1:
        u, e = parent[path[-1]]
        edges.append(e)
        path.append(u)
    path.reverse()
    edges.reverse()
    modes = [graph.vertex_mode(v) for v in path]
    lead = Lead(path, modes, [m.family for m in modes], g[found], [float(edge_w[e]) for e in edges],
                counter.expansions, counter.units(), (time.perf_counter() - t0) * 1e3)
    return lead


def validate_lead(graph: ModeTransitionGraph, lead: Lead) -> None:
    """Raise if consecutive modes break the shared-feet or contact-sequence rules."""
    for a, b in zip(lead.modes, lead.modes[1:]):
        if b.family.swing_foot != next_swing(graph.contact_sequence, a.family.swing_foot):
            raise AssertionError("swing feet do not follow the contact sequence")
        shared = set(a.family.feet) & set(b.family.feet)
        if len(shared) != 2:
            raise AssertionError("consecutive modes must share two stance feet")
        for f in shared:
            if a.family.bar_of(f) != b.family.bar_of(f) or a.chi_of(f) != b.chi_of(f):
                raise AssertionError(f"shared foot {f} moved between consecutive modes")
