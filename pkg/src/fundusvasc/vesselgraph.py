"""Skeletonization and vessel graph extraction.

A binary vessel mask is thinned to a 1px skeleton, decomposed into nodes
(endpoints, bifurcations, crossings) and edges (ordered pixel chains =
vessel segments), and optionally oriented away from the optic disc so each
bifurcation has one parent and two-or-more child segments.

Chains are float arrays of shape (N, 2) with columns (x, y); node
positions are cluster centroids, so a chain's terminal pixel coincides
with its node for single-pixel junctions and stays within the (tiny)
cluster footprint otherwise.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _zhang_thin

from .raster import Keypoint, LabelMask

PRUNE_LEN = 10.0

# Fixed 8-neighborhood scan order (row-major) keeps graph construction
# deterministic for identical inputs.
_NEIGH8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

KIND_ENDPOINT = "endpoint"
KIND_BIFURCATION = "bifurcation"
KIND_CROSSING = "crossing"


def _neighbor_counts(skel: np.ndarray) -> np.ndarray:
    kernel = np.ones((3, 3), dtype=np.uint8)
    kernel[1, 1] = 0
    return ndimage.convolve(skel.astype(np.uint8), kernel, mode="constant", cval=0)


def _is_simple_point(block: np.ndarray) -> bool:
    """True if deleting the center of a 3x3 block keeps its neighbors connected.

    Uses the Hilditch crossing number for 8-connected foreground: the ring
    N, NE, E, SE, S, SW, W, NW must contain exactly one connected group,
    and the pixel must not be a line end (>= 2 neighbors).
    """
    ring = [
        bool(block[0, 1]), bool(block[0, 2]), bool(block[1, 2]), bool(block[2, 2]),
        bool(block[2, 1]), bool(block[2, 0]), bool(block[1, 0]), bool(block[0, 0]),
    ]
    if sum(ring) < 2:
        return False
    crossing = 0
    for i in (0, 2, 4, 6):
        if not ring[i] and (ring[i + 1] or ring[(i + 2) % 8]):
            crossing += 1
    return crossing == 1


def _break_square_corners(skel: np.ndarray) -> np.ndarray:
    """Remove redundant pixels from 2x2 fully-set blocks, preserving topology.

    Deletion is restricted to simple points, so the rare 2x2 diamond left
    by thinning a 4-arm diagonal crossing survives (removing any of its
    pixels would strand an arm); node clustering in build_graph merges it
    into a single crossing node.
    """
    padded = np.pad(skel, 1)
    for _ in range(4):
        blocks = padded[:-1, :-1] & padded[:-1, 1:] & padded[1:, :-1] & padded[1:, 1:]
        if not blocks.any():
            break
        changed = False
        for by, bx in np.argwhere(blocks):
            for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
                y, x = by + dy, bx + dx
                if not padded[y, x]:
                    continue
                if _is_simple_point(padded[y - 1 : y + 2, x - 1 : x + 2]):
                    padded[y, x] = False
                    changed = True
                    break
        if not changed:
            break
    return padded[1:-1, 1:-1]


def skeletonize(mask: LabelMask | np.ndarray) -> np.ndarray:
    """Thin a binary mask to a 1px, connectivity-preserving skeleton.

    Returns a boolean array in the mask's frame.  The skeleton is a subset
    of the mask and has the same number of 8-connected components.
    """
    fg = mask.foreground() if isinstance(mask, LabelMask) else np.asarray(mask) != 0
    if not fg.any():
        return np.zeros_like(fg, dtype=bool)
    skel = _zhang_thin(fg)
    return _break_square_corners(skel)


@dataclass
class Node:
    id: int
    x: float
    y: float
    kind: str
    pixels: list[tuple[int, int]] = field(default_factory=list, repr=False)
    parent_edge: int | None = None

    @property
    def position(self) -> Keypoint:
        return Keypoint(self.x, self.y)


@dataclass
class Edge:
    id: int
    a: int
    b: int
    chain: np.ndarray  # (N, 2) float, columns (x, y), runs a -> b
    length: float
    oriented: bool = False
    parent: int | None = None  # node id at the disc-side end once oriented

    def other(self, node_id: int) -> int:
        return self.b if node_id == self.a else self.a


@dataclass
class VesselGraph:
    nodes: dict[int, Node]
    edges: dict[int, Edge]

    def degree(self, node_id: int) -> int:
        d = 0
        for e in self.edges.values():
            if e.a == node_id:
                d += 1
            if e.b == node_id:
                d += 1
        return d

    def incident(self, node_id: int) -> list[Edge]:
        return [e for e in sorted(self.edges.values(), key=lambda e: e.id)
                if node_id in (e.a, e.b)]

    def children(self, node_id: int) -> list[Edge]:
        """Oriented edges leaving this node away from the disc."""
        return [e for e in self.incident(node_id) if e.oriented and e.parent == node_id]

    def bifurcations(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind == KIND_BIFURCATION]


def _chain_length(chain: np.ndarray) -> float:
    if len(chain) < 2:
        return 0.0
    steps = np.diff(chain, axis=0)
    return float(np.hypot(steps[:, 0], steps[:, 1]).sum())


def _kind_for_degree(degree: int) -> str:
    if degree >= 4:
        return KIND_CROSSING
    if degree == 3:
        return KIND_BIFURCATION
    return KIND_ENDPOINT


def _cluster_path(pixels: set[tuple[int, int]], start, goal) -> list[tuple[int, int]]:
    """Shortest 8-connected path between two pixels of one small cluster."""
    if start == goal:
        return [start]
    prev = {start: None}
    q = deque([start])
    while q:
        cur = q.popleft()
        for dy, dx in _NEIGH8:
            nxt = (cur[0] + dy, cur[1] + dx)
            if nxt in pixels and nxt not in prev:
                prev[nxt] = cur
                if nxt == goal:
                    path = [goal]
                    while prev[path[-1]] is not None:
                        path.append(prev[path[-1]])
                    return path[::-1]
                q.append(nxt)
    return [start, goal]  # disconnected clusters cannot occur by construction


def build_graph(skel: np.ndarray, prune_len: float = PRUNE_LEN) -> VesselGraph:
    """Convert a skeleton into a node/edge graph.

    Node pixels are skeleton pixels with neighbor count != 2; 8-adjacent
    node pixels merge into one node at their centroid.  Edges are the
    chains traced between nodes.  Spur edges terminating in an endpoint
    and shorter than ``prune_len`` are removed, after which pass-through
    (degree 2) nodes are dissolved and node kinds recomputed.
    """
    skel = np.asarray(skel, dtype=bool)
    ncount = _neighbor_counts(skel)
    node_mask = skel & (ncount != 2)

    labels, n_clusters = ndimage.label(node_mask, structure=np.ones((3, 3), dtype=int))
    nodes: dict[int, Node] = {}
    pixel_node = np.full(skel.shape, -1, dtype=np.int64)
    for cid in range(1, n_clusters + 1):
        pts = np.argwhere(labels == cid)  # (row, col), row-major order
        nid = cid - 1
        nodes[nid] = Node(
            id=nid,
            x=float(pts[:, 1].mean()),
            y=float(pts[:, 0].mean()),
            kind=KIND_ENDPOINT,
            pixels=[tuple(p) for p in pts],
        )
        pixel_node[pts[:, 0], pts[:, 1]] = nid

    edges: dict[int, Edge] = {}
    visited = np.zeros(skel.shape, dtype=bool)
    next_edge = 0

    def _add_edge(a: int, b: int, chain_rc: list[tuple[int, int]]) -> None:
        nonlocal next_edge
        chain = np.array([(c, r) for r, c in chain_rc], dtype=float)
        edges[next_edge] = Edge(next_edge, a, b, chain, _chain_length(chain))
        next_edge += 1

    h, w = skel.shape

    def _skel_neighbors(rc):
        r, c = rc
        out = []
        for dy, dx in _NEIGH8:
            nr, nc = r + dy, c + dx
            if 0 <= nr < h and 0 <= nc < w and skel[nr, nc]:
                out.append((nr, nc))
        return out

    for nid in sorted(nodes):
        for px in nodes[nid].pixels:
            for nb in _skel_neighbors(px):
                if pixel_node[nb] >= 0 or visited[nb]:
                    continue
                chain = [px, nb]
                visited[nb] = True
                prev, cur = px, nb
                while True:
                    nbs = [p for p in _skel_neighbors(cur) if p != prev]
                    # Interior pixels have exactly two neighbors; pick the
                    # continuation, preferring a node pixel if both qualify.
                    nxt = None
                    for p in nbs:
                        if pixel_node[p] >= 0:
                            nxt = p
                            break
                    if nxt is None:
                        nxt = next((p for p in nbs if not visited[p]), None)
                    if nxt is None:
                        break  # dead end into already-visited pixels (tiny loop)
                    chain.append(nxt)
                    if pixel_node[nxt] >= 0:
                        break
                    visited[nxt] = True
                    prev, cur = cur, nxt
                end = pixel_node[chain[-1]]
                if end < 0:
                    continue
                _add_edge(nid, int(end), chain)

    # Pure cycles have no junction pixels at all; anchor each at its
    # row-major-first pixel and trace the loop as a self-edge.
    remaining = skel & ~visited & (pixel_node < 0)
    while remaining.any():
        r, c = map(int, np.argwhere(remaining)[0])
        nid = len(nodes)
        nodes[nid] = Node(nid, x=float(c), y=float(r), kind=KIND_ENDPOINT, pixels=[(r, c)])
        pixel_node[r, c] = nid
        start = (r, c)
        nbs = _skel_neighbors(start)
        chain = [start]
        prev, cur = start, nbs[0]
        while cur != start:
            chain.append(cur)
            visited[cur] = True
            nxt = next(p for p in _skel_neighbors(cur) if p != prev)
            prev, cur = cur, nxt
        chain.append(start)
        _add_edge(nid, nid, chain)
        remaining = skel & ~visited & (pixel_node < 0)

    graph = VesselGraph(nodes, edges)
    _prune_spurs(graph, prune_len)
    _dissolve_degree2(graph)
    _assign_kinds(graph)
    return graph


def _prune_spurs(graph: VesselGraph, prune_len: float) -> None:
    degrees = {nid: graph.degree(nid) for nid in graph.nodes}
    doomed = [
        e
        for e in graph.edges.values()
        if e.length < prune_len
        and e.a != e.b
        and (degrees[e.a] == 1 or degrees[e.b] == 1)
    ]
    touched: set[int] = set()
    for e in doomed:
        del graph.edges[e.id]
        touched.update((e.a, e.b))
    # Nodes orphaned by pruning disappear; genuinely isolated pixels (never
    # had an edge) are untouched and stay.
    for nid in sorted(touched):
        if nid in graph.nodes and graph.degree(nid) == 0:
            del graph.nodes[nid]


def _dissolve_degree2(graph: VesselGraph) -> None:
    """Merge the two edges of every pass-through node left by pruning."""
    changed = True
    while changed:
        changed = False
        for nid in sorted(graph.nodes):
            inc = graph.incident(nid)
            if len(inc) != 2 or any(e.a == e.b for e in inc):
                continue
            e1, e2 = inc
            # orient e1 into nid, e2 out of nid
            c1 = e1.chain if e1.b == nid else e1.chain[::-1]
            a = e1.a if e1.b == nid else e1.b
            c2 = e2.chain if e2.a == nid else e2.chain[::-1]
            b = e2.b if e2.a == nid else e2.a
            node = graph.nodes[nid]
            px1 = (int(c1[-1, 1]), int(c1[-1, 0]))
            px2 = (int(c2[0, 1]), int(c2[0, 0]))
            bridge = _cluster_path(set(node.pixels), px1, px2)
            bridge_xy = np.array([(c, r) for r, c in bridge], dtype=float)
            chain = np.vstack([c1, bridge_xy[1:-1] if len(bridge) > 2 else np.empty((0, 2)), c2])
            dup = np.all(np.diff(chain, axis=0) == 0, axis=1)
            chain = chain[np.concatenate([[True], ~dup])]
            eid = min(e1.id, e2.id)
            del graph.edges[e1.id]
            del graph.edges[e2.id]
            graph.edges[eid] = Edge(eid, a, b, chain, _chain_length(chain))
            del graph.nodes[nid]
            changed = True
            break


def _assign_kinds(graph: VesselGraph) -> None:
    for nid, node in graph.nodes.items():
        node.kind = _kind_for_degree(graph.degree(nid))


def orient_graph(graph: VesselGraph, disc_center: Keypoint) -> VesselGraph:
    """Orient edges away from the optic disc.

    Each connected component is traversed breadth-first from its node
    nearest the disc center; traversed edges get their chain flipped to
    run parent -> child and record the parent node.  Cycles are broken at
    the edge whose chain midpoint lies farthest from the disc (that edge
    stays unoriented).  Components are independent: no cross-component
    parents are ever assigned.
    """
    nodes = {nid: Node(n.id, n.x, n.y, n.kind, list(n.pixels)) for nid, n in graph.nodes.items()}
    edges = {
        eid: Edge(e.id, e.a, e.b, e.chain.copy(), e.length) for eid, e in graph.edges.items()
    }
    out = VesselGraph(nodes, edges)
    dc = np.array([disc_center.x, disc_center.y])

    def _mid_dist(e: Edge) -> float:
        mid = e.chain[len(e.chain) // 2]
        return float(np.hypot(*(mid - dc)))

    # Spanning forest built nearest-midpoint-first: in any cycle the
    # farthest edge is the one left out.
    parent_uf: dict[int, int] = {nid: nid for nid in nodes}

    def _find(x):
        while parent_uf[x] != x:
            parent_uf[x] = parent_uf[parent_uf[x]]
            x = parent_uf[x]
        return x

    tree_edges: set[int] = set()
    for eid in sorted(edges, key=lambda i: (_mid_dist(edges[i]), i)):
        e = edges[eid]
        if e.a == e.b:
            continue
        ra, rb = _find(e.a), _find(e.b)
        if ra != rb:
            parent_uf[ra] = rb
            tree_edges.add(eid)

    adjacency: dict[int, list[int]] = {nid: [] for nid in nodes}
    for eid in sorted(tree_edges):
        adjacency[edges[eid].a].append(eid)
        adjacency[edges[eid].b].append(eid)

    seen: set[int] = set()
    order = sorted(
        nodes,
        key=lambda nid: (np.hypot(nodes[nid].x - dc[0], nodes[nid].y - dc[1]), nid),
    )
    for root in order:
        if root in seen:
            continue
        seen.add(root)
        q = deque([root])
        while q:
            nid = q.popleft()
            for eid in adjacency[nid]:
                e = edges[eid]
                if e.oriented:
                    continue
                child = e.other(nid)
                if child in seen and child != nid:
                    continue
                if e.a != nid:
                    e.chain = e.chain[::-1].copy()
                    e.a, e.b = e.b, e.a
                e.oriented = True
                e.parent = nid
                nodes[child].parent_edge = eid
                seen.add(child)
                q.append(child)
    return out


def graph_to_json(graph: VesselGraph) -> str:
    """Debug/golden-test dump of nodes, edges, and chains."""
    payload = {
        "nodes": [
            {"id": n.id, "x": n.x, "y": n.y, "kind": n.kind, "parent_edge": n.parent_edge}
            for n in sorted(graph.nodes.values(), key=lambda n: n.id)
        ],
        "edges": [
            {
                "id": e.id,
                "a": e.a,
                "b": e.b,
                "length": e.length,
                "oriented": e.oriented,
                "parent": e.parent,
                "chain": e.chain.tolist(),
            }
            for e in sorted(graph.edges.values(), key=lambda e: e.id)
        ],
    }
    return json.dumps(payload, indent=2)
