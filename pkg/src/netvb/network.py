"""Network topology and combination weights for the diffusion step.

Nodes form a fixed undirected graph without self-loops. Experiments use random
geometric graphs: nodes placed uniformly in a square, an edge wherever the
Euclidean distance is at most the communication radius, redrawn until the graph
is connected. Combination weights are row-stochastic with support confined to
closed neighborhoods; the nearest-neighbor rule w_ij = 1/(|N_i|+1) is the
experiment default, and the Metropolis rule w_ij = 1/(1+max(deg_i, deg_j))
(with the self-weight absorbing the remainder) gives a symmetric, hence doubly
stochastic, alternative.
"""

from __future__ import annotations

from collections import deque
from typing import NamedTuple, Optional

import numpy as np

__all__ = [
    "CombinationWeights",
    "Network",
    "generate_geometric_graph",
    "is_connected",
    "metropolis_weights",
    "nearest_neighbor_weights",
    "network_from_edges",
    "parse_edge_list",
    "render_edge_list",
]


class Network(NamedTuple):
    """Undirected graph as per-node sorted neighbor tuples (no self-loops)."""

    n: int
    adjacency: tuple
    positions: Optional[np.ndarray] = None

    @property
    def num_edges(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency) // 2

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])


class CombinationWeights(NamedTuple):
    """Row-stochastic weights; w[i, j] = 0 unless j is i or a neighbor of i.

    Stored dense: at the network sizes used here (tens to low hundreds of
    nodes) dense rows are cheaper than sparse bookkeeping, and the zero
    pattern is still enforced.
    """

    w: np.ndarray


def network_from_edges(n: int, edges, positions=None) -> Network:
    """Build a Network from an iterable of (u, v) pairs, validating shape."""
    if n < 1:
        raise ValueError("n must be at least 1")
    neighbor_sets = [set() for _ in range(n)]
    for u, v in edges:
        u, v = int(u), int(v)
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range for n={n}")
        if u == v:
            raise ValueError(f"self-loop on node {u}")
        neighbor_sets[u].add(v)
        neighbor_sets[v].add(u)
    if positions is not None:
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != (n, 2):
            raise ValueError(f"positions must be ({n}, 2), got {positions.shape}")
    adjacency = tuple(tuple(sorted(s)) for s in neighbor_sets)
    return Network(n=n, adjacency=adjacency, positions=positions)


def is_connected(net: Network) -> bool:
    """Breadth-first reachability: true iff the graph has one component."""
    if net.n == 0:
        return False
    seen = np.zeros(net.n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    count = 1
    while queue:
        u = queue.popleft()
        for v in net.adjacency[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                queue.append(v)
    return count == net.n


def generate_geometric_graph(n: int, side: float, radius: float, rng_seed: int) -> Network:
    """Random geometric graph in an axis-aligned square, redrawn until connected.

    Nodes are placed uniformly in [0, side]^2 and joined whenever their
    Euclidean distance is at most ``radius``. Draws continue from the same
    seeded stream until the graph is connected, up to 1000 attempts.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if side <= 0 or radius <= 0:
        raise ValueError("side and radius must be positive")
    rng = np.random.default_rng(rng_seed)
    for _ in range(1000):
        positions = rng.uniform(0.0, side, size=(n, 2))
        diff = positions[:, None, :] - positions[None, :, :]
        dist2 = np.einsum("ijk,ijk->ij", diff, diff)
        close = dist2 <= radius * radius
        iu, ju = np.triu_indices(n, k=1)
        mask = close[iu, ju]
        net = network_from_edges(n, zip(iu[mask], ju[mask]), positions=positions)
        if is_connected(net):
            return net
    raise RuntimeError("could not generate connected graph")


def nearest_neighbor_weights(net: Network) -> CombinationWeights:
    """Uniform weights over each closed neighborhood: w_ij = 1/(|N_i|+1)."""
    w = np.zeros((net.n, net.n))
    for i, nbrs in enumerate(net.adjacency):
        share = 1.0 / (len(nbrs) + 1)
        w[i, i] = share
        for j in nbrs:
            w[i, j] = share
    return CombinationWeights(w=w)


def metropolis_weights(net: Network) -> CombinationWeights:
    """Metropolis rule: w_ij = 1/(1+max(deg_i, deg_j)), self-weight remainder.

    The edge weights are symmetric, so the row-stochastic result is doubly
    stochastic.
    """
    deg = np.array([len(nbrs) for nbrs in net.adjacency])
    w = np.zeros((net.n, net.n))
    for i, nbrs in enumerate(net.adjacency):
        for j in nbrs:
            w[i, j] = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, i] = 1.0 - w[i].sum()
    return CombinationWeights(w=w)


def render_edge_list(net: Network) -> str:
    """Serialize to text: a node-count header, one "u v" line per edge (u < v),
    and an optional positions section."""
    lines = [f"# nodes: {net.n}"]
    for u, nbrs in enumerate(net.adjacency):
        for v in nbrs:
            if u < v:
                lines.append(f"{u} {v}")
    if net.positions is not None:
        lines.append("# positions")
        for i, (x, y) in enumerate(net.positions):
            lines.append(f"{i} {float(x)!r} {float(y)!r}")
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> Network:
    """Inverse of :func:`render_edge_list`."""
    n = None
    edges = []
    positions = None
    in_positions = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("nodes:"):
                n = int(body.split(":", 1)[1])
                in_positions = False
            elif body == "positions":
                if n is None:
                    raise ValueError("positions section before node count")
                positions = np.zeros((n, 2))
                in_positions = True
            continue
        parts = line.split()
        if in_positions:
            if len(parts) != 3:
                raise ValueError(f"malformed position line: {raw!r}")
            positions[int(parts[0])] = (float(parts[1]), float(parts[2]))
        else:
            if len(parts) != 2:
                raise ValueError(f"malformed edge line: {raw!r}")
            edges.append((int(parts[0]), int(parts[1])))
    if n is None:
        raise ValueError("missing '# nodes:' header")
    return network_from_edges(n, edges, positions=positions)
