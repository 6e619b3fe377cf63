"""Network topologies, Laplacians and random link-failure models."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

SYMMETRY_TOL = 1e-9
PSD_TOL = 1e-9
CONNECTIVITY_TOL = 1e-9


@dataclass(frozen=True)
class Topology:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    ``realizable_edges`` is the set of links that may ever carry a message.
    Edges are stored as sorted ``(u, v)`` pairs with ``u < v``, in a fixed
    order so that per-edge random draws are reproducible.
    """

    n_nodes: int
    realizable_edges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 1:
            raise ValueError(f"n_nodes must be a positive integer, got {self.n_nodes!r}")
        seen = set()
        normalized = []
        for edge in self.realizable_edges:
            u, v = (int(k) for k in edge)
            if u == v:
                raise ValueError(f"self-loop at node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ValueError(f"edge ({u}, {v}) has a node outside [0, {self.n_nodes})")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
            normalized.append(key)
        object.__setattr__(self, "n_nodes", int(self.n_nodes))
        object.__setattr__(self, "realizable_edges", tuple(sorted(normalized)))

    @property
    def n_edges(self) -> int:
        return len(self.realizable_edges)

    def edge_array(self) -> np.ndarray:
        """Edges as an ``(M, 2)`` integer array."""
        return np.asarray(self.realizable_edges, dtype=np.intp).reshape(-1, 2)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.intp)
        edges = self.edge_array()
        np.add.at(deg, edges[:, 0], 1)
        np.add.at(deg, edges[:, 1], 1)
        return deg


# ---------------------------------------------------------------------------
# generators

def path_graph(n: int) -> Topology:
    return Topology(n, tuple((k, k + 1) for k in range(n - 1)))


def ring_graph(n: int) -> Topology:
    if n < 3:
        raise ValueError("a ring needs at least 3 nodes")
    return Topology(n, tuple((k, (k + 1) % n) for k in range(n)))


def complete_graph(n: int) -> Topology:
    return Topology(n, tuple((u, v) for u in range(n) for v in range(u + 1, n)))


def circulant_graph(n: int, k: int) -> Topology:
    """k-regular circulant: node i is linked to i +/- 1, ..., i +/- k/2 (mod n)."""
    if k % 2 or k < 2:
        raise ValueError("k must be a positive even integer")
    if k >= n:
        raise ValueError("k must be smaller than n")
    edges = set()
    for i in range(n):
        for off in range(1, k // 2 + 1):
            j = (i + off) % n
            edges.add((min(i, j), max(i, j)))
    return Topology(n, tuple(edges))


GENERATORS = {
    "path": path_graph,
    "ring": ring_graph,
    "complete": complete_graph,
    "circulant": circulant_graph,
}


# ---------------------------------------------------------------------------
# edge-list files

def parse_edge_list(text: str) -> Topology:
    """Parse the plain-text edge-list format.

    One edge per line as two whitespace-separated 0-based node indices.
    ``#`` starts a comment. An optional ``N <count>`` line fixes the node
    count, otherwise it is one more than the largest index seen.
    """
    n_declared = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "N":
            if len(parts) != 2 or n_declared is not None:
                raise ValueError(f"line {lineno}: malformed node-count header {raw!r}")
            n_declared = int(parts[1])
            continue
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected two node indices, got {raw!r}")
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ValueError(f"line {lineno}: non-integer node index in {raw!r}") from None
        if u < 0 or v < 0:
            raise ValueError(f"line {lineno}: negative node index")
        edges.append((u, v))
    if n_declared is None:
        if not edges:
            raise ValueError("empty edge list without an 'N <count>' header")
        n_declared = 1 + max(max(e) for e in edges)
    return Topology(n_declared, tuple(edges))


def read_edge_list(path) -> Topology:
    return parse_edge_list(Path(path).read_text())


def format_edge_list(topology: Topology) -> str:
    lines = [f"N {topology.n_nodes}"]
    lines += [f"{u} {v}" for u, v in topology.realizable_edges]
    return "\n".join(lines) + "\n"


def write_edge_list(topology: Topology, path) -> None:
    Path(path).write_text(format_edge_list(topology))


# ---------------------------------------------------------------------------
# Laplacians and spectra

def laplacian(topology: Topology, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """L = D - A, optionally restricted to the edges where ``mask`` is true."""
    n = topology.n_nodes
    L = np.zeros((n, n))
    edges = topology.edge_array()
    if mask is not None:
        edges = edges[np.asarray(mask, dtype=bool)]
    u, v = edges[:, 0], edges[:, 1]
    np.add.at(L, (u, v), -1.0)
    np.add.at(L, (v, u), -1.0)
    np.add.at(L, (u, u), 1.0)
    np.add.at(L, (v, v), 1.0)
    return L


@dataclass(frozen=True)
class SpectralSummary:
    lambda2: float
    lambdaN: float
    eigenvalues: np.ndarray = field(repr=False, compare=False)

    @property
    def connected_on_average(self) -> bool:
        return self.lambda2 > CONNECTIVITY_TOL


def check_laplacian(L: np.ndarray) -> np.ndarray:
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"Laplacian must be square, got shape {L.shape}")
    asym = np.max(np.abs(L - L.T)) if L.size else 0.0
    if asym > SYMMETRY_TOL:
        raise ValueError(f"Laplacian is not symmetric (max asymmetry {asym:.3g})")
    return L


def spectral(L: np.ndarray) -> SpectralSummary:
    """Algebraic connectivity and largest eigenvalue of a Laplacian."""
    L = check_laplacian(L)
    eig = np.linalg.eigvalsh(0.5 * (L + L.T))
    if eig.size and eig[0] < -PSD_TOL:
        raise ValueError(f"Laplacian is not positive semidefinite (min eigenvalue {eig[0]:.3g})")
    eig = np.clip(eig, 0.0, None)
    lam2 = float(eig[1]) if eig.size > 1 else 0.0
    lamN = float(eig[-1]) if eig.size else 0.0
    return SpectralSummary(lam2, lamN, eig)


# ---------------------------------------------------------------------------
# link failures

FIXED = "fixed"
ERASURE = "erasure"
GOSSIP = "gossip"

EdgeSampler = Callable[[np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class LinkFailureModel:
    """Distribution of the per-iteration active edge set M(i).

    ``variant`` is one of ``"fixed"``, ``"erasure"`` (each realizable edge
    fails independently with probability ``p_fail``) or ``"gossip"`` (one
    uniformly chosen edge per iteration).

    A custom ``sampler`` may replace the built-in draw; it maps a generator
    to a boolean mask over ``base.realizable_edges`` and must come with its
    analytic ``mean`` Laplacian.
    """

    base: Topology
    variant: str = FIXED
    p_fail: float = 0.0
    sampler: Optional[EdgeSampler] = field(default=None, compare=False)
    mean: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.variant not in (FIXED, ERASURE, GOSSIP):
            raise ValueError(f"unknown link failure variant {self.variant!r}")
        if self.variant == ERASURE and not 0.0 <= self.p_fail <= 1.0:
            raise ValueError(f"p_fail must lie in [0, 1], got {self.p_fail}")
        if self.variant == GOSSIP and self.base.n_edges == 0:
            raise ValueError("gossip needs at least one realizable edge")
        if self.sampler is not None and self.mean is None:
            raise ValueError("a custom sampler needs its analytic mean Laplacian")

    @classmethod
    def fixed(cls, base: Topology) -> "LinkFailureModel":
        return cls(base, FIXED)

    @classmethod
    def erasure(cls, base: Topology, p_fail: float) -> "LinkFailureModel":
        return cls(base, ERASURE, p_fail=float(p_fail))

    @classmethod
    def gossip(cls, base: Topology) -> "LinkFailureModel":
        return cls(base, GOSSIP)

    @property
    def n_nodes(self) -> int:
        return self.base.n_nodes

    @property
    def n_edges(self) -> int:
        return self.base.n_edges


def mean_laplacian(model: LinkFailureModel) -> np.ndarray:
    """Analytic expectation of the sampled Laplacian."""
    if model.mean is not None:
        return check_laplacian(model.mean).copy()
    L = laplacian(model.base)
    if model.variant == ERASURE:
        return (1.0 - model.p_fail) * L
    if model.variant == GOSSIP:
        if model.n_edges == 0:
            raise ValueError("gossip mean undefined without realizable edges")
        return L / model.n_edges
    return L


def expected_active_edges_sq(model: LinkFailureModel) -> float:
    """E|M(i)|^2 for the built-in models."""
    m = model.n_edges
    if model.sampler is not None:
        raise ValueError("E|M(i)|^2 is not known analytically for a custom sampler")
    if model.variant == GOSSIP:
        return 1.0
    if model.variant == ERASURE:
        keep = 1.0 - model.p_fail
        return m * (m - 1) * keep**2 + m * keep
    return float(m * m)


def sample_edges_block(model: LinkFailureModel, rng: np.random.Generator, size: int) -> np.ndarray:
    """Active-edge masks for ``size`` consecutive iterations, shape (size, M).

    Built-in models consume only uniform doubles from ``rng`` (M per
    iteration for erasure, one for gossip, none when fixed), so splitting a
    run into blocks of any length yields the same sequence of topologies.
    """
    m = model.n_edges
    if model.sampler is not None:
        return np.array([np.asarray(model.sampler(rng), dtype=bool) for _ in range(size)]).reshape(size, m)
    if model.variant == ERASURE:
        return rng.random((size, m)) >= model.p_fail
    if model.variant == GOSSIP:
        pick = np.minimum((rng.random(size) * m).astype(np.intp), m - 1)
        mask = np.zeros((size, m), dtype=bool)
        mask[np.arange(size), pick] = True
        return mask
    return np.ones((size, m), dtype=bool)


def sample_edges(model: LinkFailureModel, rng: np.random.Generator) -> np.ndarray:
    """Active-edge mask for a single iteration."""
    return sample_edges_block(model, rng, 1)[0]


def sample_topology(model: LinkFailureModel, rng: np.random.Generator) -> np.ndarray:
    """One realization L(i) of the random Laplacian."""
    return laplacian(model.base, sample_edges(model, rng))


def build_model(topology: Topology, variant: str = FIXED, p_fail: float = 0.0) -> LinkFailureModel:
    if variant == ERASURE:
        return LinkFailureModel.erasure(topology, p_fail)
    if variant == GOSSIP:
        return LinkFailureModel.gossip(topology)
    if variant == FIXED:
        return LinkFailureModel.fixed(topology)
    raise ValueError(f"unknown link failure variant {variant!r}")


def is_connected(topology: Topology) -> bool:
    return spectral(laplacian(topology)).connected_on_average

