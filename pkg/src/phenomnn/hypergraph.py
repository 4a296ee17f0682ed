"""Hypergraph structure and the clique/star expansion operators.

The incidence matrix ``B`` is binary, with ``B[i, k] = 1`` when node ``i``
belongs to hyperedge ``k``.  The clique expansion is kept in its raw
algebraic form ``A_C = B B^T`` (multiplicities and diagonal retained), and
the normalized star contraction is ``A_S_bar = B D_H^{-1} B^T``; the degree
identities tied to those definitions are what the energy and update
formulas rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .linalg import SparseMat

__all__ = [
    "HypergraphError",
    "Hypergraph",
    "parse_hypergraph",
    "load_hypergraph",
    "build_clique",
    "build_star_normalized",
    "build_star_bipartite",
    "uniform_edge_size",
    "precondition_diag",
    "ExpansionOperators",
    "build_expansion_operators",
]


class HypergraphError(ValueError):
    """Raised for malformed hypergraph files or invalid structure."""


@dataclass(eq=False)
class Hypergraph:
    """Validated hypergraph with cached degree views.

    ``edges[k]`` holds the sorted, duplicate-free node ids of hyperedge ``k``;
    ``edge_sizes[k]`` equals the column sum of ``incidence`` column ``k`` and
    ``node_degrees[i]`` the row sum of row ``i``.
    """

    n: int
    m: int
    incidence: SparseMat
    edges: list
    edge_sizes: np.ndarray
    node_degrees: np.ndarray
    collapsed_duplicates: int = 0
    _incidence_t: SparseMat | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_edges(cls, n: int, edges, collapsed_duplicates: int = 0) -> "Hypergraph":
        if n < 1:
            raise HypergraphError(f"node count must be positive, got {n}")
        clean = []
        dups = collapsed_duplicates
        for k, e in enumerate(edges):
            ids = np.asarray(sorted(set(int(i) for i in e)), dtype=np.int64)
            dups += len(list(e)) - ids.size
            if ids.size == 0:
                raise HypergraphError(f"hyperedge {k} is empty")
            if ids[0] < 0 or ids[-1] >= n:
                bad = ids[0] if ids[0] < 0 else ids[-1]
                raise HypergraphError(f"hyperedge {k}: node id {bad} out of range (n={n})")
            clean.append(ids)
        m = len(clean)
        ii = np.concatenate(clean) if clean else np.zeros(0, dtype=np.int64)
        jj = np.concatenate([np.full(e.size, k, dtype=np.int64) for k, e in enumerate(clean)]) if clean else np.zeros(0, dtype=np.int64)
        b = SparseMat.from_coo(n, m, ii, jj, np.ones(ii.size))
        edge_sizes = np.array([e.size for e in clean], dtype=np.float64)
        node_degrees = b.row_sums()
        return cls(
            n=n,
            m=m,
            incidence=b,
            edges=clean,
            edge_sizes=edge_sizes,
            node_degrees=node_degrees,
            collapsed_duplicates=dups,
        )

    def incidence_t(self) -> SparseMat:
        if self._incidence_t is None:
            self._incidence_t = self.incidence.transpose()
        return self._incidence_t


def parse_hypergraph(text: str, source: str = "<string>") -> Hypergraph:
    """Parse the hypergraph text grammar; errors name the offending line."""
    header = None
    edges = []
    n = m = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if header is None:
            parts = line.split()
            if len(parts) != 2:
                raise HypergraphError(f"{source}:{lineno}: expected header 'n m', got {raw!r}")
            try:
                n, m = int(parts[0]), int(parts[1])
            except ValueError:
                raise HypergraphError(f"{source}:{lineno}: expected integer header 'n m', got {raw!r}") from None
            if n < 1 or m < 0:
                raise HypergraphError(f"{source}:{lineno}: invalid sizes n={n} m={m}")
            header = (n, m)
            continue
        if len(edges) >= m:
            raise HypergraphError(f"{source}:{lineno}: unexpected extra line after {m} hyperedges")
        if not line:
            raise HypergraphError(f"{source}:{lineno}: hyperedge {len(edges)} is empty")
        try:
            ids = [int(p) for p in line.split()]
        except ValueError:
            raise HypergraphError(f"{source}:{lineno}: malformed hyperedge line {raw!r}") from None
        for i in ids:
            if i < 0 or i >= n:
                raise HypergraphError(f"{source}:{lineno}: node id {i} out of range (n={n})")
        edges.append(ids)
    if header is None:
        raise HypergraphError(f"{source}: missing header line 'n m'")
    if len(edges) != m:
        raise HypergraphError(f"{source}: expected {m} hyperedges, found {len(edges)}")
    return Hypergraph.from_edges(n, edges)


def load_hypergraph(path) -> Hypergraph:
    with open(path, "r", encoding="utf-8") as f:
        return parse_hypergraph(f.read(), source=str(path))


def build_clique(hg: Hypergraph) -> tuple[SparseMat, np.ndarray]:
    """Clique expansion ``A_C = B B^T`` and its degree diagonal ``D_C = diag(A_C 1)``."""
    b = hg.incidence.to_scipy()
    a_c = SparseMat.from_scipy((b @ b.T).tocsr())
    return a_c, a_c.row_sums()


def build_star_normalized(hg: Hypergraph) -> tuple[SparseMat, np.ndarray]:
    """Normalized star contraction ``A_S_bar = B D_H^{-1} B^T`` with its row-sum diagonal.

    Each row sum equals the node's hyperedge count (the 1/m_e weights of one
    edge add to one), so the diagonal is taken from the exact integer-valued
    degrees rather than accumulated floats; ``D_S_bar[i, i] == node_degrees[i]``
    holds exactly.
    """
    b = hg.incidence.to_scipy()
    inv_dh = sp.diags(1.0 / hg.edge_sizes)
    a_s = SparseMat.from_scipy((b @ inv_dh @ b.T).tocsr())
    return a_s, hg.node_degrees.copy()


def build_star_bipartite(hg: Hypergraph) -> tuple[SparseMat, np.ndarray, SparseMat]:
    """Star expansion over ``n + m`` nodes: adjacency, degree diagonal, Laplacian.

    Hyperedge ``k`` becomes node ``n + k``, joined to each of its members;
    both diagonal blocks are zero by bipartiteness.
    """
    b = hg.incidence.to_scipy()
    zero_nn = sp.csr_matrix((hg.n, hg.n))
    zero_mm = sp.csr_matrix((hg.m, hg.m))
    a_s = sp.bmat([[zero_nn, b], [b.T, zero_mm]], format="csr")
    a_s_mat = SparseMat.from_scipy(a_s)
    d_s = a_s_mat.row_sums()
    l_s = SparseMat.from_scipy((sp.diags(d_s) - a_s).tocsr())
    return a_s_mat, d_s, l_s


def uniform_edge_size(hg: Hypergraph):
    """The common hyperedge cardinality, or None when sizes differ."""
    if hg.m == 0:
        return None
    first = hg.edge_sizes[0]
    if np.all(hg.edge_sizes == first):
        return int(first)
    return None


def precondition_diag(d_c: np.ndarray, d_s_bar: np.ndarray, lambda0: float, lambda1: float) -> np.ndarray:
    """Diagonal preconditioner ``lambda0*D_C + lambda1*D_S_bar + I`` (entrywise >= 1)."""
    if lambda0 < 0 or lambda1 < 0:
        raise ValueError(f"expansion weights must be nonnegative, got {lambda0}, {lambda1}")
    return lambda0 * np.asarray(d_c, dtype=np.float64) + lambda1 * np.asarray(d_s_bar, dtype=np.float64) + 1.0


@dataclass(eq=False)
class ExpansionOperators:
    """Precomputed expansion operators for one ``(lambda0, lambda1)`` pair.

    ``d_tilde`` is the update preconditioner diagonal; ``combined_adjacency``
    caches ``lambda0*A_C + lambda1*A_S_bar`` for the simple update's hot loop.
    """

    a_c: SparseMat
    d_c: np.ndarray
    a_s_bar: SparseMat
    d_s_bar: np.ndarray
    d_h: np.ndarray
    lambda0: float
    lambda1: float
    d_tilde: np.ndarray
    combined_adjacency: SparseMat = field(repr=False, compare=False, default=None)

    @property
    def n(self) -> int:
        return self.a_c.rows


def build_expansion_operators(hg: Hypergraph, lambda0: float, lambda1: float) -> ExpansionOperators:
    a_c, d_c = build_clique(hg)
    a_s_bar, d_s_bar = build_star_normalized(hg)
    d_tilde = precondition_diag(d_c, d_s_bar, lambda0, lambda1)
    combined = SparseMat.from_scipy(
        (lambda0 * a_c.to_scipy() + lambda1 * a_s_bar.to_scipy()).tocsr()
    )
    return ExpansionOperators(
        a_c=a_c,
        d_c=d_c,
        a_s_bar=a_s_bar,
        d_s_bar=d_s_bar,
        d_h=hg.edge_sizes.copy(),
        lambda0=float(lambda0),
        lambda1=float(lambda1),
        d_tilde=d_tilde,
        combined_adjacency=combined,
    )
