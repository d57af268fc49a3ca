"""Monomial evaluation through a rooted spanning tree.

The multi-index set is viewed as a directed graph with an edge from
alpha~ to alpha whenever alpha = alpha~ + e_j for exactly one coordinate
j.  A breadth-first search from the zero index yields a spanning tree in
which every monomial value follows from its parent with a single
multiplication: phi_alpha(y) = y_j * phi_alpha~(y).  First and second
derivatives reduce to lookups of decremented indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .basis import BasisSet, MultiIndex, downward_closure, grlex_key, support
from .errors import ConnectivityError


@dataclass(frozen=True)
class EvalTree:
    """BFS spanning tree over a multi-index set rooted at the zero index.

    nodes holds the indices in graded order; parent/edge_coord give, for
    each non-root node, the tree parent position and the coordinate j
    with child = parent + e_j.  levels groups nodes by total degree for
    vectorized evaluation (BFS visits whole degree levels in order).
    """

    nodes: BasisSet
    parent: np.ndarray
    edge_coord: np.ndarray
    order: np.ndarray
    levels: tuple

    @property
    def root_position(self) -> int:
        return int(self.order[0])

    def __len__(self) -> int:
        return len(self.nodes)

    def position(self, alpha) -> int:
        return self.nodes.position(alpha)

    def evaluate(self, y, scale: float = 1.0) -> np.ndarray:
        """Values of all node monomials at y (with arguments y / scale).

        y may be a single point of shape (d,) or a batch of shape
        (npts, d); values come back with node position as the leading
        axis.  One multiplication per non-root node.
        """
        y = np.asarray(y, dtype=float)
        single = y.ndim == 1
        ys = np.atleast_2d(y) / scale          # (npts, d)
        npts = ys.shape[0]
        values = np.empty((len(self.nodes), npts))
        values[self.root_position] = 1.0
        for positions, coords, parents in self.levels:
            values[positions] = ys[:, coords].T * values[parents]
        return values[:, 0] if single else values


class EvalResult:
    """Per-point monomial values c(alpha) produced by EvalTree.evaluate."""

    __slots__ = ("tree", "values", "point", "scale")

    def __init__(self, tree: EvalTree, values: np.ndarray, point, scale: float):
        self.tree = tree
        self.values = values
        self.point = np.asarray(point, dtype=float)
        self.scale = scale

    def value_of(self, alpha) -> float:
        return float(self.values[self.tree.position(alpha)])


def build_eval_tree(index_set: BasisSet) -> EvalTree:
    """BFS spanning tree of the multi-index graph, rooted at (0,...,0).

    The root is added if absent.  Neighbors are explored in coordinate
    order, which makes the tree deterministic.  Raises ConnectivityError
    if some index has no predecessor chain down to the root.
    """
    d = index_set.dim
    root: MultiIndex = (0,) * d
    indices = index_set.indices
    if root not in index_set:
        indices = tuple(sorted(indices + (root,), key=grlex_key))
    nodes = BasisSet(dim=d, indices=indices, kind="custom")

    n = len(nodes)
    parent = np.full(n, -1, dtype=np.int64)
    edge_coord = np.full(n, -1, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=bool)

    root_pos = nodes.position(root)
    visited[root_pos] = True
    order[0] = root_pos
    head, tail = 0, 1
    while head < tail:
        pos = int(order[head])
        head += 1
        alpha = nodes.indices[pos]
        for j in range(d):
            child = alpha[:j] + (alpha[j] + 1,) + alpha[j + 1:]
            child_pos = nodes._positions.get(child)
            if child_pos is None or visited[child_pos]:
                continue
            visited[child_pos] = True
            parent[child_pos] = pos
            edge_coord[child_pos] = j
            order[tail] = child_pos
            tail += 1
    if tail < n:
        for alpha in nodes.indices:  # graded order: first unvisited is minimal
            if not visited[nodes.position(alpha)]:
                raise ConnectivityError(alpha)

    return EvalTree(nodes=nodes, parent=parent, edge_coord=edge_coord,
                    order=order, levels=_group_levels(order, parent, edge_coord))


def _group_levels(order, parent, edge_coord) -> tuple:
    """Group non-root BFS positions by tree depth for vectorized sweeps."""
    n = len(order)
    depth = np.zeros(n, dtype=np.int64)
    levels: dict[int, list[int]] = {}
    for pos in order[1:]:
        pos = int(pos)
        depth[pos] = depth[parent[pos]] + 1
        levels.setdefault(int(depth[pos]), []).append(pos)
    grouped = []
    for lev in sorted(levels):
        positions = np.array(levels[lev], dtype=np.int64)
        grouped.append((positions, edge_coord[positions], parent[positions]))
    return tuple(grouped)


def evaluate_all(tree: EvalTree, y, l: float = 1.0) -> EvalResult:
    """Evaluate every node monomial at the single point y with scaling l."""
    return EvalResult(tree, tree.evaluate(np.asarray(y, dtype=float), l), y, l)


def _lookup(tree: EvalTree, alpha: MultiIndex) -> int:
    try:
        return tree.position(alpha)
    except KeyError:
        raise ConnectivityError(alpha) from None


def gradient_of(alpha, result: EvalResult) -> np.ndarray:
    """Gradient of the scaled monomial phi_alpha(y / l) at result.point."""
    alpha = tuple(alpha)
    tree = result.tree
    d = tree.nodes.dim
    grad = np.zeros(d)
    for i in support(alpha):
        down = alpha[:i] + (alpha[i] - 1,) + alpha[i + 1:]
        grad[i] = alpha[i] * result.values[_lookup(tree, down)] / result.scale
    return grad


def hessian_of(alpha, result: EvalResult) -> np.ndarray:
    """Hessian of the scaled monomial phi_alpha(y / l) at result.point."""
    alpha = tuple(alpha)
    tree = result.tree
    d = tree.nodes.dim
    hess = np.zeros((d, d))
    supp = support(alpha)
    inv_l2 = 1.0 / result.scale**2
    for k, i in enumerate(supp):
        if alpha[i] >= 2:
            down = alpha[:i] + (alpha[i] - 2,) + alpha[i + 1:]
            hess[i, i] = alpha[i] * (alpha[i] - 1) \
                * result.values[_lookup(tree, down)] * inv_l2
        for j in supp[k + 1:]:
            down = list(alpha)
            down[i] -= 1
            down[j] -= 1
            val = alpha[i] * alpha[j] * result.values[_lookup(tree, tuple(down))] \
                * inv_l2
            hess[i, j] = val
            hess[j, i] = val
    return hess


def support_subtree(tree: EvalTree, support_positions) -> EvalTree:
    """Minimal sub-tree evaluating the given nodes and their derivatives.

    Contains the root, each requested node, every decrement needed by the
    first/second derivative rules, and all tree ancestors of those.
    """
    nodes = tree.nodes
    needed: set[int] = {tree.root_position}

    def add_with_ancestors(pos: int):
        while pos >= 0 and pos not in needed:
            needed.add(pos)
            pos = int(tree.parent[pos])

    for pos in support_positions:
        pos = int(pos)
        add_with_ancestors(pos)
        alpha = nodes.indices[pos]
        supp = support(alpha)
        for k, i in enumerate(supp):
            down_i = alpha[:i] + (alpha[i] - 1,) + alpha[i + 1:]
            add_with_ancestors(nodes.position(down_i))
            if alpha[i] >= 2:
                down_ii = alpha[:i] + (alpha[i] - 2,) + alpha[i + 1:]
                add_with_ancestors(nodes.position(down_ii))
            for j in supp[k + 1:]:
                down_ij = list(alpha)
                down_ij[i] -= 1
                down_ij[j] -= 1
                add_with_ancestors(nodes.position(tuple(down_ij)))

    kept = tuple(sorted((nodes.indices[p] for p in needed), key=grlex_key))
    return build_eval_tree(BasisSet(dim=nodes.dim, indices=kept, kind="custom"))


class CompiledModel:
    """Flat index arrays for fast value/gradient/Hessian of one model support.

    Built once per coefficient support; evaluation then costs a level
    sweep over a small sub-tree plus vectorized gathers.
    """

    def __init__(self, basis: BasisSet, support_positions: tuple, scale: float):
        self.basis = basis
        self.scale = float(scale)
        self.support_positions = np.array(support_positions, dtype=np.int64)
        d = basis.dim
        terms = [basis.indices[p] for p in support_positions]
        ambient = downward_closure(d, terms)
        self.tree = build_eval_tree(ambient)
        tpos = self.tree.position

        self.val_node = np.array([tpos(a) for a in terms], dtype=np.int64)

        g_term, g_coord, g_node, g_coeff = [], [], [], []
        h_term, h_i, h_j, h_node, h_coeff = [], [], [], [], []
        for k, alpha in enumerate(terms):
            supp = support(alpha)
            for idx, i in enumerate(supp):
                down = alpha[:i] + (alpha[i] - 1,) + alpha[i + 1:]
                g_term.append(k)
                g_coord.append(i)
                g_node.append(tpos(down))
                g_coeff.append(alpha[i])
                if alpha[i] >= 2:
                    down2 = alpha[:i] + (alpha[i] - 2,) + alpha[i + 1:]
                    h_term.append(k)
                    h_i.append(i)
                    h_j.append(i)
                    h_node.append(tpos(down2))
                    h_coeff.append(alpha[i] * (alpha[i] - 1))
                for j in supp[idx + 1:]:
                    dm = list(alpha)
                    dm[i] -= 1
                    dm[j] -= 1
                    h_term.append(k)
                    h_i.append(i)
                    h_j.append(j)
                    h_node.append(tpos(tuple(dm)))
                    h_coeff.append(alpha[i] * alpha[j])

        self.g_term = np.array(g_term, dtype=np.int64)
        self.g_coord = np.array(g_coord, dtype=np.int64)
        self.g_node = np.array(g_node, dtype=np.int64)
        self.g_coeff = np.array(g_coeff, dtype=float) / self.scale
        self.h_term = np.array(h_term, dtype=np.int64)
        self.h_i = np.array(h_i, dtype=np.int64)
        self.h_j = np.array(h_j, dtype=np.int64)
        self.h_node = np.array(h_node, dtype=np.int64)
        self.h_coeff = np.array(h_coeff, dtype=float) / self.scale**2
        self.dim = d

    def _coeffs(self, theta: np.ndarray) -> np.ndarray:
        return np.asarray(theta, dtype=float)[self.support_positions]

    def value_grad(self, theta, y):
        """(v, grad v) at a single point y."""
        c = self._coeffs(theta)
        vals = self.tree.evaluate(y, self.scale)
        v = float(c @ vals[self.val_node])
        grad = np.zeros(self.dim)
        np.add.at(grad, self.g_coord,
                  c[self.g_term] * self.g_coeff * vals[self.g_node])
        return v, grad

    def value_grad_hess(self, theta, y):
        """(v, grad v, hess v) at a single point y."""
        c = self._coeffs(theta)
        vals = self.tree.evaluate(y, self.scale)
        v = float(c @ vals[self.val_node])
        grad = np.zeros(self.dim)
        np.add.at(grad, self.g_coord,
                  c[self.g_term] * self.g_coeff * vals[self.g_node])
        hess = np.zeros((self.dim, self.dim))
        hv = c[self.h_term] * self.h_coeff * vals[self.h_node]
        np.add.at(hess, (self.h_i, self.h_j), hv)
        off = self.h_i != self.h_j
        np.add.at(hess, (self.h_j[off], self.h_i[off]), hv[off])
        return v, grad, hess

    def batch(self, theta, Y, want_hess: bool = False):
        """Values/gradients (and optionally Hessians) at points Y (npts, d)."""
        c = self._coeffs(theta)
        vals = self.tree.evaluate(Y, self.scale)        # (nodes, npts)
        npts = vals.shape[1]
        v = c @ vals[self.val_node]
        grad = np.zeros((self.dim, npts))
        np.add.at(grad, self.g_coord,
                  (c[self.g_term] * self.g_coeff)[:, None] * vals[self.g_node])
        if not want_hess:
            return v, grad.T, None
        hess = np.zeros((self.dim, self.dim, npts))
        hv = (c[self.h_term] * self.h_coeff)[:, None] * vals[self.h_node]
        np.add.at(hess, (self.h_i, self.h_j), hv)
        off = self.h_i != self.h_j
        np.add.at(hess, (self.h_j[off], self.h_i[off]), hv[off])
        return v, grad.T, np.moveaxis(hess, 2, 0)


@lru_cache(maxsize=128)
def _compiled(basis: BasisSet, support_positions: tuple, scale: float) -> CompiledModel:
    return CompiledModel(basis, support_positions, scale)


def compiled_for(basis: BasisSet, theta, scale: float) -> CompiledModel:
    supp = tuple(int(k) for k in np.flatnonzero(np.asarray(theta)))
    return _compiled(basis, supp, float(scale))


class BasisGradientTable:
    """Per-basis arrays for assembling d(phi_k)/dy contracted with a vector.

    Used by the objective gradient, which needs grad(phi_k)^T w for every
    basis element k along whole trajectories at once.
    """

    def __init__(self, basis: BasisSet, scale: float):
        self.basis = basis
        self.scale = float(scale)
        ambient = downward_closure(basis.dim, basis.indices)
        self.tree = build_eval_tree(ambient)
        term, coord, node, coeff = [], [], [], []
        for k, alpha in enumerate(basis.indices):
            for i in support(alpha):
                down = alpha[:i] + (alpha[i] - 1,) + alpha[i + 1:]
                term.append(k)
                coord.append(i)
                node.append(self.tree.position(down))
                coeff.append(alpha[i])
        self.term = np.array(term, dtype=np.int64)
        self.coord = np.array(coord, dtype=np.int64)
        self.node = np.array(node, dtype=np.int64)
        self.coeff = np.array(coeff, dtype=float) / self.scale

    def contracted_gradients(self, Y: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Matrix of grad(phi_k)(y_t)^T w_t, shape (M, npts).

        Y and W have shape (npts, d).  Rows for monomials whose support
        coordinates meet only zero entries of W come out exactly zero.
        """
        vals = self.tree.evaluate(Y, self.scale)          # (nodes, npts)
        contrib = self.coeff[:, None] * vals[self.node] * W.T[self.coord]
        out = np.zeros((len(self.basis), Y.shape[0]))
        np.add.at(out, self.term, contrib)
        return out


@lru_cache(maxsize=32)
def gradient_table(basis: BasisSet, scale: float) -> BasisGradientTable:
    return BasisGradientTable(basis, scale)
