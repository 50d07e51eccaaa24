"""Fields on the nerve of a hypergraph and the linear operators acting on them.

A field of degree ``r`` assigns to every strict chain ``a0 > ... > ar`` a
real function of the configurations of its last region ``ar``.  Fields are
stored as flat arrays: chains in canonical order, and inside each block the
configurations of ``ar`` in row-major order over its ascending vertex ids.
Functions of the operators accept either a vector ``(dim,)`` or a batch of
columns ``(dim, batch)``.

Operators are assembled once per (hypergraph, shape) as sparse matrices:

* ``delta(r)``: degree ``r`` to ``r - 1`` (alternating sum of faces, the last
  face extended into the larger region),
* ``d(r)``: dual fields of degree ``r`` to ``r + 1`` (its transpose, built
  separately from marginalisations),
* ``zeta(r)`` / ``mu(r)``: summation over cones and its inverse,
* ``check_delta(r)``: the composite ``zeta . delta . mu`` written directly
  with counting numbers.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, InputError, ResourceError
from .hypergraph import Chain, Hypergraph, Region, is_subset, members, unitriangular_inverse

INTEGRATE_CAP = 2 ** 20


class Shape:
    """Cardinalities ``|E_i|`` of the local configuration spaces."""

    def __init__(self, cardinalities: Iterable[int]):
        cards = tuple(int(c) for c in cardinalities)
        if any(c < 1 for c in cards):
            raise InputError("cardinalities must be positive")
        self.cardinalities = cards

    def __len__(self):
        return len(self.cardinalities)

    def __eq__(self, other):
        return isinstance(other, Shape) and other.cardinalities == self.cardinalities

    def __hash__(self):
        return hash(self.cardinalities)

    def __repr__(self):
        return f"Shape({list(self.cardinalities)})"

    def dims(self, a: Region) -> tuple[int, ...]:
        return tuple(self.cardinalities[v] for v in members(a))

    def size(self, a: Region) -> int:
        return int(np.prod(self.dims(a), dtype=np.int64))


@lru_cache(maxsize=4096)
def _restriction(cards: tuple[int, ...], a: Region, b: Region) -> np.ndarray:
    """For every configuration of ``a`` (flat index), the flat index of its
    restriction to ``b``."""
    va, vb = members(a), members(b)
    dims_a = tuple(cards[v] for v in va)
    size_a = int(np.prod(dims_a, dtype=np.int64))
    if not vb:
        return np.zeros(size_a, dtype=np.int64)
    grid = np.indices(dims_a).reshape(len(va), size_a)
    pos = [va.index(v) for v in vb]
    idx = np.ravel_multi_index(tuple(grid[pos]), tuple(cards[v] for v in vb))
    idx.setflags(write=False)
    return idx


def restriction(shape: Shape, a: Region, b: Region) -> np.ndarray:
    if not is_subset(b, a):
        raise InputError("restriction needs b to be a subset of a")
    return _restriction(shape.cardinalities, a, b)


def extend(values: np.ndarray, b: Region, a: Region, shape: Shape) -> np.ndarray:
    """Cylindrical extension of a function on ``E_b`` to ``E_a``."""
    return np.asarray(values)[restriction(shape, a, b)]


def marginalize(values: np.ndarray, a: Region, b: Region, shape: Shape) -> np.ndarray:
    """Partial sum of a function on ``E_a`` down to ``E_b``."""
    values = np.asarray(values)
    out = np.zeros((shape.size(b),) + values.shape[1:], dtype=np.result_type(values, float))
    np.add.at(out, restriction(shape, a, b), values)
    return out


@dataclass(frozen=True)
class Layout:
    chains: list
    offsets: np.ndarray
    sizes: np.ndarray
    dim: int
    index: dict


class Complex:
    """Nerve of ``K`` together with the local configuration spaces."""

    def __init__(self, K: Hypergraph, shape: Shape):
        if len(shape) != K.omega_size:
            raise InputError(f"shape has {len(shape)} cardinalities for {K.omega_size} vertices")
        self.K = K
        self.shape = shape
        self._layouts: dict[int, Layout] = {}
        self._ops: dict[tuple, sp.csr_matrix] = {}

    def __repr__(self):
        return f"Complex({self.K!r}, {self.shape!r})"

    # -- layout --------------------------------------------------------------

    def layout(self, degree: int) -> Layout:
        if degree not in self._layouts:
            if degree < 0:
                raise DomainError("degree must be non-negative")
            chains = self.K.nerve(degree)
            sizes = np.array([self.shape.size(c[-1]) for c in chains], dtype=np.int64)
            offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
            self._layouts[degree] = Layout(chains, offsets, sizes, int(offsets[-1]),
                                           self.K.chain_index(degree))
        return self._layouts[degree]

    def dim(self, degree: int) -> int:
        return self.layout(degree).dim

    def block(self, field: np.ndarray, degree: int, chain: Sequence[Region]) -> np.ndarray:
        """View of the block of ``field`` on ``chain``."""
        lay = self.layout(degree)
        i = lay.index[tuple(chain)]
        return field[lay.offsets[i]:lay.offsets[i + 1]]

    def split(self, field: np.ndarray, degree: int) -> dict[Chain, np.ndarray]:
        lay = self.layout(degree)
        self._check(field, degree)
        return {c: field[lay.offsets[i]:lay.offsets[i + 1]] for i, c in enumerate(lay.chains)}

    def join(self, blocks: dict, degree: int) -> np.ndarray:
        """Assemble a field from ``{chain: values}``; missing chains are zero.

        Degree-0 keys may be bare regions instead of 1-tuples.
        """
        lay = self.layout(degree)
        out = np.zeros(lay.dim)
        for key, values in blocks.items():
            chain = (key,) if isinstance(key, int) else tuple(key)
            if chain not in lay.index:
                raise InputError(f"{chain} is not a chain of degree {degree}")
            i = lay.index[chain]
            values = np.asarray(values, dtype=float).ravel()
            if values.size != lay.sizes[i]:
                raise InputError(f"block for {chain} has {values.size} values, expected {lay.sizes[i]}")
            out[lay.offsets[i]:lay.offsets[i + 1]] = values
        return out

    def _check(self, field, degree):
        if np.shape(field)[0] != self.dim(degree):
            raise DomainError(f"field has length {np.shape(field)[0]}, degree {degree} needs {self.dim(degree)}")

    @cached_property
    def region_of(self) -> np.ndarray:
        """Region index of every degree-0 coordinate."""
        lay = self.layout(0)
        return np.repeat(np.arange(len(lay.chains)), lay.sizes)

    @cached_property
    def region_starts(self) -> np.ndarray:
        return self.layout(0).offsets[:-1]

    def region_sum(self, field: np.ndarray) -> np.ndarray:
        """Sum of a degree-0 field over each region's configurations."""
        return np.add.reduceat(field, self.region_starts, axis=0)

    def region_max(self, field: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(field, self.region_starts, axis=0)

    def restriction(self, a: Region, b: Region) -> np.ndarray:
        return restriction(self.shape, a, b)

    # -- sparse assembly -----------------------------------------------------

    def _assemble(self, row_degree: int, col_degree: int, triples, kind: str) -> sp.csr_matrix:
        """Block matrix from chain-level ``(row, col, coefficient)`` triples.

        ``kind="extend"`` places ``coefficient * extension(col last -> row last)``;
        ``kind="marginalize"`` places the marginalisation the other way.
        """
        rl, cl = self.layout(row_degree), self.layout(col_degree)
        rows, cols, data = [], [], []
        for i, j, coef in triples:
            if coef == 0:
                continue
            big_row = kind == "extend"
            a = rl.chains[i][-1] if big_row else cl.chains[j][-1]
            b = cl.chains[j][-1] if big_row else rl.chains[i][-1]
            idx = restriction(self.shape, a, b)
            local = np.arange(idx.size)
            if big_row:
                rows.append(rl.offsets[i] + local)
                cols.append(cl.offsets[j] + idx)
            else:
                rows.append(rl.offsets[i] + idx)
                cols.append(cl.offsets[j] + local)
            data.append(np.full(idx.size, float(coef)))
        if rows:
            rows, cols, data = np.concatenate(rows), np.concatenate(cols), np.concatenate(data)
        m = sp.coo_matrix((data, (rows, cols)), shape=(rl.dim, cl.dim)).tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        return m

    def cached(self, key, build):
        """Memoise a derived operator under ``key``."""
        if key not in self._ops:
            self._ops[key] = build()
        return self._ops[key]

    def _chain_matrix(self, row_degree, col_degree, triples) -> sp.csr_matrix:
        rows, cols, data = [], [], []
        for i, j, c in triples:
            rows.append(i)
            cols.append(j)
            data.append(c)
        shape = (len(self.layout(row_degree).chains), len(self.layout(col_degree).chains))
        return sp.csr_matrix((np.array(data, dtype=np.int64), (rows, cols)), shape=shape)

    @staticmethod
    def _triples(m: sp.spmatrix):
        m = m.tocoo()
        return zip(m.row.tolist(), m.col.tolist(), m.data.tolist())

    # -- operators -----------------------------------------------------------

    def _face_incidence(self, degree: int):
        """Triples ``(face, chain, sign)`` for chains of ``degree`` >= 1."""
        lay, low = self.layout(degree), self.layout(degree - 1)
        for j, c in enumerate(lay.chains):
            for k in range(degree + 1):
                yield low.index[c[:k] + c[k + 1:]], j, (-1) ** k

    def delta(self, degree: int) -> sp.csr_matrix:
        """Differential from degree ``degree`` fields to degree ``degree - 1``."""
        if degree < 1:
            raise DomainError("delta is defined from degree 1 upwards")
        return self.cached(("delta", degree), lambda: self._assemble(
            degree - 1, degree, self._face_incidence(degree), "extend"))

    def d(self, degree: int) -> sp.csr_matrix:
        """Differential on dual fields from degree ``degree`` to ``degree + 1``."""
        if degree < 0:
            raise DomainError("degree must be non-negative")

        def build():
            lay, low = self.layout(degree + 1), self.layout(degree)
            triples = []
            for i, a in enumerate(lay.chains):
                for k in range(degree + 2):
                    triples.append((i, low.index[a[:k] + a[k + 1:]], (-1) ** k))
            return self._assemble(degree + 1, degree, triples, "marginalize")
        return self.cached(("d", degree), build)

    def zeta_chains(self, degree: int) -> sp.csr_matrix:
        """Integer chain-level matrix of the cone sums."""
        def build():
            lay = self.layout(degree)
            triples = ((i, lay.index[b], 1) for i, a in enumerate(lay.chains) for b in self.K._cone(a))
            return self._chain_matrix(degree, degree, triples)
        return self.cached(("zeta_chains", degree), build)

    def zeta(self, degree: int) -> sp.csr_matrix:
        return self.cached(("zeta", degree), lambda: self._assemble(
            degree, degree, self._triples(self.zeta_chains(degree)), "extend"))

    def mu_series_chains(self, degree: int) -> sp.csr_matrix:
        """Chain-level inverse of the cone sums by the alternating series."""
        return self.cached(("mu_series_chains", degree),
                            lambda: unitriangular_inverse(self.zeta_chains(degree)))

    def mu_series(self, degree: int) -> sp.csr_matrix:
        return self.cached(("mu_series", degree), lambda: self._assemble(
            degree, degree, self._triples(self.mu_series_chains(degree)), "extend"))

    def mu_chains(self, degree: int) -> sp.csr_matrix:
        """Chain-level Moebius inversion from Moebius numbers of regions.

        The value on ``a0 > ... > ar`` sums, over regions ``b_j`` under ``a_j``
        with ``b_j`` not under ``b_{j+1}``, the product of ``mu[a_j, b_j]``
        times the input on the chain of running intersections
        ``b0 > b0&b1 > ... > b0&...&br``.  Degenerate intersection chains
        contribute nothing.
        """
        def build():
            lay = self.layout(degree)
            mob = self.K.mobius_numbers()
            triples = []
            for i, a in enumerate(lay.chains):
                acc: dict[int, int] = {}
                self._mu_terms(a, degree, [], 1, mob, lay.index, acc)
                triples.extend((i, j, c) for j, c in acc.items() if c)
            return self._chain_matrix(degree, degree, triples)
        return self.cached(("mu_chains", degree), build)

    def _mu_terms(self, a, j, chosen, coef, mob, index, acc):
        # ``chosen`` holds b_{j+1}, ..., b_r
        if j < 0:
            run = chosen[0]
            target = [run]
            for b in chosen[1:]:
                nxt = run & b
                if nxt == run:
                    return
                target.append(nxt)
                run = nxt
            key = index[tuple(target)]
            acc[key] = acc.get(key, 0) + coef
            return
        for b in self.K.down(a[j]):
            if chosen and is_subset(b, chosen[0]):
                continue
            m = mob[(a[j], b)]
            if m:
                self._mu_terms(a, j - 1, [b] + chosen, coef * m, mob, index, acc)

    def mu(self, degree: int) -> sp.csr_matrix:
        return self.cached(("mu", degree), lambda: self._assemble(
            degree, degree, self._triples(self.mu_chains(degree)), "extend"))

    def check_delta(self, degree: int) -> sp.csr_matrix:
        """Composite ``zeta . delta . mu`` from degree ``degree`` to ``degree - 1``.

        On the chain ``a1 > ... > ar`` it sums ``c[a0] * Phi`` on
        ``a0 > a0&a1 > ... > a0&ar`` over regions ``a0`` not under ``a1``.
        """
        if degree < 1:
            raise DomainError("check_delta is defined from degree 1 upwards")

        def build():
            low, lay = self.layout(degree - 1), self.layout(degree)
            coef = self.K.bethe_coefficients()
            triples = []
            for i, tail in enumerate(low.chains):
                for a0 in self.K.regions:
                    c = coef[a0]
                    if c == 0 or is_subset(a0, tail[0]):
                        continue
                    target = (a0,) + tuple(a0 & t for t in tail)
                    if all(target[k] != target[k + 1] for k in range(degree)):
                        triples.append((i, lay.index[target], c))
            return self._assemble(degree - 1, degree, triples, "extend")
        return self.cached(("check_delta", degree), build)

    def extension(self, a: Region, b: Region) -> sp.csr_matrix:
        """Matrix of the extension from ``E_b`` to ``E_a``."""
        idx = self.restriction(a, b)
        return sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), idx)),
                             shape=(idx.size, self.shape.size(b)))

    # -- integration ---------------------------------------------------------

    def integrate(self, field: np.ndarray, degree: int, domain: Iterable[Sequence[Region]],
                  target: Region | None = None, cap: int = INTEGRATE_CAP):
        """Sum of the blocks of ``field`` on ``domain``, extended to a common region.

        Returns ``(region, values)`` where ``region`` is ``target`` or, by
        default, the union of the last regions of the domain chains.
        """
        self._check(field, degree)
        domain = [tuple(c) for c in domain]
        union = 0
        for c in domain:
            union |= c[-1]
        if target is None:
            target = union
        elif not is_subset(union, target):
            raise DomainError("target region does not contain the domain")
        size = self.shape.size(target)
        if size > cap:
            raise ResourceError(f"integration region has {size} configurations (cap {cap})")
        out = np.zeros((size,) + np.shape(field)[1:])
        for c in domain:
            out += self.block(field, degree, c)[self.restriction(target, c[-1])]
        return target, out
