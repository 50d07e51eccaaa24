"""Intersection-closed hypergraphs, their nerve and Moebius combinatorics.

Regions are subsets of the vertex set ``{0, ..., N-1}`` stored as integer
bitmasks (bit ``i`` set when vertex ``i`` belongs to the region).  Python
integers are unbounded, so the same encoding serves any number of vertices.
Regions, and chains of regions, are ordered by their bitmask values.
"""
from __future__ import annotations

from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InputError

Region = int
Chain = tuple


def region(vertices: Iterable[int]) -> Region:
    """Bitmask of a collection of vertex ids."""
    mask = 0
    for v in vertices:
        if v < 0:
            raise InputError(f"negative vertex id {v}")
        mask |= 1 << int(v)
    return mask


def members(mask: Region) -> tuple[int, ...]:
    """Ascending vertex ids of a region."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def is_subset(b: Region, a: Region) -> bool:
    return b & ~a == 0


def format_region(mask: Region) -> str:
    if mask == 0:
        return "{}"
    return "{" + ",".join(map(str, members(mask))) + "}"


def format_chain(chain: Sequence[Region]) -> str:
    return " > ".join(format_region(a) for a in chain)


def closure(generators: Iterable[Iterable[int] | Region], omega_size: int,
            include_empty: bool = True) -> "Hypergraph":
    """Smallest intersection-closed family containing ``generators``.

    Generators may be given as vertex collections or bitmasks.  Every vertex
    id must lie in ``range(omega_size)``.
    """
    if omega_size < 0:
        raise InputError("omega_size must be non-negative")
    full = (1 << omega_size) - 1
    regions = set()
    for g in generators:
        mask = g if isinstance(g, int) else region(g)
        if mask & ~full:
            raise InputError(f"region {format_region(mask)} has a vertex outside 0..{omega_size - 1}")
        regions.add(mask)
    if not regions and not include_empty:
        raise InputError("empty generator set")
    frontier = set(regions)
    while frontier:
        fresh = set()
        for a in frontier:
            for b in regions:
                c = a & b
                if c not in regions:
                    fresh.add(c)
        regions |= fresh
        frontier = fresh
    if include_empty:
        regions.add(0)
    return Hypergraph(regions, omega_size)


class Hypergraph:
    """A finite intersection-closed family of regions, ordered by inclusion.

    Parameters
    ----------
    regions : iterable of int
        Bitmasks; the family must already be closed under intersection.
    omega_size : int
        Number of vertices of the ambient set.
    """

    def __init__(self, regions: Iterable[Region], omega_size: int):
        self.omega_size = int(omega_size)
        self.regions: tuple[Region, ...] = tuple(sorted(set(regions)))
        if not self.regions:
            raise InputError("a hypergraph needs at least one region")
        full = (1 << self.omega_size) - 1
        present = set(self.regions)
        for a in self.regions:
            if a < 0 or a & ~full:
                raise InputError(f"region {format_region(a)} is not a subset of the vertex set")
        for i, a in enumerate(self.regions):
            for b in self.regions[i + 1:]:
                if a & b not in present:
                    raise InputError(
                        f"not intersection-closed: {format_region(a)} & {format_region(b)} missing")
        self.index = {a: i for i, a in enumerate(self.regions)}

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    def __contains__(self, a) -> bool:
        return a in self.index

    def __repr__(self) -> str:
        body = ", ".join(format_region(a) for a in self.regions)
        return f"Hypergraph([{body}], omega_size={self.omega_size})"

    @cached_property
    def down_sets(self) -> tuple[tuple[Region, ...], ...]:
        """For each region, the regions it contains (itself included)."""
        return tuple(tuple(b for b in self.regions if is_subset(b, a)) for a in self.regions)

    def down(self, a: Region) -> tuple[Region, ...]:
        return self.down_sets[self.index[a]]

    def strictly_below(self, a: Region) -> tuple[Region, ...]:
        return tuple(b for b in self.down(a) if b != a)

    def up(self, b: Region) -> tuple[Region, ...]:
        """Regions containing ``b`` (itself included)."""
        return tuple(a for a in self.regions if is_subset(b, a))

    @cached_property
    def dimension(self) -> int:
        """Length of the longest strictly decreasing chain."""
        height = {}
        for a in sorted(self.regions, key=lambda m: bin(m).count("1")):
            below = [height[b] for b in self.strictly_below(a)]
            height[a] = 1 + max(below) if below else 0
        return max(height.values())

    def is_graph(self) -> bool:
        return all(bin(a).count("1") <= 2 for a in self.regions)

    # -- nerve ---------------------------------------------------------------

    def nerve(self, degree: int) -> list[Chain]:
        """Strict chains ``a0 > a1 > ... > a_degree`` in canonical order."""
        if degree < 0:
            raise InputError("degree must be non-negative")
        return self._nerve[degree] if degree < len(self._nerve) else []

    @cached_property
    def _nerve(self) -> list[list[Chain]]:
        levels = [[(a,) for a in self.regions]]
        while levels[-1]:
            nxt = [c + (b,) for c in levels[-1] for b in self.strictly_below(c[-1])]
            levels.append(sorted(nxt))
        return levels[:-1]

    def chain_index(self, degree: int) -> dict[Chain, int]:
        return self._chain_index[degree] if degree < len(self._chain_index) else {}

    @cached_property
    def _chain_index(self) -> list[dict[Chain, int]]:
        return [{c: i for i, c in enumerate(level)} for level in self._nerve]

    # -- cones ---------------------------------------------------------------

    def cone(self, chain: Sequence[Region]) -> list[Chain]:
        """Chains swept by the cone under ``chain``.

        The cone of a single region ``a`` is every region below it.  The cone
        of ``a0 > a1 > ... > ar`` prepends to each chain of the cone of
        ``a1 > ... > ar`` a region under ``a0`` that is not under ``a1``.
        """
        chain = tuple(chain)
        for a in chain:
            if a not in self.index:
                raise InputError(f"{format_region(a)} is not a region")
        return sorted(self._cone(chain))

    def _cone(self, chain: Chain) -> list[Chain]:
        if len(chain) == 1:
            return [(b,) for b in self.down(chain[0])]
        tails = self._cone(chain[1:])
        a0, a1 = chain[0], chain[1]
        out = []
        for b0 in self.down(a0):
            if is_subset(b0, a1):
                continue
            out.extend((b0,) + t for t in tails if t[0] != b0 and is_subset(t[0], b0))
        return out

    def coboundary(self, chain: Sequence[Region]) -> list[Chain]:
        """Chains ``c0 > c1 > ...`` with ``c0`` not under ``chain[0]`` and the
        tail in the cone of ``chain``."""
        chain = tuple(chain)
        tails = self.cone(chain)
        out = []
        for c0 in self.regions:
            if is_subset(c0, chain[0]):
                continue
            out.extend((c0,) + t for t in tails if t[0] != c0 and is_subset(t[0], c0))
        return sorted(out)

    # -- Moebius numbers -----------------------------------------------------

    @cached_property
    def zeta_matrix(self) -> sp.csr_matrix:
        """Integer matrix with entry ``[a, b] = 1`` whenever ``b`` is under ``a``."""
        rows, cols = [], []
        for i, a in enumerate(self.regions):
            for b in self.down_sets[i]:
                rows.append(i)
                cols.append(self.index[b])
        n = len(self.regions)
        return sp.csr_matrix((np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n, n))

    @cached_property
    def mobius_matrix(self) -> sp.csr_matrix:
        return unitriangular_inverse(self.zeta_matrix)

    def mobius_numbers(self) -> dict[tuple[Region, Region], int]:
        """Integers ``mu[a, b]`` for every pair ``a >= b``."""
        m = self.mobius_matrix.toarray()
        return {(a, b): int(m[i, self.index[b]])
                for i, a in enumerate(self.regions) for b in self.down_sets[i]}

    def bethe_coefficients(self, method: str = "mobius") -> dict[Region, int]:
        """Integer counting numbers ``c_b``.

        ``method="mobius"`` sums the Moebius numbers ``mu[a, b]`` over
        ``a >= b``; ``method="inclusion_exclusion"`` solves
        ``sum_{a >= b} c_a = 1`` from the top of the order down.
        """
        if method == "mobius":
            col_sums = np.asarray(self.mobius_matrix.sum(axis=0)).ravel()
            return {b: int(col_sums[j]) for j, b in enumerate(self.regions)}
        if method == "inclusion_exclusion":
            coef: dict[Region, int] = {}
            for b in sorted(self.regions, key=lambda m: -bin(m).count("1")):
                coef[b] = 1 - sum(coef[a] for a in self.up(b) if a != b)
            return {b: coef[b] for b in self.regions}
        raise InputError(f"unknown method {method!r}")

    @cached_property
    def bethe_vector(self) -> np.ndarray:
        c = self.bethe_coefficients()
        return np.array([c[a] for a in self.regions], dtype=np.int64)


def unitriangular_inverse(z: sp.spmatrix) -> sp.csr_matrix:
    """Exact inverse of an integer matrix ``1 + n`` with ``n`` nilpotent,
    via the terminating series ``sum_k (-n)^k``."""
    z = sp.csr_matrix(z, dtype=np.int64)
    size = z.shape[0]
    eye = sp.identity(size, dtype=np.int64, format="csr")
    step = -(z - eye)
    step.eliminate_zeros()
    total = eye.copy()
    term = eye
    for _ in range(size + 1):
        term = step @ term
        term.eliminate_zeros()
        if term.nnz == 0:
            return total.tocsr()
        total = total + term
    raise ArithmeticError("matrix is not unitriangular")
