"""Linearised diffusion, its kernel, and loop-series characteristic polynomials.

At consistent beliefs ``p`` the GBP field linearises to
``delta . nabla_p . zeta`` where ``nabla_p`` replaces each 1-chain ``a -> b``
by ``V'_b - E_{p_a}[V'_a | x_b]``.  Its kernel on ``delta C_1`` measures how
degenerate the stationary beliefs are.

For binary pairwise models the same kernel is described by the edge
propagator: a weighted graph on directed edges ``ij -> j`` with an arc
``(ij -> j) -> (jk -> k)`` for every ``i != k``, weighted by the correlation
``eta_jk`` of the pair belief.  Its characteristic polynomial is computed both
as a determinant and as a sum over families of disjoint cycles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .complex import Complex
from .diffusion import Flux, RunConfig, _gradient_parts, euler_run
from .errors import DomainError, InputError, ResourceError, UnsupportedModelError
from .gibbs import bethe_free_energy, consistency_residual
from .hypergraph import format_region, members


def nabla(C: Complex, p: np.ndarray) -> sp.csr_matrix:
    """Matrix of ``V' -> V'_b - E_{p_a}[V'_a | x_b]`` from degree 0 to degree 1."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0):
        raise DomainError("beliefs must be positive")
    target, source, _ = _gradient_parts(C)
    mass = source @ p
    return (target - sp.diags(1.0 / mass) @ source @ sp.diags(p)).tocsr()


@dataclass
class Linearization:
    """Restriction of ``delta . nabla_p . zeta`` to boundaries.

    ``basis`` has orthonormal columns spanning ``delta C_1`` and ``matrix`` is
    the operator in that basis.
    """
    basis: np.ndarray
    matrix: np.ndarray
    operator: np.ndarray

    @property
    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def corank(self, tol: float = 1e-7) -> int:
        s = self.singular_values
        if s.size == 0:
            return 0
        return int(np.sum(s < tol * max(s.max(), 1e-300)))

    def kernel(self, tol: float = 1e-7) -> np.ndarray:
        """Degree-0 fields (columns) spanning the numerical kernel."""
        u, s, vt = np.linalg.svd(self.matrix)
        small = s < tol * max(s.max(), 1e-300) if s.size else np.zeros(0, bool)
        return self.basis @ vt[small].T


def boundary_basis(C: Complex, rtol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the image of ``delta`` on 1-fields."""
    if C.dim(1) == 0:
        return np.zeros((C.dim(0), 0))
    return C.cached(("boundary_basis", rtol), lambda: la.orth(C.delta(1).toarray(), rcond=rtol))


def linearized_diffusion(C: Complex, p: np.ndarray, min_mass: float = 1e-12) -> Linearization:
    """``delta . nabla_p . zeta`` on ``delta C_1`` at consistent beliefs ``p``."""
    p = np.asarray(p, dtype=float)
    if np.min(p) < min_mass:
        raise DomainError("beliefs too close to the boundary of the simplex")
    op = (C.delta(1) @ nabla(C, p) @ C.zeta(0)).toarray()
    Q = boundary_basis(C)
    return Linearization(Q, Q.T @ op @ Q, op)


def corank(C: Complex, p: np.ndarray, tol: float = 1e-7) -> int:
    """Dimension of the numerical kernel of the linearised diffusion on boundaries."""
    return linearized_diffusion(C, p).corank(tol)


# -- binary pairwise models ----------------------------------------------------

def eta(p_pair, p_j=None, p_k=None) -> float:
    """Correlation ``(p++ p-- - p+- p-+) / sqrt(p_j+ p_j- p_k+ p_k-)``.

    ``p_pair`` is indexed ``[x_j, x_k]`` with index 1 for spin ``+1``.
    Unary marginals default to those of ``p_pair``.
    """
    p = np.asarray(p_pair, dtype=float).reshape(2, 2)
    for given, margin in ((p_j, p.sum(axis=1)), (p_k, p.sum(axis=0))):
        if given is not None and np.max(np.abs(np.asarray(given, dtype=float) - margin)) > 1e-10:
            raise DomainError("unary beliefs are not the margins of the pair belief")
    p_j, p_k = p.sum(axis=1), p.sum(axis=0)
    denom = math.sqrt(p_j[0] * p_j[1] * p_k[0] * p_k[1])
    if denom == 0:
        raise DomainError("eta is undefined for deterministic marginals")
    return float((p[1, 1] * p[0, 0] - p[1, 0] * p[0, 1]) / denom)


@dataclass
class EdgePropagator:
    """Weighted graph on directed edges ``(edge, head)``.

    ``matrix[t, s]`` is the weight of the arc from node ``s`` to node ``t``.
    """
    nodes: list
    matrix: np.ndarray
    arcs: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.nodes)


def _pair_structure(C: Complex):
    K = C.K
    if not K.is_graph():
        raise UnsupportedModelError("edge propagator needs a pairwise model")
    for a in K.regions:
        for v in members(a):
            if C.shape.cardinalities[v] != 2:
                raise UnsupportedModelError("edge propagator needs binary variables")
    return [c for c in K.nerve(1) if bin(c[0]).count("1") == 2 and bin(c[1]).count("1") == 1]


def edge_propagator(C: Complex, p: np.ndarray) -> EdgePropagator:
    """Propagator of flux perturbations along non-backtracking walks."""
    chains = _pair_structure(C)
    weights = {}
    for a in {c[0] for c in chains}:
        j, k = members(a)
        weights[a] = eta(C.block(p, 0, (a,)))
    nodes = [(a, b) for a, b in chains]
    index = {n: i for i, n in enumerate(nodes)}
    by_tail: dict[int, list] = {}
    for a, b in nodes:
        by_tail.setdefault(b, []).append((a, b))
    M = np.zeros((len(nodes), len(nodes)))
    arcs = []
    for src in nodes:
        edge_ij, j = src
        for edge_jk in {a for a, _ in nodes}:
            if edge_jk == edge_ij or not edge_jk & j:
                continue
            k = edge_jk & ~j
            if (edge_jk, k) not in index:
                continue
            t = index[(edge_jk, k)]
            s = index[src]
            M[t, s] = weights[edge_jk]
            arcs.append((s, t))
    return EdgePropagator(nodes, M, sorted(arcs))


def charpoly(A) -> list:
    """Coefficients ``[1, c1, ..., cn]`` of ``det(x I - A)`` (Berkowitz).

    Division free, so exact for integer or ``Fraction`` entries.
    """
    A = [list(row) for row in A]
    n = len(A)
    if n == 0:
        return [1]
    zero = A[0][0] * 0
    coeffs = [1, -A[0][0]]
    for r in range(1, n):
        a = A[r][r]
        R = A[r][:r]
        S = [A[i][r] for i in range(r)]
        q = [1 + zero, -a]
        vec = S
        for _ in range(r):
            q.append(-sum((x * y for x, y in zip(R, vec)), zero))
            vec = [sum((A[i][l] * vec[l] for l in range(r)), zero) for i in range(r)]
        coeffs = [sum((q[i - j] * coeffs[j] for j in range(0, min(i, r) + 1)), zero)
                  for i in range(r + 2)]
    return coeffs


def simple_cycles(arcs: Sequence[tuple[int, int]], n: int) -> list[tuple[int, ...]]:
    """Directed simple cycles, each listed once starting from its smallest node."""
    succ: list[list[int]] = [[] for _ in range(n)]
    for s, t in arcs:
        succ[s].append(t)
    cycles = []
    for start in range(n):
        stack = [(start, iter(succ[start]))]
        path = [start]
        on_path = {start}
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                stack.pop()
                on_path.discard(path.pop())
                continue
            if nxt == start:
                cycles.append(tuple(path))
            elif nxt > start and nxt not in on_path:
                path.append(nxt)
                on_path.add(nxt)
                stack.append((nxt, iter(succ[nxt])))
    return cycles


def loop_polynomial(weights, arcs: Sequence[tuple[int, int]] | None = None, n: int | None = None,
                    max_nodes: int = 24) -> list:
    """``sum_k x^{n-k} sum_gamma (-1)^{#cycles} prod(weights)`` over families of
    disjoint cycles covering ``k`` nodes.

    ``weights[t][s]`` is the weight of the arc ``s -> t``.  Enumeration is
    exponential, so graphs with more than ``max_nodes`` nodes are refused;
    use :func:`charpoly` instead.
    """
    n = len(weights) if n is None else n
    if n > max_nodes:
        raise ResourceError(f"{n} nodes exceed the loop enumeration cap {max_nodes}; use the determinant")
    if arcs is None:
        arcs = [(s, t) for t in range(n) for s in range(n) if weights[t][s] != 0]
    zero = weights[0][0] * 0 if n else 0
    by_start: list[list] = [[] for _ in range(n)]
    for cyc in simple_cycles(arcs, n):
        w = 1 + zero
        for s, t in zip(cyc, cyc[1:] + cyc[:1]):
            w = w * weights[t][s]
        mask = 0
        for v in cyc:
            mask |= 1 << v
        by_start[cyc[0]].append((mask, len(cyc), w))

    memo: dict = {}

    def families(v: int, used: int) -> dict:
        if v == n:
            return {0: 1 + zero}
        key = (v, used >> v)
        if key in memo:
            return memo[key]
        out = dict(families(v + 1, used))
        if not used >> v & 1:
            for mask, length, w in by_start[v]:
                if mask & used:
                    continue
                for k, val in families(v + 1, used | mask).items():
                    out[k + length] = out.get(k + length, zero) - w * val
        memo[key] = out
        return out

    coeffs = [zero] * (n + 1)
    for k, val in families(0, 0).items():
        coeffs[k] = coeffs[k] + val
    return coeffs


def root_multiplicity(coeffs, at: float = 1.0, tol: float = 1e-7) -> int:
    """Multiplicity of ``at`` as a root, from scaled Taylor coefficients."""
    coeffs = [float(c) for c in coeffs]
    n = len(coeffs) - 1
    powers = [(n - i, c) for i, c in enumerate(coeffs)]
    for j in range(n + 1):
        value = sum(c * comb(d, j) * at ** (d - j) for d, c in powers if d >= j)
        scale = sum(abs(c) * comb(d, j) * abs(at) ** (d - j) for d, c in powers if d >= j)
        if abs(value) > tol * max(scale, 1e-300):
            return j
    return n


def chi_at_one(C: Complex, p: np.ndarray) -> float:
    """``det(1 - E_p)`` for binary pairwise models, else the determinant of the
    restricted linearisation."""
    try:
        E = edge_propagator(C, p).matrix
        return float(np.linalg.det(np.eye(len(E)) - E)) if len(E) else 1.0
    except UnsupportedModelError:
        m = linearized_diffusion(C, p).matrix
        return float(np.linalg.det(m)) if m.size else 1.0


# -- sweeps ---------------------------------------------------------------------

@dataclass
class SweepPoint:
    beta: float
    status: str
    chi: float
    corank: int
    beliefs: np.ndarray
    potential: np.ndarray


@dataclass
class Crossing:
    lower: float
    upper: float

    @property
    def beta(self) -> float:
        return 0.5 * (self.lower + self.upper)


def _solve(C, h, beta, start, config):
    cfg = RunConfig(**{**config.__dict__, "beta": beta, "energy": None})
    v0 = h if start is None else start
    traj = euler_run(C, v0, h, cfg)
    lin_rank = corank(C, traj.beliefs) if traj.converged else -1
    return SweepPoint(beta, traj.status, chi_at_one(C, traj.beliefs), lin_rank, traj.beliefs, traj.potential)


def _warm(point: SweepPoint, h, beta):
    # homologous to beta * h, expressed in units of 1/beta
    return (point.beta * point.potential + (beta - point.beta) * h) / beta


def singular_sweep(C: Complex, h: np.ndarray, betas: Sequence[float],
                   config: RunConfig | None = None, bracket: float = 1e-3):
    """Follow stationary beliefs along ``betas`` and locate sign changes of
    ``chi(1)``.

    Each inverse temperature starts from the previous stationary potential.
    Returns ``(points, crossings)``, crossings bracketed by bisection to width
    ``bracket``.
    """
    config = config or RunConfig(flux=Flux.GBP, step=0.5, max_time=400.0)
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas) or betas != sorted(betas):
        raise InputError("betas must be positive and increasing")
    points = []
    prev = None
    for b in betas:
        pt = _solve(C, h, b, None if prev is None else _warm(prev, h, b), config)
        points.append(pt)
        prev = pt if pt.status == "converged" else prev
    crossings = []
    for lo, hi in zip(points, points[1:]):
        if lo.status != "converged" or hi.status != "converged" or np.sign(lo.chi) == np.sign(hi.chi):
            continue
        a, b = lo, hi
        while b.beta - a.beta > bracket:
            m = 0.5 * (a.beta + b.beta)
            mid = _solve(C, h, m, _warm(a, h, m), config)
            if mid.status != "converged":
                break
            if np.sign(mid.chi) == np.sign(a.chi):
                a = mid
            else:
                b = mid
        crossings.append(Crossing(a.beta, b.beta))
    return points, crossings


def count_stationary(C: Complex, h: np.ndarray, beta: float, starts: int, rng: np.random.Generator,
                     config: RunConfig | None = None, scale: float = 1.0, distance: float = 1e-4) -> int:
    """Number of distinct stationary beliefs reached from ``starts`` random
    potentials homologous to ``h``."""
    config = config or RunConfig(flux=Flux.GBP, step=0.5, max_time=400.0)
    cfg = RunConfig(**{**config.__dict__, "beta": beta, "energy": None})
    found: list[np.ndarray] = []
    for _ in range(starts):
        v0 = h + scale * (C.delta(1) @ rng.standard_normal(C.dim(1)))
        traj = euler_run(C, v0, h, cfg)
        if not traj.converged:
            continue
        if all(np.max(np.abs(traj.beliefs - q)) > distance for q in found):
            found.append(traj.beliefs)
    return len(found)


def softest_direction(C: Complex, p: np.ndarray) -> np.ndarray:
    """Boundary field on which the linearised diffusion at ``p`` is weakest.

    This is the right singular vector of the smallest singular value.  Near a
    singular point it approaches the kernel, so level curves along it show
    stationary points being created or destroyed.
    """
    lin = linearized_diffusion(C, p)
    if lin.matrix.size == 0:
        raise InputError("the hypergraph has no boundaries")
    _, _, vt = np.linalg.svd(lin.matrix)
    return lin.basis @ vt[-1]


def level_grid(C: Complex, h: np.ndarray, betas: Sequence[float], offsets: Sequence[float],
               direction: int | np.ndarray = 0) -> np.ndarray:
    """Bethe free energy of ``zeta(beta h + s u)`` on a grid.

    ``u`` is ``delta(e)`` for the unit 1-field ``e`` on coordinate
    ``direction`` or, when ``direction`` is an array, that boundary field
    itself.  Rows follow ``betas`` and columns ``offsets``.
    """
    if isinstance(direction, np.ndarray):
        shift = np.asarray(direction, dtype=float)
        if shift.shape != (C.dim(0),):
            raise InputError(f"direction must be a field of length {C.dim(0)}")
    else:
        if not 0 <= direction < C.dim(1):
            raise InputError(f"direction must lie in 0..{C.dim(1) - 1}")
        e = np.zeros(C.dim(1))
        e[direction] = 1.0
        shift = C.delta(1) @ e
    z = C.zeta(0)
    grid = np.empty((len(betas), len(offsets)))
    for i, b in enumerate(betas):
        for j, s in enumerate(offsets):
            grid[i, j] = bethe_free_energy(C, z @ (b * h + s * shift), 1.0)
    return grid
