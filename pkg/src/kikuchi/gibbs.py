"""Gibbs states, local and Bethe free energies, and model generators.

Hamiltonians ``H`` and beliefs ``p`` are degree-0 fields (see
:mod:`kikuchi.complex`): one block per region.  Potentials ``h`` use the same
layout; their local hamiltonians are ``zeta(h)``.
"""
from __future__ import annotations

import numpy as np

from .complex import Complex, Shape
from .errors import DomainError, InputError, NumericError, ResourceError
from .hypergraph import Hypergraph, closure, members, region

SPIN = np.array([-1.0, 1.0])


def _beta(beta: float) -> float:
    if not np.isfinite(beta) or beta < 0:
        raise DomainError(f"inverse temperature must be finite and non-negative, got {beta}")
    return float(beta)


def gibbs_state(C: Complex, H: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Normalised local Gibbs states ``exp(-beta H_a) / Z_a`` of every region."""
    beta = _beta(beta)
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H)):
        raise NumericError("non-finite hamiltonian")
    logits = -beta * H
    logits = logits - C.region_max(logits)[C.region_of]
    w = np.exp(logits)
    return w / C.region_sum(w)[C.region_of]


def local_free_energies(C: Complex, H: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """``F_a = -(1/beta) ln sum exp(-beta H_a)`` for every region (one entry per region)."""
    beta = _beta(beta)
    if beta == 0:
        raise DomainError("free energy needs beta > 0")
    logits = -beta * np.asarray(H, dtype=float)
    top = C.region_max(logits)
    lse = top + np.log(C.region_sum(np.exp(logits - top[C.region_of])))
    return -lse / beta


# -- single-region functionals ------------------------------------------------

def _check_probability(p, tol=1e-9):
    p = np.asarray(p, dtype=float)
    if np.any(p < -tol):
        raise DomainError("negative probability mass")
    if abs(p.sum() - 1.0) > 1e-8:
        raise DomainError(f"probabilities sum to {p.sum()}")
    return np.clip(p, 0.0, None)


def shannon_entropy(p) -> float:
    """``-sum p ln p`` with ``0 ln 0 = 0``."""
    p = _check_probability(p)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def variational_free_energy(p, H, beta: float) -> float:
    """``E_p[H] - S(p) / beta``."""
    beta = _beta(beta)
    if beta == 0:
        raise DomainError("free energy needs beta > 0")
    p = _check_probability(p)
    return float(p @ np.asarray(H, dtype=float) - shannon_entropy(p) / beta)


def free_energy(H, beta: float) -> float:
    """``-(1/beta) ln sum exp(-beta H)``."""
    beta = _beta(beta)
    if beta == 0:
        raise DomainError("free energy needs beta > 0")
    x = -beta * np.asarray(H, dtype=float)
    top = x.max()
    return float(-(top + np.log(np.exp(x - top).sum())) / beta)


# -- Bethe functionals ---------------------------------------------------------

def _coefficients_per_coord(C: Complex) -> np.ndarray:
    return C.K.bethe_vector.astype(float)[C.region_of]


def bethe_mean_energy(C: Complex, p: np.ndarray, H: np.ndarray) -> float:
    """``sum_a c_a E_{p_a}[H_a]``."""
    return float(np.sum(_coefficients_per_coord(C) * p * H))


def region_entropies(C: Complex, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if np.any(p < -1e-12):
        raise DomainError("negative probability mass")
    safe = np.where(p > 0, p, 1.0)
    return -C.region_sum(np.where(p > 0, p * np.log(safe), 0.0))


def bethe_entropy(C: Complex, p: np.ndarray) -> float:
    """``sum_a c_a S(p_a)``."""
    return float(C.K.bethe_vector @ region_entropies(C, p))


def bethe_var_free_energy(C: Complex, p: np.ndarray, H: np.ndarray, beta: float) -> float:
    """Bethe variational free energy ``sum_a c_a (E_{p_a}[H_a] - S(p_a) / beta)``."""
    beta = _beta(beta)
    if beta == 0:
        raise DomainError("free energy needs beta > 0")
    return bethe_mean_energy(C, p, H) - bethe_entropy(C, p) / beta


def bethe_free_energy(C: Complex, V: np.ndarray, beta: float) -> float:
    """Bethe free energy ``sum_a c_a F_a(V_a)`` of local hamiltonians ``V``."""
    return float(C.K.bethe_vector @ local_free_energies(C, V, beta))


def mean_energy(C: Complex, p: np.ndarray, h: np.ndarray) -> float:
    """``<p, h> = sum_a E_{p_a}[h_a]`` for potentials ``h``."""
    return float(np.sum(np.asarray(p) * np.asarray(h), axis=0))


def consistency_residual(C: Complex, q: np.ndarray) -> float:
    """Largest entry of ``d q``; zero exactly when the beliefs are consistent."""
    if C.dim(1) == 0:
        return 0.0
    return float(np.max(np.abs(C.d(0) @ q)))


def weak_consistency_residual(C: Complex, q: np.ndarray) -> float:
    """Largest ``|c_b q_b - (mu^T q)_b|`` over regions with ``c_b != 0``.

    ``mu^T`` is the transpose of the Moebius operator under the pairing
    ``<q, v> = sum_a sum_x q_a(x) v_a(x)``; it maps consistent beliefs to
    ``c q``.
    """
    coef = _coefficients_per_coord(C)
    gap = coef * q - C.mu(0).T @ q
    keep = coef != 0
    return float(np.max(np.abs(gap[keep]))) if keep.any() else 0.0


# -- global quantities ----------------------------------------------------------

def global_sum(C: Complex, field: np.ndarray, cap: int = 2 ** 22) -> np.ndarray:
    """``sum_a field_a`` as a function on the configurations of all vertices."""
    omega = (1 << C.K.omega_size) - 1
    size = C.shape.size(omega)
    if size > cap:
        raise ResourceError(f"global configuration space has {size} elements (cap {cap})")
    out = np.zeros(size)
    for a, block in C.split(np.asarray(field, dtype=float), 0).items():
        out += block[C.restriction(omega, a[0])]
    return out


def global_sum_at(C: Complex, field: np.ndarray, configs: np.ndarray) -> np.ndarray:
    """``sum_a field_a(x_a)`` at each row ``x`` of ``configs`` (shape ``(m, N)``)."""
    configs = np.asarray(configs, dtype=np.int64)
    out = np.zeros(len(configs))
    lay = C.layout(0)
    for i, (a,) in enumerate(lay.chains):
        verts = members(a)
        if verts:
            local = np.ravel_multi_index(tuple(configs[:, verts].T), C.shape.dims(a))
        else:
            local = np.zeros(len(configs), dtype=np.int64)
        out += field[lay.offsets[i] + local]
    return out


def energy_drift(C: Complex, v: np.ndarray, h: np.ndarray, samples: int = 256,
                 seed: int = 0, cap: int = 2 ** 16) -> float:
    """Largest ``|sum_a v_a - sum_a h_a|`` over configurations.

    Exact enumeration when the global space has at most ``cap`` elements,
    otherwise at ``samples`` uniformly drawn configurations.
    """
    diff = np.asarray(v, dtype=float) - np.asarray(h, dtype=float)
    omega = (1 << C.K.omega_size) - 1
    if C.shape.size(omega) <= cap:
        return float(np.max(np.abs(global_sum(C, diff, cap))))
    rng = np.random.default_rng(seed)
    configs = np.column_stack([rng.integers(0, c, size=samples) for c in C.shape.cardinalities])
    return float(np.max(np.abs(global_sum_at(C, diff, configs))))


# -- model generators -----------------------------------------------------------

def spin_glass(edges, biases, weights, n: int | None = None):
    """Binary model ``H(x) = sum_i b_i x_i + sum_ij w_ij x_i x_j`` with spins
    ``x = -1`` (index 0) and ``+1`` (index 1).

    Returns ``(C, h)``: the complex over the closure of vertices and edges
    and the potentials (edge and vertex terms, zero on the empty region).
    """
    edges = [tuple(int(v) for v in e) for e in edges]
    biases = np.asarray(biases, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if n is None:
        n = max([len(biases)] + [max(e) + 1 for e in edges])
    if len(biases) != n:
        raise InputError(f"{len(biases)} biases for {n} vertices")
    if len(weights) != len(edges):
        raise InputError(f"{len(weights)} weights for {len(edges)} edges")
    seen = set()
    for i, j in edges:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise InputError(f"bad edge {(i, j)}")
        if frozenset((i, j)) in seen:
            raise InputError(f"duplicate edge {(i, j)}")
        seen.add(frozenset((i, j)))
    K = closure([region([i]) for i in range(n)] + [region(e) for e in edges], n)
    C = Complex(K, Shape([2] * n))
    blocks = {region([i]): b * SPIN for i, b in enumerate(biases)}
    for (i, j), w in zip(edges, weights):
        a = region((i, j))
        blocks[a] = w * np.outer(SPIN, SPIN).ravel()
    return C, C.join(blocks, 0)


def lattice_edges(L: int, periodic: bool = False) -> list[tuple[int, int]]:
    """Nearest-neighbour edges of an ``L x L`` square grid (row-major ids)."""
    edges = []
    for r in range(L):
        for c in range(L):
            v = r * L + c
            if c + 1 < L or (periodic and L > 2):
                edges.append(tuple(sorted((v, r * L + (c + 1) % L))))
            if r + 1 < L or (periodic and L > 2):
                edges.append(tuple(sorted((v, ((r + 1) % L) * L + c))))
    return sorted(set(edges))


def ising_lattice(L: int, rng: np.random.Generator, batch: int = 1, periodic: bool = False):
    """Spin glass on an ``L x L`` grid with standard normal biases and couplings.

    Returns ``(C, hs)`` with ``hs`` of shape ``(dim, batch)``.
    """
    edges = lattice_edges(L, periodic)
    n = L * L
    hs = []
    C = None
    for _ in range(batch):
        C, h = spin_glass(edges, rng.standard_normal(n), rng.standard_normal(len(edges)), n)
        hs.append(h)
    return C, np.column_stack(hs)


def random_potentials(C: Complex, rng: np.random.Generator, scale: float = 1.0,
                      include_empty: bool = True) -> np.ndarray:
    """Potentials with independent normal entries on every region."""
    h = scale * rng.standard_normal(C.dim(0))
    if not include_empty and 0 in C.K:
        C.block(h, 0, (0,))[:] = 0.0
    return h


def check_finite(x, what="value"):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite {what}")
    return x
