"""Exact inference by enumerating every global configuration.

Serves as ground truth on small models.  The enumeration cap defaults to
``2**22`` configurations and can be changed with the ``KIKUCHI_ORACLE_CAP``
environment variable.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .complex import Complex
from .errors import DomainError, ResourceError
from .gibbs import global_sum

DEFAULT_CAP = 2 ** 22


def oracle_cap() -> int:
    raw = os.environ.get("KIKUCHI_ORACLE_CAP")
    if raw is None:
        return DEFAULT_CAP
    try:
        return int(raw)
    except ValueError:
        raise DomainError(f"KIKUCHI_ORACLE_CAP must be an integer, got {raw!r}") from None


@dataclass
class GlobalState:
    """Gibbs density ``exp(-beta H) / Z`` of the global hamiltonian ``H``."""
    energy: np.ndarray
    probabilities: np.ndarray
    log_partition: float
    beta: float

    @property
    def free_energy(self) -> float:
        return -self.log_partition / self.beta

    @property
    def mean_energy(self) -> float:
        return float(self.probabilities @ self.energy)

    @property
    def entropy(self) -> float:
        p = self.probabilities[self.probabilities > 0]
        return float(-(p * np.log(p)).sum())


def exact_global(C: Complex, h: np.ndarray, beta: float = 1.0, cap: int | None = None) -> GlobalState:
    """Enumerate ``H = sum_a h_a`` over all configurations and normalise."""
    if not np.isfinite(beta) or beta < 0:
        raise DomainError("beta must be finite and non-negative")
    cap = oracle_cap() if cap is None else cap
    omega = (1 << C.K.omega_size) - 1
    size = C.shape.size(omega)
    if size > cap:
        raise ResourceError(f"{size} global configurations exceed the oracle cap {cap}")
    H = global_sum(C, h, cap=cap)
    logits = -beta * H
    top = logits.max()
    w = np.exp(logits - top)
    z = w.sum()
    return GlobalState(H, w / z, float(top + np.log(z)), float(beta))


def exact_marginals(C: Complex, h: np.ndarray, beta: float = 1.0, cap: int | None = None) -> np.ndarray:
    """Marginals of the global Gibbs state on every region (degree-0 layout)."""
    state = exact_global(C, h, beta, cap)
    omega = (1 << C.K.omega_size) - 1
    out = np.zeros(C.dim(0))
    lay = C.layout(0)
    for i, (a,) in enumerate(lay.chains):
        out[lay.offsets[i]:lay.offsets[i + 1]] = np.bincount(
            C.restriction(omega, a), weights=state.probabilities, minlength=int(lay.sizes[i]))
    return out


def beta_for_energy(C: Complex, h: np.ndarray, energy: float, lo: float = 0.0, hi: float = 64.0,
                    tol: float = 1e-12) -> float:
    """Inverse temperature at which the exact mean energy equals ``energy`` (bisection)."""
    def mean(beta):
        return exact_global(C, h, beta).mean_energy

    if not mean(hi) <= energy <= mean(lo):
        raise DomainError("target energy is not reached on the bracket")
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if mean(mid) > energy:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
