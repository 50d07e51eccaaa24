"""Belief diffusions: heat fluxes, isothermal and adiabatic vector fields,
and explicit Euler integration.

The state is a potential ``v`` (degree-0 field).  Its local hamiltonians are
``V = zeta(v)`` and its beliefs the local Gibbs states of ``V``.  Every
update adds a boundary ``delta(phi)``, so ``sum_a v_a`` never changes.

Two heat fluxes are provided.  ``Flux.GBP`` sends ``-D(zeta v)`` through
``delta``; with step 1 it reproduces generalised belief propagation.
``Flux.BK`` applies Moebius inversion to the flux first and drives the local
hamiltonians by ``sum_a c_a`` of the incoming messages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .complex import Complex
from .errors import DomainError, InputError, NumericError
from .gibbs import (bethe_free_energy, consistency_residual, energy_drift, gibbs_state,
                    global_sum, global_sum_at, local_free_energies, mean_energy)


class Flux(str, Enum):
    GBP = "gbp"
    BK = "bk"


def _gradient_parts(C: Complex):
    """Selection of the target block and marginalisation of the source block
    for every 1-chain, plus the source region of each degree-1 coordinate."""
    def build():
        lay1, lay0 = C.layout(1), C.layout(0)
        idx0 = lay0.index
        target = C._assemble(1, 0, ((i, idx0[(c[1],)], 1) for i, c in enumerate(lay1.chains)), "extend")
        source = C._assemble(1, 0, ((i, idx0[(c[0],)], 1) for i, c in enumerate(lay1.chains)), "marginalize")
        src_region = np.repeat([idx0[(c[0],)] for c in lay1.chains], lay1.sizes).astype(np.int64)
        return target, source, src_region
    return C.cached(("gradient_parts",), build)


def free_energy_gradient(C: Complex, V: np.ndarray) -> np.ndarray:
    """``D V`` on 1-chains: ``(DV)_{a->b} = V_b + ln sum_{x_a | x_b} exp(-V_a)``.

    It vanishes exactly when the unnormalised Gibbs densities are consistent.
    """
    if C.dim(1) == 0:
        return np.zeros((0,) + np.shape(V)[1:])
    target, source, src_region = _gradient_parts(C)
    logits = -np.asarray(V, dtype=float)
    top = C.region_max(logits)
    w = np.exp(logits - top[C.region_of])
    with np.errstate(divide="ignore"):
        return target @ V + np.log(source @ w) + top[src_region]


def heat_flux(C: Complex, v: np.ndarray, flux: Flux = Flux.GBP) -> np.ndarray:
    """Flux ``-D(zeta v)``, Moebius-inverted for the BK flavour."""
    phi = -free_energy_gradient(C, C.zeta(0) @ v)
    if Flux(flux) is Flux.BK:
        phi = C.mu(1) @ phi
    return phi


def _transport(C: Complex, flux: Flux) -> sp.csr_matrix:
    """Operator sending ``-D(zeta v)`` to the potential increment."""
    if Flux(flux) is Flux.GBP:
        return C.delta(1)
    return C.cached(("bk_transport",), lambda: (C.mu(0) @ C.check_delta(1)).tocsr())


def drift(C: Complex, w: np.ndarray, flux: Flux = Flux.GBP) -> np.ndarray:
    """Isothermal vector field at unit temperature."""
    if C.dim(1) == 0:
        return np.zeros_like(w)
    return _transport(C, flux) @ -free_energy_gradient(C, C.zeta(0) @ w)


def isothermal_field(C: Complex, v: np.ndarray, beta: float = 1.0, flux: Flux = Flux.GBP) -> np.ndarray:
    """``(1/beta) delta Phi(beta v)``."""
    if not beta > 0:
        raise DomainError("isothermal field needs beta > 0")
    return drift(C, beta * np.asarray(v, dtype=float), flux) / beta


def adiabatic_field(C: Complex, vbar: np.ndarray, energy: float, h: np.ndarray,
                    flux: Flux = Flux.GBP) -> np.ndarray:
    """Unit-temperature field plus a radial term restoring ``<p, h> = energy``.

    The radial term is ``(<p, h> - energy) * vbar`` where ``p`` are the beliefs
    of ``vbar``: if the mean energy is too high the potential is scaled up,
    which cools the beliefs.
    """
    vbar = np.asarray(vbar, dtype=float)
    p = gibbs_state(C, C.zeta(0) @ vbar, 1.0)
    return drift(C, vbar, flux) + (mean_energy(C, p, h) - energy) * vbar


def renormalize(C: Complex, w: np.ndarray) -> np.ndarray:
    """Shift ``w`` by a boundary so that every region has the same mass.

    The shift is ``-mu(F - Fbar)`` with ``F_a`` the local free energies of
    ``zeta(w)`` and ``Fbar = sum_b c_b F_b``; it sums to zero globally.
    """
    F = local_free_energies(C, C.zeta(0) @ w, 1.0)
    Fbar = C.K.bethe_vector @ F
    return w - C.mu(0) @ (F - Fbar)[C.region_of]


def beliefs(C: Complex, v: np.ndarray, beta: float = 1.0) -> np.ndarray:
    """Normalised beliefs of the potential ``v``."""
    return gibbs_state(C, C.zeta(0) @ v, beta)


class TraceRow(NamedTuple):
    t: float
    grad_norm: float
    consistency_residual: float
    bethe_free_energy: float
    mean_energy: float
    param: float


TRACE_COLUMNS = TraceRow._fields


@dataclass
class RunConfig:
    """Settings of an Euler integration.

    ``beta`` is used by isothermal runs; setting ``energy`` switches to the
    adiabatic field at that target mean energy.  ``renormalize=None`` means
    on for the GBP flux and off for the BK flux.
    """
    flux: Flux = Flux.GBP
    step: float = 0.5
    max_time: float = 100.0
    beta: float = 1.0
    energy: float | None = None
    grad_tol: float = 1e-10
    consistency_tol: float = 1e-8
    diverge_at: float = 1e8
    trace_every: int = 1
    renormalize: bool | None = None

    def __post_init__(self):
        self.flux = Flux(self.flux)
        if not self.step > 0:
            raise InputError("step must be positive")
        if not self.max_time >= 0:
            raise InputError("max_time must be non-negative")
        if self.trace_every < 1:
            raise InputError("trace_every must be at least 1")
        if self.energy is None and not (math.isfinite(self.beta) and self.beta >= 0):
            raise DomainError("beta must be finite and non-negative")

    @property
    def adiabatic(self) -> bool:
        return self.energy is not None

    @property
    def renormalizing(self) -> bool:
        return self.flux is Flux.GBP if self.renormalize is None else bool(self.renormalize)


@dataclass
class Trajectory:
    rows: list = field(default_factory=list)
    potential: np.ndarray | None = None
    beliefs: np.ndarray | None = None
    status: str = "running"
    iterations: int = 0
    energy_drift: float = float("nan")
    faithful: bool = True

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def diverged(self) -> bool:
        return self.status == "diverged"

    @property
    def final(self) -> TraceRow:
        return self.rows[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])


def estimate_beta(C: Complex, vbar: np.ndarray, h: np.ndarray, samples: int = 256, seed: int = 0) -> float:
    """Ratio ``beta`` in ``sum_a vbar_a = beta sum_a h_a`` (least squares over configurations)."""
    omega = (1 << C.K.omega_size) - 1
    if C.shape.size(omega) <= 2 ** 16:
        gv, gh = global_sum(C, vbar), global_sum(C, h)
    else:
        rng = np.random.default_rng(seed)
        configs = np.column_stack([rng.integers(0, c, size=samples) for c in C.shape.cardinalities])
        gv, gh = global_sum_at(C, vbar, configs), global_sum_at(C, h, configs)
    denom = gh @ gh
    return float(gv @ gh / denom) if denom > 0 else float("nan")


def euler_run(C: Complex, v0: np.ndarray, h_ref: np.ndarray | None = None,
              config: RunConfig | None = None) -> Trajectory:
    """Integrate the isothermal or adiabatic field with explicit Euler steps.

    Time advances by ``config.step`` per iteration.  The run stops when the
    gradient norm ``max |D(zeta(beta v))|`` drops below ``grad_tol``
    (converged), exceeds ``diverge_at`` (diverged) or time runs out.
    """
    config = config or RunConfig()
    v0 = np.asarray(v0, dtype=float)
    h_ref = v0 if h_ref is None else np.asarray(h_ref, dtype=float)
    if v0.shape != (C.dim(0),) or h_ref.shape != v0.shape:
        raise InputError(f"potentials must have shape ({C.dim(0)},)")
    if not np.all(np.isfinite(v0)):
        raise NumericError("non-finite initial potential")
    beta = 1.0 if config.adiabatic else config.beta
    scale = beta if beta > 0 else 1.0
    w = beta * v0 if not config.adiabatic else v0.copy()
    if config.renormalizing:
        w = renormalize(C, w)
    transport = _transport(C, config.flux) if C.dim(1) else None
    zeta = C.zeta(0)
    traj = Trajectory()
    it = 0
    n_steps = int(math.floor(config.max_time / config.step + 1e-9))
    while True:
        V = zeta @ w
        D = free_energy_gradient(C, V)
        grad = float(np.max(np.abs(D))) if D.size else 0.0
        if np.isnan(grad) or not np.all(np.isfinite(w)):
            if np.isnan(grad):
                raise NumericError(f"NaN gradient at iteration {it}")
        p = gibbs_state(C, V, 1.0)
        gap = abs(mean_energy(C, p, h_ref) - config.energy) if config.adiabatic else 0.0
        done = None
        if grad < config.grad_tol and gap < config.grad_tol:
            done = "converged"
        elif not grad <= config.diverge_at:
            done = "diverged"
        elif it >= n_steps:
            done = "max_time"
        if done or it % config.trace_every == 0:
            traj.rows.append(_trace_row(C, it * config.step, grad, V, p, h_ref, scale, config, w))
        if done:
            traj.status = done
            break
        increment = transport @ -D
        if config.adiabatic:
            increment = increment + (mean_energy(C, p, h_ref) - config.energy) * w
        w = w + config.step * increment
        it += 1
        if config.renormalizing:
            w = renormalize(C, w)
    traj.iterations = it
    traj.potential = w / scale
    traj.beliefs = p
    if not config.adiabatic:
        traj.energy_drift = energy_drift(C, traj.potential, h_ref)
    if traj.converged:
        traj.faithful = traj.final.consistency_residual < config.consistency_tol
    return traj


def _trace_row(C, t, grad, V, p, h_ref, scale, config, w) -> TraceRow:
    finite = np.all(np.isfinite(V))
    free = bethe_free_energy(C, V, 1.0) / scale if finite else float("nan")
    if config.adiabatic:
        param = estimate_beta(C, w, h_ref)
    else:
        param = config.beta
    return TraceRow(float(t), grad, consistency_residual(C, p), free, mean_energy(C, p, h_ref), float(param))


@dataclass
class BatchResult:
    status: np.ndarray
    iterations: np.ndarray
    grad_norm: np.ndarray
    potential: np.ndarray

    @property
    def converged(self) -> np.ndarray:
        return self.status == "converged"

    @property
    def diverged(self) -> np.ndarray:
        return self.status == "diverged"


def run_batch(C: Complex, v0: np.ndarray, config: RunConfig | None = None) -> BatchResult:
    """Isothermal Euler runs of several potentials (columns of ``v0``) at once.

    Columns stop individually; non-finite values count as divergence.
    """
    config = config or RunConfig()
    if config.adiabatic:
        raise InputError("run_batch integrates isothermal fields only")
    w = config.beta * np.array(v0, dtype=float, ndmin=2)
    if w.shape[0] != C.dim(0):
        w = w.T
    batch = w.shape[1]
    status = np.array(["running"] * batch, dtype=object)
    iterations = np.zeros(batch, dtype=np.int64)
    grads = np.full(batch, np.inf)
    if config.renormalizing:
        w = renormalize(C, w)
    transport = _transport(C, config.flux) if C.dim(1) else None
    n_steps = int(math.floor(config.max_time / config.step + 1e-9))
    active = np.arange(batch)
    it = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while active.size:
            wa = w[:, active]
            D = free_energy_gradient(C, C.zeta(0) @ wa)
            g = np.max(np.abs(D), axis=0) if D.shape[0] else np.zeros(active.size)
            g = np.where(np.all(np.isfinite(wa), axis=0), g, np.nan)
            grads[active] = g
            iterations[active] = it
            conv = g < config.grad_tol
            div = ~(g <= config.diverge_at)
            status[active[conv]] = "converged"
            status[active[div & ~conv]] = "diverged"
            keep = ~(conv | div)
            if it >= n_steps:
                status[active[keep]] = "max_time"
                break
            active, D, wa = active[keep], D[:, keep], wa[:, keep]
            if not active.size:
                break
            wa = wa + config.step * (transport @ -D)
            if config.renormalizing:
                wa = renormalize(C, wa)
            w[:, active] = wa
            it += 1
    scale = config.beta if config.beta > 0 else 1.0
    return BatchResult(status.astype(str), iterations, grads, w / scale)
