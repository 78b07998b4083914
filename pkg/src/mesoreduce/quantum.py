"""Quantum master equation on a uniform 1D position grid.

The density matrix is stored as its coordinate kernel ``rho(x_i, x_j)``;
the trace is ``sum_i rho_ii * dx``. The generator is

    d rho/dt = -(i/hbar) [H, rho] - sum_k (gamma_k / hbar^2) [A_k, [A_k, rho]]

with H = kinetic finite-difference stencil + diagonal potential and A_k the
diagonal decoherence generators g_k(x_i).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .algebra import LiouvillianSpec
from .errors import NumericalInstability

log = logging.getLogger(__name__)

__all__ = [
    "GridBasis",
    "DensityMatrix",
    "QuantumOperatorSet",
    "Trajectory",
    "build_operators",
    "apply_liouvillian",
    "evolve_density",
    "dephasing_closed_form",
    "unravel_stochastic",
    "coherence_metrics",
    "observables",
    "boundary_population",
    "gaussian_state",
    "cat_state",
    "state_from_wavefunction",
]

# central second-derivative stencils (offset 0, 1, 2, ...), hard-wall closure
_STENCILS = {
    2: np.array([-2.0, 1.0]),
    4: np.array([-30.0, 16.0, -1.0]) / 12.0,
}


@dataclass(frozen=True)
class GridBasis:
    points: int
    x_min: float
    x_max: float

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("grid needs at least 2 points")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.points - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.points)


@dataclass
class DensityMatrix:
    basis: GridBasis
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        m = self.basis.points
        if self.data.shape != (m, m):
            raise ValueError(f"density kernel must be {m}x{m}, got {self.data.shape}")

    def trace(self) -> complex:
        return complex(np.trace(self.data) * self.basis.dx)

    def hermiticity_residue(self) -> float:
        return hermiticity_residue(self.data)

    def operator(self) -> np.ndarray:
        """Matrix of the operator in the normalized grid basis (trace 1)."""
        return self.data * self.basis.dx

    def min_eigenvalue(self) -> float:
        op = self.operator()
        return float(np.linalg.eigvalsh(0.5 * (op + op.conj().T))[0])

    def copy(self) -> "DensityMatrix":
        return DensityMatrix(self.basis, self.data.copy())


def hermiticity_residue(a: np.ndarray) -> float:
    norm = np.linalg.norm(a)
    if norm == 0:
        return 0.0
    return float(np.linalg.norm(a - a.conj().T) / norm)


@dataclass
class QuantumOperatorSet:
    H: np.ndarray
    A: list
    gammas: list
    hbar: float
    basis: GridBasis
    potential: np.ndarray
    kinetic_coeff: float  # hbar^2 / (2 mu dx^2), 0 when kinetic is disabled
    stencil: np.ndarray
    dephasing: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = self.basis.points
        d = np.zeros((m, m))
        for a, g in zip(self.A, self.gammas):
            diff = a[:, None] - a[None, :]
            d += g * diff * diff
        self.dephasing = d / self.hbar**2

    def kinetic_apply(self, psi: np.ndarray) -> np.ndarray:
        """T @ psi along axis 0 using the banded stencil."""
        out = np.zeros_like(psi)
        if self.kinetic_coeff == 0.0:
            return out
        c = -self.kinetic_coeff
        out += c * self.stencil[0] * psi
        for k in range(1, len(self.stencil)):
            w = c * self.stencil[k]
            out[k:] += w * psi[:-k]
            out[:-k] += w * psi[k:]
        return out

    def hamiltonian_apply(self, psi: np.ndarray) -> np.ndarray:
        pot = self.potential.reshape((-1,) + (1,) * (psi.ndim - 1))
        return self.kinetic_apply(psi) + pot * psi


def _kinetic_matrix(m: int, coeff: float, stencil: np.ndarray) -> np.ndarray:
    t = np.zeros((m, m))
    for k, w in enumerate(stencil):
        idx = np.arange(m - k)
        t[idx, idx + k] += -coeff * w
        if k:
            t[idx + k, idx] += -coeff * w
    return t


def build_operators(spec: LiouvillianSpec, basis: GridBasis, hbar: float, stencil_order: int = 2) -> QuantumOperatorSet:
    """Discretize a single-coordinate operator on ``basis``.

    ``stencil_order`` selects the central kinetic stencil (2 or 4).
    """
    if len(spec.coordinates) != 1:
        raise ValueError(
            f"quantum engine handles one mesoparticle, operator has {len(spec.coordinates)} coordinates"
        )
    if not hbar > 0:
        raise ValueError("hbar must be positive")
    if stencil_order not in _STENCILS:
        raise ValueError(f"stencil_order must be one of {sorted(_STENCILS)}")
    (name,) = spec.coordinates
    mass = float(spec.masses[0])
    if not mass > 0:
        raise ValueError("mass must be positive")
    x = basis.x
    potential = np.zeros(basis.points)
    for c, p in spec.hamiltonian:
        potential += float(c) * np.asarray(p.evaluate({name: x}), dtype=float)
    coeff = hbar**2 / (2.0 * mass * basis.dx**2) if spec.kinetic else 0.0
    stencil = _STENCILS[stencil_order]
    H = _kinetic_matrix(basis.points, coeff, stencil) + np.diag(potential)
    A = [np.asarray(g.evaluate({name: x}), dtype=float) * np.ones(basis.points) for _, g in spec.decoherence]
    gammas = [float(g) for g, _ in spec.decoherence]
    return QuantumOperatorSet(H, A, gammas, float(hbar), basis, potential, coeff, stencil)


def apply_liouvillian(ops: QuantumOperatorSet, rho) -> np.ndarray:
    """Rate ``-(i/hbar)[H, rho] - sum_k gamma_k/hbar^2 [A_k, [A_k, rho]]``."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    m = ops.basis.points
    if data.shape != (m, m):
        raise ValueError(f"dimension mismatch: operators are {m}x{m}, rho is {data.shape}")
    v = ops.potential
    comm = ops.kinetic_apply(data) - ops.kinetic_apply(data.T).T
    comm = comm + (v[:, None] - v[None, :]) * data
    return (-1j / ops.hbar) * comm - ops.dephasing * data


@dataclass
class Trajectory:
    times: list
    states: list
    trace_drift: list = field(default_factory=list)
    max_asymmetry: float = 0.0
    min_eigenvalue: float = math.inf

    def final(self) -> DensityMatrix:
        return self.states[-1]


def evolve_density(
    ops: QuantumOperatorSet,
    rho0: DensityMatrix,
    dt: float,
    steps: int,
    save_every: int = 1,
    observer=None,
    check_eigenvalues: bool = False,
) -> Trajectory:
    """Classic RK4 with per-step Hermitization; no trace renormalization.

    ``observer(t, rho)`` is called at every saved time. Raises
    NumericalInstability if the norm grows past 10x its initial value.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = np.array(rho0.data, dtype=complex)
    basis = rho0.basis
    norm0 = np.linalg.norm(rho)
    traj = Trajectory([0.0], [DensityMatrix(basis, rho.copy())])
    traj.trace_drift.append(abs(np.trace(rho) * basis.dx - 1.0))
    if check_eigenvalues:
        traj.min_eigenvalue = traj.states[0].min_eigenvalue()
    if observer:
        observer(0.0, traj.states[0])
    f = lambda r: apply_liouvillian(ops, r)
    for n in range(1, steps + 1):
        k1 = f(rho)
        k2 = f(rho + 0.5 * dt * k1)
        k3 = f(rho + 0.5 * dt * k2)
        k4 = f(rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        traj.max_asymmetry = max(traj.max_asymmetry, hermiticity_residue(rho))
        rho = 0.5 * (rho + rho.conj().T)
        norm = np.linalg.norm(rho)
        if not np.isfinite(norm) or norm > 10.0 * norm0:
            raise NumericalInstability(
                f"density norm grew from {norm0:.3g} to {norm:.3g} at step {n} (t={n * dt:.6g})",
                suggested_dt=dt / 4,
            )
        if n % save_every == 0 or n == steps:
            t = n * dt
            state = DensityMatrix(basis, rho.copy())
            drift = abs(np.trace(rho) * basis.dx - 1.0)
            traj.times.append(t)
            traj.states.append(state)
            traj.trace_drift.append(drift)
            if check_eigenvalues:
                traj.min_eigenvalue = min(traj.min_eigenvalue, state.min_eigenvalue())
            if observer:
                observer(t, state)
    log.debug("evolve_density: final trace drift %.3e", traj.trace_drift[-1])
    return traj


def dephasing_closed_form(spec: LiouvillianSpec, rho0: DensityMatrix, basis: GridBasis, hbar: float, t: float) -> DensityMatrix:
    """Exact solution when the kinetic term is disabled.

    rho(x, x', t) = rho0 exp(-i (V(x) - V(x')) t / hbar
                             - sum_k gamma_k (g_k(x) - g_k(x'))^2 t / hbar^2)
    """
    if spec.kinetic:
        raise ValueError("closed form requires the kinetic term to be disabled")
    if len(spec.coordinates) != 1:
        raise ValueError("closed form is for a single coordinate")
    (name,) = spec.coordinates
    x = basis.x
    v = np.zeros_like(x)
    for c, p in spec.hamiltonian:
        v += float(c) * np.asarray(p.evaluate({name: x}), dtype=float)
    expo = -1j * (v[:, None] - v[None, :]) * t / hbar
    for g, p in spec.decoherence:
        a = np.asarray(p.evaluate({name: x}), dtype=float) * np.ones_like(x)
        expo = expo - float(g) * (a[:, None] - a[None, :]) ** 2 * t / hbar**2
    return DensityMatrix(basis, rho0.data * np.exp(expo))


def _initial_pure_states(rho0: DensityMatrix, rngs):
    op = rho0.operator()
    w, vecs = np.linalg.eigh(0.5 * (op + op.conj().T))
    w = np.clip(w, 0.0, None)
    w = w / w.sum()
    scale = 1.0 / math.sqrt(rho0.basis.dx)
    if w[-1] > 1.0 - 1e-12:
        psi = vecs[:, -1] * scale
        return [psi for _ in rngs]
    return [vecs[:, rng.choice(len(w), p=w)] * scale for rng in rngs]


def unravel_stochastic(
    ops: QuantumOperatorSet,
    rho0: DensityMatrix,
    dt: float,
    steps: int,
    trajectories: int,
    seed: int,
    save_every: int | None = None,
    chunk: int = 1000,
) -> Trajectory:
    """Average of pure-state trajectories under H + sum_k xi_k sqrt(2 gamma_k) A_k.

    Each step is Strang split: half step of H (RK4), the diagonal noise
    phase exp(-i sqrt(2 gamma) dW A / hbar) with dW ~ N(0, dt), half step of
    H. Trajectory i draws from its own SeedSequence child, so ``chunk``
    changes only the summation order (round-off).
    """
    if trajectories < 1:
        raise ValueError("need at least one trajectory")
    save_every = save_every or steps
    basis = rho0.basis
    amps = [math.sqrt(2.0 * g) * a / ops.hbar for g, a in zip(ops.gammas, ops.A)]
    if amps:
        kick = max(float(np.max(np.abs(a))) for a in amps) * math.sqrt(dt)
        if kick > 1.0:
            warnings.warn(f"noise increment per step ~{kick:.3g} exceeds 1; reduce dt", RuntimeWarning)
    children = np.random.SeedSequence(seed).spawn(trajectories)
    saved = [n for n in range(0, steps + 1) if n % save_every == 0 or n == steps]
    sums = [np.zeros((basis.points, basis.points), dtype=complex) for _ in saved]
    half = 0.5 * dt

    # the RK4 half step of a fixed linear generator is a fixed matrix polynomial
    gen = (-1j * half / ops.hbar) * ops.hamiltonian_apply(np.eye(basis.points, dtype=complex))
    prop = np.eye(basis.points, dtype=complex)
    term = prop
    for k in range(1, 5):
        term = term @ gen / k
        prop = prop + term

    for start in range(0, trajectories, chunk):
        block = children[start:start + chunk]
        rngs = [np.random.default_rng(s) for s in block]
        psi = np.stack(_initial_pure_states(rho0, rngs), axis=1)
        # noise[k] has shape (steps, n_traj)
        noise = [
            np.stack([rng.standard_normal(steps) for rng in rngs], axis=1) * math.sqrt(dt)
            for _ in amps
        ] if amps else []
        slot = 0
        if saved[0] == 0:
            sums[0] += psi @ psi.conj().T
            slot = 1
        for n in range(1, steps + 1):
            psi = prop @ psi
            if amps:
                phase = sum(a[:, None] * dw[n - 1][None, :] for a, dw in zip(amps, noise))
                psi = psi * np.exp(-1j * phase)
            psi = prop @ psi
            if slot < len(saved) and saved[slot] == n:
                sums[slot] += psi @ psi.conj().T
                slot += 1
    traj = Trajectory([], [])
    for n, s in zip(saved, sums):
        rho = s / trajectories
        traj.times.append(n * dt)
        traj.states.append(DensityMatrix(basis, rho))
        traj.trace_drift.append(abs(np.trace(rho) * basis.dx - 1.0))
    return traj


def coherence_metrics(rho: DensityMatrix) -> dict:
    op = rho.operator()
    off = op - np.diag(np.diag(op))
    return {
        "offdiag_l1": float(np.abs(off).sum()),
        "purity": float(np.real(np.vdot(op.conj().T, op))),
        "min_eigenvalue": rho.min_eigenvalue(),
    }


def boundary_population(rho: DensityMatrix, cells: int = 2) -> float:
    """Population in the ``cells`` outermost grid points at each wall."""
    d = np.real(np.diag(rho.data)) * rho.basis.dx
    return float(d[:cells].sum() + d[-cells:].sum())


def observables(rho: DensityMatrix, hbar: float) -> dict:
    dx = rho.basis.dx
    x = rho.basis.x
    diag = np.real(np.diag(rho.data))
    # <p^2> = tr(-hbar^2 d^2/dx^2 rho), 2nd-order stencil
    lap = -2.0 * rho.data
    lap[1:] += rho.data[:-1]
    lap[:-1] += rho.data[1:]
    p2 = float(np.real(np.trace(-(hbar**2) * lap / dx**2)) * dx)
    metrics = coherence_metrics(rho)
    return {
        "trace": float(np.real(np.trace(rho.data)) * dx),
        "purity": metrics["purity"],
        "offdiag_l1": metrics["offdiag_l1"],
        "mean_x": float(np.sum(x * diag) * dx),
        "mean_p2": p2,
        "min_eigenvalue": metrics["min_eigenvalue"],
    }


def state_from_wavefunction(basis: GridBasis, psi) -> DensityMatrix:
    psi = np.asarray(psi, dtype=complex)
    psi = psi / math.sqrt(np.sum(np.abs(psi) ** 2) * basis.dx)
    return DensityMatrix(basis, np.outer(psi, psi.conj()))


def gaussian_state(basis: GridBasis, x0=0.0, p0=0.0, sigma_x=1.0, sigma_p=None, hbar=1.0) -> DensityMatrix:
    """Gaussian state with Wigner widths sigma_x, sigma_p (pure if sigma_p*sigma_x = hbar/2)."""
    if sigma_p is None:
        sigma_p = hbar / (2.0 * sigma_x)
    if sigma_x * sigma_p < hbar / 2.0 * (1 - 1e-12):
        raise ValueError("sigma_x * sigma_p must be >= hbar/2")
    x = basis.x
    c = 0.5 * (x[:, None] + x[None, :])
    eta = x[:, None] - x[None, :]
    data = np.exp(
        -((c - x0) ** 2) / (2 * sigma_x**2)
        - sigma_p**2 * eta**2 / (2 * hbar**2)
        + 1j * p0 * eta / hbar
    ) / math.sqrt(2 * math.pi * sigma_x**2)
    data = data / (np.real(np.trace(data)) * basis.dx)
    return DensityMatrix(basis, data)


def cat_state(basis: GridBasis, a: float, sigma: float = 1.0, hbar: float = 1.0) -> DensityMatrix:
    x = basis.x
    psi = np.exp(-((x - a) ** 2) / (4 * sigma**2)) + np.exp(-((x + a) ** 2) / (4 * sigma**2))
    return state_from_wavefunction(basis, psi)
