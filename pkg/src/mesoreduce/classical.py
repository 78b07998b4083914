"""Classical phase-space transport for a reduced operator.

For one mesoparticle the double bracket is momentum diffusion,
{g, {g, rho}} = g'(x)^2 d^2 rho/dp^2, so

    d rho/dt = -(p/mu) d_x rho + V'(x) d_p rho + sum_k gamma_k g_k'(x)^2 d_p^2 rho.

With two coordinates the generator gradient couples momenta and the
diffusion tensor is D_ij = sum_k gamma_k d_i g_k d_j g_k. Axes of a field
are ordered (x_1, .., x_n, p_1, .., p_n); grids are cell-centred.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import LiouvillianSpec
from .errors import NumericalInstability

__all__ = [
    "PhaseSpaceField",
    "ClassicalOperatorSet",
    "build_classical",
    "step_classical",
    "stable_dt",
    "moments",
    "gaussian_field",
    "boltzmann_field",
    "h_function",
]

ADVECTION_CFL = 0.9
DIFFUSION_CFL = 0.45


def cell_centers(lo: float, hi: float, m: int) -> np.ndarray:
    d = (hi - lo) / m
    return lo + d * (np.arange(m) + 0.5)


@dataclass
class PhaseSpaceField:
    """Values on a uniform grid; ``axes`` holds the coordinate of every node."""

    axes: tuple
    data: np.ndarray

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != tuple(len(a) for a in self.axes):
            raise ValueError(f"field shape {self.data.shape} does not match axes")
        if len(self.axes) % 2:
            raise ValueError("phase space needs an even number of axes")

    @property
    def n_coords(self) -> int:
        return len(self.axes) // 2

    @property
    def spacings(self) -> tuple:
        return tuple(float(a[1] - a[0]) for a in self.axes)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacings))

    def mass(self) -> float:
        return float(self.data.sum() * self.cell_volume)

    def copy(self) -> "PhaseSpaceField":
        return PhaseSpaceField(self.axes, self.data.copy())


def _mesh(axes, which):
    shape = [1] * len(axes)
    shape[which] = len(axes[which])
    return axes[which].reshape(shape)


@dataclass
class ClassicalOperatorSet:
    axes: tuple
    masses: tuple
    forces: list  # force -dH/dx_i, arrays broadcastable over the full grid
    generators: list  # (gamma_k, [d_i g_k arrays], name) per channel
    diffusion: dict  # (i, j) -> D_ij(x) array

    @property
    def n_coords(self) -> int:
        return len(self.masses)

    def velocity(self, i: int) -> np.ndarray:
        return _mesh(self.axes, self.n_coords + i) / self.masses[i]

    def diffusion_channels(self) -> list:
        """Per channel D_k(x) = gamma_k |grad g_k|^2 (1D: gamma_k g_k'^2)."""
        return [g * sum(d * d for d in grads) for g, grads, _ in self.generators]

    def field(self, data) -> PhaseSpaceField:
        return PhaseSpaceField(self.axes, data)


def build_classical(spec: LiouvillianSpec, x_grids, p_grids) -> ClassicalOperatorSet:
    """Evaluate forces and diffusion on cell-centred grids.

    ``x_grids`` and ``p_grids`` hold one ``(lo, hi, points)`` per coordinate.
    """
    n = len(spec.coordinates)
    if n not in (1, 2):
        raise ValueError(f"classical engine supports 1 or 2 coordinates, got {n}")
    if len(x_grids) != n or len(p_grids) != n:
        raise ValueError("need one x grid and one p grid per coordinate")
    axes = tuple(cell_centers(*g) for g in x_grids) + tuple(cell_centers(*g) for g in p_grids)
    values = {name: _mesh(axes, i) for i, name in enumerate(spec.coordinates)}
    shape = tuple(len(a) for a in axes)

    def on_grid(poly):
        return np.broadcast_to(np.asarray(poly.evaluate(values), dtype=float), shape[:n] + (1,) * n)

    potential = spec.potential
    forces = [-on_grid(potential.derivative(name)) for name in spec.coordinates]
    generators = []
    diffusion = {}
    for gamma, g in spec.decoherence:
        gamma = float(gamma)
        gw = g.with_variables(spec.coordinates)
        grads = [on_grid(gw.derivative(name)) for name in spec.coordinates]
        generators.append((gamma, grads, g.to_text()))
        for i in range(n):
            for j in range(n):
                term = gamma * grads[i] * grads[j]
                if np.any(term):
                    diffusion[(i, j)] = diffusion.get((i, j), 0.0) + term
    return ClassicalOperatorSet(axes, tuple(float(m) for m in spec.masses), forces, generators, diffusion)


def stable_dt(ops: ClassicalOperatorSet) -> float:
    """Largest dt satisfying the advection and diffusion CFL bounds."""
    n = ops.n_coords
    sp = [float(a[1] - a[0]) for a in ops.axes]
    limits = []
    for i in range(n):
        vmax = float(np.max(np.abs(ops.velocity(i))))
        fmax = float(np.max(np.abs(ops.forces[i])))
        if vmax > 0:
            limits.append(ADVECTION_CFL * sp[i] / vmax)
        if fmax > 0:
            limits.append(ADVECTION_CFL * sp[n + i] / fmax)
    dsum = _diffusion_number(ops, 1.0)
    if dsum > 0:
        limits.append(DIFFUSION_CFL / dsum)
    return min(limits) if limits else np.inf


def _diffusion_number(ops, dt):
    n = ops.n_coords
    sp = [float(a[1] - a[0]) for a in ops.axes]
    total = 0.0
    for i in range(n):
        if (i, i) in ops.diffusion:
            total = total + np.asarray(ops.diffusion[(i, i)]) * dt / sp[n + i] ** 2
    return float(np.max(total)) if np.ndim(total) or total else 0.0


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _advect(rho, u, dt, h, axis):
    """Flux-limited (minmod) second-order upwind step, zero-flux walls.

    ``u`` is constant along ``axis``.
    """
    r = np.moveaxis(rho, axis, 0)
    uu = np.moveaxis(np.broadcast_to(u, rho.shape), axis, 0)[0]
    nu = uu * dt / h
    diff = np.diff(r, axis=0)  # r[i+1] - r[i], length m-1
    slope = np.zeros_like(r)
    slope[1:-1] = _minmod(diff[1:], diff[:-1])
    left = r[:-1] + 0.5 * (1.0 - np.abs(nu)) * slope[:-1]
    right = r[1:] - 0.5 * (1.0 - np.abs(nu)) * slope[1:]
    flux = uu * np.where(uu > 0, left, right)
    out = r.copy()
    out[:-1] -= dt / h * flux
    out[1:] += dt / h * flux
    return np.moveaxis(out, 0, axis)


def _diffuse(rho, ops, dt):
    n = ops.n_coords
    sp = [float(a[1] - a[0]) for a in ops.axes]
    update = np.zeros_like(rho)
    for (i, j), d in ops.diffusion.items():
        ai, aj = n + i, n + j
        d = np.broadcast_to(d, rho.shape)
        r = np.moveaxis(rho, ai, 0)
        dd = np.moveaxis(d, ai, 0)
        if i == j:
            grad = np.diff(r, axis=0) / sp[ai]
        else:
            # centred d/dp_j averaged onto the p_i faces
            cj = np.gradient(rho, sp[aj], axis=aj)
            cj = np.moveaxis(cj, ai, 0)
            grad = 0.5 * (cj[1:] + cj[:-1])
        flux = dd[:-1] * grad  # D is independent of p, so dd[:-1] == face value
        div = np.zeros_like(r)
        div[:-1] += flux
        div[1:] -= flux
        update += np.moveaxis(div, 0, ai) / sp[ai]
    return rho + dt * update


def step_classical(ops: ClassicalOperatorSet, field: PhaseSpaceField, dt: float) -> PhaseSpaceField:
    """One Strang-split step: x/2, p/2, diffusion, p/2, x/2."""
    limit = stable_dt(ops)
    if dt > limit * (1 + 1e-12):
        raise NumericalInstability(f"dt={dt:.6g} violates the CFL bound", suggested_dt=limit)
    n = ops.n_coords
    sp = field.spacings
    rho = field.data
    half = 0.5 * dt
    for i in range(n):
        rho = _advect(rho, ops.velocity(i), half, sp[i], i)
    for i in range(n):
        rho = _advect(rho, ops.forces[i], half, sp[n + i], n + i)
    if ops.diffusion:
        rho = _diffuse(rho, ops, dt)
    for i in reversed(range(n)):
        rho = _advect(rho, ops.forces[i], half, sp[n + i], n + i)
    for i in reversed(range(n)):
        rho = _advect(rho, ops.velocity(i), half, sp[i], i)
    return PhaseSpaceField(field.axes, rho)


def moments(field: PhaseSpaceField, ops: ClassicalOperatorSet | None = None) -> dict:
    """Midpoint-quadrature moments; per-coordinate keys get an index when n > 1."""
    n = field.n_coords
    w = field.data * field.cell_volume
    out = {"mass": float(w.sum())}
    for i in range(n):
        sfx = "" if n == 1 else str(i + 1)
        x = _mesh(field.axes, i)
        p = _mesh(field.axes, n + i)
        out[f"mean_x{sfx}"] = float((w * x).sum())
        out[f"mean_p{sfx}"] = float((w * p).sum())
        out[f"mean_x2{sfx}"] = float((w * x * x).sum())
        out[f"mean_p2{sfx}"] = float((w * p * p).sum())
    if ops is not None:
        for k, (gamma, grads, _) in enumerate(ops.generators):
            out[f"mean_gprime2_{k + 1}"] = float((w * sum(g * g for g in grads)).sum())
        for i in range(n):
            sfx = "" if n == 1 else str(i + 1)
            p = _mesh(field.axes, n + i)
            out[f"mean_pF{sfx}"] = float((w * p * ops.forces[i]).sum())
        out["mean_D"] = float(sum((w * np.broadcast_to(ops.diffusion[(i, i)], w.shape)).sum()
                                  for i in range(n) if (i, i) in ops.diffusion))
    return out


def h_function(field: PhaseSpaceField) -> float:
    return float((field.data**2).sum() * field.cell_volume)


def gaussian_field(ops: ClassicalOperatorSet, x0, p0, sigma_x, sigma_p) -> PhaseSpaceField:
    n = ops.n_coords
    x0, p0 = np.broadcast_to(x0, n), np.broadcast_to(p0, n)
    sx, spp = np.broadcast_to(sigma_x, n), np.broadcast_to(sigma_p, n)
    expo = 0.0
    for i in range(n):
        expo = expo - (_mesh(ops.axes, i) - x0[i]) ** 2 / (2 * sx[i] ** 2)
        expo = expo - (_mesh(ops.axes, n + i) - p0[i]) ** 2 / (2 * spp[i] ** 2)
    data = np.exp(expo)
    f = ops.field(data)
    f.data /= f.mass()
    return f


def boltzmann_field(ops: ClassicalOperatorSet, spec: LiouvillianSpec, theta: float) -> PhaseSpaceField:
    """Normalized exp(-H/theta); stationary under the Hamiltonian flow."""
    n = ops.n_coords
    values = {name: _mesh(ops.axes, i) for i, name in enumerate(spec.coordinates)}
    energy = np.asarray(spec.potential.evaluate(values), dtype=float)
    for i in range(n):
        energy = energy + _mesh(ops.axes, n + i) ** 2 / (2 * ops.masses[i])
    energy = np.broadcast_to(energy, tuple(len(a) for a in ops.axes))
    data = np.exp(-(energy - energy.min()) / theta)
    f = ops.field(data)
    f.data /= f.mass()
    return f
