"""Wigner transform of grid density matrices and the hbar^2-truncated
phase-space evolution with decoherence.

Transform layout. For an M-point position grid with spacing dx the Wigner
field lives on 2M-1 centres spaced dx/2 (x_min .. x_max) and 2M-1 momenta
p_m = 2 pi hbar m / ((2M-1) dx), |m| <= M-1, so p_max ~ pi hbar / dx. The
kernel is first trigonometrically interpolated onto the half-step grid so
that every centre sees eta = n dx, |n| <= M-1 (zero padded). The inverse only
reads entries whose end points are original grid points, so
``wigner_inverse(wigner_forward(rho))`` is exact up to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .classical import PhaseSpaceField
from .errors import NumericalInstability
from .polynomial import Polynomial
from .quantum import DensityMatrix, GridBasis

__all__ = [
    "EXACT",
    "wigner_forward",
    "wigner_inverse",
    "wigner_grid",
    "WignerOperator",
    "wigner_operator",
    "evolve_wigner",
    "wigner_stable_dt",
    "semiclassical_ratios",
    "boundary_decay_check",
    "field_integral",
    "position_marginal",
]

# ratio reported when the hbar^2 side vanishes identically
EXACT = math.inf


def _upsample(a: np.ndarray, axis: int) -> np.ndarray:
    """Band-limited interpolation to half steps: M -> 2M-1 samples."""
    m = a.shape[axis]
    spec = np.fft.fft(a, axis=axis)
    shape = list(a.shape)
    shape[axis] = 2 * m
    padded = np.zeros(shape, dtype=complex)
    half = m // 2

    def take(arr, sl):
        idx = [slice(None)] * arr.ndim
        idx[axis] = sl
        return tuple(idx)

    if m % 2:
        padded[take(padded, slice(0, half + 1))] = spec[take(spec, slice(0, half + 1))]
        padded[take(padded, slice(2 * m - half, 2 * m))] = spec[take(spec, slice(half + 1, m))]
    else:
        padded[take(padded, slice(0, half))] = spec[take(spec, slice(0, half))]
        padded[take(padded, slice(2 * m - half + 1, 2 * m))] = spec[take(spec, slice(half + 1, m))]
        nyq = spec[take(spec, slice(half, half + 1))]
        padded[take(padded, slice(half, half + 1))] = 0.5 * nyq
        padded[take(padded, slice(2 * m - half, 2 * m - half + 1))] = 0.5 * nyq
    fine = np.fft.ifft(padded, axis=axis) * 2
    return fine[take(fine, slice(0, 2 * m - 1))]


def wigner_grid(basis: GridBasis, hbar: float):
    m = basis.points
    length = 2 * m - 1
    x = np.linspace(basis.x_min, basis.x_max, length)
    p = 2 * math.pi * hbar * np.arange(-(m - 1), m) / (length * basis.dx)
    return x, p


def _index_maps(m: int):
    length = 2 * m - 1
    f = np.arange(length)[:, None]
    n = np.arange(-(m - 1), m)[None, :]
    lo, hi = f - n, f + n
    valid = (lo >= 0) & (hi >= 0) & (lo < length) & (hi < length)
    return lo, hi, valid


def wigner_forward(rho: DensityMatrix, hbar: float) -> PhaseSpaceField:
    data = rho.data
    scale = np.linalg.norm(data)
    if scale and np.linalg.norm(data - data.conj().T) > 1e-10 * scale:
        raise ValueError("density matrix is not Hermitian; Wigner function would be complex")
    basis = rho.basis
    m = basis.points
    length = 2 * m - 1
    fine = _upsample(_upsample(data, 0), 1)
    lo, hi, valid = _index_maps(m)
    samples = np.where(valid, fine[np.clip(lo, 0, length - 1), np.clip(hi, 0, length - 1)], 0.0)
    # sum_n exp(+2 pi i m n / L) S[f, n]
    w = np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(samples, axes=1), axis=1), axes=1) * length
    w *= basis.dx / (2 * math.pi * hbar)
    if scale and np.max(np.abs(w.imag)) > 1e-10 * max(np.max(np.abs(w.real)), 1e-300):
        raise ValueError("Wigner transform has a non-negligible imaginary part")
    x, p = wigner_grid(basis, hbar)
    return PhaseSpaceField((x, p), w.real)


def _basis_of(w: PhaseSpaceField, hbar: float) -> GridBasis:
    x, p = w.axes
    length = len(x)
    if length % 2 == 0 or len(p) != length:
        raise ValueError("field is not on a Wigner transform grid")
    basis = GridBasis((length + 1) // 2, float(x[0]), float(x[-1]))
    _, p_expected = wigner_grid(basis, hbar)
    if not np.allclose(p, p_expected, rtol=1e-12, atol=1e-14 * max(1.0, abs(p_expected).max())):
        raise ValueError("momentum grid is not conjugate to the position grid for this hbar")
    return basis


def wigner_inverse(w: PhaseSpaceField, hbar: float) -> DensityMatrix:
    basis = _basis_of(w, hbar)
    m = basis.points
    length = 2 * m - 1
    values = w.data * (2 * math.pi * hbar / basis.dx)
    samples = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(values, axes=1), axis=1), axes=1) / length
    i = np.arange(m)[:, None]
    j = np.arange(m)[None, :]
    data = samples[i + j, (j - i) + (m - 1)]
    return DensityMatrix(basis, data)


def field_integral(w: PhaseSpaceField, coarse: bool = True) -> float:
    """Phase-space integral of ``w``.

    With ``coarse`` (and an odd number of x nodes) only the rows at the
    original position grid enter, weighted 2 dx; for a transformed state
    this equals the trace exactly. Half-step rows carry interpolated values
    that alias for kernels with Nyquist content (e.g. the identity).
    """
    if coarse and len(w.axes[0]) % 2 == 1:
        return float(w.data[::2].sum() * 2 * w.cell_volume)
    return float(w.data.sum() * w.cell_volume)


def position_marginal(w: PhaseSpaceField) -> np.ndarray:
    return w.data.sum(axis=1) * w.spacings[1]


# 4th-order central stencils for d^k/dp^k, offsets -3..3
_D = {
    1: np.array([0, 1, -8, 0, 8, -1, 0]) / 12.0,
    2: np.array([0, -1, 16, -30, 16, -1, 0]) / 12.0,
    3: np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0,
    4: np.array([-1, 12, -39, 56, -39, 12, -1]) / 6.0,
}


def _deriv(f: np.ndarray, order: int, h: float, axis: int) -> np.ndarray:
    """Central difference with zero values beyond the grid."""
    w = _D[order]
    pad = [(0, 0)] * f.ndim
    pad[axis] = (3, 3)
    g = np.pad(f, pad)
    n = f.shape[axis]
    out = np.zeros_like(f)
    for k, c in enumerate(w):
        if c:
            out += c * np.take(g, np.arange(k, k + n), axis=axis)
    return out / h**order


def _symbol_max(order: int) -> float:
    theta = np.linspace(0, math.pi, 2001)
    w = _D[order]
    s = sum(c * np.exp(1j * (k - 3) * theta) for k, c in enumerate(w))
    return float(np.max(np.abs(s)))


@dataclass
class WignerOperator:
    """Coefficient fields of the truncated Wigner generator on a grid."""

    x: np.ndarray
    p: np.ndarray
    mu: float
    hbar: float
    gamma: float
    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray
    v4: np.ndarray

    def rate(self, w: np.ndarray) -> np.ndarray:
        dx = self.x[1] - self.x[0]
        dp = self.p[1] - self.p[0]
        out = self.v1[:, None] * _deriv(w, 1, dp, 1)
        if math.isfinite(self.mu):
            out -= (self.p / self.mu)[None, :] * _deriv(w, 1, dx, 0)
        if self.gamma:
            out += (self.gamma * self.v2**2)[:, None] * _deriv(w, 2, dp, 1)
        if self.hbar and np.any(self.v3):
            out -= (self.hbar**2 / 24.0) * self.v3[:, None] * _deriv(w, 3, dp, 1)
        if self.hbar and self.gamma and np.any(self.v2 * self.v4):
            out -= (self.hbar**2 / 12.0) * (self.gamma * self.v2 * self.v4)[:, None] * _deriv(w, 4, dp, 1)
        return out


def wigner_operator(w: PhaseSpaceField, potential: Polynomial, mu: float, hbar: float, gamma: float) -> WignerOperator:
    used = potential.used_variables()
    if len(used) > 1:
        raise ValueError("Wigner evolution is for a single coordinate")
    x, p = w.axes
    if used:
        (name,) = used
        derivs = [potential]
        for _ in range(4):
            derivs.append(derivs[-1].derivative(name))
        vals = [np.asarray(d.evaluate({name: x}), dtype=float) * np.ones_like(x) for d in derivs]
    else:
        vals = [np.zeros_like(x)] * 5
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return WignerOperator(x, p, float(mu), float(hbar), float(gamma), *vals[1:])


def wigner_stable_dt(op: WignerOperator, safety: float = 0.9) -> float:
    dx = op.x[1] - op.x[0]
    dp = op.p[1] - op.p[0]
    # RK4 stability reaches ~2.8 on both the imaginary and negative real axes
    lam = np.max(np.abs(op.v1)) * _symbol_max(1) / dp
    if math.isfinite(op.mu):
        lam += np.max(np.abs(op.p)) / op.mu * _symbol_max(1) / dx
    lam += op.gamma * np.max(op.v2**2) * _symbol_max(2) / dp**2
    lam += op.hbar**2 / 24 * np.max(np.abs(op.v3)) * _symbol_max(3) / dp**3
    lam += op.hbar**2 / 12 * op.gamma * np.max(np.abs(op.v2 * op.v4)) * _symbol_max(4) / dp**4
    return safety * 2.78 / lam if lam > 0 else math.inf


def evolve_wigner(
    w: PhaseSpaceField,
    potential: Polynomial,
    mu: float,
    hbar: float,
    gamma: float,
    dt: float,
    steps: int,
    save_every: int | None = None,
) -> list:
    """RK4 integration of the truncated Wigner equation.

    dW/dt = -(p/mu) W_x + V' W_p + gamma V''^2 W_pp
            - (hbar^2/24) V''' W_ppp - (hbar^2/12) gamma V'' V'''' W_pppp

    ``mu = inf`` drops the kinetic term. Returns ``[(t, field), ...]``.
    """
    op = wigner_operator(w, potential, mu, hbar, gamma)
    limit = wigner_stable_dt(op)
    if dt > limit:
        raise NumericalInstability(f"dt={dt:.6g} exceeds the Wigner stability bound", suggested_dt=limit)
    save_every = save_every or steps
    f = np.array(w.data, dtype=float)
    peak0 = np.max(np.abs(f))
    out = [(0.0, PhaseSpaceField(w.axes, f.copy()))]
    for n in range(1, steps + 1):
        k1 = op.rate(f)
        k2 = op.rate(f + 0.5 * dt * k1)
        k3 = op.rate(f + 0.5 * dt * k2)
        k4 = op.rate(f + dt * k3)
        f = f + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        peak = np.max(np.abs(f))
        if not np.isfinite(peak) or peak > 10 * peak0:
            raise NumericalInstability(f"Wigner field grew {peak / peak0:.3g}x by step {n}", suggested_dt=dt / 4)
        if n % save_every == 0 or n == steps:
            out.append((n * dt, PhaseSpaceField(w.axes, f.copy())))
    return out


def semiclassical_ratios(w: PhaseSpaceField, potential: Polynomial, hbar: float) -> dict:
    """Grid-max ratios of the classical terms to their hbar^2 corrections.

    ratio34 = max|V' W_p| / (hbar^2 max|V''' W_ppp|)
    ratio35 = max|V''^2 W_pp| / (hbar^2 max|V'' V'''' W_pppp|)
    ``EXACT`` when the correction vanishes identically for this potential.
    """
    op = wigner_operator(w, potential, math.inf, hbar, 0.0)
    dp = w.spacings[1]
    data = w.data
    out = {}
    if not np.any(op.v3):
        out["ratio34"] = EXACT
    else:
        lhs = np.max(np.abs(op.v1[:, None] * _deriv(data, 1, dp, 1)))
        rhs = hbar**2 * np.max(np.abs(op.v3[:, None] * _deriv(data, 3, dp, 1)))
        out["ratio34"] = float(lhs / rhs) if rhs > 0 else EXACT
    if not np.any(op.v2 * op.v4):
        out["ratio35"] = EXACT
    else:
        lhs = np.max(np.abs((op.v2**2)[:, None] * _deriv(data, 2, dp, 1)))
        rhs = hbar**2 * np.max(np.abs((op.v2 * op.v4)[:, None] * _deriv(data, 4, dp, 1)))
        out["ratio35"] = float(lhs / rhs) if rhs > 0 else EXACT
    return out


def boundary_decay_check(rho: DensityMatrix, threshold: float = 1e-6, shell: float = 0.1) -> dict:
    """Far off-diagonal correlations ``rho(x - eta, x + eta)``.

    The outer shell holds entries with |i - j| >= (1 - shell)(M - 1). The
    check passes when their largest modulus, relative to max |rho|, is
    below ``threshold``.
    """
    data = np.abs(rho.data)
    m = rho.basis.points
    i, j = np.indices((m, m))
    cut = (1.0 - shell) * (m - 1)
    mask = np.abs(i - j) >= cut
    outer = float(data[mask].max()) if mask.any() else 0.0
    peak = float(data.max())
    rel = outer / peak if peak else 0.0
    return {"max_outer": outer, "relative": rel, "passed": rel <= threshold}
