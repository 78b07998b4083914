"""Center-of-mass reduction calculus for polynomial Liouvillians.

A scale-n operator is a :class:`LiouvillianSpec`: masses, Hamiltonian
potential terms ``(c, p)`` and double-bracket decoherence terms ``(gamma, g)``.
:func:`reduce_once` clusters the coordinates, substitutes ``x = y + r``,
keeps the zeroth multipolar order as the new Hamiltonian and turns every
first-order channel into a new decoherence generator.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .polynomial import Polynomial, as_fraction, natural_key, parse_polynomial

__all__ = [
    "ParticleSystem",
    "ClusterPartition",
    "CouplingAggregates",
    "MomentModel",
    "LiouvillianSpec",
    "ExpansionResult",
    "poly_derivative",
    "substitute_com",
    "multipolar_truncate",
    "aggregate_couplings",
    "cluster_moments",
    "initial_spec",
    "reduce_once",
    "reduce_chain",
    "signature",
    "signature_text",
    "shape_name",
    "find_invariance_depth",
]


def _single_variable(p: Polynomial, what: str) -> str | None:
    used = p.used_variables()
    if len(used) > 1:
        raise ValueError(f"{what} must depend on one variable, got {used}")
    return used[0] if used else None


@dataclass(frozen=True)
class ParticleSystem:
    masses: tuple
    pair_couplings: Mapping  # (j, k) with j < k, 1-based -> q_jk
    external_couplings: tuple
    pair_potential: Polynomial
    external_potential: Polynomial

    def __post_init__(self):
        masses = tuple(as_fraction(m) for m in self.masses)
        if not masses:
            raise ValueError("a particle system needs at least one particle")
        if any(m <= 0 for m in masses):
            raise ValueError("all masses must be positive")
        n = len(masses)
        pairs = {}
        for (j, k), q in dict(self.pair_couplings).items():
            if j == k:
                raise ValueError(f"self-coupling entry ({j}, {k})")
            if not (1 <= j <= n and 1 <= k <= n):
                raise ValueError(f"pair ({j}, {k}) outside 1..{n}")
            key = (min(j, k), max(j, k))
            q = as_fraction(q)
            if key in pairs and pairs[key] != q:
                raise ValueError(f"asymmetric coupling for pair {key}")
            pairs[key] = q
        ext = tuple(as_fraction(q) for q in self.external_couplings)
        if len(ext) != n:
            raise ValueError("need one external coupling per particle")
        _single_variable(self.pair_potential, "pair potential")
        _single_variable(self.external_potential, "external potential")
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "pair_couplings", pairs)
        object.__setattr__(self, "external_couplings", ext)

    @property
    def n_particles(self) -> int:
        return len(self.masses)

    def coupling(self, j: int, k: int) -> Fraction:
        return self.pair_couplings.get((min(j, k), max(j, k)), Fraction(0))


@dataclass(frozen=True)
class ClusterPartition:
    """``assignment[i]`` is the 1-based cluster of the i-th coordinate."""

    assignment: tuple

    def __post_init__(self):
        a = tuple(int(x) for x in self.assignment)
        if not a:
            raise ValueError("empty partition")
        labels = set(a)
        if labels != set(range(1, max(labels) + 1)) or min(labels) != 1:
            raise ValueError(
                f"cluster indices must be contiguous from 1 (every cluster nonempty), got {sorted(labels)}"
            )
        object.__setattr__(self, "assignment", a)

    def __len__(self):
        return len(self.assignment)

    @property
    def n_clusters(self) -> int:
        return max(self.assignment)

    def members(self, alpha: int) -> list[int]:
        """0-based coordinate positions in cluster ``alpha``."""
        return [i for i, a in enumerate(self.assignment) if a == alpha]


@dataclass(frozen=True)
class CouplingAggregates:
    pair: dict  # (alpha, beta) -> Q, both orders stored
    external: dict  # alpha -> Q_alpha
    masses: dict  # alpha -> mu_alpha


def aggregate_couplings(system: ParticleSystem, partition: ClusterPartition) -> CouplingAggregates:
    if len(partition) != system.n_particles:
        raise ValueError("partition size does not match the particle count")
    nc = partition.n_clusters
    members = {a: partition.members(a) for a in range(1, nc + 1)}
    pair = {}
    for a, b in itertools.permutations(range(1, nc + 1), 2):
        pair[(a, b)] = sum(
            (system.coupling(j + 1, k + 1) for j in members[a] for k in members[b]),
            Fraction(0),
        )
    external = {a: sum((system.external_couplings[j] for j in members[a]), Fraction(0)) for a in members}
    masses = {a: sum((system.masses[j] for j in members[a]), Fraction(0)) for a in members}
    return CouplingAggregates(pair, external, masses)


def cluster_moments(system: ParticleSystem, partition: ClusterPartition, positions: Sequence) -> dict:
    """Centers of mass, relative coordinates and first multipole moments.

    Returns ``com`` (alpha -> y), ``relative`` (per particle), ``dipole``
    (alpha -> sum q_j r_j) and ``pair_dipole`` ((alpha, beta) -> d).
    """
    pos = [as_fraction(x) for x in positions]
    if len(pos) != system.n_particles:
        raise ValueError("need one position per particle")
    agg = aggregate_couplings(system, partition)
    com = {}
    for a in range(1, partition.n_clusters + 1):
        idx = partition.members(a)
        com[a] = sum((system.masses[j] * pos[j] for j in idx), Fraction(0)) / agg.masses[a]
    rel = [pos[j] - com[partition.assignment[j]] for j in range(len(pos))]
    dipole = {
        a: sum((system.external_couplings[j] * rel[j] for j in partition.members(a)), Fraction(0))
        for a in com
    }
    pair_dipole = {}
    for a, b in itertools.combinations(sorted(com), 2):
        pair_dipole[(a, b)] = sum(
            (
                system.coupling(j + 1, k + 1) * (rel[j] - rel[k])
                for j in partition.members(a)
                for k in partition.members(b)
            ),
            Fraction(0),
        )
    return {"com": com, "relative": rel, "dipole": dipole, "pair_dipole": pair_dipole}


@dataclass(frozen=True)
class MomentModel:
    """Second-moment statistics of the traced-out internal moments.

    ``gamma = variance * timescale``. Variances can be given per channel,
    keyed either by the generator text (``"y1_1 - y1_2"``) or by its shape
    name (``"pair-linear"``); anything else uses ``default_variance``.
    """

    default_variance: Fraction = Fraction(1)
    timescale: Fraction = Fraction(1)
    variances: Mapping = field(default_factory=dict)

    def __post_init__(self):
        dv = as_fraction(self.default_variance)
        ts = as_fraction(self.timescale)
        var = {str(k): as_fraction(v) for k, v in dict(self.variances).items()}
        bad = [k for k, v in var.items() if v < 0]
        if dv < 0:
            bad.append("default_variance")
        if ts < 0:
            bad.append("timescale")
        if bad:
            raise ValueError(f"negative variance/timescale in moment model: {bad}")
        object.__setattr__(self, "default_variance", dv)
        object.__setattr__(self, "timescale", ts)
        object.__setattr__(self, "variances", var)

    def gamma(self, generator: Polynomial) -> Fraction:
        text = generator.to_text()
        if text in self.variances:
            var = self.variances[text]
        else:
            var = self.variances.get(shape_name(generator), self.default_variance)
        return var * self.timescale


def _canonical_terms(terms, role: str, coordinates) -> tuple:
    merged: dict[Polynomial, Fraction] = {}
    order: list[Polynomial] = []
    for c, p in terms:
        c = as_fraction(c)
        if role == "G" and c < 0:
            raise ValueError(f"negative decoherence strength {c}")
        p = p.trimmed()
        extra = set(p.variables) - set(coordinates)
        if extra:
            raise ValueError(f"term uses unknown coordinates {sorted(extra)}")
        if p.is_constant():
            # {const, .} = 0: constant potentials and generators are pruned
            continue
        scale, prim = p.normalized()
        weight = c * scale if role == "H" else c * scale * scale
        if prim not in merged:
            merged[prim] = Fraction(0)
            order.append(prim)
        merged[prim] += weight
    out = [(merged[p], p) for p in order if merged[p] != 0]
    out.sort(key=lambda t: natural_key(t[1].to_text()))
    return tuple(out)


@dataclass(frozen=True)
class LiouvillianSpec:
    """Scale-n evolution operator.

    Classically ``L rho = {H, rho} + sum gamma {g, {g, rho}}``; quantum
    mechanically the double bracket reads ``-(gamma/hbar^2) [g, [g, rho]]``.
    Terms are stored canonically: primitive polynomials (leading coefficient
    1), merged, sorted, constants pruned.
    """

    coordinates: tuple
    masses: tuple
    hamiltonian: tuple = ()
    decoherence: tuple = ()
    scale: int = 0
    kinetic: bool = True

    def __post_init__(self):
        coords = tuple(self.coordinates)
        if len(set(coords)) != len(coords):
            raise ValueError("duplicate coordinate names")
        masses = tuple(as_fraction(m) for m in self.masses)
        if len(masses) != len(coords):
            raise ValueError("need one mass per coordinate")
        if any(m <= 0 for m in masses):
            raise ValueError("masses must be positive")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "masses", masses)
        object.__setattr__(self, "hamiltonian", _canonical_terms(self.hamiltonian, "H", coords))
        object.__setattr__(self, "decoherence", _canonical_terms(self.decoherence, "G", coords))

    @property
    def potential(self) -> Polynomial:
        """Total potential sum c*p over all coordinates."""
        total = Polynomial.constant(0, self.coordinates)
        for c, p in self.hamiltonian:
            total = total + p * c
        return total.with_variables(self.coordinates)

    def to_text(self) -> str:
        lines = [
            f"liouvillian scale={self.scale}",
            "coordinates: " + " ".join(self.coordinates),
            "masses: " + " ".join(str(m) for m in self.masses),
            f"kinetic: {'on' if self.kinetic else 'off'}",
        ]
        lines += [f"H {c} : {p.to_text()}" for c, p in self.hamiltonian]
        lines += [f"G {g} : {p.to_text()}" for g, p in self.decoherence]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LiouvillianSpec":
        scale, coords, masses, kinetic = 0, None, None, True
        ham, dec = [], []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("liouvillian"):
                scale = int(line.split("scale=")[1])
            elif line.startswith("coordinates:"):
                coords = line.split(":", 1)[1].split()
            elif line.startswith("masses:"):
                masses = [Fraction(m) for m in line.split(":", 1)[1].split()]
            elif line.startswith("kinetic:"):
                kinetic = line.split(":", 1)[1].strip() == "on"
            elif line[:2] in ("H ", "G "):
                head, poly = line[2:].split(":", 1)
                target = ham if line[0] == "H" else dec
                target.append((Fraction(head.strip()), parse_polynomial(poly.strip())))
            else:
                raise ValueError(f"unrecognized line in operator text: {raw!r}")
        if coords is None or masses is None:
            raise ValueError("operator text lacks coordinates or masses")
        return cls(tuple(coords), tuple(masses), tuple(ham), tuple(dec), scale, kinetic)


@dataclass(frozen=True)
class ExpansionResult:
    zeroth: Polynomial
    first: tuple  # ((coefficient polynomial in y, internal variable name), ...)
    residual: bool
    discarded: Polynomial

    def reconstruct(self) -> Polynomial:
        total = self.zeroth
        for coeff, r in self.first:
            total = total + coeff * Polynomial.var(r)
        return total


def poly_derivative(p: Polynomial, var: str) -> Polynomial:
    return p.derivative(var)


def default_coordinates(n: int) -> tuple:
    return tuple(f"x{j}" for j in range(1, n + 1))


def com_name(scale: int, alpha: int) -> str:
    return f"y{scale}_{alpha}"


def internal_name(scale: int, j: int) -> str:
    return f"r{scale}_{j}"


def substitute_com(
    p: Polynomial,
    partition: ClusterPartition,
    coordinates: Sequence[str] | None = None,
    scale: int = 1,
) -> Polynomial:
    """Exact substitution ``x_j -> y_alpha + r_j`` for every coordinate.

    Members of singleton clusters have no relative coordinate (``r_j = 0``).
    """
    coordinates = tuple(coordinates or default_coordinates(len(partition)))
    if len(coordinates) != len(partition):
        raise ValueError("partition does not match the coordinate list")
    unassigned = set(p.used_variables()) - set(coordinates)
    if unassigned:
        raise ValueError(f"coordinates {sorted(unassigned)} are not assigned to any cluster")
    sizes = {a: len(partition.members(a)) for a in range(1, partition.n_clusters + 1)}
    mapping = {}
    for i, name in enumerate(coordinates):
        alpha = partition.assignment[i]
        image = Polynomial.var(com_name(scale, alpha))
        if sizes[alpha] > 1:
            image = image + Polynomial.var(internal_name(scale, i + 1))
        mapping[name] = image
    return p.substitute(mapping).trimmed()


def multipolar_truncate(p: Polynomial, internal: Iterable[str] | None = None) -> ExpansionResult:
    """Split by total degree in the internal coordinates (default: ``r*``)."""
    if internal is None:
        internal = [v for v in p.variables if v.startswith("r")]
    internal = [v for v in internal if v in p.variables]
    pos = [p.variables.index(v) for v in internal]
    external = [v for v in p.variables if v not in internal]
    zeroth: dict = {}
    first: dict = {v: {} for v in internal}
    dropped: dict = {}
    for exps, c in p.terms.items():
        rdeg = sum(exps[i] for i in pos)
        ext = tuple(e for v, e in zip(p.variables, exps) if v not in internal)
        if rdeg == 0:
            zeroth[ext] = c
        elif rdeg == 1:
            which = next(v for v, i in zip(internal, pos) if exps[i] == 1)
            first[which][ext] = c
        else:
            dropped[exps] = c
    channels = tuple(
        (Polynomial(external, terms).trimmed(), v) for v, terms in first.items() if terms
    )
    discarded = Polynomial(p.variables, dropped)
    return ExpansionResult(
        Polynomial(external, zeroth).trimmed(), channels, bool(dropped), discarded.trimmed()
    )


def initial_spec(system: ParticleSystem, kinetic: bool = True) -> LiouvillianSpec:
    """Scale-0 operator: pair terms ``q_jk U(x_j - x_k)`` and ``q_j V(x_j)``."""
    coords = default_coordinates(system.n_particles)
    ham = []
    u_var = _single_variable(system.pair_potential, "pair potential")
    v_var = _single_variable(system.external_potential, "external potential")
    for (j, k), q in sorted(system.pair_couplings.items()):
        if q == 0:
            continue
        sep = Polynomial.var(coords[j - 1]) - Polynomial.var(coords[k - 1])
        u = system.pair_potential if u_var is None else system.pair_potential.substitute({u_var: sep})
        ham.append((q, u))
    for j, q in enumerate(system.external_couplings):
        if q == 0:
            continue
        x = Polynomial.var(coords[j])
        v = system.external_potential if v_var is None else system.external_potential.substitute({v_var: x})
        ham.append((q, v))
    return LiouvillianSpec(coords, system.masses, tuple(ham), (), 0, kinetic)


def reduce_once(spec: LiouvillianSpec, partition: ClusterPartition, moments: MomentModel | None = None) -> LiouvillianSpec:
    """One coarse-graining step, scale n -> n+1.

    Zeroth multipolar order of each Hamiltonian term and generator is kept
    (generators keep their strength). Every first-order coefficient
    polynomial becomes an independent double-bracket generator whose
    strength comes from ``moments``.
    """
    moments = moments or MomentModel()
    if not isinstance(moments, MomentModel):
        raise TypeError("moments must be a MomentModel")
    if len(partition) != len(spec.coordinates):
        raise ValueError(
            f"partition covers {len(partition)} coordinates, operator has {len(spec.coordinates)}"
        )
    scale = spec.scale + 1
    nc = partition.n_clusters
    coords = tuple(com_name(scale, a) for a in range(1, nc + 1))
    masses = tuple(
        sum((spec.masses[i] for i in partition.members(a)), Fraction(0)) for a in range(1, nc + 1)
    )
    ham, dec = [], []
    channels: list[Polynomial] = []

    def expand(p):
        e = multipolar_truncate(substitute_com(p, partition, spec.coordinates, scale))
        for coeff, _r in e.first:
            if not coeff.is_constant():
                channels.append(coeff.normalized()[1])
        return e.zeroth

    for c, p in spec.hamiltonian:
        ham.append((c, expand(p)))
    for g, p in spec.decoherence:
        dec.append((g, expand(p)))
    seen = set()
    for ch in channels:
        if ch in seen:
            continue
        seen.add(ch)
        dec.append((moments.gamma(ch), ch))
    return LiouvillianSpec(coords, masses, tuple(ham), tuple(dec), scale, spec.kinetic)


def reduce_chain(spec: LiouvillianSpec, partitions: Sequence[ClusterPartition], moments=None) -> list:
    """All levels ``[L0, L1, ...]`` along a partition chain."""
    levels = [spec]
    for k, part in enumerate(partitions):
        levels.append(reduce_once(levels[-1], part, _level_moments(moments, k)))
    return levels


def _level_moments(moments, k: int) -> MomentModel:
    if moments is None:
        return MomentModel()
    if isinstance(moments, MomentModel):
        return moments
    seq = list(moments)
    if not seq:
        return MomentModel()
    return seq[min(k, len(seq) - 1)]


_DEGREE_NAMES = {1: "linear", 2: "quadratic", 3: "cubic", 4: "quartic", 5: "quintic"}
_LABELS = "abcdefghijklmnopqrstuvwxyz"


def _support_pattern(p: Polynomial) -> tuple:
    """Monomial support up to relabeling: lexicographically minimal form."""
    used = p.used_variables()
    q = p.with_variables(used)
    best = None
    for perm in itertools.permutations(range(len(used))):
        pattern = tuple(sorted((tuple(e[i] for i in perm) for e in q.terms), reverse=True))
        if best is None or pattern < best:
            best = pattern
    return len(used), best or ()


def shape_name(p: Polynomial) -> str:
    """Coefficient-blind, relabeling-blind name of a polynomial's shape."""
    nvars, pattern = _support_pattern(p)
    if nvars == 0:
        return "constant"
    if nvars == 1 and len(pattern) == 1:
        d = pattern[0][0]
        return _DEGREE_NAMES.get(d, f"degree-{d}")
    if nvars == 2:
        d = max(sum(e) for e in pattern)
        a, b = Polynomial.var("a"), Polynomial.var("b")
        if _support_pattern((a - b) ** d) == (nvars, pattern):
            return "pair-" + _DEGREE_NAMES.get(d, f"degree-{d}")
    labels = _LABELS[:nvars]
    monos = []
    for e in pattern:
        monos.append("*".join(v if k == 1 else f"{v}^{k}" for v, k in zip(labels, e) if k) or "1")
    return "{" + ", ".join(monos) + "}"


def signature(spec: LiouvillianSpec) -> tuple:
    """Canonical term-shape descriptor: sorted distinct (role, shape) pairs."""
    shapes = {("H", shape_name(p)) for _, p in spec.hamiltonian}
    shapes |= {("G", shape_name(p)) for _, p in spec.decoherence}
    return tuple(sorted(shapes))


def signature_text(sig) -> str:
    if isinstance(sig, LiouvillianSpec):
        sig = signature(sig)
    return "".join(f"{role}: {shape}\n" for role, shape in sig)


def find_invariance_depth(
    spec: LiouvillianSpec,
    partitions: Sequence[ClusterPartition],
    moments=None,
    max_depth: int = 5,
) -> int | None:
    """Number of reductions after which the term shapes stop changing.

    Returns 0 when ``spec`` is already form-invariant (its first reduction
    reproduces its signature). Otherwise returns k, the index of the first
    reduction whose output has the same signature as its input. ``None``
    means no repetition within ``max_depth`` reductions.
    """
    partitions = list(partitions)
    current, sig = spec, signature(spec)
    for k in range(1, max_depth + 1):
        if k > len(partitions):
            raise ValueError(f"partition chain has {len(partitions)} levels, need {k}")
        part = partitions[k - 1]
        if len(part) != len(current.coordinates):
            raise ValueError(
                f"inconsistent partition chain at level {k}: partition covers {len(part)} "
                f"coordinates, operator has {len(current.coordinates)}"
            )
        current = reduce_once(current, part, _level_moments(moments, k - 1))
        new_sig = signature(current)
        if new_sig == sig:
            return 0 if k == 1 else k
        sig = new_sig
    return None
