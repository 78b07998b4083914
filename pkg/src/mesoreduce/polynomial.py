"""Exact multivariate polynomials over named coordinates.

Coefficients are :class:`fractions.Fraction`; variables are kept sorted in
natural order (``x2`` before ``x10``) so that two equal polynomials always
have identical internal representations and identical text.
"""

from __future__ import annotations

import ast
import re
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

__all__ = ["Polynomial", "natural_key", "parse_polynomial", "as_fraction"]

_SPLIT = re.compile(r"(\d+)")


def natural_key(name: str):
    return [int(tok) if tok.isdigit() else tok for tok in _SPLIT.split(name)]


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        # floats from JSON: go through repr so 0.1 stays 1/10
        return Fraction(repr(value))
    return Fraction(value)


class Polynomial:
    """Sparse polynomial: exponent vector -> rational coefficient.

    Instances are treated as immutable values. Zero coefficients are never
    stored, and every exponent vector has one entry per variable.
    """

    __slots__ = ("variables", "terms", "_hash")

    def __init__(self, variables: Iterable[str] = (), terms: Mapping | None = None):
        variables = tuple(variables)
        if len(set(variables)) != len(variables):
            raise ValueError(f"duplicate variable names in {variables}")
        order = sorted(range(len(variables)), key=lambda i: natural_key(variables[i]))
        self.variables = tuple(variables[i] for i in order)
        clean = {}
        for exps, coeff in (terms or {}).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != len(variables):
                raise ValueError(
                    f"exponent vector {exps} does not match variables {variables}"
                )
            if any(e < 0 for e in exps):
                raise ValueError(f"negative exponent in {exps}")
            coeff = as_fraction(coeff)
            if coeff == 0:
                continue
            key = tuple(exps[i] for i in order)
            clean[key] = clean.get(key, Fraction(0)) + coeff
            if clean[key] == 0:
                del clean[key]
        self.terms = clean
        self._hash = None

    # -- constructors -------------------------------------------------
    @classmethod
    def constant(cls, value, variables: Iterable[str] = ()) -> "Polynomial":
        variables = tuple(variables)
        return cls(variables, {(0,) * len(variables): value})

    @classmethod
    def var(cls, name: str) -> "Polynomial":
        return cls((name,), {(1,): 1})

    # -- basic queries --------------------------------------------------
    def __bool__(self):
        return bool(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def is_constant(self) -> bool:
        return all(not any(e) for e in self.terms)

    def constant_term(self) -> Fraction:
        return self.terms.get((0,) * len(self.variables), Fraction(0))

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def used_variables(self) -> tuple[str, ...]:
        return tuple(
            v for i, v in enumerate(self.variables) if any(e[i] for e in self.terms)
        )

    def degree_in(self, names: Iterable[str]) -> dict[tuple[int, ...], int]:
        idx = [self.variables.index(n) for n in names if n in self.variables]
        return {e: sum(e[i] for i in idx) for e in self.terms}

    # -- re-embedding ---------------------------------------------------
    def with_variables(self, variables: Iterable[str]) -> "Polynomial":
        """Re-express over ``variables`` (must contain every used variable)."""
        variables = tuple(variables)
        used = set(self.used_variables())
        missing = used - set(variables)
        if missing:
            raise ValueError(f"variables {sorted(missing)} would be dropped")
        pos = {v: i for i, v in enumerate(self.variables)}
        terms = {}
        for exps, c in self.terms.items():
            terms[tuple(exps[pos[v]] if v in pos else 0 for v in variables)] = c
        return Polynomial(variables, terms)

    def trimmed(self) -> "Polynomial":
        return self.with_variables(self.used_variables())

    def _aligned(self, other: "Polynomial"):
        if self.variables == other.variables:
            return self, other
        names = sorted(set(self.variables) | set(other.variables), key=natural_key)
        return self.with_variables(names), other.with_variables(names)

    # -- arithmetic -----------------------------------------------------
    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        return Polynomial.constant(as_fraction(other), self.variables)

    def __add__(self, other):
        a, b = self._aligned(self._coerce(other))
        terms = dict(a.terms)
        for e, c in b.terms.items():
            terms[e] = terms.get(e, 0) + c
        return Polynomial(a.variables, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.variables, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            k = as_fraction(other)
            return Polynomial(self.variables, {e: c * k for e, c in self.terms.items()})
        a, b = self._aligned(other)
        terms: dict = {}
        for ea, ca in a.terms.items():
            for eb, cb in b.terms.items():
                e = tuple(x + y for x, y in zip(ea, eb))
                terms[e] = terms.get(e, 0) + ca * cb
        return Polynomial(a.variables, terms)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1 / as_fraction(other))

    def __pow__(self, n: int):
        if not isinstance(n, int) or n < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.constant(1, self.variables)
        base = self
        while n:
            if n & 1:
                result = result * base
            base = base * base
            n >>= 1
        return result

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            if isinstance(other, (int, Fraction)):
                return self.is_constant() and self.constant_term() == other
            return NotImplemented
        a, b = self.trimmed(), other.trimmed()
        return a.variables == b.variables and a.terms == b.terms

    def __hash__(self):
        if self._hash is None:
            t = self.trimmed()
            self._hash = hash((t.variables, frozenset(t.terms.items())))
        return self._hash

    # -- calculus and substitution -------------------------------------
    def derivative(self, var: str) -> "Polynomial":
        if var not in self.variables:
            raise KeyError(f"unknown variable {var!r}; have {self.variables}")
        i = self.variables.index(var)
        terms = {}
        for e, c in self.terms.items():
            if e[i]:
                ne = list(e)
                ne[i] -= 1
                terms[tuple(ne)] = c * e[i]
        return Polynomial(self.variables, terms)

    def substitute(self, mapping: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Replace variables by polynomials; unmapped variables are kept."""
        keep = [v for v in self.variables if v not in mapping]
        out_vars = set(keep)
        for p in mapping.values():
            out_vars.update(p.variables)
        names = sorted(out_vars, key=natural_key)
        images = {}
        for v in self.variables:
            p = mapping[v] if v in mapping else Polynomial.var(v)
            images[v] = p.with_variables(names)
        # cache powers, monomials of a potential typically repeat exponents
        powers: dict = {}

        def power(v, k):
            if (v, k) not in powers:
                powers[(v, k)] = images[v] ** k
            return powers[(v, k)]

        result = Polynomial.constant(0, names)
        for e, c in self.terms.items():
            term = Polynomial.constant(c, names)
            for v, k in zip(self.variables, e):
                if k:
                    term = term * power(v, k)
            result = result + term
        return result

    def evaluate(self, values: Mapping[str, object] | None = None, **kw):
        """Numeric evaluation; values may be floats or numpy arrays.

        All-rational inputs (int or Fraction) give an exact Fraction.
        """
        values = dict(values or {}, **kw)
        missing = [v for v in self.used_variables() if v not in values]
        if missing:
            raise KeyError(f"no values for {missing}")
        if all(isinstance(values[v], (int, Fraction)) for v in self.used_variables()):
            exact = Fraction(0)
            for e, c in self.terms.items():
                term = c
                for v, k in zip(self.variables, e):
                    if k:
                        term *= Fraction(values[v]) ** k
                exact += term
            return exact
        out = 0.0
        for e, c in self.terms.items():
            term = float(c)
            for v, k in zip(self.variables, e):
                if k:
                    term = term * np.asarray(values[v], dtype=float) ** k
            out = out + term
        if isinstance(out, float):
            shapes = [np.shape(values[v]) for v in values]
            if shapes and any(shapes):
                out = np.full(np.broadcast_shapes(*shapes), out)
        return out

    # -- canonical forms --------------------------------------------------
    def sorted_terms(self):
        """Terms in canonical order: higher total degree first, then lex."""
        return sorted(self.terms.items(), key=lambda t: (-sum(t[0]), tuple(-x for x in t[0])))

    def leading_coefficient(self) -> Fraction:
        if not self.terms:
            return Fraction(0)
        return self.sorted_terms()[0][1]

    def normalized(self) -> tuple[Fraction, "Polynomial"]:
        """Split into ``scale * primitive`` with primitive leading coefficient 1."""
        if not self.terms:
            return Fraction(0), self
        lead = self.leading_coefficient()
        return lead, self / lead

    def __str__(self):
        return self.to_text()

    def __repr__(self):
        return f"Polynomial({self.to_text()!r})"

    def to_text(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for exps, c in self.sorted_terms():
            mono = "*".join(
                v if k == 1 else f"{v}^{k}" for v, k in zip(self.variables, exps) if k
            )
            mag = abs(c)
            if not mono:
                body = str(mag)
            elif mag == 1:
                body = mono
            else:
                body = f"{mag}*{mono}"
            sign = "-" if c < 0 else "+"
            parts.append((sign, body))
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return text


def parse_polynomial(text: str, variables: Iterable[str] | None = None) -> Polynomial:
    """Parse ``"1/2*x^2 - 3*x*y + 2"`` style text into a Polynomial.

    ``^`` and ``**`` both denote powers. Only +, -, *, / by constants and
    integer powers are accepted.
    """
    if not isinstance(text, str) or not text.strip():
        raise ValueError("empty polynomial expression")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse polynomial {text!r}: {exc.msg}") from None

    def walk(node) -> Polynomial:
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return Polynomial.constant(as_fraction(node.value))
        if isinstance(node, ast.Name):
            return Polynomial.var(node.id)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = walk(node.operand)
            return -inner if isinstance(node.op, ast.USub) else inner
        if isinstance(node, ast.BinOp):
            left, right = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
            if isinstance(node.op, ast.Div):
                if not right.is_constant() or right.constant_term() == 0:
                    raise ValueError(f"division by non-constant or zero in {text!r}")
                return left / right.constant_term()
            if isinstance(node.op, ast.Pow):
                k = right.constant_term()
                if not right.is_constant() or k.denominator != 1 or k < 0:
                    raise ValueError(f"non-integer power in {text!r}")
                return left ** int(k)
        raise ValueError(f"unsupported syntax in polynomial {text!r}")

    poly = walk(tree)
    if variables is not None:
        poly = poly.with_variables(variables)
    return poly
