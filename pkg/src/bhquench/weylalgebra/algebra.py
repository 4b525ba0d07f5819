"""Symmetric-ordered polynomials in hyperbolic quadratures and their products.

A WeylPolynomial is a polynomial in mode quadratures (x_i, y_i) = (b-_i, b+_i)
with [b-_i, b+_j] = i*delta_ij, stored as symbols: the symmetric-ordered
operator {x^mu y^nu}_s corresponds to the plain symbol monomial x^mu y^nu.
Operator products are Moyal star products, a finite series for polynomials,
with the combinatorial weights kept as exact rationals. Time dependence and
half-powers of the effective Planck constant live in ExpPoly coefficients.

Modes evolve freely as x_i -> e^(-lam t) x_i, y_i -> e^(+lam t) y_i with a
common rate lam (degenerate unstable directions share one rate).
"""

import math
from fractions import Fraction

from .exppoly import ExpPoly

_I_POWERS = (1.0, 1.0j, -1.0, -1.0j)


def _falling(n, k):
    """n! / (n-k)! as an exact integer, zero when k > n."""
    if k > n:
        return 0
    out = 1
    for i in range(k):
        out *= (n - i)
    return out


class WeylPolynomial:
    """Map from quadrature monomials to ExpPoly coefficients.

    Monomial keys are flat tuples (mu_1, nu_1, ..., mu_m, nu_m) of x/y powers
    per mode. Metadata binds the numeric rate lam and, when known, the
    prequench frequency omega and mixing angle phi.
    """

    def __init__(self, n_modes=1, terms=None, lam=None, omega=None, phi=None):
        self.n_modes = n_modes
        self.terms = dict(terms) if terms else {}
        self.lam = lam
        self.omega = omega
        self.phi = phi

    def _meta(self):
        return dict(n_modes=self.n_modes, lam=self.lam, omega=self.omega,
                    phi=self.phi)

    @classmethod
    def constant(cls, c, n_modes=1, **meta):
        key = (0,) * (2 * n_modes)
        return cls(n_modes=n_modes, terms={key: ExpPoly.constant(c)}, **meta)

    def copy(self):
        return WeylPolynomial(terms={k: v.copy() for k, v in self.terms.items()},
                              **self._meta())

    def __bool__(self):
        return any(bool(v) for v in self.terms.values())

    def __add__(self, other):
        out = {k: v.copy() for k, v in self.terms.items()}
        for k, v in other.terms.items():
            out[k] = out[k] + v if k in out else v
        return WeylPolynomial(terms=out, **self._meta())

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        return WeylPolynomial(terms={k: v.scale(c) for k, v in self.terms.items()},
                              **self._meta())

    def total_degree(self):
        return max((sum(k) for k, v in self.terms.items() if v), default=0)

    def prune(self, rel=1e-15):
        out = {}
        for k, v in self.terms.items():
            v = v.prune(rel)
            if v:
                out[k] = v
        return WeylPolynomial(terms=out, **self._meta())

    def restrict_halforder(self, max_half_order):
        out = {}
        for k, v in self.terms.items():
            v = v.restrict_halforder(max_half_order)
            if v:
                out[k] = v
        return WeylPolynomial(terms=out, **self._meta())

    def star(self, other):
        """Moyal product of symbols; exact composition law for the operators."""
        if self.n_modes != other.n_modes:
            raise ValueError("mode count mismatch")
        m = self.n_modes
        out = {}
        for kf, cf in self.terms.items():
            for kg, cg in other.terms.items():
                self._star_monomials(kf, cf, kg, cg, m, out)
        return WeylPolynomial(terms=out, **self._meta()).prune()

    @staticmethod
    def _star_monomials(kf, cf, kg, cg, m, out):
        # per-mode expansion of the bidifferential, combined recursively
        def mode_terms(i):
            a, b = kf[2 * i], kf[2 * i + 1]
            c, d = kg[2 * i], kg[2 * i + 1]
            opts = []
            for j in range(0, min(a + b, c + d) + 1):
                for r in range(0, j + 1):
                    fx = _falling(a, j - r) * _falling(b, r)
                    gx = _falling(c, r) * _falling(d, j - r)
                    if fx == 0 or gx == 0:
                        continue
                    w = Fraction(math.comb(j, r) * fx * gx,
                                 2 ** j * math.factorial(j))
                    if r % 2:
                        w = -w
                    opts.append((j, (a + c - j, b + d - j), w))
            return opts

        per_mode = [mode_terms(i) for i in range(m)]

        def combine(i, jtot, key_acc, weight):
            if i == m:
                coeff = complex(weight) * _I_POWERS[jtot % 4]
                poly = cf * cg
                key = tuple(key_acc)
                add = poly.scale(coeff)
                out[key] = out[key] + add if key in out else add
                return
            for j, kpart, w in per_mode[i]:
                combine(i + 1, jtot + j, key_acc + list(kpart), weight * w)

        combine(0, 0, [], Fraction(1))

    def commutator(self, other):
        """f*g - g*f; the leading term is i times the Poisson bracket."""
        return (self.star(other) - other.star(self)).prune()

    def poisson_bracket(self, other):
        """Classical bracket sum_i (df/dx_i dg/dy_i - df/dy_i dg/dx_i)."""
        if self.n_modes != other.n_modes:
            raise ValueError("mode count mismatch")
        out = WeylPolynomial(terms={}, **self._meta())
        for i in range(self.n_modes):
            out = out + (self._derive(2 * i).star_pointwise(other._derive(2 * i + 1))
                         - self._derive(2 * i + 1).star_pointwise(other._derive(2 * i)))
        return out

    def _derive(self, slot):
        out = {}
        for k, v in self.terms.items():
            if k[slot] == 0:
                continue
            nk = list(k)
            nk[slot] -= 1
            nk = tuple(nk)
            add = v.scale(k[slot])
            out[nk] = out[nk] + add if nk in out else add
        return WeylPolynomial(terms=out, **self._meta())

    def star_pointwise(self, other):
        """Plain commutative product of symbols (no Moyal corrections)."""
        out = {}
        for kf, cf in self.terms.items():
            for kg, cg in other.terms.items():
                key = tuple(a + b for a, b in zip(kf, kg))
                add = cf * cg
                out[key] = out[key] + add if key in out else add
        return WeylPolynomial(terms=out, **self._meta())

    def hermiticity_defect(self):
        """Max relative imaginary part over coefficients; ~0 for Hermitian."""
        return max((v.max_imag_fraction() for v in self.terms.values() if v),
                   default=0.0)

    def coefficient(self, key):
        return self.terms.get(tuple(key), ExpPoly())

    def assert_halforder_consistency(self):
        """Every term carries at least one heff^(1/2) per quadrature factor,
        with quantum corrections entering in even steps."""
        for key, poly in self.terms.items():
            deg = sum(key)
            for (_, _, s) in poly.terms:
                if s < deg or (s - deg) % 2:
                    raise AssertionError(
                        f"half-order bookkeeping violated: monomial {key} "
                        f"(degree {deg}) carries heff^{s}/2")
        return True


def quantize_polynomial(coeffs, lam, attach_free_evolution=True, omega=None,
                        phi=None):
    """Quadrature representation of a polynomial in (z, phi_angle).

    coeffs maps (a, b) -> coefficient of z^a phi^b. Substitutes
    z = sqrt(heff/2lam)(x + y), phi = sqrt(lam*heff/2)(y - x); the
    substitution is linear so symmetric ordering is preserved. Every input
    monomial of degree d carries heff^(d/2). With attach_free_evolution the
    monomial (mu, nu) picks up its free time dependence e^((nu-mu) lam t).
    """
    if lam <= 0:
        raise ValueError("quantization needs an unstable rate lam > 0")
    out = {}
    for (a, b), c in coeffs.items():
        c = float(c)
        if c == 0.0:
            continue
        base = (2.0 * lam) ** (-0.5 * a) * (0.5 * lam) ** (0.5 * b)
        # expand (x+y)^a (y-x)^b into monomials x^mu y^nu
        poly = {(0, 0): 1.0}
        for _ in range(a):
            nxt = {}
            for (mu, nu), w in poly.items():
                nxt[(mu + 1, nu)] = nxt.get((mu + 1, nu), 0.0) + w
                nxt[(mu, nu + 1)] = nxt.get((mu, nu + 1), 0.0) + w
            poly = nxt
        for _ in range(b):
            nxt = {}
            for (mu, nu), w in poly.items():
                nxt[(mu + 1, nu)] = nxt.get((mu + 1, nu), 0.0) - w
                nxt[(mu, nu + 1)] = nxt.get((mu, nu + 1), 0.0) + w
            poly = nxt
        s = a + b
        for (mu, nu), w in poly.items():
            q = (nu - mu) if attach_free_evolution else 0
            term = ExpPoly({(0, q, s): c * base * w})
            key = (mu, nu)
            out[key] = out[key] + term if key in out else term
    wp = WeylPolynomial(n_modes=1, terms=out, lam=lam, omega=omega, phi=phi)
    return wp.prune()


def quantize_v(vcoeffs, lam, omega=None, phi=None):
    """Interaction-picture anharmonic generator as a WeylPolynomial.

    Rejects quadratic-or-lower input monomials: the generator is the
    remainder beyond the exactly-solved quadratic dynamics.
    """
    for (a, b), c in vcoeffs.items():
        if a + b <= 2 and float(c) != 0.0:
            raise ValueError(f"generator must be at least cubic, got z^{a} phi^{b}")
    return quantize_polynomial(vcoeffs, lam, attach_free_evolution=True,
                               omega=omega, phi=phi)
