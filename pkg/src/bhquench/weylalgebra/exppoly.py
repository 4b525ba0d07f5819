"""Exponential-polynomial time coefficients c * t^p * e^(q*lam*t) * heff^(s/2).

Closed under addition, multiplication and the running integral from 0 to t,
which is what makes the nested time-ordered integrals of the perturbation
series exactly summable. Keys are (p, q, s): the power of t, the integer
multiple of lam in the exponent, and the half-power of the effective Planck
constant carried by the term.
"""

import math

PRUNE_REL = 1e-15


class ExpPoly:
    """Finite sum of t^p * e^(q*lam*t) * heff^(s/2) terms with complex weights."""

    __slots__ = ("terms",)

    def __init__(self, terms=None):
        self.terms = dict(terms) if terms else {}

    @classmethod
    def constant(cls, c, s=0):
        return cls({(0, 0, s): complex(c)})

    @classmethod
    def exponential(cls, q, s=0, c=1.0):
        return cls({(0, q, s): complex(c)})

    def copy(self):
        return ExpPoly(self.terms)

    def __bool__(self):
        return bool(self.terms)

    def __add__(self, other):
        out = dict(self.terms)
        for key, c in other.terms.items():
            out[key] = out.get(key, 0.0) + c
        return ExpPoly(out)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, c):
        c = complex(c)
        return ExpPoly({k: v * c for k, v in self.terms.items()})

    def shift_halforder(self, ds):
        """Multiply by heff^(ds/2)."""
        return ExpPoly({(p, q, s + ds): c for (p, q, s), c in self.terms.items()})

    def __mul__(self, other):
        out = {}
        for (p1, q1, s1), c1 in self.terms.items():
            for (p2, q2, s2), c2 in other.terms.items():
                key = (p1 + p2, q1 + q2, s1 + s2)
                out[key] = out.get(key, 0.0) + c1 * c2
        return ExpPoly(out)

    def prune(self, rel=PRUNE_REL):
        """Drop negligible terms, comparing only within one half-order sector.

        Coefficients at different powers of heff live on different scales, so
        a global relative cut would wipe out low orders next to large
        high-order weights.
        """
        if not self.terms:
            return self
        tops = {}
        for (p, q, s), c in self.terms.items():
            tops[s] = max(tops.get(s, 0.0), abs(c))
        return ExpPoly({k: c for k, c in self.terms.items()
                        if tops[k[2]] > 0.0 and abs(c) > rel * tops[k[2]]})

    def integrate(self, lam):
        """Running integral from 0 to t, exact on every term.

        q == 0 raises the power of t; q != 0 uses the closed-form incomplete
        integral, leaving behind the boundary constant at t=0.
        """
        out = {}

        def add(key, c):
            out[key] = out.get(key, 0.0) + c

        for (p, q, s), c in self.terms.items():
            if q == 0:
                add((p + 1, 0, s), c / (p + 1))
                continue
            a = q * lam
            fact_p = math.factorial(p)
            for j in range(p + 1):
                coeff = ((-1) ** (p - j)) * fact_p / math.factorial(j) / a ** (p - j + 1)
                add((j, q, s), c * coeff)
            add((0, 0, s), -c * ((-1) ** p) * fact_p / a ** (p + 1))
        return ExpPoly(out)

    def differentiate(self, lam):
        out = {}

        def add(key, c):
            if c != 0.0:
                out[key] = out.get(key, 0.0) + c

        for (p, q, s), c in self.terms.items():
            if p > 0:
                add((p - 1, q, s), c * p)
            if q != 0:
                add((p, q, s), c * q * lam)
        return ExpPoly(out)

    def restrict_halforder(self, max_half_order):
        return ExpPoly({k: c for k, c in self.terms.items() if k[2] <= max_half_order})

    def evaluate(self, t, lam, heff=1.0):
        total = 0.0 + 0.0j
        for (p, q, s), c in self.terms.items():
            total += c * t ** p * math.exp(q * lam * t) * heff ** (0.5 * s)
        return total

    def max_imag_fraction(self):
        """Largest |Im c| / max|c|; zero for a real (Hermitian-symbol) object."""
        if not self.terms:
            return 0.0
        top = max(abs(c) for c in self.terms.values())
        if top == 0.0:
            return 0.0
        return max(abs(c.imag) for c in self.terms.values()) / top

    def real_part(self):
        return ExpPoly({k: complex(c.real) for k, c in self.terms.items()})

    def __repr__(self):
        bits = [f"({c:.3g})*t^{p}*e^{q}lt*h^{s}/2" for (p, q, s), c in
                sorted(self.terms.items())]
        return "ExpPoly[" + " + ".join(bits) + "]"
