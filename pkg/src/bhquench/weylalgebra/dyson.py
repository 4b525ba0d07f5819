"""Nested time-ordered commutator expansion of Heisenberg operators.

The expansion organizes a Heisenberg operator as a power series in
sqrt(heff): each insertion of a generator monomial of degree d raises the
half-order by d-2, so truncating at a maximal half-order leaves finitely many
terms. All time integrals are done in closed form.

Internally each layer of the recursion

    G_0(t, a) = A(t),   G_n(t, a) = (1/(i heff)) int_a^t ds [G_{n-1}(t, s), v(s)]

is a polynomial in quadrature monomials with two-variable exponential-
polynomial coefficients (pt, qt, pa, qa, s); the physical order-n term is
G_n(t, 0), and the integration domain reproduces the time ordering
t >= t_1 >= ... >= t_n of the textbook expansion with the innermost integral
carried out first.
"""

import math

from .algebra import WeylPolynomial
from .exppoly import ExpPoly

_PRUNE = 1e-15


class OrderStarvationError(ValueError):
    """The generator polynomial is too shallow for the requested order."""


def _integrate_s_block(terms, lam, max_half_order):
    """Integrate the pending-variable slot from a to t on every term.

    Keys are (pt, qt, ps, qs, s); the antiderivative at the upper limit merges
    into the t slot, its value at the lower limit stays in the pending slot
    with opposite sign.
    """
    out = {}

    def add(key, c):
        out[key] = out.get(key, 0.0) + c

    for (pt, qt, ps, qs, s), c in terms.items():
        if s > max_half_order:
            continue
        if qs == 0:
            add((pt + ps + 1, qt, 0, 0, s), c / (ps + 1))
            add((pt, qt, ps + 1, 0, s), -c / (ps + 1))
            continue
        aa = qs * lam
        fact = math.factorial(ps)
        for j in range(ps + 1):
            coeff = ((-1) ** (ps - j)) * fact / math.factorial(j) / aa ** (ps - j + 1)
            add((pt + j, qt + qs, 0, 0, s), c * coeff)
            add((pt, qt, j, qs, s), -c * coeff)
    return out


def _prune_two_var(terms):
    if not terms:
        return terms
    tops = {}
    for key, c in terms.items():
        s = key[4]
        tops[s] = max(tops.get(s, 0.0), abs(c))
    return {k: c for k, c in terms.items()
            if tops[k[4]] > 0.0 and abs(c) > _PRUNE * tops[k[4]]}


def _monomial_commutators(v, memo, kf):
    """{v_monomial: {out_monomial: weight}} for the bare star commutator."""
    if kf in memo:
        return memo[kf]
    one = ExpPoly.constant(1.0)
    neg = ExpPoly.constant(-1.0)
    table = {}
    for kg in v.terms:
        scratch = {}
        WeylPolynomial._star_monomials(kf, one, kg, one, 1, scratch)
        WeylPolynomial._star_monomials(kg, neg, kf, one, 1, scratch)
        weights = {}
        for key, cpoly in scratch.items():
            c0 = sum(cpoly.terms.values())
            if abs(c0) > 0.0:
                weights[key] = c0
        if weights:
            table[kg] = weights
    memo[kf] = table
    return table


def dyson_expand(A, v, max_half_order, max_orders=64):
    """Heisenberg expansion of A under quadratic flow plus generator v.

    Returns a WeylPolynomial whose ExpPoly coefficients contain every term
    with heff half-order <= max_half_order; the zero-order term is the freely
    evolved A itself. Raises OrderStarvationError when v is not expanded deep
    enough to make the requested half-order complete.
    """
    if A.n_modes != 1 or v.n_modes != 1:
        raise ValueError("expansion implemented for a single unstable mode")
    lam = A.lam if A.lam is not None else v.lam
    if lam is None or lam <= 0:
        raise ValueError("operators must bind a positive rate lam")

    s_min_A = min((min(s for (_, _, s) in poly.terms)
                   for poly in A.terms.values() if poly), default=0)
    v_degree = v.total_degree()
    if v and max_half_order > s_min_A and v_degree < max_half_order - s_min_A + 2:
        raise OrderStarvationError(
            f"generator expanded to degree {v_degree} cannot close half-order "
            f"{max_half_order}; expand the classical remainder to degree >= "
            f"{max_half_order - s_min_A + 2}")

    layer = {}
    for k, poly in A.prune().restrict_halforder(max_half_order).terms.items():
        layer[k] = {(p, q, 0, 0, s): c for (p, q, s), c in poly.terms.items()}
    total = {k: dict(t) for k, t in layer.items()}
    memo = {}

    for _ in range(max_orders):
        nxt = {}
        for kf, terms_f in layer.items():
            for kg, weights in _monomial_commutators(v, memo, kf).items():
                poly_g = v.terms[kg]
                for (pv, qv, sv), cv in poly_g.terms.items():
                    for key, c0 in weights.items():
                        dest = nxt.setdefault(key, {})
                        for (pt, qt, ps, qs, s), cl in terms_f.items():
                            s_new = s + sv - 2
                            if s_new > max_half_order:
                                continue
                            k2 = (pt, qt, ps + pv, qs + qv, s_new)
                            dest[k2] = dest.get(k2, 0.0) + cl * cv * c0 * (-1j)
        layer = {}
        for key, terms in nxt.items():
            integ = _prune_two_var(_integrate_s_block(terms, lam, max_half_order))
            if integ:
                layer[key] = integ
        if not layer:
            break
        for key, terms in layer.items():
            dest = total.setdefault(key, {})
            for (pt, qt, ps, qs, s), c in terms.items():
                if ps == 0:
                    dest[(pt, qt, 0, 0, s)] = dest.get((pt, qt, 0, 0, s), 0.0) + c
    else:
        raise RuntimeError("expansion failed to terminate; raise max_orders")

    out = {}
    for key, terms in total.items():
        poly = {}
        for (pt, qt, ps, qs, s), c in terms.items():
            if ps != 0:
                continue
            k = (pt, qt, s)
            poly[k] = poly.get(k, 0.0) + c
        ep = ExpPoly(poly).prune()
        if ep:
            out[key] = ep
    result = WeylPolynomial(n_modes=1, terms=out, lam=lam, omega=A.omega,
                            phi=A.phi)
    result.assert_halforder_consistency()
    return result


def dominant_and_remainder(AH):
    """Split a Heisenberg expansion into pure-growth coefficients and the rest.

    The pure-growth coefficient at order k multiplies the monomial y^k with
    time factor e^(k lam t), no polynomial prefactor and half-order k; every
    slower term is returned unchanged as a remainder polynomial used for
    finite-time predictions.
    """
    C = {}
    remainder = {}
    for key, poly in AH.terms.items():
        mu, nu = key
        keep = {}
        for (p, q, s), c in poly.terms.items():
            if mu == 0 and p == 0 and q == nu and s == nu:
                C[nu] = C.get(nu, 0.0) + c
            else:
                keep[(p, q, s)] = c
        if keep:
            remainder[key] = ExpPoly(keep)
    for k, c in list(C.items()):
        if abs(c.imag) > 1e-10 * max(1.0, abs(c)):
            raise AssertionError(f"growth coefficient C_{k} not real: {c}")
        C[k] = c.real
    rem = WeylPolynomial(n_modes=1, terms=remainder, lam=AH.lam, omega=AH.omega,
                         phi=AH.phi)
    return C, rem
