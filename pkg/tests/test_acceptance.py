"""Acceptance gate: one test per criterion, each printing a pass/fail line.

Heavy simulation stages are shared through module-scoped fixtures:

* the matrix-element scan runs the paper-scale dimer (N = 1e5) through the
  conserved-energy-shell propagator,
* squared-commutator and distribution pipelines run at N = 1e4 with full or
  windowed spectral propagation,
* the series-breakdown bracket runs the squared commutator at N = 1e5,
* the three-site ring runs through the adaptive Krylov propagator.

Fit windows are fixed here, not tuned per run: growth-rate fits exclude the
early interval where decaying corrections dominate and, where saturation sets
in before the scaling window closes (distribution cumulants, the three-site
ring near its short Ehrenfest time), the documented saturation edge.
"""

import collections
import math

import numpy as np
import pytest

from bhquench import fockspace as fs
from bhquench import meanfield
from bhquench import observables as obs
from bhquench import recipes
from bhquench.propagator import (SpectralPropagator,
                                 WindowedSpectralPropagator, evolve,
                                 EvolvedState)
from bhquench.weylalgebra import (bplus_matrix_element,
                                  build_dimer_prediction, count_pairings,
                                  cumulant_prediction, expectation_series,
                                  otoc_series, quantized_observable,
                                  thermal_covariance, wick_expectation,
                                  ExpPoly, WeylPolynomial)

ALPHA_POST = 2.5
LAM = 2.0 * math.sqrt(ALPHA_POST - 1.0)
DELTA = 2.0
BETA = 1.0 / (2.0 * DELTA)  # k_B T = 2 Delta


def _dimer_system(n_part):
    basis = fs.build_basis(2, n_part)
    ham = fs.build_hamiltonian(basis, J=1.0,
                               U=meanfield.u_from_alpha(ALPHA_POST, n_part) / n_part)
    return basis, ham


@pytest.fixture(scope="module")
def scan_1e5():
    """Fig. 1 pipeline: N = 1e5 matrix-element scan with predictions."""
    n_part = 100_000
    basis, ham = _dimer_system(n_part)
    l = 10
    k_list = [k for k in range(4, 17) if k != l]
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=max(k_list) + 1)
    a_op = fs.operator_polynomial(basis, "z+z^2")
    t_e = meanfield.ehrenfest_time(n_part, LAM)
    grid = np.linspace(1e-3, 1.02 * t_e, 110)
    cols = pre.states[:, k_list + [l]].astype(complex)
    win = WindowedSpectralPropagator(ham, cols)
    table = obs.matrix_element_scan(ham, a_op, pre.states[:, k_list],
                                    pre.states[:, l], grid, labels=k_list,
                                    propagator=win)
    pred = build_dimer_prediction(alpha_post=ALPHA_POST, kmax=30)
    return dict(n_part=n_part, l=l, k_list=k_list, grid=grid, t_e=t_e,
                table=table, pred=pred, heff=basis.heff)


@pytest.fixture(scope="module")
def dimer_1e4():
    """Shared N = 1e4 thermal pipelines: distribution sweep and echo data."""
    n_part = 10_000
    basis, ham = _dimer_system(n_part)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=60)
    ens = obs.ThermalEnsemble.build(pre.energies, pre.states, BETA)
    t_e = meanfield.ehrenfest_time(n_part, LAM)
    win = WindowedSpectralPropagator(ham, ens.states)
    z_op = fs.z_operator(basis)
    a_op = fs.operator_polynomial(basis, "z+z^2")
    # distribution sweep (cumulants + thermal expectation on one propagation)
    grid_c = np.linspace(0.02, 1.0, 70) * t_e
    kappa = obs.cumulants_numeric(ham, z_op, ens, grid_c, n_max=10,
                                  propagator=win)
    expect_a = np.empty(len(grid_c))
    avals = a_op.diagonal()
    for i, t in enumerate(grid_c):
        blk = win.propagate(ens.states.astype(complex), t)
        expect_a[i] = ((np.abs(blk) ** 2) @ ens.weights) @ avals
    # squared-commutator window for the leading-order check
    grid_o = np.linspace(0.18, 0.74, 26) * t_e
    otoc = obs.otoc_numeric(ham, z_op, z_op, ens, grid_o, propagator=win)
    pred_z = build_dimer_prediction(alpha_post=ALPHA_POST,
                                    observable={(1, 0): 1.0}, kmax=55)
    pred_a = build_dimer_prediction(alpha_post=ALPHA_POST, kmax=30)
    return dict(n_part=n_part, heff=basis.heff, t_e=t_e, ens=ens,
                grid_c=grid_c, kappa=kappa, expect_a=expect_a,
                grid_o=grid_o, otoc=otoc, pred_z=pred_z, pred_a=pred_a)


@pytest.fixture(scope="module")
def otoc_1e5():
    """Series-breakdown data: N = 1e5 squared commutator out to t_E."""
    n_part = 100_000
    basis, ham = _dimer_system(n_part)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=60)
    ens = obs.ThermalEnsemble.build(pre.energies, pre.states, BETA)
    t_e = meanfield.ehrenfest_time(n_part, LAM)
    win = WindowedSpectralPropagator(ham, ens.states)
    z_op = fs.z_operator(basis)
    grid = np.concatenate([np.linspace(0.3, 0.6, 4),
                           np.arange(0.62, 0.97, 0.02)]) * t_e
    otoc = obs.otoc_numeric(ham, z_op, z_op, ens, grid, propagator=win)
    pred_z = build_dimer_prediction(alpha_post=ALPHA_POST,
                                    observable={(1, 0): 1.0}, kmax=55)
    return dict(n_part=n_part, heff=basis.heff, t_e=t_e, grid=grid, otoc=otoc,
                pred_z=pred_z)


@pytest.fixture(scope="module")
def trimer_run(tmp_path_factory):
    cfg = {"N": 300, "u_post": -20.0, "k_sum_max": 5, "grid_points": 48,
           "t_max_over_te": 1.02, "threads": 2}
    out = recipes.run_trimer_collapse(cfg, tmp_path_factory.mktemp("fig3"))
    return out


def test_criterion_1_matrix_element_rates(scan_1e5, acceptance_log):
    l, t_e = scan_1e5["l"], scan_1e5["t_e"]
    window = (1.5 / LAM, 0.8 * t_e)
    worst = 0.0
    for k in scan_1e5["k_list"]:
        series = scan_1e5["table"][k]
        sq = obs.TimeSeries(grid=series.grid, values=np.abs(series.values) ** 2)
        rate, _, _ = obs.fit_exponent(sq, window)
        target = 2.0 * LAM * abs(k - l)
        worst = max(worst, abs(rate / target - 1.0))
    ok = worst <= 0.10
    acceptance_log(1, ok, f"N=1e5 growth rates of |<k|A(t)|l>|^2 vs 2*lam*|k-l|: "
                          f"worst deviation {worst * 100:.1f}% (<= 10%)")
    assert ok


def test_criterion_2_collapse(scan_1e5, acceptance_log):
    l, t_e, heff = scan_1e5["l"], scan_1e5["t_e"], scan_1e5["heff"]
    pred = scan_1e5["pred"]
    window = (1.5 / LAM, 0.8 * t_e)
    ckl = {k: pred.predict_ckl(k, l) for k in scan_1e5["k_list"]}
    curves, _ = obs.collapse_statistic(scan_1e5["table"], LAM, heff,
                                       order_of=lambda k: abs(k - l), ckl=ckl)
    levels = []
    for k, curve in curves.items():
        mask = curve.window_mask(window)
        levels.append(np.median(curve.values[mask]))
    levels = np.array(levels)
    spread = (levels.max() - levels.min()) / levels.mean()
    ok = spread <= 0.15
    acceptance_log(2, ok, f"collapse |c_kl^-1 <k|A|l>|^(2/|k-l|) spread across "
                          f"curves {spread * 100:.1f}% (<= 15%)")
    assert ok


def test_criterion_3_phase_prediction(scan_1e5, acceptance_log):
    l, t_e = scan_1e5["l"], scan_1e5["t_e"]
    pred = scan_1e5["pred"]
    window = (1.5 / LAM, 0.8 * t_e)
    worst = 0.0
    for k in scan_1e5["k_list"]:
        if abs(k - l) > 4:
            continue
        dev = obs.phase_deviation(scan_1e5["table"][k], k, l, pred.phi)
        mask = (dev.grid >= window[0]) & (dev.grid <= window[1])
        worst = max(worst, float(np.nanmax(np.abs(dev.values[mask]))))
    ok = worst <= 0.3
    acceptance_log(3, ok, f"phase residuals mod pi for |k-l|<=4: "
                          f"max {worst:.3f} rad (<= 0.3)")
    assert ok


def test_criterion_4_otoc_leading_order(dimer_1e4, acceptance_log):
    heff, t_e = dimer_1e4["heff"], dimer_1e4["t_e"]
    otoc = dimer_1e4["otoc"]
    pred = dimer_1e4["pred_z"]
    cov = thermal_covariance(BETA, DELTA, pred.phi)
    b_quad = quantized_observable({(1, 0): 1.0}, LAM, phi=pred.phi)
    cms, _ = otoc_series(pred, b_quad, cov, max_m=25)
    mask = (otoc.grid >= 1.5 / LAM) & (otoc.grid <= 0.7 * t_e)
    lead = cms[0] * (heff * np.exp(LAM * otoc.grid[mask])) ** 2
    dev = np.abs(otoc.values[mask] / lead - 1.0).max()
    ok = dev <= 0.15
    acceptance_log(4, ok, f"N=1e4 squared commutator vs c0 (heff e^(lam t))^2 "
                          f"in [1.5/lam, 0.7 t_E]: max deviation {dev * 100:.1f}% "
                          f"(<= 15%)")
    assert ok


def test_criterion_5_series_breakdown(otoc_1e5, acceptance_log):
    heff, t_e = otoc_1e5["heff"], otoc_1e5["t_e"]
    otoc = otoc_1e5["otoc"]
    pred = otoc_1e5["pred_z"]
    cov = thermal_covariance(BETA, DELTA, pred.phi)
    b_quad = quantized_observable({(1, 0): 1.0}, LAM, phi=pred.phi)
    cms, ev = otoc_series(pred, b_quad, cov, max_m=25)
    series = ev(otoc.grid, heff)
    rel = np.abs(series - otoc.values) / np.abs(otoc.values)
    # tracking regime first: the series must agree well before departing
    track = otoc.grid <= 0.6 * t_e
    tracked = rel[track].max()
    beyond = np.where(rel >= 1.0)[0]
    departure = otoc.grid[beyond[0]] / t_e if len(beyond) else np.inf
    ok = tracked < 0.10 and 0.7 <= departure <= 0.9
    acceptance_log(5, ok, f"m<=25 series tracks to {tracked * 100:.1f}% then "
                          f"departs (first 2x deviation) at {departure:.2f} t_E "
                          f"(in [0.7, 0.9])")
    assert ok


def test_criterion_6_cumulant_scaling(dimer_1e4, acceptance_log):
    t_e = dimer_1e4["t_e"]
    kappa = dimer_1e4["kappa"]
    # the outcome distribution saturates once the renormalized parameter is
    # no longer small; the scaling window closes at 0.6 t_E for N = 1e4
    window = (1.5 / LAM, 0.6 * t_e)
    worst = 0.0
    details = []
    for n in (2, 4, 6, 8):
        series = obs.TimeSeries(grid=kappa[n].grid,
                                values=np.abs(kappa[n].values))
        rate, _, _ = obs.fit_exponent(series, window)
        target = 2.0 * LAM * (n - 1)
        dev = abs(rate / target - 1.0)
        worst = max(worst, dev)
        details.append(f"n={n}:{dev * 100:.1f}%")
    flags10 = sum(kappa[10].meta["precision_flags"])
    ok = worst <= 0.10
    acceptance_log(6, ok, f"cumulant rates vs 2*lam*(n-1): worst "
                          f"{worst * 100:.1f}% (<= 10%) [{', '.join(details)}]; "
                          f"n=10 reported with precision flag "
                          f"({flags10}/{len(kappa[10].grid)} flagged)")
    assert ok
    assert "precision_flags" in kappa[10].meta


def test_criterion_7_wick_factor_adjudication(dimer_1e4, acceptance_log):
    heff, t_e = dimer_1e4["heff"], dimer_1e4["t_e"]
    pred = dimer_1e4["pred_a"]
    _, ev_pair, ev_fact = expectation_series(pred, BETA)
    t7 = 0.6 * t_e
    idx = np.argmin(np.abs(dimer_1e4["grid_c"] - t7))
    numeric = dimer_1e4["expect_a"][idx]
    t_used = dimer_1e4["grid_c"][idx]
    pair_err = abs(float(ev_pair(t_used, heff)) / numeric - 1.0)
    fact_err = abs(float(ev_fact(t_used, heff)) / numeric - 1.0)
    winner = "pairing-count" if pair_err < fact_err else "factorial"
    ok = pair_err < 0.05 and fact_err >= 0.05
    acceptance_log(7, ok, f"<z+z^2>(0.6 t_E): pairing-count series off by "
                          f"{pair_err * 100:.2f}% (< 5%), (2m-1)! variant off by "
                          f"{fact_err * 100:.2e}% -> winner: {winner}")
    assert ok


def test_criterion_8_trimer_stability(acceptance_log):
    crit = meanfield.gp_stability(-4.5, 3)
    marginal_ok = len(crit.marginal) == 2 and not crit.unstable_rates
    with pytest.warns(UserWarning):
        spec = meanfield.gp_stability(-20.0, 3)
    rates = spec.unstable_rates
    rate_ok = (len(rates) == 2
               and all(abs(r / math.sqrt(31.0) - 1.0) < 1e-12 for r in rates))
    ok = marginal_ok and rate_ok
    acceptance_log(8, ok, f"u=-4.5 marginal modes: {marginal_ok}; u=-20 doubly "
                          f"degenerate lam=sqrt(31): {rate_ok}")
    assert ok


def test_criterion_9_trimer_collapse(trimer_run, acceptance_log):
    lam, t_e, heff = trimer_run["lam"], trimer_run["t_E"], trimer_run["heff"]
    grid = trimer_run["grid"]
    window = (1.0 / lam, t_e)

    def allowed(lab):
        # single momentum-transfer observable: one quantum moved between the
        # finite-momentum modes, so k1 - k2 = +-1 (mod 3)
        return (lab[0] - lab[1]) % 3 in (1, 2)

    # growth rates over [1/lam, 0.85 t_E]: saturation near the short t_E is
    # excluded, early decaying corrections are inside (the paper-scale
    # hierarchy t_E >> 1/lam is not available at N=300)
    rate_window = (1.0 / lam, 0.85 * t_e)
    worst_rate = 0.0
    for lab, series in trimer_run["table"].items():
        if not allowed(lab):
            continue
        s = sum(lab)
        sq = obs.TimeSeries(grid=grid, values=np.abs(series.values) ** 2)
        rate, _, _ = obs.fit_exponent(sq, rate_window)
        worst_rate = max(worst_rate, abs(rate / (2.0 * lam * s) - 1.0))
    rates_ok = worst_rate <= 0.15

    # plateau: every nonvanishing curve flattens into a 20%-band plateau
    # inside [1/lam, t_E]; mirror-image excitations share levels exactly
    from bhquench.observables import TimeSeries, _plateau

    def plateau_metrics(curve):
        mask = curve.window_mask(window)
        seg = TimeSeries(grid=curve.grid[mask], values=curve.values[mask])
        rep = _plateau(seg, band=0.2)
        if rep["window"] is None:
            return 0.0, 0.0, None
        cov = (rep["window"][1] - rep["window"][0]) / (window[1] - window[0])
        reach = (rep["window"][1] - window[0]) / (window[1] - window[0])
        return cov, reach, rep["level"]

    elem_ok = True
    levels = {}
    for lab, curve in trimer_run["curves_a"].items():
        if not allowed(lab):
            continue
        cov, reach, level = plateau_metrics(curve)
        levels[lab] = level
        if cov < 0.5:
            elem_ok = False
    mirror_ok = all(
        abs(levels[(a, b)] / levels[(b, a)] - 1.0) < 0.02
        for (a, b) in levels if (b, a) in levels and levels[(b, a)])
    comm_ok = True
    for lab, curve in trimer_run["curves_c"].items():
        cov, reach, level = plateau_metrics(curve)
        if cov < 0.25 or reach < 0.9:
            comm_ok = False
    ok = rates_ok and elem_ok and comm_ok and mirror_ok
    acceptance_log(9, ok, f"rates worst {worst_rate * 100:.1f}% (<= 15%); "
                          f"element plateaus >= 50% of [1/lam, t_E] at 20% band: "
                          f"{elem_ok}; commutator plateaus reach the window end: "
                          f"{comm_ok}; mirror-pair levels equal: {mirror_ok}")
    assert ok


def test_criterion_10_oracle_equivalence(acceptance_log):
    import scipy.linalg as sla

    # Krylov vs dense exponential at dim <= 100
    basis = fs.build_basis(2, 80)
    ham = fs.build_hamiltonian(basis, J=1.0,
                               U=meanfield.u_from_alpha(2.5, 80) / 80)
    rng = np.random.default_rng(17)
    psi0 = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    psi0 /= np.linalg.norm(psi0)
    t = 2.7
    dense = sla.expm(-1j * t * ham.as_scipy().toarray()) @ psi0
    krylov = evolve(ham, EvolvedState.from_vector(psi0), t).coefficients
    krylov_dev = float(np.abs(dense - krylov).max())

    # Gaussian expectations vs truncated-basis thermal traces
    phi = math.atan2(2.0, LAM)
    cov = thermal_covariance(0.5, 2.0, phi)
    nmax = 220
    a = np.diag(np.sqrt(np.arange(1, nmax)), 1)
    bp = (np.exp(-1j * phi) * a + np.exp(1j * phi) * a.T) / math.sqrt(
        2 * math.sin(2 * phi))
    bm = (np.exp(1j * phi) * a + np.exp(-1j * phi) * a.T) / math.sqrt(
        2 * math.sin(2 * phi))
    weights = np.exp(-0.5 * 2.0 * np.arange(nmax))
    rho = np.diag(weights / weights.sum())
    wick_dev = 0.0
    import itertools as it

    for (mu, nu) in [(2, 0), (1, 1), (2, 2), (0, 4), (3, 1), (2, 4)]:
        poly = WeylPolynomial(terms={(mu, nu): ExpPoly.constant(1.0)}, lam=LAM)
        got = wick_expectation(poly, cov).evaluate(0.0, LAM)
        ops = [bm] * mu + [bp] * nu
        acc = 0.0
        perms = set(it.permutations(range(mu + nu)))
        for pm in perms:
            mat = np.eye(nmax, dtype=complex)
            for idx in pm:
                mat = mat @ ops[idx]
            acc += np.trace(rho @ mat)
        ref = acc / len(perms)
        wick_dev = max(wick_dev, abs(got - ref))

    # star-product identities
    x = WeylPolynomial(terms={(1, 0): ExpPoly.constant(1.0)}, lam=LAM)
    y = WeylPolynomial(terms={(0, 1): ExpPoly.constant(1.0)}, lam=LAM)
    comm_val = x.commutator(y).coefficient((0, 0)).evaluate(0.0, LAM)
    star_dev = abs(comm_val - 1j)
    rng = np.random.default_rng(23)
    for _ in range(3):
        def rp():
            terms = {}
            for _ in range(4):
                mu, nu = int(rng.integers(0, 4)), int(rng.integers(0, 4))
                key = (mu, nu)
                ep = ExpPoly({(0, 0, 0): complex(rng.normal(), rng.normal())})
                terms[key] = terms[key] + ep if key in terms else ep
            return WeylPolynomial(terms=terms, lam=LAM)

        f, g, h = rp(), rp(), rp()
        diff = f.star(g).star(h) - f.star(g.star(h))
        for ep in diff.terms.items():
            for c in ep[1].terms.values():
                star_dev = max(star_dev, abs(c))

    ok = krylov_dev < 1e-10 and wick_dev < 1e-10 and star_dev < 1e-12
    acceptance_log(10, ok, f"Krylov vs expm: {krylov_dev:.1e} (< 1e-10); "
                           f"Gaussian moments vs thermal traces: {wick_dev:.1e} "
                           f"(< 1e-10); star identities: {star_dev:.1e} (< 1e-12)")
    assert ok


def test_criterion_11_selection_rule(acceptance_log):
    phi = math.atan2(2.0, LAM)
    violations = 0
    for k in range(21):
        for l in range(21):
            for n in range(min(abs(k - l), 11)):
                if bplus_matrix_element(k, l, n, phi) != 0.0:
                    violations += 1
    ok = violations == 0
    acceptance_log(11, ok, f"<k|b+^n|l> = 0 for n < |k-l| over k,l <= 20, "
                           f"n <= 10: {violations} violations")
    assert ok
