"""Figure-reproduction pipelines: configuration in, CSV bundle out.

Each run function takes a validated configuration dictionary, executes the
simulation and prediction stages, writes CSV tables plus a manifest, and
returns the in-memory results for tests and callers. Reruns with the same
configuration and thread count produce bitwise-identical files.
"""

import json
import math
import os
import subprocess
import warnings
from pathlib import Path

import numpy as np

from . import fockspace as fs
from . import meanfield, observables
from .propagator import (KrylovConfig, SpectralPropagator,
                         WindowedSpectralPropagator)
from .weylalgebra import (build_dimer_prediction, cumulant_prediction,
                          expectation_series, otoc_finite_time, otoc_series,
                          quantized_observable, thermal_covariance)

SCHEMA_VERSION = 1

_OBSERVABLE_EXPRS = {"z", "z^2", "z+z^2", "n1", "n2", "n3", "n1/N", "n2/N",
                     "n3/N", "1"}


def _fmt(x):
    return f"{x:.17g}"


def write_series_csv(path, series):
    """CSV with header t, re, im (complex) or t, value (real), 17 digits."""
    with open(path, "w") as fh:
        if series.is_complex():
            fh.write("t, re, im\n")
            for t, v in zip(series.grid, series.values):
                fh.write(f"{_fmt(t)}, {_fmt(v.real)}, {_fmt(v.imag)}\n")
        else:
            fh.write("t, value\n")
            for t, v in zip(series.grid, series.values):
                fh.write(f"{_fmt(t)}, {_fmt(v)}\n")


def git_describe():
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=10,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return "unknown"


def write_manifest(outdir, config, physics):
    manifest = {
        "schema": SCHEMA_VERSION,
        "config": config,
        "physics": physics,
        "build": git_describe(),
    }
    with open(Path(outdir) / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def config_from_manifest(path):
    with open(path) as fh:
        manifest = json.load(fh)
    return manifest["config"]


def _label_str(label):
    if isinstance(label, tuple):
        return "_".join(str(v) for v in label)
    return str(label)


def _time_grid(cfg, t_e):
    n = cfg.get("grid_points", 100)
    t_max = cfg.get("t_max_over_te", 1.02) * t_e
    t_min = cfg.get("t_min", 1e-3)
    return np.linspace(t_min, t_max, n)


def _dimer_setup(cfg):
    n_part = cfg["N"]
    alpha_pre = cfg.get("alpha_pre", 0.0)
    alpha_post = cfg["alpha_post"]
    basis = fs.build_basis(2, n_part)
    u_post = meanfield.u_from_alpha(alpha_post, n_part) / n_part
    ham = fs.build_hamiltonian(basis, J=1.0, U=u_post)
    lam = meanfield.dimer_frequencies(alpha_post).max_rate
    omega = meanfield.dimer_frequencies(alpha_pre).stable_freqs[0]
    t_e = meanfield.ehrenfest_time(n_part, lam)
    return basis, ham, lam, omega, t_e


def run_matrix_elements(cfg, outdir):
    """Exponential growth of prequench matrix elements after a dimer quench."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    basis, ham, lam, omega, t_e = _dimer_setup(cfg)
    n_part = cfg["N"]
    heff = basis.heff
    l = cfg.get("l", 10)
    k_list = cfg.get("k_list", [k for k in range(4, 17) if k != l])
    a_op = fs.operator_polynomial(basis, cfg.get("observable", "z+z^2"))
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=max(max(k_list), l) + 1)
    grid = _time_grid(cfg, t_e)

    cols = pre.states[:, k_list + [l]].astype(complex)
    propagator = WindowedSpectralPropagator(ham, cols) if basis.dim > 20000 \
        else SpectralPropagator(ham)
    table = observables.matrix_element_scan(
        ham, a_op, pre.states[:, k_list], pre.states[:, l], grid,
        labels=k_list, propagator=propagator)

    pred = build_dimer_prediction(alpha_post=cfg["alpha_post"],
                                  alpha_pre=cfg.get("alpha_pre", 0.0),
                                  observable=_observable_zpoly(cfg),
                                  kmax=cfg.get("prediction_kmax", 30))
    window = tuple(cfg.get("fit_window", (1.5 / lam, 0.8 * t_e)))
    ckl = {k: pred.predict_ckl(k, l) for k in k_list}
    curves, plateau = observables.collapse_statistic(
        table, lam, heff, order_of=lambda k: abs(k - l), ckl=ckl)
    fits = {}
    for k in k_list:
        sq = observables.TimeSeries(grid=grid, values=np.abs(table[k].values) ** 2)
        rate, intercept, resid = observables.fit_exponent(sq, window)
        fits[k] = {"rate": rate, "target": 2 * lam * abs(k - l),
                   "intercept": intercept, "residual": resid}
        write_series_csv(outdir / f"matrix_element_k{k}_l{l}.csv", table[k])
        write_series_csv(outdir / f"collapse_k{k}_l{l}.csv", curves[k])
        dev = observables.phase_deviation(table[k], k, l, pred.phi)
        with open(outdir / f"phase_dev_k{k}_l{l}.csv", "w") as fh:
            fh.write("t, value\n")
            for t, v in zip(dev.grid, dev.values):
                fh.write(f"{_fmt(t)}, {_fmt(v)}\n")
    with open(outdir / "ckl_predictions.csv", "w") as fh:
        fh.write("k, l, re, im\n")
        for k in k_list:
            fh.write(f"{k}, {l}, {_fmt(ckl[k].real)}, {_fmt(ckl[k].imag)}\n")
    physics = {"heff": heff, "lam": lam, "omega": omega, "t_E": t_e,
               "window": list(window)}
    write_manifest(outdir, cfg, physics)
    return {"table": table, "curves": curves, "plateau": plateau, "fits": fits,
            "ckl": ckl, "pred": pred, "grid": grid, "window": window,
            "t_E": t_e, "heff": heff, "lam": lam}


def _observable_zpoly(cfg):
    expr = cfg.get("observable", "z+z^2")
    mapping = {
        "z": {(1, 0): 1.0},
        "z^2": {(2, 0): 1.0},
        "z+z^2": {(1, 0): 1.0, (2, 0): 1.0},
    }
    if expr not in mapping:
        raise ValueError(f"no quadrature representation for observable {expr!r}")
    return mapping[expr]


def _thermal_ensemble(cfg, basis, omega):
    temp = cfg.get("kT_over_delta", 2.0)
    delta = omega  # prequench level spacing in units of J
    beta = math.inf if temp == 0 else 1.0 / (temp * delta)
    m_pre = cfg.get("prequench_states", 60)
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=m_pre)
    ens = observables.ThermalEnsemble.build(pre.energies, pre.states, beta)
    return ens, beta, delta


def run_otoc(cfg, outdir):
    """Thermal squared commutator against its multiexponential prediction."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    basis, ham, lam, omega, t_e = _dimer_setup(cfg)
    heff = basis.heff
    ens, beta, delta = _thermal_ensemble(cfg, basis, omega)
    a_op = fs.operator_polynomial(basis, cfg.get("observable", "z"))
    b_op = fs.operator_polynomial(basis, cfg.get("observable_b", "z"))
    grid = _time_grid(cfg, t_e)
    propagator = SpectralPropagator(ham)
    numeric = observables.otoc_numeric(ham, a_op, b_op, ens, grid,
                                       propagator=propagator)

    pred = build_dimer_prediction(alpha_post=cfg["alpha_post"],
                                  alpha_pre=cfg.get("alpha_pre", 0.0),
                                  observable=_observable_zpoly(
                                      dict(cfg, observable=cfg.get("observable", "z"))),
                                  kmax=cfg.get("prediction_kmax", 55))
    cov = thermal_covariance(beta, delta, pred.phi)
    b_quad = quantized_observable(
        _observable_zpoly(dict(cfg, observable=cfg.get("observable_b", "z"))),
        lam, phi=pred.phi)
    max_m = cfg.get("series_max_m", 25)
    cms, ev_series = otoc_series(pred, b_quad, cov, max_m=max_m)
    _, ev_lead = otoc_finite_time(pred, b_quad, cov, half_order=4)
    series = observables.TimeSeries(grid=grid, values=ev_series(grid, heff))
    leading = observables.TimeSeries(grid=grid, values=ev_lead(grid, heff))
    write_series_csv(outdir / "otoc_numeric.csv", numeric)
    write_series_csv(outdir / "otoc_series.csv", series)
    write_series_csv(outdir / "otoc_leading.csv", leading)
    with open(outdir / "otoc_series_coefficients.csv", "w") as fh:
        fh.write("m, c_m\n")
        for m, c in enumerate(cms):
            fh.write(f"{m}, {_fmt(c)}\n")
    physics = {"heff": heff, "lam": lam, "omega": omega, "t_E": t_e,
               "beta": beta, "ensemble_states": ens.n_states,
               "window": [1.5 / lam, 0.7 * t_e]}
    write_manifest(outdir, cfg, physics)
    return {"numeric": numeric, "series": series, "leading": leading,
            "cms": cms, "pred": pred, "cov": cov, "grid": grid, "t_E": t_e,
            "heff": heff, "lam": lam, "ensemble": ens}


def run_cumulants(cfg, outdir):
    """Distribution cumulants of the imbalance after a dimer quench."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    basis, ham, lam, omega, t_e = _dimer_setup(cfg)
    heff = basis.heff
    ens, beta, delta = _thermal_ensemble(cfg, basis, omega)
    a_op = fs.operator_polynomial(basis, cfg.get("observable", "z"))
    n_max = cfg.get("n_max", 10)
    grid = _time_grid(cfg, t_e)
    propagator = WindowedSpectralPropagator(ham, ens.states) \
        if basis.dim > 20000 else SpectralPropagator(ham)
    table = observables.cumulants_numeric(ham, a_op, ens, grid, n_max,
                                          propagator=propagator)

    pred = build_dimer_prediction(alpha_post=cfg["alpha_post"],
                                  alpha_pre=cfg.get("alpha_pre", 0.0),
                                  observable=_observable_zpoly(cfg),
                                  kmax=cfg.get("prediction_kmax", 30))
    cov = thermal_covariance(beta, delta, pred.phi)
    d_table = {}
    for n in range(2, n_max + 1, 2):
        d_n, _ = cumulant_prediction(pred, cov, n)
        d_table[n] = d_n
    for n, series in table.items():
        write_series_csv(outdir / f"cumulant_n{n}.csv", series)
    with open(outdir / "cumulant_prefactors.csv", "w") as fh:
        fh.write("n, d_n\n")
        for n, d in sorted(d_table.items()):
            fh.write(f"{n}, {_fmt(d)}\n")
    physics = {"heff": heff, "lam": lam, "omega": omega, "t_E": t_e,
               "beta": beta, "window": [1.5 / lam, 0.8 * t_e]}
    write_manifest(outdir, cfg, physics)
    return {"table": table, "d_table": d_table, "pred": pred, "cov": cov,
            "grid": grid, "t_E": t_e, "heff": heff, "lam": lam,
            "ensemble": ens, "beta": beta, "delta": delta}


def run_trimer_collapse(cfg, outdir):
    """Trimer matrix-element collapse onto the renormalized growth function."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_part = cfg["N"]
    u_post = cfg["u_post"]
    basis = fs.build_basis(3, n_part)
    ham = fs.build_hamiltonian(basis, J=1.0, U=u_post / n_part, periodic=True)
    with warnings.catch_warnings():
        # the postquench coupling sits beyond the bifurcation by design
        warnings.simplefilter("ignore", UserWarning)
        spec = meanfield.gp_stability(u_post, 3)
    lam = spec.max_rate
    t_e = meanfield.ehrenfest_time(n_part, lam)
    heff = basis.heff
    k_sum_max = cfg.get("k_sum_max", 5)
    m_states = (k_sum_max + 1) * (k_sum_max + 2) // 2
    pre = fs.prequench_eigenbasis(basis, J=1.0, m=m_states)
    labels = pre.labels
    ket = pre.states[:, labels.index((0, 0))]
    bra_labels = [lab for lab in labels if sum(lab) > 0]
    bras = np.column_stack([pre.states[:, labels.index(lab)]
                            for lab in bra_labels])
    grid = _time_grid(cfg, t_e)
    n1 = fs.site_number_operator(basis, 1, scaled=True)
    n2 = fs.site_number_operator(basis, 2, scaled=True)
    cfg_krylov = KrylovConfig(step_tolerance=cfg.get("step_tolerance", 1e-10))

    table, comm_raw = observables.element_and_commutator_scan(
        ham, n1, n2, bras, ket, grid, labels=bra_labels, cfg=cfg_krylov,
        threads=cfg.get("threads", 2))
    comm = {lab: observables.TimeSeries(grid=grid,
                                        values=s.values / math.sqrt(heff),
                                        meta=s.meta)
            for lab, s in comm_raw.items()}

    order_of = lambda lab: lab[0] + lab[1]
    curves_a, report_a = observables.collapse_statistic(
        table, lam, heff, order_of=order_of)
    curves_c, report_c = observables.collapse_statistic(
        comm, lam, heff, order_of=order_of)
    for lab in bra_labels:
        write_series_csv(outdir / f"element_n1_k{_label_str(lab)}.csv", table[lab])
        write_series_csv(outdir / f"collapse_n1_k{_label_str(lab)}.csv",
                         curves_a[lab])
        if lab in curves_c:
            write_series_csv(outdir / f"collapse_comm_k{_label_str(lab)}.csv",
                             curves_c[lab])
    physics = {"heff": heff, "lam": lam, "t_E": t_e,
               "window": [1.0 / lam, t_e], "u_post": u_post}
    write_manifest(outdir, cfg, physics)
    return {"table": table, "comm": comm, "curves_a": curves_a,
            "curves_c": curves_c, "report_a": report_a, "report_c": report_c,
            "labels": bra_labels, "grid": grid, "t_E": t_e, "heff": heff,
            "lam": lam}


def run_stability(cfg, outdir):
    """Mean-field mode spectrum to CSV."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_sites = cfg["L"]
    if "u" in cfg:
        u = cfg["u"]
    else:
        u = -2.0 * cfg["alpha"]
    spec = meanfield.gp_stability(u, n_sites)
    rows = []
    mode = 1
    for w in spec.stable_freqs:
        rows.append((mode, "stable", w, 1))
        mode += 1
    for lam, deg in spec.degeneracies.items():
        rows.append((mode, "unstable", lam, deg))
        mode += deg
    for _ in spec.marginal:
        rows.append((mode, "marginal", 0.0, 1))
        mode += 1
    with open(Path(outdir) / "stability.csv", "w") as fh:
        fh.write("mode_k, type, value, degeneracy\n")
        for r in rows:
            fh.write(f"{r[0]}, {r[1]}, {_fmt(r[2])}, {r[3]}\n")
    write_manifest(outdir, cfg, {"u": u, "L": n_sites})
    return {"spectrum": spec, "rows": rows}


def run_predict(cfg, outdir):
    """Analytic prediction tables without any quantum simulation."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_part = cfg["N"]
    heff = 1.0 / (n_part + 1)
    pred = build_dimer_prediction(alpha_post=cfg["alpha_post"],
                                  alpha_pre=cfg.get("alpha_pre", 0.0),
                                  observable=_observable_zpoly(cfg),
                                  kmax=cfg.get("prediction_kmax", 55))
    lam = pred.lam
    t_e = meanfield.ehrenfest_time(n_part, lam)
    temp = cfg.get("kT_over_delta", 2.0)
    beta = math.inf if temp == 0 else 1.0 / (temp * pred.delta)
    cov = thermal_covariance(beta, pred.delta, pred.phi)
    with open(outdir / "growth_coefficients.csv", "w") as fh:
        fh.write("k, C_k\n")
        for k, c in enumerate(pred.C):
            fh.write(f"{k}, {_fmt(c)}\n")
    l = cfg.get("l", 10)
    k_list = cfg.get("k_list", [k for k in range(4, 17) if k != l])
    with open(outdir / "ckl.csv", "w") as fh:
        fh.write("k, l, re, im\n")
        for k in k_list:
            c = pred.predict_ckl(k, l)
            fh.write(f"{k}, {l}, {_fmt(c.real)}, {_fmt(c.imag)}\n")
    b_quad = quantized_observable(_observable_zpoly(cfg), lam, phi=pred.phi)
    max_m = cfg.get("series_max_m", 25)
    cms, ev_series = otoc_series(pred, b_quad, cov, max_m=max_m)
    with open(outdir / "otoc_coefficients.csv", "w") as fh:
        fh.write("m, c_m\n")
        for m, c in enumerate(cms):
            fh.write(f"{m}, {_fmt(c)}\n")
    n_max = cfg.get("n_max", 8)
    with open(outdir / "cumulant_prefactors.csv", "w") as fh:
        fh.write("n, d_n\n")
        for n in range(2, n_max + 1, 2):
            d_n, _ = cumulant_prediction(pred, cov, n)
            fh.write(f"{n}, {_fmt(d_n)}\n")
    grid = _time_grid(cfg, t_e)
    _, ev_expect, _ = expectation_series(pred, beta)
    series = observables.TimeSeries(grid=grid, values=ev_expect(grid, heff))
    write_series_csv(outdir / "expectation_series.csv", series)
    physics = {"heff": heff, "lam": lam, "omega": pred.omega, "t_E": t_e,
               "beta": beta, "window": [1.5 / lam, 0.8 * t_e]}
    write_manifest(outdir, cfg, physics)
    return {"pred": pred, "cms": cms, "grid": grid, "t_E": t_e}
