"""Acceptance criteria; each test prints one PASS/FAIL line (see the terminal summary).

The optimality sweep behind criteria 1, 2 and 4 is the expensive part
(tens of minutes on one core); it runs once per session and its tables are
written to results/acceptance/.
"""
import math
import os

import numpy as np
import pytest
import scipy.linalg as sla

from bidomain_dd.dualprimal import DDConfig, DualPrimalSolver
from bidomain_dd.experiments import ExperimentConfig, emit_outputs, run_optimality, run_single
from bidomain_dd.ionic import MembraneParams, RogersMcCulloch, coercivity_margin
from bidomain_dd.krylov import KrylovConfig
from bidomain_dd.stepper import project_out_constant
from conftest import random_state, record_criterion, small_problem
from oracles import DenseBDDC

# pinned tolerances and reference values
C1_HH = (4, 8, 12)
C1_REF_VEF_COND = (1.7, 2.5, 3.2)
C1_REF_VEF_ITS = (9, 12, 15)
C1_REF_V_COND = (8.4, 24.1, 42.9)
C1_COND_REL = 0.25
C1_ITS_ABS = 3
C2_REL = 0.10
C3_HH = (2, 4, 8)
C3_SLACK = 0.25
C4_REL = 0.10
C5_SOLVE_REL = 1e-8
C5_EIG_REL = 1e-8
C5_MIN_EIG = 1 - 1e-8
C6_RANGE = (0.33, 0.41)
C7_MAX_NIT = 2.0
C8_TOL = 1e-10
C9_REL = 1e-6
C9_STATES = 50

RESULTS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "results", "acceptance")


def _rel(a, b):
    return abs(a - b) / abs(b)


@pytest.fixture(scope="module")
def sweep():
    cfg = ExperimentConfig(scenario="optimality", subs=(4, 4, 4), hh_list=C1_HH, sweep_primals=("v", "vef"),
                           sweep_scalings=("rho", "deluxe"), sweep_methods=("bddc", "fetidp"),
                           boundary_split=True, t_end=2.0)
    table = run_optimality(cfg)
    emit_outputs(table, os.path.join(RESULTS, "optimality"), cfg)
    print("\n" + table.format())
    return table


@pytest.mark.slow
def test_criterion_1_optimality(sweep):
    parts, ok = [], True
    for k, hh in enumerate(C1_HH):
        r = sweep.get(hh, "bddc", "rho", "vef")
        rv = sweep.get(hh, "bddc", "rho", "v")
        c_ok = _rel(r.cond, C1_REF_VEF_COND[k]) <= C1_COND_REL
        i_ok = abs(r.lit - C1_REF_VEF_ITS[k]) <= C1_ITS_ABS
        v_ok = _rel(rv.cond, C1_REF_V_COND[k]) <= C1_COND_REL
        ok &= c_ok and i_ok and v_ok
        parts.append(f"H/h={hh}: VEF cond {r.cond:.2f} (ref {C1_REF_VEF_COND[k]}) its {r.lit:.1f} "
                     f"(ref {C1_REF_VEF_ITS[k]}) V cond {rv.cond:.1f} (ref {C1_REF_V_COND[k]})")
    record_criterion(1, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_2_deluxe_vs_rho(sweep):
    worst, where = 0.0, ""
    for hh in C1_HH:
        for prim in ("v", "vef"):
            for m in ("bddc", "fetidp"):
                a = sweep.get(hh, m, "deluxe", prim).cond
                b = sweep.get(hh, m, "rho", prim).cond
                d = _rel(a, b)
                if d > worst:
                    worst, where = d, f"H/h={hh} {m} {prim}: deluxe {a:.3f} rho {b:.3f}"
    ok = worst <= C2_REL
    record_criterion(2, ok, f"max relative gap {worst:.3f} (limit {C2_REL}) at {where}")
    assert ok


@pytest.mark.slow
def test_criterion_4_spectral_equivalence(sweep):
    worst, where = 0.0, ""
    for hh in C1_HH:
        for prim in ("v", "vef"):
            for sc in ("rho", "deluxe"):
                a = sweep.get(hh, "fetidp", sc, prim).cond
                b = sweep.get(hh, "bddc", sc, prim).cond
                d = _rel(a, b)
                if d > worst:
                    worst, where = d, f"H/h={hh} {sc} {prim}: fetidp {a:.3f} bddc {b:.3f}"
    ok = worst <= C4_REL
    record_criterion(4, ok, f"max relative gap {worst:.3f} (limit {C4_REL}) at {where}")
    assert ok


@pytest.mark.slow
def test_criterion_3_polylog():
    cfg = ExperimentConfig(scenario="optimality", subs=(2, 2, 2), hh_list=C3_HH, sweep_primals=("ve",),
                           sweep_scalings=("deluxe",), sweep_methods=("bddc",), t_end=0.5, probe_every=1)
    table = run_optimality(cfg)
    emit_outputs(table, os.path.join(RESULTS, "polylog"), cfg)
    conds = [table.get(hh, "bddc", "deluxe", "ve").cond for hh in C3_HH]
    ratios = [c / (1 + math.log(hh)) ** 3 for c, hh in zip(conds, C3_HH)]
    ok = all(b <= (1 + C3_SLACK) * a for a, b in zip(ratios, ratios[1:]))
    detail = ", ".join(f"H/h={hh}: cond {c:.3f} ratio {r:.4f}" for hh, c, r in zip(C3_HH, conds, ratios))
    record_criterion(3, ok, detail)
    assert ok


def test_criterion_5_dense_oracle():
    p = small_problem(shape=(4, 4, 4), extent=(1.0, 1.0, 1.0))
    rng = np.random.default_rng(2024)
    u, w = random_state(p, rng)
    coeff = p.nodal_coefficient(u, w)
    s = DualPrimalSolver(p, DDConfig(grid=(2, 1, 1), primal="vef", scaling="rho"),
                         KrylovConfig(rtol=1e-13, atol=1e-16, max_it=500))
    s.setup(coeff / p.mass)
    # (a) condensed solve against a dense monolithic solve with the constant pinned
    rhs = project_out_constant(rng.normal(size=p.n_dofs))
    x = s.solve(coeff, rhs).x
    J = p.coupled.matrix(coeff).toarray()
    ref = np.zeros_like(rhs)
    ref[1:] = np.linalg.solve(J[1:, 1:], rhs[1:])
    ref = project_out_constant(ref)
    err_a = np.linalg.norm(x - ref) / np.linalg.norm(ref)
    # (b) explicit dense BDDC against the matrix-free one
    imap = s.imap
    oracle = DenseBDDC(p, s.decomp, imap.classes, imap.primal.modes, coeff, s.rho.sigma_max)
    ev_dense = oracle.preconditioned_eigs()
    n = imap.n_gamma
    M = np.column_stack([s.bddc_apply(e) for e in np.eye(n)])
    S = np.column_stack([s.schur.apply(e) for e in np.eye(n)])
    basis = sla.null_space(np.ones((1, n)))
    ev_free = np.sort(np.linalg.eigvals((basis.T @ M @ basis) @ (basis.T @ S @ basis)).real)
    err_b = np.abs(ev_dense - ev_free).max() / ev_free.max()
    # (c) lower bound
    lo = ev_free.min()
    ok = err_a <= C5_SOLVE_REL and err_b <= C5_EIG_REL and lo >= C5_MIN_EIG
    record_criterion(5, ok, f"(a) solve rel err {err_a:.2e}; (b) eig max diff {err_b:.2e}; "
                            f"(c) min eig {lo:.12f}; max eig {ev_free.max():.4f}")
    assert ok


def test_criterion_6_critical_tau():
    model, mem = RogersMcCulloch(), MembraneParams(chi=1.0, cm=1.0)
    _, tau_star = coercivity_margin((-85.0, 120.0), (0.0, 1.0), 0.05, model, mem)
    # independent route: brute-force minimum of dI/dv on a fine grid
    vv, ww = np.meshgrid(np.linspace(-85, 120, 4101), np.linspace(0, 1, 51))
    d_min = float(model.di_ion_dv(vv, ww).min())
    tau_grid = mem.chi * mem.cm / -d_min
    ok = C6_RANGE[0] <= tau_star <= C6_RANGE[1] and abs(tau_grid - tau_star) <= 1e-3 * tau_star
    record_criterion(6, ok, f"tau* = {tau_star:.4f} ms (grid search {tau_grid:.4f}), range {C6_RANGE}")
    assert ok


@pytest.mark.slow
def test_criterion_7_newton():
    cfg = ExperimentConfig(mesh=(24, 24, 6), subs=(2, 2, 2), t_end=2.0, precond="bddc", primal="vef")
    table, _, state = run_single(cfg)
    emit_outputs(table, os.path.join(RESULTS, "newton"), cfg)
    nit = table.nit
    ok = len(table.rows) == 40 and nit <= C7_MAX_NIT
    record_criterion(7, ok, f"{len(table.rows)} steps, mean Newton its {nit:.3f} (limit {C7_MAX_NIT}), "
                            f"max {max(r.nit for r in table.rows)}, v_max {state.v.max():.1f} mV")
    assert ok


def test_criterion_8_projections():
    from hypothesis import given, settings, strategies as st
    p = small_problem(shape=(4, 4, 4), extent=(1.0, 1.0, 0.5))
    worst = {"idempotency": 0.0, "P_D on continuous": 0.0, "partition of unity": 0.0}
    for prim in ("v", "ve", "vef"):
        grid = (2, 2, 2)
        s = DualPrimalSolver(p, DDConfig(grid=grid, primal=prim, scaling="deluxe", boundary_split=prim == "v"))
        u, w = random_state(p, np.random.default_rng(7))
        s.setup(p.nodal_coefficient(u, w) / p.mass)
        imap = s.imap
        for kind in ("rho", "deluxe"):
            sc = s.scaling_for(kind)
            worst["partition of unity"] = max(worst["partition of unity"], sc.partition_defect())

            @settings(max_examples=50, deadline=None)
            @given(st.integers(0, 2**32 - 1))
            def check(seed):
                rng = np.random.default_rng(seed)
                x = rng.normal(size=imap.n_tilde)
                e = sc.apply_E_D(x)
                worst["idempotency"] = max(worst["idempotency"],
                                           np.abs(sc.apply_E_D(e) - e).max() / max(1.0, np.abs(x).max()))
                c = imap.restrict_continuous(rng.normal(size=imap.n_primal + imap.n_dual_hat))
                worst["P_D on continuous"] = max(worst["P_D on continuous"],
                                                 np.abs(sc.apply_P_D(c)).max() / max(1.0, np.abs(c).max()))
            check()
    ok = all(v <= C8_TOL for v in worst.values())
    record_criterion(8, ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (limit {C8_TOL})")
    assert ok


def test_criterion_9_jacobian_fd():
    p = small_problem(shape=(4, 4, 4), stimulus=True)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(C9_STATES):
        u, w = random_state(p, rng)
        v_prev = u[0::2] - u[1::2] + rng.normal(0, 2, p.n_nodes)
        i_app = p.applied_current(0.0)
        s = rng.normal(size=p.n_dofs)
        Js = p.jacobian_apply(u, w, s)
        eps = 1e-3
        fd = (p.residual(u + eps * s, w, v_prev, i_app) - p.residual(u - eps * s, w, v_prev, i_app)) / (2 * eps)
        worst = max(worst, np.linalg.norm(fd - Js) / np.linalg.norm(Js))
    ok = worst <= C9_REL
    record_criterion(9, ok, f"max relative FD mismatch {worst:.2e} over {C9_STATES} states (limit {C9_REL})")
    assert ok
