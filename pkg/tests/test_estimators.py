"""Estimator chain: space/time estimators, psi recursion, delta, r, bound."""

import math

import numpy as np
import pytest

from semiheat.mesh import Mesh, Rectangle
from semiheat import fespace as fe
from semiheat import scheme as sc
from semiheat import estimators as est
from semiheat.problems import builtin

UNIT = Rectangle(0.0, 1.0, 0.0, 1.0)


def make_slab_workspace(prob, level=3, degree=2, k=0.01, mesh=None):
    mesh = mesh or Mesh.uniform(prob.rect, level)
    sp = fe.Space(mesh, degree)
    U0 = sc.project_initial(prob, sp)
    U1, hat = sc.imex_step(prob, U0, sp, k, 0.0)
    ws = est.SlabWorkspace(prob, U0, sc.InitialLaplacian(prob.a, prob.lap_u0),
                           sp, 0.0)
    ws.set_state(U1, hat, k)
    return sp, U0, U1, hat, ws


# -- log factor and xi ---------------------------------------------------------


def test_log_factor_clamp():
    assert est.log_factor(2.0) == 1.0
    assert est.log_factor(1.0) == 1.0
    assert est.log_factor(np.exp(-1.0)) == pytest.approx(1.0)
    assert est.log_factor(0.01) == pytest.approx(math.log(100.0))


def test_xi_value_cases():
    z = np.zeros(4)
    assert est.xi_value(z, 0.1, z, 0.1) == 0.0
    m = np.array([0.5, 2.0, 1.0])
    assert est.xi_value(z, 0.5, m, np.exp(-1.0)) == pytest.approx(2.0)
    # equal maps: the smaller mesh size wins through the log factor
    assert est.xi_value(m, 0.01, m, 0.05) == pytest.approx(
        math.log(100.0) * 2.0)


# -- space estimator ------------------------------------------------------------


def test_space_estimator_zero_for_exact_reconstruction():
    # steady state: stationary field, matching driving term
    prob = builtin("heat_decay")
    from dataclasses import replace
    # u0 = x^2 + y^2 restricted: interpolant reproduces it at p >= 2, and
    # the analytic Laplacian cancels the volume residual exactly
    poly = replace(prob,
                   u0=lambda x, y: x * x + y * y,
                   lap_u0=lambda x, y: 4.0 + 0 * x)
    mesh = Mesh.uniform(UNIT, 2)
    sp = fe.Space(mesh, 2)
    U = fe.Field.from_callable(sp, poly.u0)
    eta = est.initial_space_estimator(poly, U)
    assert eta.max() < 1e-8


def test_space_estimator_zero_field():
    prob = builtin("heat_decay")
    from dataclasses import replace
    flat = replace(prob, u0=lambda x, y: 0.0 * x, lap_u0=lambda x, y: 0.0 * x)
    sp = fe.Space(Mesh.uniform(UNIT, 2), 2)
    eta = est.initial_space_estimator(flat, fe.Field.zeros(sp))
    assert eta.max() == 0.0


def test_space_estimator_h_powers():
    # the combiner weights the volume part by h^2 and the jump part by h:
    # fixed residual magnitudes on meshes of halved size scale accordingly
    a = 2.0
    for h_scale in (1.0, 0.5):
        h = np.array([h_scale * np.sqrt(2.0)])
        vol = np.array([3.0])
        jump = np.array([5.0])
        eta = h * h / a * vol + h * jump
        if h_scale == 1.0:
            base = eta[0]
    fine = (0.5 * np.sqrt(2)) ** 2 / a * 3.0 + 0.5 * np.sqrt(2) * 5.0
    assert fine == pytest.approx(0.25 * (np.sqrt(2) ** 2 / a * 3.0)
                                 + 0.5 * (np.sqrt(2) * 5.0))


def test_eta_dot_vanishes_for_stationary_slab():
    prob = builtin("heat_decay")
    from dataclasses import replace
    flat = replace(prob, u0=lambda x, y: 0.0 * x, lap_u0=lambda x, y: 0.0 * x)
    sp = fe.Space(Mesh.uniform(UNIT, 2), 2)
    z = fe.Field.zeros(sp)
    ws = est.SlabWorkspace(flat, z, sc.InitialLaplacian(1.0, flat.lap_u0),
                           sp, 0.0)
    ws.set_state(z, z, 0.1)
    dot_map, xi_prime = ws.eta_dot_maps()
    assert dot_map.max() == 0.0
    assert xi_prime == 0.0


def test_eta_dot_same_mesh_reduces_to_single_mesh():
    prob = builtin("heat_decay")
    sp, U0, U1, hat, ws = make_slab_workspace(prob)
    assert ws.same_mesh
    assert ws.vee is sp.mesh
    assert np.array_equal(ws.h_wedge, sp.mesh.h)


def test_eta_dot_pure_refinement_weights_from_coarse_mesh():
    prob = builtin("heat_decay")
    mesh = Mesh.uniform(UNIT, 2)
    sp = fe.Space(mesh, 2)
    U0 = sc.project_initial(prob, sp)
    fine = mesh.refine([mesh.leaves[0], mesh.leaves[5]])
    spf = fe.Space(fine, 2)
    U1, hat = sc.imex_step(prob, U0, spf, 0.01, 0.0)
    ws = est.SlabWorkspace(prob, U0, sc.InitialLaplacian(1.0, prob.lap_u0),
                           spf, 0.0)
    ws.set_state(U1, hat, 0.01)
    # wedge = coarse mesh; every vee cell's weight is its coarse ancestor's h
    assert set(ws.wedge.leaves) == set(mesh.leaves)
    assert set(ws.vee.leaves) == set(fine.leaves)
    for vi, key in enumerate(ws.vee.leaves):
        cx = ws.vee.x0[vi] + 0.5 * ws.vee.hx[vi]
        cy = ws.vee.y0[vi] + 0.5 * ws.vee.hy[vi]
        host = int(mesh.locate([cx], [cy])[0])
        assert ws.h_wedge[vi] == pytest.approx(mesh.h[host])


# -- time estimator --------------------------------------------------------------


def test_eta_time_zero_for_linear_forcing():
    # f spatially flat and linear in t, zero state, endpoint values equal
    # to f at the slab endpoints: the blend reproduces the linear function
    # and the residual vanishes identically
    def lin_f(x, y, t, u):
        return (2.0 + 3.0 * t) + 0.0 * x

    t_prev, k = 0.1, 0.1
    Xs = np.linspace(0, 1, 7)[None, :].repeat(3, axis=0)
    Ys = np.linspace(0, 1, 7)[None, :].repeat(3, axis=0)
    zero = np.zeros_like(Xs)
    A_prev = lin_f(Xs, Ys, t_prev, zero)
    A_next = lin_f(Xs, Ys, t_prev + k, zero)
    eta = est.eta_time_from_values(lin_f, Xs, Ys, t_prev, k, zero, zero,
                                   A_prev, A_next)
    assert eta < 1e-14


def test_eta_time_matches_dense_1d_oracle():
    # spatially constant states: the residual is a scalar function of
    # time; compare 3-node Gauss against a dense trapezoid oracle
    prob = builtin("example1")
    from dataclasses import replace
    flat = replace(prob, rect=UNIT, u0=lambda x, y: 0.0 * x + 1.0,
                   lap_u0=lambda x, y: 0.0 * x)
    mesh = Mesh.uniform(UNIT, 1)
    sp = fe.Space(mesh, 1)
    # growth kept small enough that the residual never changes sign, so
    # both the Gauss rule and the trapezoid oracle integrate |R| exactly
    c1, c2 = 1.0, 1.1
    k = 0.2
    U_prev = fe.Field(sp, np.full(sp.n_global, c1))
    U_next = fe.Field(sp, np.full(sp.n_global, c2))
    A_prev = sc.InitialLaplacian(1.0, flat.lap_u0)  # zero
    ws = est.SlabWorkspace(flat, U_prev, A_prev, sp, 0.0)
    ws.set_state(U_next, U_prev, k)
    eta = ws.eta_time()

    a_next = c1 * c1 - (c2 - c1) / k
    dudt = (c2 - c1) / k

    def residual(s):
        lb = s / k
        la = 1.0 - lb
        u = la * c1 + lb * c2
        return abs(u * u - lb * a_next - dudt)

    ss = np.linspace(0.0, k, 10001)
    oracle = np.trapezoid([residual(s) for s in ss], ss)
    assert eta == pytest.approx(oracle, abs=1e-10)


def test_eta_time_second_order_in_k():
    prob = builtin("manufactured_linear")
    sp = fe.Space(Mesh.uniform(UNIT, 4), 3)
    U0 = sc.project_initial(prob, sp)
    etas = []
    for k in (0.02, 0.01, 0.005):
        U1, hat = sc.imex_step(prob, U0, sp, k, 0.0)
        ws = est.SlabWorkspace(prob, U0,
                               sc.InitialLaplacian(prob.a, prob.lap_u0),
                               sp, 0.0)
        ws.set_state(U1, hat, k)
        etas.append(ws.eta_time())
    slopes = [np.log2(etas[i] / etas[i + 1]) for i in range(2)]
    assert all(1.8 <= s <= 2.2 for s in slopes)


# -- eta_initial ---------------------------------------------------------------


def test_eta_initial_near_zero_for_member_data():
    prob = builtin("heat_decay")
    from dataclasses import replace
    member = replace(prob,
                     u0=lambda x, y: x * (1 - x) * y * (1 - y),
                     lap_u0=lambda x, y: 2 * y * (y - 1) + 2 * x * (x - 1))
    sp = fe.Space(Mesh.uniform(UNIT, 3), 2)
    U0 = sc.project_initial(member, sp)
    eta0 = est.initial_space_estimator(member, U0)
    eta_I = est.eta_initial(member, U0, eta0)
    assert eta_I < 1e-7


def test_eta_initial_dominates_e0():
    prob = builtin("example1")
    sp = fe.Space(Mesh.uniform(prob.rect, 2), 1)
    U0 = sc.project_initial(prob, sp)
    eta0 = est.initial_space_estimator(prob, U0)
    eta_I = est.eta_initial(prob, U0, eta0)
    e0 = est.initial_error_map(prob, U0).max()
    assert eta_I >= e0
    # a 4x4 p=1 mesh cannot resolve the Gaussian: the estimator sees it
    assert eta_I > 1.0


# -- psi / delta / r --------------------------------------------------------------


class _Led:
    def __init__(self, c_inf=1.0, eta_I=0.0, r=(), psi=()):
        self.c_inf = c_inf
        self.eta_I = eta_I
        self.r = list(r)
        self.psi = list(psi)


def test_psi_zero_modulus_telescopes():
    prob = builtin("heat_decay")
    sp, U0, U1, hat, ws = make_slab_workspace(prob)
    led = _Led(eta_I=0.25)
    psi1 = est.psi_update(led, 1, 0.1, 0.7, 0.05, prob.modulus, ws)
    assert psi1 == 0.25 + 0.1 + 0.05
    led2 = _Led(eta_I=0.25, r=[1.0], psi=[psi1])
    psi2 = est.psi_update(led2, 2, 0.2, 0.7, 0.0, prob.modulus, ws)
    assert psi2 == psi1 + 0.2


def test_psi_all_zero_inputs():
    prob = builtin("heat_decay")
    sp, U0, U1, hat, ws = make_slab_workspace(prob)
    led = _Led(eta_I=0.0)
    assert est.psi_update(led, 1, 0.0, 0.0, 0.0, prob.modulus, ws) == 0.0


def test_psi_constant_modulus_closed_form():
    # L == c: psi_2 = e^{c k1} psi_1 + C xi c k2 + eta_T + C xi'
    prob = builtin("heat_decay")
    c = 0.8
    modulus = est.LipschitzModulus(lambda t, a, b: c, kind="generic")
    sp, U0, U1, hat, ws = make_slab_workspace(prob, k=0.01)
    k1 = k2 = 0.01
    led = _Led(eta_I=0.3)
    psi1 = est.psi_update(led, 1, 0.1, 0.5, 0.02, modulus, ws)
    assert psi1 == pytest.approx(0.3 + 0.5 * c * k1 + 0.1 + 0.02, rel=1e-12)
    r1 = math.exp(c * k1)
    led2 = _Led(eta_I=0.3, r=[r1], psi=[psi1])
    psi2 = est.psi_update(led2, 2, 0.07, 0.4, 0.01, modulus, ws)
    assert psi2 == pytest.approx(r1 * psi1 + 0.4 * c * k2 + 0.07 + 0.01,
                                 rel=1e-12)


def _const_norm(value):
    return lambda s: value


def test_delta_zero_modulus_exact_one():
    zero = est.LipschitzModulus.zero()
    d = est.fixed_point_delta(0.5, 0.2, 0.1, 0.0, zero, _const_norm(3.0))
    assert d == 1.0


def test_delta_integral_one_half():
    # constant modulus with int L ds = 1/2 independent of delta: root = 2
    modulus = est.LipschitzModulus(lambda t, a, b: 5.0, kind="generic")
    d = est.fixed_point_delta(0.0, 0.0, 0.1, 0.0, modulus, _const_norm(0.0))
    assert d == pytest.approx(2.0, rel=1e-10)


def test_delta_degenerate_interval():
    modulus = est.LipschitzModulus.additive()
    assert est.fixed_point_delta(1.0, 1.0, 0.0, 0.0, modulus,
                                 _const_norm(5.0)) == 1.0


def test_delta_additive_closed_form_and_scan_agree():
    rng = np.random.default_rng(9)
    generic_add = est.LipschitzModulus(lambda t, a, b: a + b, kind="generic")
    additive = est.LipschitzModulus.additive()
    found = 0
    for _ in range(200):
        psi = rng.uniform(0.0, 2.0)
        xi = rng.uniform(0.0, 1.0)
        k = rng.uniform(1e-4, 0.05)
        nval = rng.uniform(0.0, 8.0)
        d1 = est.fixed_point_delta(psi, xi, k, 0.0, additive,
                                   _const_norm(nval))
        d2 = est.fixed_point_delta(psi, xi, k, 0.0, generic_add,
                                   _const_norm(nval))
        assert (d1 is None) == (d2 is None)
        if d1 is not None:
            found += 1
            assert d1 == pytest.approx(d2, rel=1e-8, abs=1e-8)
    assert found > 100  # the sampling hits plenty of existing roots


def test_delta_smallest_root_property():
    rng = np.random.default_rng(10)
    additive = est.LipschitzModulus.additive()
    for _ in range(50):
        psi = rng.uniform(0.0, 2.0)
        xi = rng.uniform(0.0, 1.0)
        k = rng.uniform(1e-4, 0.05)
        nval = rng.uniform(0.0, 8.0)
        d = est.fixed_point_delta(psi, xi, k, 0.0, additive, _const_norm(nval))
        if d is None:
            continue

        def phi(delta):
            L = 2.0 * (delta * psi + nval + xi)
            return 1.0 + delta * (L * k - 1.0)

        assert abs(phi(d)) < 1e-8 * max(1.0, abs(d))
        for s in np.linspace(1.0, d, 25)[:-1]:
            assert phi(s) > -1e-10


def test_delta_nonexistence_for_large_k():
    additive = est.LipschitzModulus.additive()
    assert est.fixed_point_delta(1.0, 0.0, 0.5, 0.0, additive,
                                 _const_norm(10.0)) is None


def test_gronwall_factor_cases():
    zero = est.LipschitzModulus.zero()
    assert est.gronwall_factor(1.0, 1.0, 1.0, 0.1, 0.0, zero,
                               _const_norm(1.0)) == 1.0
    c = 2.0
    modulus = est.LipschitzModulus(lambda t, a, b: c, kind="generic")
    k = 0.3
    r = est.gronwall_factor(1.0, 0.0, 0.0, k, 0.0, modulus, _const_norm(0.0))
    assert r == pytest.approx(math.exp(c * k), rel=1e-12)
    # monotone in psi for a monotone modulus
    additive = est.LipschitzModulus.additive()
    rs = [est.gronwall_factor(1.5, psi, 0.1, 0.05, 0.0, additive,
                              _const_norm(2.0)) for psi in (0.5, 1.0, 2.0)]
    assert rs[0] < rs[1] < rs[2]


# -- ledger and total bound -------------------------------------------------------


def _ledger_with_steps(modulus_is_zero, steps, eta_I=0.0, e0=0.0):
    led = est.EstimatorLedger(c_inf=1.0, modulus_is_zero=modulus_is_zero)
    led.e0 = e0
    led.eta_I = eta_I
    led.log_eta_S0 = eta_I - e0  # c_inf = 1
    led.eta_S0_map = np.array([led.log_eta_S0])
    t = 0.0
    for (k, eta_T, xi, xi_prime, psi, delta, r, etaS) in steps:
        t += k
        led.add_step(len(led.m) + 1, t, k, 10, 1.0, eta_T, xi, xi_prime,
                     psi, delta, r, np.array([etaS]), np.exp(-1.0),
                     np.array([0.0]))
    return led


def test_total_bound_zero_case():
    led = _ledger_with_steps(True, [(0.1, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0)])
    assert est.total_bound(led) == 0.0


def test_total_bound_zero_modulus_telescoping():
    led = _ledger_with_steps(
        True,
        [(0.1, 0.1, 0.0, 0.0, 0.1, 1.0, 1.0, 0.0),
         (0.1, 0.2, 0.0, 0.0, 0.3, 1.0, 1.0, 0.0)])
    assert est.total_bound(led) == pytest.approx(0.3, abs=1e-15)


def test_total_bound_dominates_psi():
    led = _ledger_with_steps(
        False,
        [(0.1, 0.1, 0.2, 0.0, 0.5, 1.2, 1.1, 0.3),
         (0.1, 0.2, 0.2, 0.1, 0.9, 1.3, 1.2, 0.4)])
    bound = est.total_bound(led)
    assert bound >= 1.2 * 0.9 >= 0.9


def test_total_bound_requires_delta():
    led = _ledger_with_steps(
        False, [(0.1, 0.1, 0.2, 0.0, 0.5, None, None, 0.3)])
    with pytest.raises(est.BoundUnavailableError):
        est.total_bound(led)


def test_r_tilde_accumulates_product():
    rs = [1.1, 1.25, 1.05]
    led = _ledger_with_steps(
        False,
        [(0.1, 0.1, 0.0, 0.0, 0.5, 1.2, r, 0.1) for r in rs])
    expect = np.cumprod(rs)
    assert np.allclose(led.r_tilde, expect, rtol=1e-12)


def test_ledger_csv_columns(tmp_path):
    led = _ledger_with_steps(
        True, [(0.1, 0.1, 0.0, 0.0, 0.1, 1.0, 1.0, 0.0)])
    path = tmp_path / "ledger.csv"
    led.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == ("m,t_m,k_m,dofs_m,linf_U_m,eta_T,xi,xi_prime,psi,"
                        "delta,r,r_tilde,bound")
    assert len(lines) == 2
    assert lines[1].startswith("1,")


def test_psi_monotone_accumulation_in_runs():
    # psi_m >= r_{m-1} psi_{m-1} and psi_m >= eta_T^m on a real run
    prob = builtin("example1")
    mesh = Mesh.uniform(prob.rect, 4)
    mesh = mesh.refine([k for i, k in enumerate(mesh.leaves)
                        if abs(mesh.x0[i] + 0.5 * mesh.hx[i]) < 2
                        and abs(mesh.y0[i] + 0.5 * mesh.hy[i]) < 2])
    sp = fe.Space(mesh, 3)
    U0 = sc.project_initial(prob, sp)
    led = est.EstimatorLedger(1.0, False)
    eta0 = est.initial_space_estimator(prob, U0)
    led.set_initial(prob, U0, eta0)
    u = U0
    A_prev = sc.InitialLaplacian(prob.a, prob.lap_u0)
    prev_map = eta0
    t = 0.0
    k = 1e-3
    for m in range(1, 4):
        u_next, hat = sc.imex_step(prob, u, sp, k, t)
        ws = est.SlabWorkspace(prob, u, A_prev, sp, t)
        ws.set_state(u_next, hat, k)
        eta_T = ws.eta_time()
        eta_S = ws.eta_space_map()
        dot_map, xi_prime = ws.eta_dot_maps()
        xi = est.xi_value(prev_map, mesh.min_diameter(), eta_S,
                          mesh.min_diameter())
        psi = est.psi_update(led, m, eta_T, xi, xi_prime, prob.modulus, ws)
        if m > 1:
            assert psi >= led.r[-1] * led.psi[-1]
        assert psi >= eta_T
        delta = est.fixed_point_delta(psi, xi, k, t, prob.modulus, ws.u_norm)
        assert delta is not None and delta >= 1.0
        r = est.gronwall_factor(delta, psi, xi, k, t, prob.modulus, ws.u_norm)
        assert r >= 1.0
        slab = sc.make_slab(prob, m, t, k, u, u_next, hat)
        slab.A_prev = A_prev
        t += k
        led.add_step(m, t, k, sp.n_free, u_next.linf_norm(), eta_T, xi,
                     xi_prime, psi, delta, r, eta_S, mesh.min_diameter(),
                     dot_map)
        u = u_next
        A_prev = slab.A_next
        prev_map = eta_S
