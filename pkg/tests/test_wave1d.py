import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.integrate import quad

from rkcomplex import wave1d as W
from rkcomplex.schemes import EXACT, get_scheme
from rkcomplex.wave1d import Damping, WaveProblem

MO7, MO15, DRP = W.get_stencil("MO7"), W.get_stencil("MO15"), W.get_stencil("DRP")


def grid(n, length=1.0):
    return np.arange(n) * (length / n), length / n


# --- stencils and filters --------------------------------------------------------

def test_stencil_kills_constants():
    for st in (MO7, MO15, DRP):
        assert np.all(W.spatial_derivative(np.full(40, 3.7), st, 0.1) == 0)


def test_maximal_stencil_exact_on_polynomials():
    for w in (1, 3, 7):
        st = W.maximal_stencil(w)
        assert st.order == 2 * w
        # sum_j 2 d_j j^(2m-1) = [m == 1], i.e. exact for x^(2m-1), m <= w
        for m in range(1, w + 1):
            terms = [2 * d * j ** (2 * m - 1) for j, d in enumerate(st.coeffs, 1)]
            scale = sum(abs(t) for t in terms)
            assert abs(sum(terms) - (1.0 if m == 1 else 0.0)) <= 1e-15 * scale
    assert MO7.coeffs == pytest.approx((3 / 4, -3 / 20, 1 / 60), abs=1e-15)


def test_mo15_derivative_of_sine():
    x, dx = grid(32)
    du = W.spatial_derivative(np.sin(2 * np.pi * x), MO15, dx)
    assert np.max(np.abs(du - 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-10


def test_drp_modified_wavenumber():
    x, dx = grid(64, 8.0)            # wavelength 1 at 8 points per wavelength
    kappa = 2 * np.pi
    du = W.spatial_derivative(np.sin(kappa * x), DRP, dx)
    kbar = DRP.modified_wavenumber(kappa * dx) / dx
    assert np.max(np.abs(du - kbar * np.cos(kappa * x))) / kappa < 1e-8
    rel = np.max(np.abs(du - kappa * np.cos(kappa * x))) / kappa
    assert rel == pytest.approx(abs(kbar - kappa) / kappa, rel=1e-8)


def test_stencil_size_error():
    with pytest.raises(W.SizeError):
        W.spatial_derivative(np.zeros(14), MO15, 0.1)
    with pytest.raises(W.SizeError):
        W.apply_filter(np.zeros(10), W.F16_4)


def test_filter_keeps_constants():
    for f in (W.F6, W.F16_4, W.F6.with_strength(0.3)):
        u = np.full(50, -2.5)
        assert np.allclose(W.apply_filter(u, f), u, rtol=0, atol=1e-14)


def test_filter_removes_grid_mode():
    u = (-1.0) ** np.arange(48)
    for f in (W.F6, W.F16_4):
        assert np.max(np.abs(W.apply_filter(u, f))) < 1e-12
    half = W.apply_filter(u, W.F6.with_strength(0.5))
    assert np.allclose(half, 0.5 * u, atol=1e-12)


def test_filter_transfer_function():
    x, dx = grid(24)
    kdx = 2 * np.pi * dx
    out = W.apply_filter(np.sin(2 * np.pi * x), W.F6)
    D = W.F6.coeffs[0] + 2 * sum(f * (np.cos(j * kdx)) for j, f in enumerate(W.F6.coeffs[1:], 1))
    assert np.max(np.abs(out - (1 - D) * np.sin(2 * np.pi * x))) < 1e-6
    assert W.F6.transfer(kdx) == pytest.approx(D, abs=1e-15)


def test_filter_transfer_shape():
    k = np.linspace(0, np.pi, 401)
    for f in (W.F6, W.F16_4):
        D = f.transfer(k)
        assert D[0] == pytest.approx(0, abs=1e-14) and D[-1] == pytest.approx(1, abs=1e-12)
        assert np.all(D >= -1e-14) and np.all(D <= 1 + 1e-14)
    # F_{a,b} is flat to order a at the origin
    assert W.F16_4.transfer(0.1) < 1e-14
    assert W.F6.transfer(0.1) == pytest.approx(W.F6.transfer(0.05) * 64, rel=1e-2)


def test_stencil_file_parsing():
    text = "stencil S halfwidth=1 order=2\nd 1 0.5\nend\nfilter G halfwidth=1\nf 0 0.5\nf 1 -0.25\nend\n"
    s, g = W.load_stencils(text)
    assert s.coeffs == (0.5,) and g.coeffs == (0.5, -0.25)
    with pytest.raises(Exception):
        W.load_stencils("stencil S halfwidth=1 order=2\nd 1 0.4\nend\n")
    with pytest.raises(Exception):
        W.load_stencils("stencil S halfwidth=1 order=2\nd 1 0.5\n")
    lib = W.stencil_library()
    assert {"MO3", "MO7", "MO15", "DRP", "F6", "F16,4"} <= set(lib)
    assert W.get_stencil("none") is None


# --- semi-discrete system ----------------------------------------------------------

def test_rhs_cases():
    x, dx = grid(64)
    k = 1.0 + np.cos(2 * np.pi * x)
    assert np.all(W.rhs(np.zeros((2, 64)), MO7, k, dx) == 0)
    s = np.sin(2 * np.pi * x)
    d = W.rhs(np.stack([s, s]), MO15, np.zeros(64), dx)
    assert np.max(np.abs(d[0] + 2 * np.pi * np.cos(2 * np.pi * x))) < 1e-7
    u = np.random.default_rng(1).normal(size=64)
    d = W.rhs(np.stack([u, u]), MO7, k, dx)
    assert np.array_equal(d[0], d[1])


def fourier_setup(ppw=16, modes=3):
    n = ppw * modes
    x, dx = grid(n, float(modes))
    kappa = 2 * np.pi
    return x, dx, kappa


@pytest.mark.parametrize("name", ["RK4", "Opt8", "LDDRK5", "RK12"])
def test_step_matches_amplification_on_a_mode(name):
    s = get_scheme(name)
    x, dx, kappa = fourier_setup()
    dt = 0.5 * dx
    p0 = np.cos(kappa * x)
    new = W.step(np.stack([p0, p0]), s, dt, MO7, None, np.zeros_like(x), dx)
    # f = p + v obeys f' = -D f; D multiplies e^{i kappa x} by i kbar
    kbar = MO7.modified_wavenumber(kappa * dx) / dx
    r = s.amplification(kbar * dt)
    expected = np.real(r * np.exp(1j * kappa * x))
    assert np.max(np.abs(new[0] - expected)) < 1e-12
    assert np.max(np.abs(new[1] - expected)) < 1e-12


def test_two_composite_steps_match_product():
    cs = get_scheme("LDDRK46")
    x, dx, kappa = fourier_setup()
    dt = 0.7 * dx
    p0 = np.sin(kappa * x)
    u = np.stack([p0, p0])
    zero = np.zeros_like(x)
    u = W.step(u, cs, dt, MO7, None, zero, dx, index=0)
    u = W.step(u, cs, dt, MO7, None, zero, dx, index=1)
    kbar = MO7.modified_wavenumber(kappa * dx) / dx
    expected = np.real(cs.amplification(kbar * dt) * np.exp(1j * kappa * x) / 1j)
    assert np.max(np.abs(u[0] - expected)) < 1e-12


def test_stored_stage_path_for_zero_coefficient():
    # a scheme with c_3 = 0 has no low-storage form and runs through the Horner path
    from rkcomplex.schemes import RKScheme
    s = RKScheme("gap", 3, 2, (1.0, 0.5, 0.0))
    x, dx, kappa = fourier_setup()
    dt = 0.3 * dx
    p0 = np.cos(kappa * x)
    new = W.step(np.stack([p0, p0]), s, dt, MO7, None, np.zeros_like(x), dx)
    kbar = MO7.modified_wavenumber(kappa * dx) / dx
    expected = np.real(s.amplification(kbar * dt) * np.exp(1j * kappa * x))
    assert np.max(np.abs(new[0] - expected)) < 1e-12


def test_zero_state_stays_zero():
    pr = WaveProblem(8)
    u = W.step(np.zeros((2, pr.n)), get_scheme("RK4"), 0.05, DRP, W.F6, pr.k(), pr.dx)
    assert np.all(u == 0)


def test_g_is_conserved():
    pr = WaveProblem(16)
    for s in (get_scheme("RK4"), get_scheme("LDDRK46")):
        u = W.integrate(pr, s, 0.04, 100, MO7, W.F6)
        assert np.max(np.abs(u[0] - u[1])) <= 1e-13 * np.max(np.abs(u[0]))


def test_exact_propagator_step():
    pr = WaveProblem(4, L=6.0, T=6.0, damping=Damping(total=3.0, start=2.0, width=2.0))
    dt = 0.25
    u = W.integrate(pr, EXACT, dt, 4, MO7, None)
    v = W.integrate(pr, EXACT, 4 * dt, 1, MO7, None)
    assert np.allclose(u, v, atol=1e-12)
    with pytest.raises(ValueError):
        W.step(pr.initial(), EXACT, dt, MO7, None, pr.k(), pr.dx)


# --- analytic solution ---------------------------------------------------------------

def test_analytic_at_time_zero():
    pr = WaveProblem(24)
    assert np.array_equal(W.analytic_solution(pr, 0.0), pr.initial())


def test_analytic_full_transit_without_damping():
    pr = WaveProblem(24, damping=Damping(total=0.0))
    # equal up to rounding in cos of arguments of a few hundred
    assert np.allclose(W.analytic_solution(pr, pr.L), pr.initial(), rtol=0, atol=1e-13)


@pytest.mark.parametrize("shape", ["tanh", "sin2"])
def test_damping_integral_closed_form(shape):
    d = Damping(shape=shape)
    L = 24.0
    for a, b in ((0.0, 13.0), (11.0, 12.5), (5.0, 30.0)):
        ref = quad(lambda s: float(d(s, L)), a, b, points=[12.0, 14.0, 36.0], limit=400)[0]
        assert d.cumulative(b, L) - d.cumulative(a, L) == pytest.approx(ref, abs=1e-10)
    assert d.cumulative(L + 3.0, L) - d.cumulative(3.0, L) == pytest.approx(6.0, abs=1e-12)


@pytest.mark.parametrize("shape", ["tanh", "sin2"])
def test_packet_decays_by_e_minus_6(shape):
    pr = WaveProblem(24, damping=Damping(shape=shape))
    t = 16.0
    x = pr.x
    ua = W.analytic_solution(pr, t)
    free = W.analytic_solution(WaveProblem(24, damping=Damping(total=0.0)), t)
    # points that started before the damping region and have passed it
    sel = (x > 18.0) & (x < 22.0) & (np.abs(free[0]) > 1e-3)
    ratio = ua[0][sel] / free[0][sel]
    assert np.max(np.abs(ratio - math.exp(-6))) < 1e-12


def test_unsupported_problem_shapes():
    with pytest.raises(ValueError):
        Damping(shape="box")
    with pytest.raises(W.SizeError):
        WaveProblem(7, L=24.1).n


# --- benchmark -----------------------------------------------------------------------------

def test_snap_dt():
    assert W.snap_dt(24.0, 0.1) == (0.1, 240)
    dt, n = W.snap_dt(24.0, 0.07)
    assert n == 343 and dt == 24.0 / 343
    assert W.snap_dt(24.0, 100.0) == (24.0, 1)
    with pytest.raises(ValueError):
        W.snap_dt(24.0, 0.0)


def test_effort_is_exact():
    pr = WaveProblem(24)
    assert W.effort(get_scheme("RK4"), MO7, pr, 240) == 4 * 3 * 240 * 576
    e = W.effort(get_scheme("LDDRK46"), MO7, pr, 240)
    assert isinstance(e, Fraction) and e == 5 * 3 * 240 * 576
    e = W.effort(get_scheme("LDDRK56"), DRP, pr, 7)
    assert e == Fraction(11, 2) * 3 * 7 * 576


def test_benchmark_fields_and_cfl():
    pr = WaveProblem(16)
    r = W.run_benchmark(pr, get_scheme("RK4"), 0.07, MO7, W.F6)
    assert r.cfl == pr.ppw * r.dt
    assert r.dt == 24.0 / round(24.0 / 0.07)
    assert r.stable and 0 < r.error < 1
    assert r.effort == float(W.effort(get_scheme("RK4"), MO7, pr, round(24.0 / 0.07)))


def test_diverged_run_is_recorded():
    pr = WaveProblem(16)
    r = W.run_benchmark(pr, get_scheme("RK4"), 5.0 / 16, MO7, W.F6)
    assert not r.stable
    assert r.error >= W.DIVERGED_ERROR or r.error == math.inf


def test_sweep_ordering():
    pr = WaveProblem(8)
    assert W.sweep(pr, [get_scheme("RK4")], [], DRP, W.F6) == []
    res = W.sweep(pr, [get_scheme("RK4"), get_scheme("LDDRK46")], [0.05, 0.2, 0.1, 0.1], DRP, W.F6)
    assert [r.scheme for r in res] == ["RK4"] * 3 + ["LDDRK46"] * 3
    assert [r.dt for r in res[:3]] == sorted((r.dt for r in res[:3]), reverse=True)
    assert all(r.cfl == 8 * r.dt for r in res)


def test_sweep_across_stability_boundary():
    pr = WaveProblem(8)
    res = W.sweep(pr, [get_scheme("RK4")], [c / 8 for c in (6.0, 4.0, 2.0, 1.0, 0.5)], DRP, W.F6)
    flags = [r.stable for r in res]
    # once stable, every smaller dt is stable too
    assert flags[0] is False and flags[-1] is True
    assert flags == sorted(flags)


def test_dispersion_error_decreases_with_ppw():
    errs = []
    for ppw in (16, 24, 32):
        pr = WaveProblem(ppw, L=12.0, T=12.0, damping=Damping(total=0.0))
        errs.append(W.run_benchmark(pr, EXACT, 12.0, W.maximal_stencil(3), None).error)
    assert errs[0] > errs[1] > errs[2] > 0


def test_rk4_converges_at_fourth_order():
    pr = WaveProblem(24)
    rk4 = get_scheme("RK4")
    floor = W.run_benchmark(pr, rk4, 0.1 / 24, MO7, W.F6).error
    cfls = np.array([1.2, 1.0, 0.8, 0.6])
    errs = np.array([W.run_benchmark(pr, rk4, c / 24, MO7, W.F6).error for c in cfls])
    assert np.all(errs > 3 * floor)
    slope = np.polyfit(np.log(cfls), np.log(errs - floor), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.3)


def test_filter_rate_per_unit_time():
    f = W.effective_filter(W.F6, 0.25)
    assert f.sigma == 0.25
    assert W.effective_filter(W.F6, 2.0).sigma == 1.0
    assert W.effective_filter(W.F6, 0.25, None) is W.F6
    assert W.effective_filter(None, 0.25) is None
