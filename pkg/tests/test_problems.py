import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stefan_pinn import autodiff as ad
from stefan_pinn.batched import BatchedLoss
from stefan_pinn.network import glorot_init, set_params
from stefan_pinn.problems import (
    REGISTRY, ProblemError, ProblemId, blend_two_phase, build_losses, domain_mask, exact_boundary,
    exact_latents, exact_solution, get_problem, normal_derivative_2d, stefan_velocity_residual,
    total_loss,
)
from stefan_pinn.sampling import draw_batches, make_rng, sample_measurements

TRUE_K = {"k1": 2.0, "k2": 1.0}


def _batches(pid, n=16, seed=0):
    spec = get_problem(pid)
    ds = sample_measurements(pid, 20, 0.0, seed=1) if spec.id.uses_data else None
    return draw_batches(spec, make_rng(seed), n, ds)


# -- registry -------------------------------------------------------------------

def test_registry_has_ten_variants():
    assert len(REGISTRY) == 10
    assert "1d2p:inv2k" in REGISTRY and "2d1p:inv2k" not in REGISTRY


@pytest.mark.parametrize("bad", ["2d1p:inv2k", "3d1p:direct", "1d1p", ""])
def test_unknown_problem_rejected(bad):
    with pytest.raises(ProblemError):
        ProblemId.parse(bad)


def test_constants():
    assert get_problem("1d2p:direct").constants == TRUE_K
    assert get_problem("1d2p:inv2k").constants == {"k1": 0.1, "k2": 0.1}
    assert get_problem("1d2p:inv2k").trainable == ("k1", "k2")
    assert not get_problem("1d1p:inv1").learn_boundary


# -- closed forms -------------------------------------------------------------------

def test_exact_solution_examples():
    assert exact_solution("1d1p:direct", (0.5, 0.5)) == pytest.approx(-0.125, abs=1e-15)
    u, (u1, u2) = exact_solution("1d2p:direct", (0.5, 0.5))
    assert u1 == pytest.approx(0.568051, abs=1e-6)
    assert u == u1
    assert exact_solution("2d1p:direct", (0.5, 0.5, 0.0)) == pytest.approx(0.284025, abs=1e-6)


def test_exact_boundary_examples():
    assert exact_boundary("1d1p:direct", 0.0) == pytest.approx(0.267949, abs=1e-6)
    assert exact_boundary("1d2p:direct", 0.5) == 1.0
    assert exact_boundary("2d1p:direct", (0.5, 0.4)) == pytest.approx(1.25, abs=1e-15)
    with pytest.raises(ProblemError):
        exact_boundary("2d1p:direct", (0.5,))


def test_blend_two_phase():
    assert blend_two_phase(1.0, 2.0, 0.5, 0.2) == 1.0
    assert blend_two_phase(1.0, 2.0, 0.5, 0.7) == 2.0
    assert blend_two_phase(1.0, 2.0, 0.5, 0.5) == 1.0
    x = ad.variable("x")
    e = blend_two_phase(ad.constant(1.0), ad.constant(2.0), ad.constant(0.5), x)
    assert ad.evaluate(e, {"x": 0.5}) == 1.0 and ad.evaluate(e, {"x": 0.51}) == 2.0


@given(st.floats(0, 1))
def test_exact_phases_continuous_across_interface(t):
    spec = get_problem("1d2p:direct")
    u1, u2 = spec.exact_phases(t + 0.5, t)
    assert abs(u1) < 1e-15 and abs(u2) < 1e-15


def test_normal_derivative_examples():
    assert normal_derivative_2d(0.7, 3.0, 0.0) == 0.7
    assert normal_derivative_2d(0.0, 0.0, 5.0) == 0.0


@given(st.floats(0, 1), st.floats(0, 1))
def test_two_dimensional_interface_flux(y, t):
    s = 0.5 * y + 1.25 * t + 0.5
    u = math.exp(1.25 * t - s + 0.5 * y + 0.5)  # == 1 on the interface
    flux = normal_derivative_2d(-u, 0.5 * u, 0.5)
    assert flux == pytest.approx(-math.sqrt(5) / 2, abs=1e-10)
    # the interface speed term written from the level set x - s(y, t)
    assert flux + 1.25 / math.sqrt(1.25) == pytest.approx(0.0, abs=1e-10)


def test_stefan_velocity_residual_examples():
    assert stefan_velocity_residual(-1.0, -1.0, 1.0) == 0.0
    assert stefan_velocity_residual(0.0, 0.0, 1.0) == 1.0
    assert stefan_velocity_residual(1.0, 0.0, 2.0) == 4.0


def test_domain_mask_examples():
    s = [exact_boundary("1d1p:direct", 0.1), exact_boundary("1d1p:direct", 0.9)]
    assert s[0] == pytest.approx(2 - math.sqrt(2.8), abs=1e-15) and s[1] == pytest.approx(0.905, abs=1e-3)
    pts = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert domain_mask("1d1p:direct", pts, np.array(s)).tolist() == [False, True]
    assert domain_mask("1d2p:direct", pts, np.zeros(2)).all()


# -- exact solutions satisfy the equations ------------------------------------------

def _derivs(expr, names):
    return ad.vectorize([expr] + [ad.differentiate(expr, n) for n in names], names)


def test_heat_residuals_vanish_at_random_points():
    rng = np.random.default_rng(0)
    x, y, t = ad.variable("x"), ad.variable("y"), ad.variable("t")
    cases = [
        ("1d1p:direct", [x, t], 1.0, 0),
        ("1d2p:direct", [x, t], 2.0, 0),
        ("1d2p:direct", [x, t], 1.0, 1),
        ("2d1p:direct", [x, y, t], 1.0, 0),
    ]
    for pid, ins, k, phase in cases:
        spec = get_problem(pid)
        u = ad._as_expr(spec.exact_phases(*ins)[phase])
        names = spec.coords
        second = [ad.differentiate(ad.differentiate(u, c), c) for c in names if c != "t"]
        lap = second[0] if len(second) == 1 else second[0] + second[1]
        res = ad.differentiate(u, "t") - k * lap
        pts = rng.uniform(spec.box.lo, spec.box.hi, size=(1000, len(names)))
        (vals,) = ad.vectorize([res], names)(*pts.T)
        assert np.max(np.abs(vals)) < 1e-10, pid


# -- loss assembly ------------------------------------------------------------------------

@pytest.mark.parametrize("pid", REGISTRY)
def test_exact_closed_forms_zero_every_loss(pid):
    spec = get_problem(pid)
    consts = TRUE_K if spec.trainable else None
    losses = build_losses(pid, exact_latents(pid), consts, _batches(pid))
    assert set(losses) == set(spec.loss_names)
    for name, e in losses.items():
        assert ad.evaluate(e, {}) < 1e-12, name


def test_wrong_diffusivity_is_penalised():
    losses = build_losses("1d2p:inv2k", exact_latents("1d2p:inv2k"), None, _batches("1d2p:inv2k"))
    assert ad.evaluate(losses["r1"], {}) > 1e-3


def test_zero_network_initial_loss_is_batch_mean():
    spec = get_problem("1d1p:direct")
    b = _batches("1d1p:direct")
    zero = lambda ins: [ad.constant(0.0)]
    losses = build_losses("1d1p:direct", {"u": zero, "s": exact_latents("1d1p:direct")["s"]}, None, b)
    x = b["initial"]["x"]
    assert ad.evaluate(losses["u0"], {}) == pytest.approx(np.mean((-x ** 2 / 2 + 2 * x - 0.5) ** 2),
                                                          rel=1e-14)


def test_missing_network_or_batch():
    b = _batches("1d1p:direct")
    with pytest.raises(ProblemError):
        build_losses("1d1p:direct", {"s": exact_latents("1d1p:direct")["s"]}, None, b)
    with pytest.raises(ProblemError):
        build_losses("1d1p:direct", exact_latents("1d1p:direct"), None,
                     {k: v for k, v in b.items() if k != "interface"})


def test_weights_scale_terms():
    lat = exact_latents("1d1p:direct")
    zero = {"u": lambda ins: [ad.constant(0.0)], "s": lat["s"]}
    b = _batches("1d1p:direct")
    plain = build_losses("1d1p:direct", zero, None, b)
    weighted = build_losses("1d1p:direct", zero, None, b, {"u0": 3.0})
    assert ad.evaluate(weighted["u0"], {}) == pytest.approx(3 * ad.evaluate(plain["u0"], {}))
    assert ad.evaluate(weighted["uNc"], {}) == ad.evaluate(plain["uNc"], {})


# -- the batched engine agrees with the expression graph ----------------------------------

@pytest.mark.parametrize("pid", REGISTRY)
def test_batched_engine_matches_expression_graph(pid):
    spec = get_problem(pid)
    ds = sample_measurements(pid, 6, 0.05, seed=1) if spec.id.uses_data else None
    b = draw_batches(spec, make_rng(0), 4, ds)
    u = glorot_init(1, [len(spec.coords), 5, 5, len(spec.u_outputs)])
    u = set_params(u, u.params + 0.1 * np.random.default_rng(2).standard_normal(u.n_params))
    s = glorot_init(2, [len(spec.s_coords), 5, 5, 1])
    s = set_params(s, s.params + np.r_[np.zeros(s.n_params - 1), 0.6])
    cvals = {k: 0.7 + i for i, k in enumerate(spec.trainable)}
    w = {n: 1.0 + 0.1 * i for i, n in enumerate(spec.loss_names)}

    losses = build_losses(pid, {"u": u, "s": s}, {k: ad.variable(k) for k in spec.trainable}, b, w)
    tot = total_loss(losses)
    bind = {("u", i): v for i, v in enumerate(u.params)}
    wrt = [("u", i) for i in range(u.n_params)]
    if spec.learn_boundary:
        bind.update({("s", i): v for i, v in enumerate(s.params)})
        wrt += [("s", i) for i in range(s.n_params)]
    bind.update(cvals)
    wrt += list(spec.trainable)
    grad = np.array(ad.gradient(tot, wrt, bind))

    ev = BatchedLoss(spec)(u, s, cvals, b, w, want_group_grads=True)
    assert ev.total == pytest.approx(ad.evaluate(tot, bind), rel=1e-12)
    for name, e in losses.items():
        assert ev.losses[name] == pytest.approx(ad.evaluate(e, bind) / w[name], rel=1e-12, abs=1e-300)
    assert np.allclose(ev.grad, grad, rtol=1e-10, atol=1e-12 * np.abs(grad).max())
    assert np.allclose(sum(ev.group_grads.values()), ev.grad, rtol=1e-12, atol=1e-14)
