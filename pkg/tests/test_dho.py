import numpy as np
import pytest

from pings import autodiff as ad
from pings.dho import (EVAL_POINTS, DhoBatch, DhoConfig, DhoSampler, analytic_dual, analytic_solution, curves,
                       dho_losses, evaluate_mse, evaluation_grid, predict, train_dho)
from pings.nn import DHO_SPEC, ParamStore, xavier_init
from pings.rng import SeededRng

from helpers import gradient_error, rk4_dho, tiny_params

SMALL = (2, 6, 6, 1)


def batch(n_ic=8, n_r=12, seed=0):
    rng = SeededRng(seed, "dho-test")
    return DhoBatch(xi_ic=rng.uniform(0.1, 0.4, n_ic), z_r=rng.uniform(0, 20, n_r), xi_r=rng.uniform(0.1, 0.4, n_r))


class TestAnalytic:
    @pytest.mark.parametrize("xi", [0.1, 0.25, 0.4, 0.9])
    def test_initial_conditions(self, xi):
        assert analytic_solution(0.0, xi) == pytest.approx(0.7, abs=1e-15)
        h = 1e-4
        f0, f1, f2 = (analytic_solution(k * h, xi) for k in range(3))
        # second-order one-sided difference (z < 0 is outside the domain)
        assert (-3 * f0 + 4 * f1 - f2) / (2 * h) == pytest.approx(1.2, abs=1e-6)

    def test_rk4_oracle(self):
        assert analytic_solution(1.0, 0.2) == pytest.approx(rk4_dho(0.2, 1.0), abs=1e-8)

    def test_satisfies_ode_on_grid(self):
        z = np.linspace(0.5, 19.5, 200)
        h = 1e-4
        for xi in (0.1, 0.3):
            x = analytic_solution(z, xi)
            xp, xm = analytic_solution(z + h, xi), analytic_solution(z - h, xi)
            res = (xp - 2 * x + xm) / h ** 2 + 2 * xi * (xp - xm) / (2 * h) + x
            assert np.abs(res).max() <= 1e-6

    def test_clamp_near_critical(self):
        assert np.isfinite(analytic_solution(np.linspace(0, 20, 50), 1 - 1e-9)).all()

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            analytic_solution(1.0, 1.0)
        with pytest.raises(ValueError):
            analytic_solution(-1.0, 0.2)


class TestLosses:
    def test_constant_network(self):
        p = ParamStore([np.zeros((4, 2)), np.zeros((1, 4))], [np.zeros(4), np.array([0.7])])
        tape = ad.Tape()
        l_val, l_der, l_res = dho_losses(p.on_tape(tape), batch())
        assert float(l_val.value) == pytest.approx(0.0, abs=1e-30)
        assert float(l_der.value) == pytest.approx(1.44, abs=1e-14)
        assert float(l_res.value) == pytest.approx(0.49, abs=1e-14)

    def test_analytic_solution_through_loss_assembly(self):
        tape = ad.Tape()
        l_val, l_der, l_res = dho_losses(analytic_dual(tape), batch(n_ic=50, n_r=500))
        assert float(l_val.value) <= 1e-28
        assert float(l_der.value) <= 1e-28
        assert float(l_res.value) <= 1e-10

    def test_derivatives_match_finite_differences(self):
        p = tiny_params(SMALL, seed=2)
        b = batch()
        x = np.column_stack([b.z_r, b.xi_r])
        tape = ad.Tape()
        d = ad.forward_with_input_derivatives(p.on_tape(tape), x, [1.0, 0.0], order=2)
        h = 1e-4
        f = lambda dz: predict(p, b.z_r + dz, b.xi_r)[:, None]
        np.testing.assert_allclose(d.d1.value, (f(h) - f(-h)) / (2 * h), atol=1e-5)
        np.testing.assert_allclose(d.d2.value, (f(h) - 2 * f(0) + f(-h)) / h ** 2, atol=1e-5)

    @pytest.mark.parametrize("term", [0, 1, 2])
    def test_parameter_gradients(self, term):
        p = tiny_params(SMALL, seed=4)
        b = batch(seed=1)
        assert gradient_error(p, lambda layers: dho_losses(layers, b)[term]) <= 1e-5


class TestConfig:
    def test_defaults(self):
        c = DhoConfig()
        assert (c.n_ic, c.n_r, c.epochs, c.patience, c.seed) == (100, 2000, 20000, 1500, 42)
        assert c.layer_dims == DHO_SPEC.layer_dims
        assert (c.lr, c.lr_gamma, c.lr_interval) == (1e-3, 0.99, 1000)

    @pytest.mark.parametrize("kw", [dict(xi_high=1.0), dict(xi_low=0.0), dict(z_high=0.0), dict(layer_dims=(3, 1))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DhoConfig(**kw)

    def test_sampler_ranges(self):
        b = DhoSampler(DhoConfig()).next()
        assert b.xi_ic.shape == (100,) and b.z_r.shape == (2000,)
        assert b.z_r.min() >= 0 and b.z_r.max() <= 20
        assert b.xi_r.min() >= 0.1 and b.xi_r.max() <= 0.4


class TestTrainingAndEvaluation:
    def test_smoke_and_determinism(self):
        cfg = DhoConfig(epochs=3, layer_dims=SMALL, n_r=64, n_ic=16)
        a, b = train_dho(cfg), train_dho(cfg)
        assert a.epochs_run == 3
        assert a.params.equal(b.params)
        assert a.log == b.log

    def test_loss_decreases(self):
        r = train_dho(DhoConfig(epochs=150, layer_dims=SMALL, n_r=200, n_ic=50, lr=1e-2))
        assert r.best_loss < r.log[0]["total"] / 5

    def test_evaluation_grid(self):
        z = evaluation_grid()
        assert z.size == EVAL_POINTS == 5000
        assert z[0] == 0.0 and z[-1] == 20.0

    def test_mse_deterministic(self):
        p = xavier_init(DHO_SPEC, SeededRng(0))
        assert evaluate_mse(p, 0.2) == evaluate_mse(p, 0.2)

    def test_curves(self):
        p = xavier_init(DHO_SPEC, SeededRng(0))
        c = curves(p)
        assert sorted(c) == [0.1, 0.2, 0.3, 0.4]
        z, pred, exact = c[0.3]
        assert z.shape == pred.shape == exact.shape == (5000,)
        assert np.mean((pred - exact) ** 2) == evaluate_mse(p, 0.3)
