"""Volume-normalized loss assembly."""

import numpy as np
import pytest

from xvapinn import loss, models, reference
from xvapinn.autodiff import JetBatch
from xvapinn.errors import ContractError, NumericError
from xvapinn.geometry import (
    INTERIOR,
    INITIAL,
    CollocationSet,
    Region,
    build_grid_1d,
    min_face,
    max_face,
)
from xvapinn.network import Architecture, init, param_count

from conftest import scaled_bs1d_arch, table1_spec


def risk_free_put():
    return models.bs1d(
        alpha=models.PUT, strike=15.0, maturity=5.0, sigma=0.25, repo_rate=0.015,
        xva=models.XvaParams.with_funding_rule(0.0, 0.0, 0.4, 0.4, 0.03),
    )


def zero_net(arch_spec, layers=1, width=4):
    arch = scaled_bs1d_arch(arch_spec, layers, width)
    params = init(arch, 0)
    return params.from_flat(np.zeros(param_count(arch)))


class TestAssemble:
    def test_zero_network_initial_term_hand_value(self):
        # N_S = 2 grid: trapezoid weights (15, 30, 15), payoff (15, 0, 0),
        # normalized by |Omega| = 60
        spec = risk_free_put()
        grid = build_grid_1d(spec.domain, 2, 2)
        breakdown = loss.assemble(spec, zero_net(spec), grid)
        assert breakdown[INITIAL] == pytest.approx(56.25, abs=1e-12)

    def test_total_is_sum_of_regions(self):
        spec = table1_spec(lambda_b=0.04)
        grid = build_grid_1d(spec.domain, 6, 7)
        params = init(scaled_bs1d_arch(spec, 2, 6), 3)
        breakdown = loss.assemble(spec, params, grid)
        assert breakdown.total == pytest.approx(sum(breakdown.regions.values()), abs=1e-12)
        assert all(v >= 0 for v in breakdown.regions.values())

    def test_analytic_field_annihilates_all_terms_with_wide_truncation(self):
        spec = models.bs1d(
            alpha=models.PUT, strike=15.0, maturity=5.0, sigma=0.25, repo_rate=0.015,
            xva=table1_spec(0.04).xva, s_max=16 * 15.0,
        )
        grid = build_grid_1d(spec.domain, 40, 44)
        breakdown = loss.assemble_field(
            spec, lambda pts: reference.risky_bs_jets(pts[:, 0], pts[:, 1], spec), grid
        )
        for name, term in breakdown.regions.items():
            assert term <= 1e-10, (name, term)

    def test_analytic_field_at_experiment_truncation(self):
        # at S_max = 4K the upper-boundary term equals the truncation
        # quantity (sig^2 S^2 / 2 * gamma)^2 left by the linearity condition
        spec = table1_spec(lambda_b=0.04)
        grid = build_grid_1d(spec.domain, 40, 44)
        breakdown = loss.assemble_field(
            spec, lambda pts: reference.risky_bs_jets(pts[:, 0], pts[:, 1], spec), grid
        )
        for name in (INTERIOR, min_face("S"), INITIAL):
            assert breakdown[name] <= 1e-10
        region = grid.region(max_face("S"))
        t = region.points[:, 0]
        _, gamma = reference.risky_bs_greeks(t, region.points[:, 1], spec)
        leftover = 0.5 * 0.25**2 * 60.0**2 * gamma
        want = float(np.dot(region.weights, leftover**2)) / region.volume
        assert breakdown[max_face("S")] == pytest.approx(want, rel=1e-12)
        assert breakdown[max_face("S")] <= 1e-4

    def test_empty_region_contributes_zero(self):
        spec = risk_free_put()
        grid = build_grid_1d(spec.domain, 3, 3)
        empty = Region(
            name=INITIAL,
            points=np.empty((0, 2)),
            weights=np.empty(0),
            volume=60.0,
            tiled_measure=0.0,
        )
        regions = dict(grid.regions)
        regions[INITIAL] = empty
        patched = CollocationSet(domain=grid.domain, regions=regions, steps=grid.steps)
        breakdown = loss.assemble(spec, zero_net(spec), patched)
        assert breakdown[INITIAL] == 0.0

    def test_gradient_run_matches_plain_run_bit_for_bit(self):
        spec = table1_spec(lambda_b=0.06)
        grid = build_grid_1d(spec.domain, 5, 6)
        params = init(scaled_bs1d_arch(spec, 2, 5), 9)
        plain = loss.assemble(spec, params, grid)
        tracked, grad = loss.assemble_with_gradient(spec, params, grid)
        assert tracked.total == plain.total
        assert tracked.regions == plain.regions
        assert grad.shape == (param_count(params.arch),)

    def test_constant_network_interior_gradient_hand_value(self):
        # zero weights leave u == c (output bias); the only nonzero gradient
        # component is d/dc of each term
        spec = table1_spec(lambda_b=0.1)
        grid = build_grid_1d(spec.domain, 4, 4)
        params = zero_net(spec)
        c = 2.0
        flat = params.flatten()
        flat[-1] = c
        params = params.from_flat(flat)
        x = spec.xva
        up = x.lambda_c * (1.0 - x.recovery_c) + x.funding_spread

        interior_only = {INTERIOR: 1.0, min_face("S"): 0.0, max_face("S"): 0.0, INITIAL: 0.0}
        breakdown, grad = loss.assemble_with_gradient(
            spec, params, grid, lambda_hat=interior_only
        )
        region = grid.region(INTERIOR)
        resid = x.rate * c + models.source_term(c, x)
        dresid = x.rate + up
        want = 2.0 * resid * dresid * region.weights.sum() / region.volume
        assert grad[-1] == pytest.approx(want, rel=1e-12)
        assert np.allclose(np.delete(grad, -1), 0.0)

        full_breakdown, full_grad = loss.assemble_with_gradient(spec, params, grid)
        assert full_grad[-1] != 0.0  # initial region pulls as well

    def test_residual_scaling_is_quadratic(self):
        # with a vanishing payoff every residual is positively homogeneous in
        # the field, so scaling the output weights scales the total by c^2
        xva = models.XvaParams.with_funding_rule(0.03, 0.02, 0.4, 0.4, 0.03)
        spec = models.bs1d(alpha=models.CALL, strike=60.0, maturity=5.0, sigma=0.25,
                           repo_rate=0.015, xva=xva, s_max=60.0)
        grid = build_grid_1d(spec.domain, 5, 5)
        params = init(scaled_bs1d_arch(spec, 2, 6), 31)
        base = loss.assemble(spec, params, grid).total
        c = 3.0
        scaled_weights = [w.copy() for w in params.weights]
        scaled_biases = [b.copy() for b in params.biases]
        scaled_weights[-1] = c * scaled_weights[-1]
        scaled_biases[-1] = c * scaled_biases[-1]
        scaled = params.__class__(
            arch=params.arch, weights=scaled_weights, biases=scaled_biases, seed=params.seed
        )
        assert loss.assemble(spec, scaled, grid).total == pytest.approx(
            c * c * base, rel=1e-12
        )

    def test_refinement_changes_terms_by_quadrature_error_only(self):
        # a smooth synthetic field: refining the grid perturbs each term by
        # the quadrature error, never by a volume-scale jump.  The initial
        # slice tiles its whole region and converges at second order; the
        # other regions' lattices omit an O(h) band (their index ranges start
        # at i = 1), so their error contracts at first order.
        spec = table1_spec(lambda_b=0.02)

        def field(pts):
            t, s = pts[:, 0], pts[:, 1]
            w = np.pi / 60.0
            return JetBatch(
                val=np.sin(t) * np.cos(w * s),
                dt=np.cos(t) * np.cos(w * s),
                dx=[-w * np.sin(t) * np.sin(w * s)],
                dxx_pairs=[-w * w * np.sin(t) * np.cos(w * s)],
                dim=1,
            )

        terms = [
            loss.assemble_field(spec, field, build_grid_1d(spec.domain, n, n)).regions
            for n in (24, 48, 96)
        ]
        for name in terms[0]:
            step1 = abs(terms[1][name] - terms[0][name])
            step2 = abs(terms[2][name] - terms[1][name])
            assert step1 <= 0.16 * terms[0][name]  # no volume-scale jumps
            ratio = step1 / step2
            if name == INITIAL:
                assert 3.0 <= ratio <= 5.0  # O(h^2)
            else:
                assert 1.6 <= ratio <= 4.7  # at least O(h)

    def test_region_mismatch_rejected(self):
        spec = table1_spec()
        basket_grid = models.build_grid(
            models.basket_average(
                alpha=models.PUT, strike=50.0, maturity=1.0, sigma1=0.25, sigma2=0.15,
                repo_rate1=0.015, repo_rate2=0.022, corr=-0.65, xva=spec.xva,
            ),
            {"t": 3, "S1": 3, "S2": 3},
        )
        with pytest.raises(ContractError):
            loss.assemble(spec, zero_net(spec), basket_grid)

    def test_non_finite_residual_reports_region_and_index(self):
        spec = table1_spec()
        grid = build_grid_1d(spec.domain, 3, 3)
        params = init(scaled_bs1d_arch(spec, 1, 4), 2)
        params.weights[0][0, 0] = np.inf
        with pytest.raises(NumericError) as err:
            loss.assemble(spec, params, grid)
        assert err.value.region is not None
        assert err.value.index is not None

    def test_lambda_hat_override_reweights(self):
        spec = table1_spec(lambda_b=0.04)
        grid = build_grid_1d(spec.domain, 4, 4)
        params = init(scaled_bs1d_arch(spec, 1, 4), 7)
        plain = loss.assemble(spec, params, grid)
        boosted = loss.assemble(spec, params, grid, lambda_hat={INITIAL: 10.0})
        assert boosted[INITIAL] == pytest.approx(10.0 * plain[INITIAL], rel=1e-12)
        assert boosted[INTERIOR] == plain[INTERIOR]


class TestTrajectoryIo:
    def test_round_trip(self, tmp_path):
        rows = [
            {"step": 0, "total": 1.5, "lr": 1e-3,
             "regions": {"interior": 1.0, "initial": 0.5}},
            {"step": 100, "total": 0.25, "lr": 9e-4,
             "regions": {"interior": 0.2, "initial": 0.05}},
        ]
        path = tmp_path / "trajectory.csv"
        loss.write_trajectory(path, rows, ["interior", "initial"])
        back = loss.read_trajectory(path)
        assert back == rows
