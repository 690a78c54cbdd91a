import numpy as np
import pytest

from zrp_diffusion.chain import build_chain
from zrp_diffusion.errors import EmptyConfig, HorizonOverflow, ValidationError
from zrp_diffusion.zrp import (ZrpState, default_rates, embed, event_rate, initial_configuration,
                               simulate_zrp, simulate_zrp_ensemble, table_rates)

GRID = np.linspace(0.0, 0.2, 11)


def test_default_rates(complete3):
    g = default_rates(complete3)
    np.testing.assert_allclose(g.rates([1, 0, 3]), [2 / 3, 0, (1 / 3) * (4 / 3)])
    np.testing.assert_allclose(g.tail_residuals([1, 10, 1000]), 0, atol=1e-12)


def test_table_rates_extrapolate_the_tail(two_site):
    table = [[0.0, 1.0, 0.9], [0.0, 2.0, 1.5]]
    g = table_rates(two_site, table)
    np.testing.assert_allclose(g.rates([2, 1]), [0.9, 2.0])
    np.testing.assert_allclose(g.rates([0, 5]), [0.0, two_site.m[1] * (1 + 1 / 5)])
    residuals = g.tail_residuals([1, 2, 50])
    assert residuals.shape == (2, 3)
    np.testing.assert_allclose(residuals[:, 2], 0, atol=1e-12)
    assert residuals[0, 0] == pytest.approx(1 * (1.0 / two_site.m[0] - 1) - 1)


@pytest.mark.parametrize("table", [
    [[1.0, 1.0], [0.0, 1.0]],
    [[0.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0]],
])
def test_table_rates_validation(two_site, table):
    with pytest.raises(ValidationError):
        table_rates(two_site, table)


def test_embed():
    np.testing.assert_allclose(embed(ZrpState(np.array([2, 1, 1]))), [0.5, 0.25, 0.25])
    np.testing.assert_array_equal(embed(ZrpState(np.array([0, 7, 0]))), [0, 1, 0])
    with pytest.raises(EmptyConfig):
        embed(ZrpState(np.zeros(3, dtype=int)))


def test_state_rejects_negative_counts():
    with pytest.raises(ValidationError):
        ZrpState(np.array([1, -1]))


def test_initial_configuration_largest_remainder():
    np.testing.assert_array_equal(initial_configuration([1 / 3, 1 / 3, 1 / 3], 10).eta, [4, 3, 3])
    np.testing.assert_array_equal(initial_configuration([0.25, 0.25, 0.5], 8).eta, [2, 2, 4])
    eta = initial_configuration([0.123, 0.456, 0.421], 97).eta
    assert eta.sum() == 97


def test_all_particles_on_one_site(complete3):
    path = simulate_zrp(complete3, default_rates(complete3), ZrpState(np.array([0, 0, 20])),
                        0.2, GRID, seed=1)
    np.testing.assert_array_equal(path.points[0], [0, 0, 1])


def test_paths_live_on_the_discrete_simplex(cycle4):
    n = 30
    ens = simulate_zrp_ensemble(cycle4, default_rates(cycle4),
                                initial_configuration([0.25] * 4, n), 0.2, GRID, seed=3,
                                replicas=8, threads=2)
    assert ens.points.shape == (8, GRID.size, 4)
    np.testing.assert_allclose(ens.points.sum(axis=2), 1, atol=1e-12)
    counts = ens.points * n
    np.testing.assert_allclose(counts, np.round(counts), atol=1e-9)
    assert np.all(ens.points >= 0)


def test_fixed_seed_is_bit_identical(complete3):
    args = (complete3, default_rates(complete3), initial_configuration([0.5, 0.3, 0.2], 40),
            0.2, GRID)
    a = simulate_zrp(*args, seed=9)
    b = simulate_zrp(*args, seed=9)
    np.testing.assert_array_equal(a.points, b.points)
    assert a.events == b.events


def test_ensemble_does_not_depend_on_threads(complete3):
    args = (complete3, default_rates(complete3), initial_configuration([0.5, 0.3, 0.2], 25),
            0.1, GRID[:6])
    one = simulate_zrp_ensemble(*args, seed=4, replicas=6, threads=1)
    many = simulate_zrp_ensemble(*args, seed=4, replicas=6, threads=3)
    np.testing.assert_array_equal(one.points, many.points)
    single = simulate_zrp(*args, seed=4, replica=5)
    np.testing.assert_array_equal(single.points, one.points[5])


def test_event_count_envelope(complete3):
    n, horizon = 40, 0.2
    eta0 = initial_configuration([1 / 3] * 3, n)
    g = default_rates(complete3)
    ens = simulate_zrp_ensemble(complete3, g, eta0, horizon, GRID, seed=2, replicas=10, threads=1)
    expected = n ** 2 * horizon * event_rate(complete3, g, eta0.eta)
    assert 0.1 * expected < ens.events.mean() < 10 * expected


def test_horizon_overflow(complete3):
    with pytest.raises(HorizonOverflow):
        simulate_zrp(complete3, default_rates(complete3), initial_configuration([1 / 3] * 3, 50),
                     0.2, GRID, seed=0, max_events=10)


def test_empty_configuration(complete3):
    with pytest.raises(EmptyConfig):
        simulate_zrp(complete3, default_rates(complete3), ZrpState(np.zeros(3, dtype=int)),
                     0.2, GRID, seed=0)


def test_grid_outside_horizon(complete3):
    with pytest.raises(ValidationError):
        simulate_zrp(complete3, default_rates(complete3), ZrpState(np.array([1, 1, 1])),
                     0.1, GRID, seed=0)


def test_single_particle_occupation(two_site):
    # one particle jumps i -> j at rate g_i(1) r(i,j)
    g = default_rates(two_site)
    walk = build_chain(g.rates([1, 1])[:, None] * two_site.r)
    horizon = 200.0
    grid = np.arange(0.0, horizon, 0.5)
    ens = simulate_zrp_ensemble(two_site, g, ZrpState(np.array([1, 0])), horizon, grid, seed=17,
                                replicas=50, threads=2)
    per_replica = ens.points[:, 20:, 0].mean(axis=1)
    se = per_replica.std(ddof=1) / np.sqrt(per_replica.size)
    assert abs(per_replica.mean() - walk.m[0]) < 4 * se + 1e-3
