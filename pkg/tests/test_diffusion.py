import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zrp_diffusion.chain import random_chain
from zrp_diffusion.diffusion import (DiffusionControls, FaceCache, absorption_bound,
                                     absorption_bound_min, em_step, face_dynamics,
                                     face_generator_apply, generator_values, separation,
                                     simulate_diffusion, simulate_diffusion_ensemble,
                                     support_masks)
from zrp_diffusion.errors import (BadQ, DegenerateFace, NonFiniteDrift, StepUnderflow,
                                  ValidationError)
from zrp_diffusion.testfunctions import Polynomial
from zrp_diffusion.trace import face_mask

CONTROLS = DiffusionControls(dt_base=1e-3, eps_abs=1e-4)


def test_full_face_matches_coefficient_matrix(cycle4):
    dyn = face_dynamics(cycle4, range(4))
    a = cycle4.a
    np.testing.assert_allclose(dyn.covariance / 2, (a + a.T) / 2, atol=1e-12)


def test_two_site_face_drift(complete3):
    dyn = face_dynamics(complete3, (0, 1))
    x = np.array([0.4, 0.6, 0.0])
    expected = (1 / 3) * 1.5 / 0.4 * np.array([-1, 1, 0]) + (1 / 3) * 1.5 / 0.6 * np.array([1, -1, 0])
    np.testing.assert_allclose(dyn.drift(x)[0], expected, atol=1e-12)


def test_two_site_face_noise_has_rank_one(complete3):
    dyn = face_dynamics(complete3, (0, 1))
    assert np.linalg.matrix_rank(dyn.noise, tol=1e-10) == 1
    np.testing.assert_array_equal(dyn.noise[2], 0)
    np.testing.assert_array_equal(dyn.noise[:, 2], 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 6), st.integers(0, 2**32 - 1), st.data())
def test_noise_factor_reproduces_quadratic_form(p, seed, data):
    chain = random_chain(p, seed=seed)
    size = data.draw(st.integers(2, p))
    face = tuple(sorted(data.draw(st.permutations(range(p)))[:size]))
    dyn = face_dynamics(chain, face)
    np.testing.assert_allclose(dyn.noise @ dyn.noise.T, dyn.covariance, atol=1e-10)
    np.testing.assert_allclose(dyn.covariance.sum(axis=1), 0, atol=1e-10)
    assert np.linalg.matrix_rank(dyn.noise, tol=1e-8) == size - 1
    rng = np.random.default_rng(seed)
    w = np.zeros(p)
    w[list(face)] = rng.normal(size=size)
    w[list(face)] -= w[list(face)].mean()
    flow = chain.m[list(face)][:, None] * dyn.rB
    direct = 0.5 * sum(flow[i, k] * (w[face[i]] - w[face[k]]) ** 2
                       for i in range(size) for k in range(size))
    assert dyn.quadratic_form(w)[0] == pytest.approx(direct, rel=1e-10, abs=1e-12)
    assert 0.5 * np.sum((dyn.noise.T @ w) ** 2) == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_face_needs_two_sites(complete3):
    with pytest.raises(DegenerateFace):
        face_dynamics(complete3, (1,))


def test_drift_fails_on_missed_absorption(complete3):
    with pytest.raises(NonFiniteDrift):
        face_dynamics(complete3, range(3)).drift(np.array([0.5, 0.5, 0.0]))


def test_em_step_symmetric_fixed_point(complete3):
    dyn = face_dynamics(complete3, (0, 1))
    x = np.array([0.5, 0.5, 0.0])
    np.testing.assert_allclose(em_step(x, dyn, 1e-3, np.zeros(3))[0], x, atol=1e-15)


def test_em_step_stays_on_hyperplane_and_face(cycle4):
    dyn = face_dynamics(cycle4, (0, 1, 3))
    rng = np.random.default_rng(0)
    x = np.array([[0.3, 0.3, 0.0, 0.4]] * 50)
    out = em_step(x, dyn, 1e-4, rng.normal(size=(50, 4)))
    np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-12)
    np.testing.assert_array_equal(out[:, 2], 0)


def test_em_step_scales_like_sqrt_dt(complete3):
    dyn = face_dynamics(complete3, range(3))
    x = np.array([1 / 3, 1 / 3, 1 / 3])
    g = np.array([0.3, -1.2, 0.8])
    big = np.abs(em_step(x, dyn, 1e-4, g)[0] - x).max()
    small = np.abs(em_step(x, dyn, 1e-6, g)[0] - x).max()
    assert small / big == pytest.approx(0.1, rel=0.05)


def test_em_step_rejects_non_positive_dt(complete3):
    with pytest.raises(ValidationError):
        em_step(np.full(3, 1 / 3), face_dynamics(complete3, range(3)), 0.0, np.zeros(3))


def test_face_cache_precomputes_small_chains(cycle4):
    cache = FaceCache(cycle4)
    assert len(cache._faces) == 2 ** 4 - 4 - 1
    assert cache.get(face_mask((0, 2))).sites == (0, 2)


def test_generator_of_constant_vanishes(cycle4):
    cache = FaceCache(cycle4)
    x = np.array([[0.25] * 4, [0.5, 0.0, 0.5, 0.0], [0, 1.0, 0, 0]])
    np.testing.assert_allclose(generator_values(cache, Polynomial.constant(4), x), 0, atol=1e-14)


def test_generator_of_linear_function_is_drift(complete3):
    dyn = face_dynamics(complete3, range(3))
    fn = Polynomial([([1, 0, 0], 1.0)])
    x = np.array([[0.2, 0.3, 0.5]])
    np.testing.assert_allclose(face_generator_apply(dyn, fn, x), dyn.drift(x)[:, 0])


def test_support_masks():
    np.testing.assert_array_equal(support_masks(np.array([[0.5, 0, 0.5], [0, 1, 0]])), [5, 2])


def test_vertex_start_is_a_trap(complete3):
    path = simulate_diffusion(complete3, [0, 1, 0], 1.0, CONTROLS, seed=0)
    np.testing.assert_array_equal(path.points, np.tile([0, 1, 0], (path.sample_times.size, 1)))
    assert path.record.sigmas == [0.0]
    assert path.record.faces == [(0, 1, 2), (1,)]
    assert path.record.terminal == 1


def test_face_start_never_leaves_face(cycle4):
    ens = simulate_diffusion_ensemble(cycle4, [0.5, 0.0, 0.5, 0.0], 0.5, CONTROLS, seed=2,
                                      replicas=10, threads=2)
    np.testing.assert_array_equal(ens.points[:, :, 1], 0)
    np.testing.assert_array_equal(ens.points[:, :, 3], 0)
    for rec in ens.records:
        assert rec.sigmas[0] == 0.0
        assert rec.faces[1] == (0, 2)


def test_paths_stay_in_simplex_and_decay(complete3):
    ens = simulate_diffusion_ensemble(complete3, [1 / 3] * 3, 5.0, CONTROLS, seed=5, replicas=30,
                                      threads=2)
    assert np.all(ens.points >= 0)
    np.testing.assert_allclose(ens.points.sum(axis=2), 1, atol=1e-12)
    assert np.all((ens.masks[:, 1:] & ~ens.masks[:, :-1]) == 0)
    for rec in ens.records:
        assert all(s1 <= s2 for s1, s2 in zip(rec.sigmas, rec.sigmas[1:]))
        assert all(set(b) < set(a) for a, b in zip(rec.faces, rec.faces[1:]))
        assert len(rec.sigmas) == len(rec.faces) - 1
    np.testing.assert_array_equal(support_masks(ens.points.reshape(-1, 3)), ens.masks.reshape(-1))


def test_ensemble_replica_matches_single_path(complete3):
    ens = simulate_diffusion_ensemble(complete3, [0.2, 0.3, 0.5], 0.3, CONTROLS, seed=8,
                                      replicas=4, threads=2)
    path = simulate_diffusion(complete3, [0.2, 0.3, 0.5], 0.3, CONTROLS, seed=8, replica=3)
    np.testing.assert_allclose(path.points, ens.points[3], atol=1e-12)
    np.testing.assert_allclose(path.record.sigmas, ens.records[3].sigmas, atol=1e-12)
    assert path.record.faces == ens.records[3].faces


def test_step_underflow(complete3):
    controls = DiffusionControls(dt_base=1e-3, dt_floor=1e-2)
    with pytest.raises(StepUnderflow):
        simulate_diffusion(complete3, [1 / 3] * 3, 1.0, controls, seed=0)


def test_start_outside_simplex(complete3):
    with pytest.raises(ValidationError):
        simulate_diffusion(complete3, [0.5, 0.6, -0.1], 1.0, CONTROLS, seed=0)


def test_absorption_bound_complete_graph(complete3):
    assert separation(complete3, range(3)) == pytest.approx(2 / 3)
    assert absorption_bound(range(3), complete3, 2.0) == pytest.approx(1.5)
    d = separation(complete3, (0, 1))
    assert absorption_bound((0, 1), complete3, 2.0) == pytest.approx(2 / (3 * d))


def test_absorption_bound_pole(complete3):
    assert absorption_bound(range(3), complete3, 1 + 1e-9) > 1e8
    with pytest.raises(BadQ):
        absorption_bound(range(3), complete3, 1.0)


def test_absorption_bound_min(complete3):
    q, bound = absorption_bound_min(range(3), complete3, [0.5, 1.5, 2.0, 3.0, 4.0])
    assert q in (1.5, 2.0, 3.0, 4.0)
    assert bound == min(absorption_bound(range(3), complete3, v) for v in (1.5, 2.0, 3.0, 4.0))
    with pytest.raises(BadQ):
        absorption_bound_min(range(3), complete3, [0.5, 1.0])


def test_every_path_reaches_a_vertex(complete3):
    ens = simulate_diffusion_ensemble(complete3, [1 / 3] * 3, 30.0, CONTROLS, seed=12,
                                      replicas=40, grid=[0.0, 30.0], threads=2)
    assert all(rec.terminal is not None for rec in ens.records)
    assert np.all(ens.points[:, -1].max(axis=1) == 1.0)


@pytest.mark.slow
def test_first_absorption_time_below_bound(complete3):
    controls = DiffusionControls(dt_base=1e-4, eps_abs=1e-4)
    ens = simulate_diffusion_ensemble(complete3, [1 / 3] * 3, 40.0, controls, seed=7,
                                      replicas=10_000, grid=[0.0, 40.0])
    first = np.array([rec.sigmas[0] for rec in ens.records])
    assert all(rec.terminal is not None for rec in ens.records)
    bound = absorption_bound(range(3), complete3, 2.0)
    assert first.mean() <= bound + 3 * first.std(ddof=1) / np.sqrt(first.size)
