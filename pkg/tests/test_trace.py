import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from zrp_diffusion.chain import generator_apply, random_chain
from zrp_diffusion.errors import DegenerateFace, ValidationError
from zrp_diffusion.trace import (adjoint_trace_residual, equilibrium_potentials, face_image,
                                 face_mask, kernel_check, mask_sites, mc_hitting_oracle, project,
                                 projection_composition_check, projection_matrix,
                                 trace_of_trace_check, trace_rates, trace_stationarity_residual)


@st.composite
def chain_and_face(draw, min_size=2):
    p = draw(st.integers(3, 6))
    chain = random_chain(p, seed=draw(st.integers(0, 2**32 - 1)))
    size = draw(st.integers(min_size, p))
    face = tuple(sorted(draw(st.permutations(range(p)))[:size]))
    return chain, face


def test_potentials_complete_graph(complete3):
    u = equilibrium_potentials(complete3, (0, 1))
    np.testing.assert_allclose(u[0], [1, 0, 0.5], atol=1e-14)
    np.testing.assert_allclose(u[1], [0, 1, 0.5], atol=1e-14)


def test_potentials_on_full_set_are_indicators(cycle4):
    np.testing.assert_array_equal(equilibrium_potentials(cycle4, range(4)), np.eye(4))


def test_trace_rates_complete_graph(complete3):
    model = trace_rates(complete3, (0, 1))
    assert model.rB[0, 1] == pytest.approx(1.5)
    assert model.lambdaB[0] == pytest.approx(1.5)
    assert model.rB[0, 0] == 0


def test_trace_on_full_set_is_the_chain(cycle4):
    np.testing.assert_allclose(trace_rates(cycle4, range(4)).rB, cycle4.r, atol=1e-14)


def test_singleton_face_has_no_trace(complete3):
    with pytest.raises(DegenerateFace):
        trace_rates(complete3, (0,))
    with pytest.raises(DegenerateFace):
        equilibrium_potentials(complete3, (2,))


def test_sites_out_of_range(complete3):
    with pytest.raises(ValidationError):
        trace_rates(complete3, (0, 3))


def test_projection_example(complete3):
    np.testing.assert_allclose(project(complete3, (0, 1), [0.2, 0.3, 0.5]), [0.45, 0.55, 0],
                               atol=1e-14)


def test_projection_is_identity_on_face(cycle4):
    x = np.array([0.3, 0.0, 0.7, 0.0])
    np.testing.assert_allclose(project(cycle4, (0, 2), x), x, atol=1e-14)


def test_projection_kills_outside_drift(complete3):
    np.testing.assert_allclose(project(complete3, (0, 1), complete3.v[2]), 0, atol=1e-14)


def test_singleton_projection_sends_mass_to_vertex(cycle4):
    np.testing.assert_allclose(project(cycle4, (1,), [0.1, 0.2, 0.3, 0.4]), [0, 1, 0, 0],
                               atol=1e-12)


def test_face_image_examples(complete3):
    assert face_image(complete3, (0, 1), (0,)) == (0,)
    assert face_image(complete3, (0, 1), (2,)) == (0, 1)
    assert face_image(complete3, (0, 1), (0, 1, 2)) == (0, 1)


def test_face_image_on_a_chain_with_silent_sites(cycle4):
    # from site 3 the chain jumps straight to 0, so 0 is hit before 1
    assert face_image(cycle4, (0, 1), (3,)) == (0,)


def test_masks_round_trip():
    assert face_mask((0, 2)) == 0b101
    assert mask_sites(0b101, 4) == (0, 2)


def test_trace_to_dict_is_one_based(complete3):
    report = trace_rates(complete3, (0, 1)).to_dict()
    assert report["face"] == [1, 2]
    assert report["rB"][0][1] == pytest.approx(1.5)


@settings(max_examples=60, deadline=None)
@given(chain_and_face())
def test_potential_invariants(case):
    chain, face = case
    model = trace_rates(chain, face)
    u = model.u
    assert np.all(u >= -1e-12) and np.all(u <= 1 + 1e-12)
    np.testing.assert_allclose(u.sum(axis=0), 1, atol=1e-12)
    off = [j for j in range(chain.p) if j not in face]
    for row in u:
        assert np.max(np.abs(generator_apply(chain, row)[off]), initial=0) < 1e-10
    np.testing.assert_allclose(model.lambdaB, model.rB.sum(axis=1), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(chain_and_face(min_size=1))
def test_projection_is_idempotent_and_kernel_matches(case):
    chain, face = case
    gamma = projection_matrix(chain, face)
    np.testing.assert_allclose(gamma @ gamma, gamma, atol=1e-10)
    np.testing.assert_allclose(gamma.sum(axis=0), 1, atol=1e-12)
    assert kernel_check(chain, face)["ok"]


@settings(max_examples=40, deadline=None)
@given(chain_and_face())
def test_projection_maps_drift_vectors(case):
    chain, face = case
    model = trace_rates(chain, face)
    gamma = projection_matrix(chain, face)
    for idx, j in enumerate(face):
        np.testing.assert_allclose(gamma @ chain.v[j], model.vB[idx], atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(chain_and_face())
def test_trace_keeps_stationarity_and_adjoint(case):
    chain, face = case
    assert trace_stationarity_residual(chain, face) < 1e-10
    assert adjoint_trace_residual(chain, face) < 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_nested_faces_compose(seed):
    chain = random_chain(5, seed=seed)
    for outer_size in range(1, 6):
        for outer in itertools.combinations(range(5), outer_size):
            for inner_size in range(1, outer_size + 1):
                for inner in itertools.combinations(outer, inner_size):
                    assert projection_composition_check(chain, inner, outer) < 1e-10
                    if inner_size >= 2:
                        assert trace_of_trace_check(chain, inner, outer) < 1e-10


def test_composition_needs_nesting(complete3):
    with pytest.raises(ValidationError):
        projection_composition_check(complete3, (0, 1), (1, 2))


def test_oracle_point_mass_inside_face(complete3):
    est = mc_hitting_oracle(complete3, 1, (0, 1), runs=10, seed=0)
    np.testing.assert_array_equal(est.frequencies, [0, 1])


def test_oracle_symmetric_chain(complete3):
    est = mc_hitting_oracle(complete3, 2, (0, 1), runs=100_000, seed=11)
    assert abs(est.frequencies[0] - 0.5) < 3 * est.standard_errors[0]


def test_oracle_is_deterministic(cycle4):
    a = mc_hitting_oracle(cycle4, 3, (1, 2), runs=1000, seed=5)
    b = mc_hitting_oracle(cycle4, 3, (1, 2), runs=1000, seed=5)
    np.testing.assert_array_equal(a.frequencies, b.frequencies)


@pytest.mark.parametrize("seed", [21, 22])
def test_oracle_matches_linear_solve(seed):
    chain = random_chain(4, seed=seed)
    face = (0, 1)
    u = equilibrium_potentials(chain, face)
    for start in (2, 3):
        est = mc_hitting_oracle(chain, start, face, runs=40_000, seed=seed)
        for idx in range(len(face)):
            se = max(est.standard_errors[idx], 1e-3)
            assert abs(est.frequencies[idx] - u[idx, start]) < 4 * se


@pytest.mark.slow
def test_oracle_on_five_sites():
    chain = random_chain(5, seed=8)
    face = (0, 1, 2)
    u = equilibrium_potentials(chain, face)
    for start in (3, 4):
        est = mc_hitting_oracle(chain, start, face, runs=100_000, seed=8)
        for idx in range(len(face)):
            assert abs(est.frequencies[idx] - u[idx, start]) < 3 * max(est.standard_errors[idx], 1e-4)


@pytest.mark.parametrize("start", [-1, 3, 7])
def test_oracle_rejects_start_outside_chain(complete3, start):
    with pytest.raises(ValidationError):
        mc_hitting_oracle(complete3, start, (0, 1), runs=10, seed=0)


def _hitting_law(chain, face):
    if len(face) == 1:
        return np.ones((1, chain.p))
    return equilibrium_potentials(chain, face)


@pytest.mark.slow
def test_oracle_agrees_with_linear_solve_on_a_chain_corpus():
    runs = 100_000
    outcomes = []
    for k in range(20):
        p = 3 + k % 4
        chain = random_chain(p, seed=100 + k)
        for size in range(1, p):
            for face in itertools.combinations(range(p), size):
                u = _hitting_law(chain, face)
                for start in sorted(set(range(p)) - set(face)):
                    est = mc_hitting_oracle(chain, start, face, runs=runs, seed=k)
                    exact = u[:, start]
                    se = np.sqrt(exact * (1.0 - exact) / runs)
                    outcomes.append(np.all(np.abs(est.frequencies - exact) <= 3 * se + 1e-12))
    assert len(outcomes) == 5 * (9 + 28 + 75 + 186)
    assert np.mean(outcomes) >= 0.99
