import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dstl.coding import (Dictionary, check_codes, code_batch, code_sample, lipschitz_constant,
                         project_simplex, reconstruct, residual_norm, set_threads)
from dstl.errors import CodingError, DimensionError, InvalidInputError

from oracles import face_enumeration_code, grid_search_code, grid_search_triangle, naive_matmul


def random_dictionary(rng, M, K):
    return Dictionary(rng.standard_normal((M, K)))


# ---------------------------------------------------------------- Dictionary

def test_dictionary_rejects_duplicates_and_bad_shapes():
    with pytest.raises(InvalidInputError):
        Dictionary(np.array([[0.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(InvalidInputError):
        Dictionary(np.ones((3, 1)))
    with pytest.raises(DimensionError):
        Dictionary(np.ones(3))
    with pytest.raises(InvalidInputError):
        Dictionary(np.array([[0.0, np.nan]]))
    with pytest.raises(InvalidInputError):
        Dictionary(np.array([[0.0, 1.0]]), source_indices=(2, 2))
    with pytest.raises(DimensionError):
        Dictionary(np.array([[0.0, 1.0]]), source_indices=(2,))


def test_dictionary_atoms_are_read_only():
    D = Dictionary(np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        D.atoms[0, 0] = 5.0


def test_lipschitz_matches_eigvalsh():
    rng = np.random.default_rng(3)
    for _ in range(20):
        A = rng.standard_normal((6, 4))
        G = A.T @ A
        assert lipschitz_constant(G) == pytest.approx(np.linalg.eigvalsh(G)[-1], rel=1e-6)


# ---------------------------------------------------------------- projection

def test_projection_examples():
    assert np.allclose(project_simplex(np.array([0.5, 0.5])), [0.5, 0.5])
    assert np.allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    assert np.allclose(project_simplex(np.array([1.0, 1.0, 1.0])), [1 / 3] * 3)


@given(hnp.arrays(np.float64, st.integers(2, 7), elements=st.floats(-5, 5)))
def test_projection_is_nearest_simplex_point(y):
    p = project_simplex(y)
    assert check_codes(p[:, None])
    # optimality: no vertex direction improves the distance (KKT for the simplex)
    g = p - y
    support = p > 1e-12
    assert np.all(g >= g[support].max() - 1e-9)


# ---------------------------------------------------------------- code_sample

def test_atom_codes_as_its_vertex(triangle):
    assert np.allclose(code_sample(triangle, triangle.atoms[:, 1]), [0, 1, 0], atol=1e-7)


def test_midpoint_of_two_atoms():
    D = Dictionary(np.array([[0.0, 1.0], [0.0, 1.0]]))
    assert np.allclose(code_sample(D, np.array([0.5, 0.5])), [0.5, 0.5], atol=1e-7)


# Frozen from grid_search_triangle(triangle, (2, 2), step=1e-4); see test below.
OUTSIDE_ALPHA = np.array([0.0, 0.5, 0.5])
OUTSIDE_RESIDUAL = 4.5


def test_point_outside_hull_matches_frozen_grid_optimum(triangle):
    a = code_sample(triangle, np.array([2.0, 2.0]))
    r = float(np.sum((triangle.atoms @ a - 2.0) ** 2))
    assert np.abs(a - OUTSIDE_ALPHA).max() <= 1e-3
    assert abs(r - OUTSIDE_RESIDUAL) <= 1e-6


def test_frozen_outside_optimum_reproduced_by_dense_grid(triangle):
    a, r = grid_search_triangle(triangle.atoms, np.array([2.0, 2.0]), step=1e-4)
    assert np.abs(a - OUTSIDE_ALPHA).max() <= 1e-3
    assert abs(r - OUTSIDE_RESIDUAL) <= 1e-6


def test_code_sample_errors(triangle):
    with pytest.raises(InvalidInputError):
        code_sample(triangle, np.array([np.inf, 0.0]))
    with pytest.raises(DimensionError):
        code_sample(triangle, np.zeros(3))
    with pytest.raises(InvalidInputError):
        code_sample(triangle, np.zeros(2), tol=0.0)
    with pytest.raises(InvalidInputError):
        code_sample(triangle, np.zeros(2), max_iter=0)


# ---------------------------------------------------------------- code_batch

def test_atoms_code_to_identity(triangle):
    assert np.allclose(code_batch(triangle, triangle.atoms), np.eye(3), atol=1e-7)


def test_interior_convex_combination():
    D = Dictionary(np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]))
    x = 0.3 * D.atoms[:, 0] + 0.7 * D.atoms[:, 2]
    assert np.allclose(code_batch(D, x[:, None])[:, 0], [0.3, 0.0, 0.7], atol=1e-6)


def test_random_batch_matches_grid_and_exact_oracles():
    rng = np.random.default_rng(0)
    D = random_dictionary(rng, 4, 3)
    X = rng.standard_normal((4, 10))
    A = code_batch(D, X)
    for n in range(10):
        r = float(np.sum((D.atoms @ A[:, n] - X[:, n]) ** 2))
        _, r_grid = grid_search_code(D.atoms, X[:, n], 1000)
        a_exact, r_exact = face_enumeration_code(D.atoms, X[:, n])
        assert r <= r_grid + 1e-6
        assert np.abs(A[:, n] - a_exact).max() <= 1e-3
        assert abs(r - r_exact) <= 1e-6


def test_coding_error_reports_column(triangle):
    X = np.zeros((2, 4))
    X[1, 2] = np.nan
    with pytest.raises(CodingError) as exc:
        code_batch(triangle, X)
    assert exc.value.column == 2


def test_batch_dimension_errors(triangle):
    with pytest.raises(DimensionError):
        code_batch(triangle, np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        code_batch(triangle, np.zeros(2))


def test_empty_batch(triangle):
    assert code_batch(triangle, np.zeros((2, 0))).shape == (3, 0)


def test_return_iterations(triangle):
    A, iters = code_batch(triangle, triangle.atoms, return_iterations=True)
    assert iters.shape == (3,) and np.all(iters >= 1) and np.all(iters <= 2000)


@st.composite
def coding_instances(draw):
    M = draw(st.integers(1, 6))
    K = draw(st.integers(2, 4))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    D = rng.standard_normal((M, K)) * draw(st.sampled_from([0.1, 1.0, 10.0]))
    X = rng.standard_normal((M, draw(st.integers(1, 5)))) * 2
    return Dictionary(D), X


@given(coding_instances())
def test_codes_are_feasible(inst):
    D, X = inst
    assert check_codes(code_batch(D, X), 1e-10, 1e-8)


@given(coding_instances())
def test_codes_are_optimal(inst):
    D, X = inst
    A = code_batch(D, X)
    for n in range(X.shape[1]):
        r = float(np.sum((D.atoms @ A[:, n] - X[:, n]) ** 2))
        _, r_exact = face_enumeration_code(D.atoms, X[:, n])
        assert r <= r_exact + 1e-6 * max(1.0, r_exact)


@given(coding_instances())
def test_recoding_reconstruction_does_not_increase_residual(inst):
    D, X = inst
    A = code_batch(D, X)
    R = reconstruct(D, A)
    A2 = code_batch(D, R)
    # the second coding is no worse than the first one was on the raw data
    assert residual_norm(D, R, A2) <= residual_norm(D, X, A) + 1e-9
    # and, measured by the objective the solver minimizes, R is coded exactly
    assert residual_norm(D, R, A2) ** 2 <= residual_norm(D, R, A) ** 2 + 1e-9


@given(coding_instances())
def test_batch_equals_single_samples_bitwise(inst):
    D, X = inst
    A = code_batch(D, X)
    for n in range(X.shape[1]):
        assert np.array_equal(A[:, n], code_sample(D, X[:, n]))
    assert np.array_equal(A, code_batch(D, X))


def test_results_independent_of_thread_count():
    rng = np.random.default_rng(11)
    D = random_dictionary(rng, 5, 4)
    X = rng.standard_normal((5, 300))
    try:
        set_threads(1)
        A1 = code_batch(D, X)
        set_threads(None)
        A2 = code_batch(D, X)
    finally:
        set_threads(None)
    assert np.array_equal(A1, A2)


# ---------------------------------------------------------------- reconstruct / residual

def test_reconstruct_examples():
    D = Dictionary(np.array([[0.0, 2.0], [0.0, 0.0]]))
    assert np.array_equal(reconstruct(D, np.eye(2)), D.atoms)
    assert np.allclose(reconstruct(D, np.array([0.5, 0.5]))[:, 0], [1.0, 0.0])


def test_reconstruct_matches_triple_loop():
    rng = np.random.default_rng(5)
    D = random_dictionary(rng, 4, 3)
    A = rng.random((3, 7))
    assert np.allclose(reconstruct(D, A), naive_matmul(D.atoms, A), atol=1e-12)


def test_reconstruct_dimension_error(triangle):
    with pytest.raises(DimensionError):
        reconstruct(triangle, np.ones((2, 1)))


def test_residual_norm_examples():
    rng = np.random.default_rng(6)
    D = Dictionary(rng.standard_normal((2, 3)))
    A = project_simplex(rng.standard_normal((3, 1)))
    X = D.atoms @ A
    assert residual_norm(D, X, A) == 0.0
    assert residual_norm(D, X + 1.0, A) == pytest.approx(np.sqrt(2), abs=1e-12)


def test_residual_norm_matches_elementwise_sum():
    rng = np.random.default_rng(8)
    D = random_dictionary(rng, 3, 4)
    A = rng.random((4, 6))
    X = rng.standard_normal((3, 6))
    R = naive_matmul(D.atoms, A)
    ss = sum((R[i, j] - X[i, j]) ** 2 for i in range(3) for j in range(6))
    assert residual_norm(D, X, A) == pytest.approx(np.sqrt(ss), rel=1e-12)
    with pytest.raises(DimensionError):
        residual_norm(D, X[:, :2], A)
