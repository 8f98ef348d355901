import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from dstl.classifier import SoftmaxParams
from dstl.coding import Dictionary, check_codes, code_batch
from dstl.errors import ConfigError, DimensionError, InfeasibleError, NotFittedError
from dstl.network import (DstlModel, Hyperparams, classifier_features, encode, parameter_count,
                          predict, pretrain, stack_features, unlabeled_pools)


# ---------------------------------------------------------------- hyperparameters

def test_hyperparams_defaults():
    hp = Hyperparams()
    assert hp.layer_sizes == (20, 30)
    assert (hp.clip_t1, hp.clip_t2, hp.lr_a, hp.lr_gamma) == (1e-3, 1e-3, 1.0, 1.0)
    assert hp.max_outer_iter == 1000 and hp.stack == "all"


@pytest.mark.parametrize("bad", [
    {"layer_sizes": ()}, {"layer_sizes": (1, 3)}, {"clip_t1": 0.0}, {"clip_t2": -1.0},
    {"lr_a": 0.0}, {"lr_gamma": -1.0}, {"snap_threshold": -0.1}, {"stack": "some"},
    {"max_outer_iter": -1}, {"clf_reg": -1.0},
])
def test_hyperparams_reject_invalid(bad):
    with pytest.raises(ConfigError):
        Hyperparams(**bad)


def test_hyperparams_dict_round_trip():
    hp = Hyperparams(layer_sizes=(3, 4, 5), snap_threshold=0.1, stack="last")
    assert Hyperparams.from_dict(hp.to_dict()) == hp
    with pytest.raises(ConfigError):
        Hyperparams.from_dict({"nonsense": 1})


# ---------------------------------------------------------------- parameter count

def test_parameter_count_formula():
    M, K1, K2, C = 150, 20, 30, 6
    assert parameter_count(M, (K1, K2), C) == (M + K2) * K1 + (K2 + 1) * C == 3786


def test_model_parameter_count_by_stacking_mode():
    rng = np.random.default_rng(0)
    dicts = (Dictionary(rng.random((150, 20))), Dictionary(rng.random((20, 30))))
    last = DstlModel(dicts, Hyperparams(layer_sizes=(20, 30), stack="last"))
    assert last.n_parameters(6) == 3786
    # stacking both layers adds K1 * C classifier weights
    full = DstlModel(dicts, Hyperparams(layer_sizes=(20, 30), stack="all"))
    assert full.n_parameters(6) == 3786 + 20 * 6
    with pytest.raises(NotFittedError):
        full.n_parameters()


# ---------------------------------------------------------------- model container

def test_model_checks_dimension_chain():
    hp = Hyperparams(layer_sizes=(3, 2))
    with pytest.raises(DimensionError):
        DstlModel((Dictionary(np.eye(4)[:, :3]), Dictionary(np.eye(4)[:, :2])), hp)
    with pytest.raises(DimensionError):
        DstlModel((Dictionary(np.eye(4)[:, :3]),), hp)
    model = DstlModel((Dictionary(np.eye(4)[:, :3]), Dictionary(np.eye(3)[:, :2])), hp)
    assert model.feature_dim == 5 and model.last_block() == slice(3, 5)
    with pytest.raises(DimensionError):
        model.with_(classifier=SoftmaxParams(np.zeros((2, 4)), np.zeros(2)))


# ---------------------------------------------------------------- pretrain

def test_pretrain_single_layer_square(square_pool):
    model = pretrain(square_pool, Hyperparams(layer_sizes=(4,)))
    assert set(model.dictionaries[0].source_indices) == {0, 1, 2, 3}


def test_pretrain_second_layer_picks_unit_vertices():
    rng = np.random.default_rng(1)
    V = rng.standard_normal((5, 4))
    W = rng.dirichlet(np.ones(4), size=40).T
    c = V.mean(axis=1, keepdims=True)
    pool = np.hstack([c + 0.7 * (V @ W - c), V])
    model = pretrain(pool, Hyperparams(layer_sizes=(4, 4)))
    assert set(model.dictionaries[0].source_indices) == {40, 41, 42, 43}
    D2 = model.dictionaries[1].atoms
    assert {int(np.argmax(c)) for c in D2.T} == {0, 1, 2, 3}
    assert np.allclose(np.sort(D2, axis=0), np.vstack([np.zeros((3, 4)), np.ones((1, 4))]),
                       atol=1e-7)


def planted_pool(seed, M=8, n_gen=10, n_mix=500):
    rng = np.random.default_rng(seed)
    G = rng.random((M, n_gen))
    W = rng.dirichlet(np.ones(n_gen), size=n_mix).T
    pool = np.hstack([G @ W, G])
    perm = rng.permutation(pool.shape[1])
    where = np.argsort(perm)[n_mix:]  # new positions of the generators
    return pool[:, perm], set(where.tolist())


def is_vertex(pool, j):
    others = np.delete(pool, j, axis=1)
    A = np.vstack([others, np.ones((1, others.shape[1]))])
    res = linprog(np.zeros(others.shape[1]), A_eq=A, b_eq=np.append(pool[:, j], 1.0),
                  bounds=(0, None), method="highs")
    return res.status != 0


@pytest.mark.parametrize("seed", range(5))
def test_pretrain_recovers_planted_generators(seed):
    pool, gens = planted_pool(seed)
    # oracle: the generators are exactly the hull vertices of the pool
    assert all(is_vertex(pool, j) for j in gens)
    sel = set(pretrain(pool, Hyperparams(layer_sizes=(10,))).dictionaries[0].source_indices)
    assert len(sel & gens) >= 9


def test_pretrain_infeasible_layer():
    with pytest.raises(InfeasibleError, match="layer 1"):
        pretrain(np.eye(3), Hyperparams(layer_sizes=(4,)))


# ---------------------------------------------------------------- encode / stack

def small_model(seed=0, sizes=(4, 3), M=5, stack="all"):
    rng = np.random.default_rng(seed)
    dims = (M,) + sizes
    dicts = tuple(Dictionary(rng.random((dims[i], dims[i + 1]))) for i in range(len(sizes)))
    return DstlModel(dicts, Hyperparams(layer_sizes=sizes, stack=stack))


def test_encode_atoms_single_layer():
    model = small_model(sizes=(4,))
    (A,) = encode(model, model.dictionaries[0].atoms)
    assert np.allclose(A, np.eye(4), atol=1e-7)


@given(st.integers(0, 2 ** 32 - 1))
def test_encode_outputs_are_feasible_with_layer_dimensions(seed):
    model = small_model(seed % 1000, sizes=(4, 3, 2))
    X = np.random.default_rng(seed).standard_normal((5, 7))
    codes = encode(model, X)
    assert [A.shape for A in codes] == [(4, 7), (3, 7), (2, 7)]
    assert all(check_codes(A) for A in codes)


def test_encode_composes_layers():
    model = small_model(3)
    X = np.random.default_rng(3).standard_normal((5, 20))
    A1, A2 = encode(model, X)
    assert np.array_equal(A1, code_batch(model.dictionaries[0], X))
    assert np.array_equal(A2, code_batch(model.dictionaries[1], A1))
    with pytest.raises(DimensionError):
        encode(model, np.zeros((4, 2)))


def test_stack_examples():
    A = np.array([[0.3], [0.7]])
    assert np.array_equal(stack_features([A]), A)
    s = stack_features([np.array([[0.4], [0.6]]), np.array([[0.1], [0.2], [0.7]])])
    assert np.array_equal(s[:, 0], [0.4, 0.6, 0.1, 0.2, 0.7])
    with pytest.raises(DimensionError):
        stack_features([np.zeros((2, 1)), np.zeros((2, 2))])


def test_classifier_features_modes():
    X = np.random.default_rng(4).standard_normal((5, 3))
    for stack, rows in (("all", 7), ("last", 3)):
        model = small_model(stack=stack)
        assert classifier_features(model, encode(model, X)).shape == (rows, 3)
    model = small_model().with_(hyperparams=Hyperparams(layer_sizes=(4, 3), include_input=True))
    F = classifier_features(model, encode(model, X), X)
    assert F.shape == (12, 3) and np.array_equal(F[:5], X)
    assert model.last_block() == slice(9, 12)


def test_unlabeled_pools_and_predict():
    model = small_model(5)
    U = np.random.default_rng(5).standard_normal((5, 30))
    pools = unlabeled_pools(model, U)
    assert np.array_equal(pools[0], U)
    assert np.array_equal(pools[1], code_batch(model.dictionaries[0], U))
    with pytest.raises(NotFittedError):
        predict(model, U)
