from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedsched.dqn import Batch, PolicyParams, init_params, train_step
from fedsched.errors import ContractViolation, DegenerateRoundError
from fedsched.federation import (CentralPolicy, LocalDelta, aggregate, central_weight,
                                 fed_ds_round, local_gradient)

SIZES = (4, 5, 3)


def test_central_weight_examples():
    assert np.allclose(central_weight([10, 30]), [0.25, 0.75])
    assert np.allclose(central_weight([7]), [1.0])
    assert np.allclose(central_weight([5, 5, 5, 5]), [0.25] * 4)
    with pytest.raises(DegenerateRoundError):
        central_weight([0, 0])
    with pytest.raises(ValueError):
        central_weight([-1, 2])


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=20).filter(lambda k: sum(k) > 0))
def test_central_weight_normalized(k):
    assert central_weight(k).sum() == pytest.approx(1.0)


def test_local_gradient_examples():
    w = init_params(SIZES, np.random.default_rng(0))
    assert np.array_equal(local_gradient(w, w.copy()).delta, np.zeros_like(w.flat))
    d = np.random.default_rng(1).normal(size=w.flat.shape)
    moved = PolicyParams(SIZES, w.flat - d)
    assert np.allclose(local_gradient(w, moved).delta, d)
    with pytest.raises(ContractViolation):
        local_gradient(w, PolicyParams((4, 3)))


def test_local_gradient_equals_single_sgd_step():
    rng = np.random.default_rng(2)
    w = init_params(SIZES, rng)
    states = np.eye(4)[:2]
    batch = Batch(states, np.array([0, 2]), np.array([1.0, -1.0]), states, states[:, :3] > 2)
    batch = batch._replace(next_masks=np.ones((2, 3), bool))
    lr = 0.01
    new, _ = train_step(w, w, batch, 0.0, lr)
    # by hand: with gamma 0 the step is lr * mean-squared-error gradient
    from fedsched.dqn import td_loss_and_grad
    _, grad = td_loss_and_grad(w, w, batch, 0.0)
    delta = local_gradient(w, new).delta
    assert np.linalg.norm(delta) == pytest.approx(lr * np.linalg.norm(grad.flat), rel=1e-12)


def _central(rng):
    return CentralPolicy("A", init_params(SIZES, rng))


def test_aggregate_two_available_is_average():
    rng = np.random.default_rng(3)
    c = _central(rng)
    w1, w2 = rng.normal(size=c.theta.flat.shape), rng.normal(size=c.theta.flat.shape)
    deltas = [LocalDelta(0, c.theta.flat - w1), LocalDelta(1, c.theta.flat - w2)]
    out = aggregate(c, deltas, {0: 0.5, 1: 0.5}, {0: 1, 1: 1}, 2)
    assert np.allclose(out.theta.flat, 0.5 * (w1 + w2), atol=1e-12)
    assert out.round_index == c.round_index + 1


def test_aggregate_one_available_takes_its_params():
    rng = np.random.default_rng(4)
    c = _central(rng)
    w1 = rng.normal(size=c.theta.flat.shape)
    out = aggregate(c, [LocalDelta(0, c.theta.flat - w1)], {0: 0.5, 1: 0.5}, {0: 1, 1: 0}, 2)
    assert np.allclose(out.theta.flat, w1, atol=1e-12)


def test_aggregate_zero_deltas_fixed_point():
    c = _central(np.random.default_rng(5))
    zero = np.zeros_like(c.theta.flat)
    out = aggregate(c, [LocalDelta(0, zero), LocalDelta(1, zero)], {0: 0.3, 1: 0.7}, {0: 1, 1: 1}, 2)
    assert np.array_equal(out.theta.flat, c.theta.flat)


def test_aggregate_contract_errors():
    c = _central(np.random.default_rng(6))
    zero = np.zeros_like(c.theta.flat)
    with pytest.raises(ContractViolation):
        aggregate(c, [], {0: 1.0}, {0: 0}, 1)
    with pytest.raises(ContractViolation):
        aggregate(c, [LocalDelta(0, zero)], {0: 0.5, 1: 0.5}, {0: 1, 1: 1}, 2)
    with pytest.raises(ContractViolation):
        aggregate(c, [LocalDelta(0, zero[:3])], {0: 1.0}, {0: 1}, 1)


@settings(max_examples=30)
@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_full_participation_equals_weighted_average(n, seed):
    rng = np.random.default_rng(seed)
    c = _central(rng)
    ws = [rng.normal(size=c.theta.flat.shape) for _ in range(n)]
    cw = central_weight(rng.integers(1, 100, size=n))
    deltas = [LocalDelta(i, c.theta.flat - w) for i, w in enumerate(ws)]
    out = aggregate(c, deltas, dict(enumerate(cw)), {i: 1 for i in range(n)}, n)
    assert np.max(np.abs(out.theta.flat - sum(ci * w for ci, w in zip(cw, ws)))) < 1e-9
    assert out.theta.flat.shape == c.theta.flat.shape


# ---------------------------------------------------------------- fed_ds_round

class StubBuffer:
    def __init__(self, k):
        self.round_count = k


class StubLearner:
    def __init__(self, params, k):
        self.params = params
        self.buffer = StubBuffer(k)

    def set_params(self, params):
        self.params = params.copy()


@dataclass
class StubEdge:
    edge_id: int
    learner: StubLearner
    round_start: PolicyParams


def _edges(rng, central, n, k=100):
    edges = []
    for i in range(n):
        moved = PolicyParams(SIZES, central.theta.flat + rng.normal(size=central.theta.flat.shape))
        edges.append(StubEdge(i, StubLearner(moved, k), central.theta.copy()))
    return edges


def test_fed_ds_round_broadcasts_to_all_edges():
    rng = np.random.default_rng(7)
    c = _central(rng)
    edges = _edges(rng, c, 3)
    w0 = edges[0].learner.params.flat.copy()
    out = fed_ds_round("A", {0: 1, 1: 0, 2: 0}, edges, c)
    # only edge 0 uploads, so theta' is its parameters; edge 1 and 2 are overwritten
    assert np.allclose(out.theta.flat, w0)
    for e in edges:
        assert np.array_equal(e.learner.params.flat, out.theta.flat)
        assert np.array_equal(e.round_start.flat, out.theta.flat)


def test_fed_ds_round_rebroadcast_is_noop():
    rng = np.random.default_rng(8)
    c = _central(rng)
    edges = _edges(rng, c, 2)
    out = fed_ds_round("A", {0: 1, 1: 1}, edges, c)
    again = fed_ds_round("A", {0: 1, 1: 1}, edges, out)
    assert np.array_equal(again.theta.flat, out.theta.flat)


def test_fed_ds_round_zero_experience_falls_back_to_uniform():
    rng = np.random.default_rng(9)
    c = _central(rng)
    edges = _edges(rng, c, 2, k=0)
    out = fed_ds_round("A", {0: 1, 1: 1}, edges, c)
    mean = 0.5 * (edges[0].learner.params.flat + edges[1].learner.params.flat)
    assert np.allclose(out.theta.flat, mean)


def test_fed_ds_round_independent_of_edge_order():
    rng = np.random.default_rng(10)
    c = _central(rng)
    a = _edges(rng, c, 4)
    b = [StubEdge(e.edge_id, StubLearner(e.learner.params.copy(), 100), e.round_start.copy())
         for e in reversed(a)]
    avail = {0: 1, 1: 0, 2: 1, 3: 1}
    assert np.array_equal(fed_ds_round("A", avail, a, c).theta.flat,
                          fed_ds_round("A", avail, b, c).theta.flat)
