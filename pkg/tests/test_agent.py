import numpy as np
import pytest

from slicesim import nn
from slicesim.agent import (
    AgentPair,
    ReplayMemory,
    Transition,
    draw_for_upload,
    greedy_action,
    sarsa_train,
    select_action,
    softmax_probs,
    sync,
)
from slicesim.config import SimConfig


def fixed_output_net(q_values):
    """A network that outputs the same action values for every state."""
    net = nn.ValueNet(8, len(q_values))
    *_, b3 = net.views()
    b3[:] = q_values
    return net


def make_transition(rng, reward=None):
    return Transition(
        state=rng.standard_normal(8),
        action=int(rng.integers(3)),
        next_state=rng.standard_normal(8),
        reward=float(rng.random()) if reward is None else reward,
        next_action=int(rng.integers(3)),
    )


# -- softmax exploration ------------------------------------------------------

def test_softmax_example_values():
    probs = softmax_probs(np.array([1.0, 0.0, 0.0]), [0, 1, 2], temperature=0.5)
    # direct evaluation: p = exp(q/T) / sum, computed independently here
    scaled = np.exp(np.array([1.0, 0.0, 0.0]) / 0.5)
    expected = scaled / scaled.sum()
    np.testing.assert_allclose(probs, expected, rtol=1e-12)
    np.testing.assert_allclose(probs[0], 1 / (1 + 2 * np.exp(-2)), rtol=1e-12)


def test_softmax_equal_values_uniform():
    probs = softmax_probs(np.zeros(3), [0, 1, 2], temperature=1.0)
    np.testing.assert_allclose(probs, [1 / 3] * 3, rtol=1e-15)


def test_softmax_masked_probability_exactly_zero():
    rng = np.random.default_rng(0)
    for _ in range(100):
        q = rng.standard_normal(3) * 50
        probs = softmax_probs(q, [0, 2], temperature=0.1)
        assert probs[1] == 0.0
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_softmax_temperature_scale_invariance():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.standard_normal(3)
        c = float(rng.uniform(0.1, 10))
        a = softmax_probs(q, [0, 1, 2], 0.3)
        b = softmax_probs(q * c, [0, 1, 2], 0.3 * c)
        np.testing.assert_allclose(a, b, rtol=1e-9)


def test_softmax_overflow_safe():
    probs = softmax_probs(np.array([1e6, 0.0, -1e6]), [0, 1, 2], temperature=0.1)
    assert np.isfinite(probs).all() and probs[0] == pytest.approx(1.0)


def test_softmax_rejects_nonpositive_temperature():
    with pytest.raises(ValueError):
        softmax_probs(np.zeros(3), [0, 1], 0.0)


def test_select_action_masks_empty_donor():
    net = fixed_output_net([0.0, 10.0, 0.0])  # strongly prefers the masked move
    alloc = np.array([0, 10], dtype=np.int64)
    rng = np.random.default_rng(2)
    picks = {select_action(net, np.zeros(8), alloc, 0.1, rng) for _ in range(300)}
    assert picks <= {0, 2}


def test_select_action_sampling_frequencies():
    net = fixed_output_net([1.0, 0.0, 0.0])
    alloc = np.array([5, 5], dtype=np.int64)
    rng = np.random.default_rng(3)
    probs = softmax_probs(np.array([1.0, 0.0, 0.0]), [0, 1, 2], 0.5)
    n = 20_000
    counts = np.zeros(3)
    for _ in range(n):
        counts[select_action(net, np.zeros(8), alloc, 0.5, rng)] += 1
    np.testing.assert_allclose(counts / n, probs, atol=0.01)


# -- greedy action ---------------------------------------------------------------

def test_greedy_action_argmax():
    net = fixed_output_net([0.2, 0.9, 0.1])
    assert greedy_action(net, np.zeros(8), np.array([5, 5])) == 1


def test_greedy_action_respects_mask():
    net = fixed_output_net([0.2, 0.9, 0.1])
    assert greedy_action(net, np.zeros(8), np.array([0, 10])) == 0


def test_greedy_action_tie_breaks_low_index():
    net = fixed_output_net([0.5, 0.5, 0.1])
    assert greedy_action(net, np.zeros(8), np.array([5, 5])) == 0


def test_greedy_action_shift_invariant():
    rng = np.random.default_rng(4)
    base = nn.init_net(rng, 8, 3)
    shifted = nn.copy_net(base)
    *_, b3 = shifted.views()
    b3 += 17.5
    for _ in range(20):
        x = rng.standard_normal(8)
        alloc = np.array([5, 5])
        assert greedy_action(base, x, alloc) == greedy_action(shifted, x, alloc)


# -- replay memory -----------------------------------------------------------------

def test_memory_fifo_eviction():
    rng = np.random.default_rng(5)
    mem = ReplayMemory(capacity=2)
    t1, t2, t3 = (make_transition(rng) for _ in range(3))
    mem.record(t1)
    mem.record(t2)
    mem.record(t3)
    assert mem.entries() == [t2, t3]


def test_memory_grows_below_capacity():
    rng = np.random.default_rng(6)
    mem = ReplayMemory(capacity=10)
    for i in range(5):
        mem.record(make_transition(rng))
        assert len(mem) == i + 1


def test_memory_matches_list_model():
    rng = np.random.default_rng(7)
    mem = ReplayMemory(capacity=50)
    model = []
    for _ in range(1000):
        t = make_transition(rng)
        mem.record(t)
        model.append(t)
        if len(model) > 50:
            model.pop(0)
        assert len(mem) == len(model)
    assert mem.entries() == model


# -- upload sampling ----------------------------------------------------------------

def test_draw_zero_budget():
    rng = np.random.default_rng(8)
    mem = ReplayMemory(10)
    mem.record(make_transition(rng))
    state = rng.bit_generator.state
    assert draw_for_upload(mem, 0, rng) == []
    assert rng.bit_generator.state == state  # stream untouched


def test_draw_exhaustive_budget():
    rng = np.random.default_rng(9)
    mem = ReplayMemory(100)
    for _ in range(7):
        mem.record(make_transition(rng))
    drawn = draw_for_upload(mem, 50, rng)
    assert len(drawn) == 7
    assert {id(t) for t in drawn} == {id(t) for t in mem.entries()}
    assert len(mem) == 7  # copied, not consumed


def test_draw_distinct_and_uniform():
    rng = np.random.default_rng(10)
    mem = ReplayMemory(1000)
    for _ in range(1000):
        mem.record(make_transition(rng))
    entries = {id(t): i for i, t in enumerate(mem.entries())}
    hits = np.zeros(1000)
    n_draws = 8000
    for _ in range(n_draws):
        drawn = draw_for_upload(mem, 284, rng)
        assert len(drawn) == 284 and len({id(t) for t in drawn}) == 284
        for t in drawn:
            hits[entries[id(t)]] += 1
    freq = hits / n_draws
    assert np.all(np.abs(freq - 0.284) < 0.02)


# -- pair bookkeeping ----------------------------------------------------------------

def test_agent_pair_starts_in_sync():
    pair = AgentPair.create(np.random.default_rng(11), SimConfig())
    assert np.array_equal(pair.inference_net.params, pair.training_net.params)
    assert pair.discount == 0.95 and pair.temperature == 0.1
    assert pair.batch_size == 32


def test_sync_copies_and_isolates():
    rng = np.random.default_rng(12)
    pair = AgentPair.create(rng, SimConfig())
    pair.training_net.params += 0.1
    sync(pair)
    xs = rng.standard_normal((100, 8))
    np.testing.assert_array_equal(
        nn.forward_batch(pair.inference_net, xs),
        nn.forward_batch(pair.training_net, xs),
    )
    before = pair.inference_net.params.copy()
    sarsa_train(pair, [make_transition(rng) for _ in range(8)])
    assert np.array_equal(pair.inference_net.params, before)


def test_sync_idempotent():
    rng = np.random.default_rng(13)
    pair = AgentPair.create(rng, SimConfig())
    pair.training_net.params += 0.5
    sync(pair)
    first = pair.inference_net.params.copy()
    sync(pair)
    assert np.array_equal(pair.inference_net.params, first)


# -- sarsa training -----------------------------------------------------------------

def test_sarsa_train_empty_batch_noop():
    pair = AgentPair.create(np.random.default_rng(14), SimConfig())
    before = pair.training_net.params.copy()
    sarsa_train(pair, [])
    assert np.array_equal(pair.training_net.params, before)
    assert pair.adam.step_count == 0


def test_sarsa_train_batching_arithmetic():
    rng = np.random.default_rng(15)
    pair = AgentPair.create(rng, SimConfig(batch_size=32))
    sarsa_train(pair, [make_transition(rng) for _ in range(64)])
    assert pair.adam.step_count == 2
    sarsa_train(pair, [make_transition(rng) for _ in range(65)])
    assert pair.adam.step_count == 2 + 3  # final partial batch included


def test_sarsa_train_unit_batches():
    rng = np.random.default_rng(15)
    pair = AgentPair.create(rng, SimConfig(batch_size=1))
    sarsa_train(pair, [make_transition(rng) for _ in range(10)])
    assert pair.adam.step_count == 10


def test_sarsa_train_never_touches_inference_net():
    rng = np.random.default_rng(16)
    pair = AgentPair.create(rng, SimConfig())
    inference_before = pair.inference_net.params.copy()
    training_before = pair.training_net.params.copy()
    sarsa_train(pair, [make_transition(rng) for _ in range(100)])
    assert np.array_equal(pair.inference_net.params, inference_before)
    assert not np.array_equal(pair.training_net.params, training_before)


def test_sarsa_train_myopic_regression():
    # with discount zero the update regresses Q(s, a) straight onto rewards
    rng = np.random.default_rng(17)
    cfg = SimConfig(discount=0.0, learning_rate=1e-3)
    pair = AgentPair.create(rng, cfg)
    assert pair.discount == 0.0
    t = make_transition(rng, reward=0.75)
    for _ in range(3000):
        sarsa_train(pair, [t])
    q = nn.forward(pair.training_net, t.state)[t.action]
    assert abs(q - 0.75) < 0.01


def test_sarsa_train_bellman_fixed_point():
    rng = np.random.default_rng(18)
    cfg = SimConfig(discount=0.9, learning_rate=1e-3)
    pair = AgentPair.create(rng, cfg)
    t = make_transition(rng, reward=0.5)
    for _ in range(10_000):
        sarsa_train(pair, [t])
    q_sa = nn.forward(pair.training_net, t.state)[t.action]
    q_next = nn.forward(pair.training_net, t.next_state)[t.next_action]
    assert abs(q_sa - (0.5 + 0.9 * q_next)) < 1e-3


def test_sarsa_train_mse_decreases_in_windows():
    rng = np.random.default_rng(19)
    cfg = SimConfig(discount=0.0, learning_rate=1e-3, batch_size=32)
    pair = AgentPair.create(rng, cfg)
    data = [make_transition(rng) for _ in range(64)]
    states = np.stack([t.state for t in data])
    acts = np.array([t.action for t in data])
    rewards = np.array([t.reward for t in data])

    def mse():
        q = nn.forward_batch(pair.training_net, states)
        picked = q[np.arange(len(data)), acts]
        return float(np.mean((picked - rewards) ** 2))

    losses = []
    for _ in range(60):
        sarsa_train(pair, data)
        losses.append(mse())
    windows = [np.mean(losses[i:i + 10]) for i in range(0, 60, 10)]
    assert all(b <= a + 1e-12 for a, b in zip(windows, windows[1:]))
