"""The compiled core and the pure-Python path must agree.

Queue dynamics are integer arithmetic plus identically ordered float sums, so
those trajectories are compared bit for bit. The network kernels sum in a
different order than BLAS, so they are compared to tight tolerances instead.
"""

import numpy as np
import pytest

from slicesim import backend, nn
from slicesim.config import SimConfig
from slicesim.env import SlicingEnv, valid_actions

pytestmark = pytest.mark.skipif(
    not backend.HAVE_COMPILED, reason="compiled core not built"
)


def paired_envs(cfg=None, seed=0):
    cfg = cfg or SimConfig()
    envs = []
    for mode in ("python", "c"):
        rng = np.random.default_rng(seed)
        env = SlicingEnv(cfg, backend_mode=mode)
        env.reset(rng)
        envs.append(env)
    return envs


def test_env_trajectories_bitwise_identical():
    py, cc = paired_envs(seed=3)
    rng = np.random.default_rng(99)
    for _ in range(100):
        acts = valid_actions(py.alloc)
        action = acts[int(rng.integers(len(acts)))]
        s_py, phi_py = py.step_decision_interval(action)
        s_cc, phi_cc = cc.step_decision_interval(action)
        assert phi_py == phi_cc                       # bitwise, not approx
        assert np.array_equal(s_py, s_cc)
        assert np.array_equal(py._q_meta, cc._q_meta)
    assert np.array_equal(py.counters, cc.counters)
    assert np.array_equal(py._slot_phis, cc._slot_phis)
    assert np.array_equal(py._q_arrival, cc._q_arrival)
    assert np.array_equal(py._q_user, cc._q_user)
    assert [u.bit_accumulator for u in py.users] == [u.bit_accumulator for u in cc.users]
    assert [u.onoff_state for u in py.users] == [u.onoff_state for u in cc.users]


def test_env_update_phase_parity():
    py, cc = paired_envs(seed=4)
    for env in (py, cc):
        env.begin_update_phase()
    for _ in range(50):
        assert py.step_update_interval() == cc.step_update_interval()
    assert np.array_equal(py.counters, cc.counters)


def test_env_parity_under_overload():
    # one-sided allocation forces drops; the overflow path must agree too
    cfg = SimConfig(num_users=5, fixed_profiles=("NCVI",) * 5)
    py, cc = paired_envs(cfg, seed=5)
    for env in (py, cc):
        env.alloc[:] = (1, 9)
    for _ in range(100):
        assert py._run_slots(10) == cc._run_slots(10)
    assert py.counters[0, 2] > 0          # drops actually happened
    assert np.array_equal(py.counters, cc.counters)


def test_state_encoding_parity():
    py, cc = paired_envs(seed=6)
    rng = np.random.default_rng(1)
    for _ in range(30):
        acts = valid_actions(py.alloc)
        a = acts[int(rng.integers(len(acts)))]
        s_py, _ = py.step_decision_interval(a)
        s_cc, _ = cc.step_decision_interval(a)
        assert np.array_equal(s_py, s_cc)


def test_nn_forward_parity():
    rng = np.random.default_rng(7)
    for _ in range(20):
        net = nn.init_net(rng, 8, 3)
        x = rng.standard_normal(8)
        outputs = {}
        for mode in ("python", "c"):
            backend.set_backend(mode)
            try:
                outputs[mode] = nn.forward(net, x)
            finally:
                backend.set_backend("auto")
        np.testing.assert_allclose(outputs["c"], outputs["python"],
                                   rtol=1e-12, atol=1e-14)


def test_nn_batch_and_grad_parity():
    rng = np.random.default_rng(8)
    net = nn.init_net(rng, 8, 3)
    xs = rng.standard_normal((40, 8))
    acts = rng.integers(0, 3, size=40)
    targets = rng.standard_normal(40)
    results = {}
    for mode in ("python", "c"):
        backend.set_backend(mode)
        try:
            results[mode] = (
                nn.forward_batch(net, xs),
                nn.td_batch_grad(net, xs, acts, targets),
            )
        finally:
            backend.set_backend("auto")
    np.testing.assert_allclose(results["c"][0], results["python"][0],
                               rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(results["c"][1], results["python"][1],
                               rtol=1e-9, atol=1e-12)


def test_fused_training_chain_matches_generic_path():
    from slicesim.agent import AgentPair, Transition, sarsa_train
    from slicesim.config import SimConfig

    rng = np.random.default_rng(0)
    batch = [
        Transition(rng.standard_normal(8), int(rng.integers(3)),
                   rng.standard_normal(8), float(rng.random()), int(rng.integers(3)))
        for _ in range(100)
    ]
    results = {}
    for mode in ("c", "python"):
        backend.set_backend(mode)
        try:
            pair = AgentPair.create(np.random.default_rng(42),
                                    SimConfig(learning_rate=1e-3, batch_size=1))
            sarsa_train(pair, batch)
            results[mode] = (pair.training_net.params.copy(), pair.adam.step_count)
        finally:
            backend.set_backend("auto")
    assert results["c"][1] == results["python"][1] == 100
    np.testing.assert_allclose(results["c"][0], results["python"][0],
                               rtol=1e-10, atol=1e-13)


def test_auto_backend_prefers_compiled():
    assert backend.backend_name() == "c"
