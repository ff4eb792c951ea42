"""Self-contained correctness checks behind the ``validate`` CLI command.

Each check recomputes its expected values from first principles (hand
arithmetic, scalar reimplementations, finite differences) so a broken build
cannot agree with itself. The pytest suite covers strictly more; this module
is the quick field diagnostic.
"""

from __future__ import annotations

import math
from typing import Callable, List, Tuple

import numpy as np

from . import nn
from .agent import softmax_probs
from .config import ExperimentConfig, SimConfig, Strategy
from .env import SliceBuffer, SlicingEnv, build_state, enqueue_with_overflow, transmit, utility
from .env_types import Packet
from .harness import simulate_run
from .scheduler import ConvergenceDetector, EpisodePlan, channel_budget
from .traffic import DEFAULT_PROFILES

Check = Tuple[str, bool, str]


def _check_transmit() -> Check:
    cfg = SimConfig()
    buf = SliceBuffer(0, cfg.queue_capacity)
    for i in range(50):
        buf.push(arrival_slot=0, user_id=0)
    chi, delivered = transmit(buf, 4, 10, cfg)
    ok = chi == 7 and len(buf) == 43
    buf2 = SliceBuffer(0, cfg.queue_capacity)
    for i in range(50):
        buf2.push(0, 0)
    chi2, _ = transmit(buf2, 10, 10, cfg)
    ok = ok and chi2 == 19
    buf3 = SliceBuffer(0, cfg.queue_capacity)
    chi3, _ = transmit(buf3, 10, 5, cfg)
    ok = ok and chi3 == 0
    return ("transmit capacity", ok, f"chi(4)={chi}, chi(10)={chi2}, chi(empty)={chi3}")


def _check_overflow() -> Check:
    cfg = SimConfig()
    buf = SliceBuffer(0, cfg.queue_capacity)
    for i in range(91):
        buf.push(i, 0)
    arrivals = [Packet(0, 0, 91) for _ in range(15)]
    omega, dropped = enqueue_with_overflow(buf, arrivals)
    ok = omega == 6 and len(buf) == 100 and len(dropped) == 6
    return ("buffer overflow", ok, f"omega={omega}, len={len(buf)}")


def _check_utility() -> Check:
    ncvi = DEFAULT_PROFILES[1]
    cvi = DEFAULT_PROFILES[3]
    vals = (utility(ncvi, 60), utility(cvi, 10), utility(cvi, 11),
            utility(ncvi, 0), utility(cvi, math.inf))
    ok = vals == (0.5, 1.0, 0.0, 1.0, 0.0)
    return ("delay utility", ok, f"values={vals}")


def _check_hand_trace() -> Check:
    cfg = SimConfig(num_users=1, fixed_profiles=("NCVI",))
    env = SlicingEnv(cfg, backend_mode="python")
    env.reset(np.random.default_rng(0))
    env.alloc[:] = (10, 0)
    outcomes = env.run_slots_traced(3)
    ok = (outcomes[0].chi[0] == 0
          and outcomes[1].chi[0] == 7
          and all(d == 1 for _, d in outcomes[1].delivered[0])
          and outcomes[1].phi == 1.0
          and outcomes[2].chi[0] == 8
          and outcomes[2].phi == 1.0)
    return ("three-slot hand trace", ok,
            f"chi={[o.chi[0] for o in outcomes]}, phi={[o.phi for o in outcomes]}")


def _check_budget() -> Check:
    cfg = SimConfig()
    expect = []
    actual = []
    for t_rho in range(6):
        for sync in (False, True):
            plan = EpisodePlan(100, 100 - t_rho, t_rho, sync)
            budget = channel_budget(plan, cfg)
            bits = t_rho * 100_000
            want = max(bits - (92_256 if sync else 0), 0) // 704
            expect.append(want)
            actual.append(budget.transitions)
    ok = actual == expect and actual[4] == 284 and actual[3] == 11
    return ("channel budget table", ok, f"transitions={actual}")


def _check_state_encoding() -> Check:
    cfg = SimConfig()
    env = SlicingEnv(cfg, backend_mode="python")
    env.reset(np.random.default_rng(1))
    state = build_state(env.buffers, np.array([5, 5]), env.users, 0, cfg)
    ok = np.allclose(state, [0, 1, 1, 0, 0, 1, 1, 0])
    return ("empty-system state", ok, f"state={state.tolist()}")


def _check_forward() -> Check:
    rng = np.random.default_rng(2)
    net = nn.init_net(rng, 8, 3)
    x = rng.standard_normal(8)
    got = nn.forward(net, x)
    w1, b1, w2, b2, w3, b3 = net.views()

    def layer(vec, w, b, relu):
        out = []
        for j in range(w.shape[1]):
            acc = b[j]
            for i in range(w.shape[0]):
                acc += vec[i] * w[i, j]
            out.append(max(acc, 0.0) if relu else acc)
        return out

    want = layer(layer(layer(list(x), w1, b1, True), w2, b2, True), w3, b3, False)
    ok = np.allclose(got, want, rtol=1e-12, atol=1e-12)
    return ("forward pass vs scalar loops", ok, f"max err={np.max(np.abs(got - want)):.2e}")


def _check_gradient() -> Check:
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(3):
        net = nn.init_net(rng, 8, 3)
        x = rng.standard_normal(8)
        action = int(rng.integers(3))
        target = float(rng.standard_normal())
        grad = nn.grad_td_loss(net, x, action, target)
        h = 1e-5
        for idx in rng.choice(net.n_params, size=60, replace=False):
            keep = net.params[idx]
            net.params[idx] = keep + h
            up = (nn.forward(net, x)[action] - target) ** 2
            net.params[idx] = keep - h
            dn = (nn.forward(net, x)[action] - target) ** 2
            net.params[idx] = keep
            fd = (up - dn) / (2 * h)
            err = abs(grad[idx] - fd) / max(1e-7, abs(fd), abs(grad[idx]))
            worst = max(worst, err)
    ok = worst < 1e-4
    return ("backprop vs finite differences", ok, f"worst rel err={worst:.2e}")


def _check_adam() -> Check:
    net = nn.ValueNet(2, 2)
    net.params[:] = 1.0
    adam = nn.AdamState.for_net(net, learning_rate=1e-5)
    nn.adam_step(net, adam, np.zeros(net.n_params))
    ok = np.all(net.params == 1.0)
    net2 = nn.ValueNet(2, 2)
    adam2 = nn.AdamState.for_net(net2, learning_rate=0.01)
    nn.adam_step(net2, adam2, np.ones(net2.n_params))
    ok = ok and np.allclose(net2.params, -0.01, rtol=1e-6)
    return ("adam basics", ok, f"first step={net2.params[0]:.6f}")


def _check_softmax() -> Check:
    q = np.array([1.0, 0.0, 0.0])
    probs = softmax_probs(q, [0, 1, 2], 0.5)
    scaled = np.exp((q - q.max()) / 0.5)
    want = scaled / scaled.sum()
    ok = np.allclose(probs, want, rtol=1e-12)
    masked = softmax_probs(q, [0, 2], 0.5)
    ok = ok and masked[1] == 0.0 and abs(masked.sum() - 1.0) < 1e-12
    return ("softmax with masking", ok, f"p={probs.tolist()}")


def _check_detector() -> Check:
    det = ConvergenceDetector(window=3)
    for r in np.linspace(0.1, 0.9, 12):
        det.update(float(r))
    ok = not det.fired
    det2 = ConvergenceDetector(window=3)
    for _ in range(6):
        det2.update(0.5)
    ok = ok and det2.fired and det2.fired_at == 6
    return ("convergence detector", ok, f"fired_at={det2.fired_at}")


def _check_conservation() -> Check:
    cfg = ExperimentConfig(episodes=3, detector_window=2,
                           strategies=(Strategy("constant", 2),))
    ok = True
    detail = []
    for rec in simulate_run(cfg, cfg.strategies[0], run_id=0):
        ok = ok and 0.0 <= rec.mean_phi <= 1.0
        detail.append(round(rec.mean_phi, 4))
    return ("reward bounds over episodes", ok, f"means={detail}")


def _check_determinism() -> Check:
    cfg = ExperimentConfig(episodes=2, detector_window=2,
                           strategies=(Strategy("constant", 1),), base_seed=42)
    a = [r for r in simulate_run(cfg, cfg.strategies[0], 0)]
    b = [r for r in simulate_run(cfg, cfg.strategies[0], 0)]
    ok = a == b
    return ("repeatable runs", ok, f"episodes={len(a)}")


ALL_CHECKS: List[Callable[[], Check]] = [
    _check_transmit,
    _check_overflow,
    _check_utility,
    _check_hand_trace,
    _check_budget,
    _check_state_encoding,
    _check_forward,
    _check_gradient,
    _check_adam,
    _check_softmax,
    _check_detector,
    _check_conservation,
    _check_determinism,
]


def run_all(verbose: bool = True) -> bool:
    all_ok = True
    for fn in ALL_CHECKS:
        try:
            name, ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            name, ok, detail = fn.__name__, False, f"raised {exc!r}"
        all_ok = all_ok and ok
        if verbose:
            print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    return all_ok
