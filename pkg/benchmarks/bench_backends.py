#!/usr/bin/env python3
"""Compare the compiled core against the pure-Python path.

Runs identical workloads on both backends and reports per-call times plus
whole-episode throughput. Works with the fallback alone if the extension is
not built (it then only prints the Python numbers).
"""

import time

import numpy as np

from slicesim import backend, nn
from slicesim.agent import AgentPair, Transition, sarsa_train
from slicesim.config import ExperimentConfig, SimConfig, Strategy
from slicesim.env import SlicingEnv, valid_actions
from slicesim.harness import simulate_run


def timeit(fn, repeat, warmup=3):
    for _ in range(warmup):
        fn()
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat


def bench_env_interval(mode, repeat=200):
    rng = np.random.default_rng(0)
    env = SlicingEnv(SimConfig(), backend_mode=mode)
    env.reset(rng)
    acts = iter([])

    def step():
        nonlocal acts
        if env.slot + 10 > env.cfg.slots_per_episode:
            env.reset(rng)
        a = valid_actions(env.alloc)[0]
        env.step_decision_interval(a)

    return timeit(step, repeat)


def bench_forward(mode, repeat=2000):
    backend.set_backend(mode)
    rng = np.random.default_rng(1)
    net = nn.init_net(rng, 8, 3)
    x = rng.standard_normal(8)
    try:
        return timeit(lambda: nn.forward(net, x), repeat)
    finally:
        backend.set_backend("auto")


def bench_train_chain(mode, repeat=30):
    backend.set_backend(mode)
    rng = np.random.default_rng(2)
    batch = [
        Transition(rng.standard_normal(8), int(rng.integers(3)),
                   rng.standard_normal(8), float(rng.random()), int(rng.integers(3)))
        for _ in range(100)
    ]
    pair = AgentPair.create(rng, SimConfig())
    try:
        return timeit(lambda: sarsa_train(pair, batch), repeat)
    finally:
        backend.set_backend("auto")


def bench_episodes(mode, episodes=30):
    backend.set_backend(mode)
    try:
        cfg = ExperimentConfig(sim=SimConfig(), episodes=episodes,
                               detector_window=episodes,
                               strategies=(Strategy("constant", 3),), base_seed=3)
        start = time.perf_counter()
        for _ in simulate_run(cfg, cfg.strategies[0], 0):
            pass
        return (time.perf_counter() - start) / episodes
    finally:
        backend.set_backend("auto")


def main():
    modes = ["python"]
    if backend.HAVE_COMPILED:
        modes.append("c")
    else:
        print("compiled core not built; showing the pure-Python path only\n")

    rows = [
        ("decision interval (10 slots)", bench_env_interval, 1e6, "us"),
        ("value net forward", bench_forward, 1e6, "us"),
        ("train on 100 transitions", bench_train_chain, 1e3, "ms"),
        ("full episode (constant:3)", bench_episodes, 1e3, "ms"),
    ]
    print(f"{'workload':<32}" + "".join(f"{m:>14}" for m in modes) + f"{'speedup':>10}")
    for name, fn, scale, unit in rows:
        times = {m: fn(m) for m in modes}
        cells = "".join(f"{times[m] * scale:>12.2f}{unit}" for m in modes)
        if len(modes) == 2:
            cells += f"{times['python'] / times['c']:>9.1f}x"
        print(f"{name:<32}{cells}")


if __name__ == "__main__":
    main()
