"""Benchmark the fused LIF kernels: compiled extension vs numpy fallback
vs the composed tape path, plus an end-to-end training-step comparison.

Usage: python benchmarks/bench_lif.py [--repeats N]
"""

import argparse
import time

import numpy as np

import spikeprune._kernels as kernels
from spikeprune._kernels import lif_numpy
from spikeprune.data import synth_dataset
from spikeprune.model import build_model, model_forward
from spikeprune.neuron import SLIFParams, layer_forward
from spikeprune.optim import AdamW
from spikeprune.tensor import Tape, Tensor, cross_entropy

try:
    from spikeprune._kernels import _lif_cy
except ImportError:
    _lif_cy = None


def timeit(fn, repeats):
    fn()  # warmup
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    print("== fused kernel: forward + backward, [T, M] f32 ==")
    header = f"{'shape':>16} {'numpy':>12}"
    impls = [("numpy", lif_numpy)]
    if _lif_cy is not None:
        header += f" {'cython':>12} {'speedup':>9}"
        impls.append(("cython", _lif_cy))
    print(header)
    for T, M in [(4, 4096), (4, 65536), (16, 16384), (64, 4096)]:
        rng = np.random.default_rng(0)
        cur = rng.uniform(-1, 3, size=(T, M)).astype(np.float32)
        g = rng.standard_normal((T, M)).astype(np.float32)
        times = {}
        for name, impl in impls:
            def run(impl=impl):
                spikes, u_pre = impl.lif_forward(cur, 2.0, 1.0, 0.0, True, 1.0, False)
                impl.lif_backward(g, spikes, u_pre, 2.0, 1.0, 0.0, True, 1.0, False)

            times[name] = timeit(run, repeats)
        line = f"{f'{T}x{M}':>16} {times['numpy'] * 1e3:>10.3f}ms"
        if "cython" in times:
            line += (f" {times['cython'] * 1e3:>10.3f}ms"
                     f" {times['numpy'] / times['cython']:>8.1f}x")
        print(line)


def bench_layer_paths(repeats):
    print("\n== layer_forward + backward: composed tape vs fused kernel ==")
    p = SLIFParams.create(tau=2.0, u_th=1.0, learnable=True)
    rng = np.random.default_rng(1)
    cur = rng.uniform(-1, 3, size=(8, 16, 16, 64)).astype(np.float32)

    def run(fused):
        i = Tensor(cur, requires_grad=True)
        with Tape() as tape:
            out = layer_forward(i, p, fused=fused)
            loss = out.sum()
        tape.backward(loss)

    t_composed = timeit(lambda: run(False), repeats)
    t_fused = timeit(lambda: run(True), repeats)
    print(f"{'composed (tape primitives)':>32} {t_composed * 1e3:>10.3f}ms")
    print(f"{'fused (' + kernels.BACKEND + ' kernel)':>32} {t_fused * 1e3:>10.3f}ms"
          f" {t_composed / t_fused:>8.1f}x")


def bench_train_step(repeats):
    print("\n== one training step, Spikformer-2-32-128 (batch 32) ==")
    data = synth_dataset(classes=4, patches=16, d_in=32, T=4, n_train=32, n_test=8,
                         r_high=0.5, r_low=0.15, seed=0)
    model = build_model("Spikformer-2-32-128", d_in=32, num_classes=4, T=4, heads=4,
                        seed=0, init_gain=3.5, surrogate_width=2.0)
    opt = AdamW(model.weight_tensors(), lr=1e-4)
    xb = Tensor(data.x_train)
    yb = data.y_train

    def step():
        with Tape() as tape:
            loss = cross_entropy(model_forward(xb, model), yb)
        tape.backward(loss)
        opt.step()

    active = (kernels.lif_forward, kernels.lif_backward)
    results = {}
    backends = [("numpy", (lif_numpy.lif_forward, lif_numpy.lif_backward))]
    if _lif_cy is not None:
        backends.append(("cython", (_lif_cy.lif_forward, _lif_cy.lif_backward)))
    try:
        for name, (fwd, bwd) in backends:
            kernels.lif_forward, kernels.lif_backward = fwd, bwd
            results[name] = timeit(step, repeats)
    finally:
        kernels.lif_forward, kernels.lif_backward = active
    for name, t in results.items():
        print(f"{name:>32} {t * 1e3:>10.3f}ms")
    if "cython" in results:
        print(f"{'fallback/compiled ratio':>32} {results['numpy'] / results['cython']:>10.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    print(f"active backend: {kernels.BACKEND}")
    bench_kernels(args.repeats)
    bench_layer_paths(args.repeats)
    bench_train_step(max(3, args.repeats // 4))


if __name__ == "__main__":
    main()
