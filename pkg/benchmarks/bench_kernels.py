"""Time the compiled and numpy kernel backends on search-sized tensors.

Usage: python benchmarks/bench_kernels.py [--batch 32] [--channels 16] [--size 32] [--repeat 5]

Each row reports the best-of-``repeat`` time of one call per backend and the
speedup; the last row times a full supernet loss-and-gradient step.
"""
import argparse
import timeit

import numpy as np

from posenas import kernels
from posenas.nas import network
from posenas.nas.genotype import CellGenotype, Node, SearchSpace


def cases(batch, channels, size, rng):
    x = rng.normal(size=(batch, channels, size, size))
    w3, w5 = rng.normal(size=(channels, 3, 3)), rng.normal(size=(channels, 5, 5))
    out3 = kernels.depthwise_conv_forward(x, w3, 1)
    _, arg = kernels.max_pool_forward(x, 3, 1)
    return {
        "depthwise 3x3 forward": lambda: kernels.depthwise_conv_forward(x, w3, 1),
        "depthwise 5x5 forward": lambda: kernels.depthwise_conv_forward(x, w5, 1),
        "depthwise 3x3 backward": lambda: kernels.depthwise_conv_backward(x, w3, 1, out3),
        "depthwise 3x3 stride 2": lambda: kernels.depthwise_conv_forward(x, w3, 2),
        "max pool forward": lambda: kernels.max_pool_forward(x, 3, 1),
        "max pool backward": lambda: kernels.max_pool_backward(x.shape, 3, 1, arg, x),
        "avg pool forward": lambda: kernels.avg_pool_forward(x, 3, 1),
        "avg pool backward": lambda: kernels.avg_pool_backward(x.shape, 3, 1, x),
    }


def supernet_step(batch, channels, size, rng):
    space = SearchSpace(5, stem_channels=channels)
    store = network.init_store(space, network.macro_layout(1), 3, 0)
    nodes = (Node(0, 1, 1, 2), Node(0, 3, 2, 4), Node(1, 1, 3, 0), Node(2, 2, 4, 3), Node(0, 4, 5, 1))
    g = CellGenotype(nodes, nodes)
    x = rng.random((batch, 3, size, size))
    y = rng.integers(0, 3, batch)
    return lambda: network.loss_and_grads(store, g, x, y)


def best_time(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels are not built; only the numpy backend is timed")
    previous = kernels.backend()
    rng = np.random.default_rng(0)
    names = list(cases(args.batch, args.channels, args.size, rng)) + ["supernet loss+grad step"]
    times = {}
    for b in backends:
        kernels.set_backend(b)
        fns = cases(args.batch, args.channels, args.size, np.random.default_rng(0))
        fns["supernet loss+grad step"] = supernet_step(args.batch, args.channels, args.size,
                                                       np.random.default_rng(0))
        times[b] = {n: best_time(fns[n], args.repeat) for n in names}
    kernels.set_backend(previous)

    print(f"input {args.batch}x{args.channels}x{args.size}x{args.size}, best of {args.repeat}")
    header = f"{'kernel':<26}" + "".join(f"{b + ' ms':>12}" for b in backends)
    print(header + ("   speedup" if len(backends) > 1 else ""))
    for n in names:
        row = f"{n:<26}" + "".join(f"{1e3 * times[b][n]:12.2f}" for b in backends)
        if len(backends) > 1:
            row += f"{times['python'][n] / times['cython'][n]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
