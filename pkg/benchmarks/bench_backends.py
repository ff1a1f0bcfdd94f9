"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 3]

Each case runs once untimed (compilation / warm-up) and then ``repeat``
times; the best wall time is reported.
"""
from __future__ import annotations

import argparse
import time


from pamlab.field import FieldSpec, HashField, ball_array
from pamlab.solver import solve_ode
from pamlab.variational import Kind, solve_variational


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    sites = ball_array(2, 300)
    pareto = FieldSpec("pareto", 1, alpha=4.0, master_seed=1)
    weib = FieldSpec("weibull", 1, gamma=0.5, master_seed=2)
    yield "site_values d=2 (180k sites)", lambda b: (lambda: HashField(FieldSpec("weibull", 2, gamma=0.5), b).values(sites))
    yield "N(t) Pareto d=1 t=1e4", lambda b: (lambda: solve_variational(HashField(pareto, b), 1e4, Kind.N))
    yield "N_lower(t) Weibull d=1 t=1e6", lambda b: (lambda: solve_variational(HashField(weib, b), 1e6, Kind.N_LOWER))
    yield "solve_ode Weibull d=1 t=5 R=60", lambda b: (lambda: solve_ode(HashField(weib, b), 5.0, 60, backend=b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'case':40s} {'numba [s]':>10s} {'numpy [s]':>10s} {'speedup':>8s}")
    for name, make in cases():
        tn = _best(make("numba"), args.repeat)
        tp = _best(make("numpy"), args.repeat)
        print(f"{name:40s} {tn:10.4f} {tp:10.4f} {tp / tn:8.1f}x")


if __name__ == "__main__":
    main()
