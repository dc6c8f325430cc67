"""Compare the Cython and pure-numpy kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5]

Each backend module is imported directly, so both run in one process. The
script checks that the two agree before timing them.
"""
import argparse
import timeit

import numpy as np

from stwave import _pykernels
from stwave.discretization import (
    WaveProblem,
    assemble_space_matrices,
    assemble_time_matrices,
    evaluate_solution,
)

try:
    from stwave import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    kn = np.concatenate([[0.0] * 3, np.linspace(0, 1, 257)[1:-1], [1.0] * 3])
    x = rng.random(200_000)
    yield "basis_funs_batch deg2 (2e5 pts, 2 ders)", "basis_funs_batch", (kn, 2, x, 2)

    problem = WaveProblem.case1(3)
    tm = assemble_time_matrices(1.0, 8)
    sm = assemble_space_matrices(problem, 8)
    U = rng.standard_normal((sm.size, tm.size))
    pts = rng.random((20_000, 4))
    yield "trial evaluation 3D (2e4 pts)", "evaluate", (U, tm, sm, pts)


def _run(mod, name, args):
    if name == "evaluate":
        import stwave.discretization as disc

        saved = disc.trial_expansion_points
        disc.trial_expansion_points = mod.trial_expansion_points
        try:
            return evaluate_solution(*args)
        finally:
            disc.trial_expansion_points = saved
    return getattr(mod, name)(*args)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; only the numpy backend exists")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':44s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}")
    for label, name, call_args in _cases(rng):
        ref = _run(_pykernels, name, call_args)
        new = _run(_ckernels, name, call_args)
        ref, new = (r if isinstance(r, tuple) else (r,) for r in (ref, new))
        for a, b in zip(ref, new):
            np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
        t_py = min(timeit.repeat(lambda: _run(_pykernels, name, call_args), number=1,
                                 repeat=args.repeat))
        t_c = min(timeit.repeat(lambda: _run(_ckernels, name, call_args), number=1,
                                repeat=args.repeat))
        print(f"{label:44s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
