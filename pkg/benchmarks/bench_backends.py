"""Compare the compiled and pure-Python kernels on realistic inputs.

Run with ``python benchmarks/bench_backends.py``. Both implementations are
imported directly, so the result does not depend on TNDVE_PURE_PYTHON.
"""
import argparse
import timeit

import numpy as np

from tndve import _pyimpl
from tndve.estimators import design_matrix
from tndve.glm import COEF_TOL, MAX_HALVINGS, MAX_ITER, SCORE_TOL, _start
from tndve.simulate import Reason, ScenarioConfig, generate_dataset

try:
    from tndve import _speedups
except ImportError:
    _speedups = None


def _cases():
    data = generate_dataset(ScenarioConfig(prevalence="high"), 1)
    cases = {}
    for reason, link in ((Reason.UNRELATED, 1), (Reason.CCT, 1), (Reason.SYMPTOMS, 0)):
        rows = data.stratum(reason)
        X, _ = design_matrix(rows)
        y = rows.i.astype(float)
        cases[f"irls[{reason.token}, n={len(rows)}]"] = (
            "irls", (X, y, _start(X, y, "log" if link else "logit"), link, MAX_ITER, SCORE_TOL, COEF_TOL,
                     MAX_HALVINGS, 4))
    rows = data.stratum(Reason.UNRELATED)
    grid = np.linspace(0.5, 1.0, 101)
    cases[f"kernel_sums[n={len(rows)}, grid=101]"] = (
        "kernel_sums", (rows.x1.astype(float), rows.i.astype(float), rows.v.astype(float), grid, 0.03))
    return cases


def _time(fn, args, repeat):
    fn(*args)  # warm-up
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    print(f"{'case':<36}{'python ms':>12}{'cython ms':>12}{'speed-up':>10}")
    for name, (fn_name, fn_args) in _cases().items():
        t_py = _time(getattr(_pyimpl, fn_name), fn_args, args.repeat)
        if _speedups is None:
            print(f"{name:<36}{1e3 * t_py:>12.3f}{'n/a':>12}{'':>10}")
            continue
        t_cy = _time(getattr(_speedups, fn_name), fn_args, args.repeat)
        print(f"{name:<36}{1e3 * t_py:>12.3f}{1e3 * t_cy:>12.3f}{t_py / t_cy:>9.1f}x")


if __name__ == "__main__":
    main()
