"""Benchmark the compiled filter core against the pure-Python fallback.

Run as ``python -m stiffcal.bench``.  Times the likelihood evaluation (one
full filter pass over a standard 20 s / 25 Hz dataset) per model family on
each available backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from . import backend, experiments, filtering, models


def _time_evals(fn, thetas, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        for theta in thetas:
            fn(theta)
        best = min(best, (time.perf_counter() - start) / len(thetas))
    return best


def run_benchmark(n_evals: int = 20, repeats: int = 3, grid_dt: float = 0.004,
                  seed: int = 0) -> list[dict]:
    dataset = experiments.generate_dataset(experiments.case_config(1, seed=seed))
    cases = {
        "M1": models.get_model("M1").make_params(k1=70, k2=10, t_s=10, c=0.1, sigma=50),
        "M2": models.get_model("M2").make_params(k=80, c=0.1, sigma=50),
        "M3": models.get_model("M3").make_params(k=80, c=0.1, sigma=50, tau=1.0),
        "M5": models.get_model("M5").make_params(c=0.1, sigma=50, gamma=5.0),
    }
    rng = np.random.default_rng(seed)
    rows = []
    for model_id, theta in cases.items():
        model = models.get_model(model_id)
        jitter = 1.0 + 0.01 * rng.standard_normal((n_evals, theta.values.size))
        thetas = theta.values * jitter
        row = {"model": model_id}
        for name in backend.BACKENDS:
            if name == "compiled" and not backend.have_compiled():
                row[name] = None
                continue
            fn = filtering.likelihood_fn(model, dataset.observations, grid_dt,
                                         backend_name=name)
            n = thetas if name == "compiled" else thetas[:max(2, n_evals // 10)]
            row[name] = _time_evals(fn, list(n), repeats)
        rows.append(row)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-evals", type=int, default=20)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--grid-dt", type=float, default=0.004)
    args = parser.parse_args(argv)

    rows = run_benchmark(args.n_evals, args.repeats, args.grid_dt)
    print(f"{'model':<8}{'compiled (ms)':>15}{'python (ms)':>15}{'speedup':>10}")
    for row in rows:
        compiled, python = row["compiled"], row["python"]
        compiled_ms = f"{1e3 * compiled:.3f}" if compiled else "n/a"
        python_ms = f"{1e3 * python:.3f}"
        speedup = f"{python / compiled:.0f}x" if compiled else "-"
        print(f"{row['model']:<8}{compiled_ms:>15}{python_ms:>15}{speedup:>10}")
    if not backend.have_compiled():
        print("note: compiled extension not built; only the fallback was timed")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
