"""Two-scale benchmark: rate, plateau fraction, runtime."""
import sys
import time

import numpy as np

from starbdris import driver
from starbdris.scenario import (GeometryConfig, NoiseConfig, PowerConfig,
                                SystemDims, build_scenario)


def plateau_ok(rates: np.ndarray) -> bool:
    if len(rates) < 2:
        return False
    tail = abs(rates[-1] - rates[-2]) / max(rates[-2], 1e-12)
    return tail < 1e-4


def bench(m, n, seeds, p_dbm=20.0, mode="active", config=None):
    rows = []
    for s in seeds:
        sc = build_scenario(GeometryConfig(rng_seed=s),
                            SystemDims(M=m, N=n, K_T=1, K_R=1),
                            PowerConfig(p_bs_dbm=p_dbm), NoiseConfig())
        t0 = time.perf_counter()
        res = driver.run_ao(sc, config=config, mode=mode)
        dt = time.perf_counter() - t0
        rates = res.trace.rate_trace()
        mono = res.trace.is_monotone()
        rows.append((res.final.sum_rate, plateau_ok(rates), res.iterations,
                     dt, mono, res.converged))
    rate = np.mean([r[0] for r in rows])
    plat = np.mean([r[1] for r in rows])
    iters = np.mean([r[2] for r in rows])
    dt = np.mean([r[3] for r in rows])
    mono = all(r[4] for r in rows)
    conv = np.mean([r[5] for r in rows])
    print(f"M={m} N={n} {mode}: rate={rate:.4f} plateau={plat:.0%} "
          f"iters={iters:.1f} conv={conv:.0%} {dt:.2f}s/run mono={mono}")
    return rows


if __name__ == "__main__":
    seeds = list(range(1, 11))
    bench(4, 16, seeds)
    bench(10, 36, seeds)
