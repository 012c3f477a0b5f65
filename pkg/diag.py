"""Late-iteration block-level diagnostics for one seed."""
import sys

import numpy as np

from starbdris import driver
from starbdris.scenario import (GeometryConfig, NoiseConfig, PowerConfig,
                                SystemDims, build_scenario)

m, n, seed = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
sc = build_scenario(GeometryConfig(rng_seed=seed), SystemDims(M=m, N=n, K_T=1, K_R=1),
                    PowerConfig(p_bs_dbm=20.0), NoiseConfig())
res = driver.run_ao(sc)
recs = res.trace.records

# per-block objective decrease aggregated over late iterations
from collections import defaultdict
drop_total = defaultdict(float)
drop_late = defaultdict(float)
wall = defaultdict(float)
prev = None
for r in recs:
    if prev is not None:
        d = prev - r.objective
        drop_total[r.block] += d
        if r.iteration >= 80:
            drop_late[r.block] += d
    prev = r.objective
    wall[r.block] += r.wall_ms

rates = res.trace.rate_trace()
print(f"final rate={res.final.sum_rate:.4f} iters={res.iterations} conv={res.converged}")
print("iter  rate       d_rate_rel")
for i in range(90, len(rates)):
    rel = (rates[i] - rates[i - 1]) / max(rates[i - 1], 1e-12)
    print(f"{i:4d}  {rates[i]:.6f}  {rel:.2e}")
print("\nblock           total_drop   late_drop(it>=80)   wall_s")
for b in drop_total:
    print(f"{b:15s} {drop_total[b]:12.6f} {drop_late[b]:14.8f} {wall[b] / 1e3:9.2f}")
