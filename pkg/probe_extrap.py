import sys

import numpy as np

from starbdris import driver
from starbdris.scenario import (GeometryConfig, NoiseConfig, PowerConfig,
                                SystemDims, build_scenario)

m, n, seed = int(sys.argv[1]), int(sys.argv[2]), int(sys.argv[3])
sc = build_scenario(GeometryConfig(rng_seed=seed), SystemDims(M=m, N=n, K_T=1, K_R=1),
                    PowerConfig(p_bs_dbm=20.0), NoiseConfig())
res = driver.run_ao(sc)
rows = [r for r in res.trace.records if r.block == "extrapolation"]
print(f"rate={res.final.sum_rate:.4f} iters={res.iterations} conv={res.converged} "
      f"extrap_rows={len(rows)}")
for r in rows[:12]:
    print(f"  it={r.iteration} xi={r.extra.get('factor')} rounds={r.extra.get('rounds')}")
rates = res.trace.rate_trace()
rel = np.abs(np.diff(rates)) / np.maximum(rates[:-1], 1e-12)
print("tail rel changes:", " ".join(f"{x:.1e}" for x in rel[-8:]))
