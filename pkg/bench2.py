import sys
import time

import numpy as np

sys.path.insert(0, "tests")
from conftest import desk_scenario  # noqa: E402

from starbdris import driver  # noqa: E402


def plateau_idx(rates):
    r = np.asarray(rates)
    if len(r) < 2:
        return 1
    rel = np.abs(np.diff(r)) / np.maximum(1.0, np.abs(r[:-1]))
    idx = np.nonzero(rel >= 1e-4)[0]
    return int(idx[-1] + 2) if len(idx) else 1


def run(tag, seeds=8, **kw):
    rates, iters, plats, times = [], [], [], []
    mono, gaps = [], []
    for seed in range(seeds):
        sce = desk_scenario(seed)
        cfg = driver.SolverConfig(**kw)
        t0 = time.perf_counter()
        res = driver.run_ao(sce, cfg)
        times.append(time.perf_counter() - t0)
        rt = res.trace.rate_trace()
        rates.append(rt[-1])
        iters.append(res.iterations)
        plats.append(plateau_idx(rt))
        mono.append(res.trace.is_monotone())
        gaps.append(res.trace.max_identity_gap())
    print(f"{tag}: rate {np.mean(rates):.4f}  iters {np.mean(iters):.1f}  "
          f"plateau avg {np.mean(plats):.1f} max {max(plats)}  "
          f"t/run {np.mean(times):.2f}s  mono {all(mono)}  "
          f"gap {max(gaps):.2e}")
    print("   rates:", " ".join(f"{x:.3f}" for x in rates))
    print("   plats:", plats, " iters:", iters)
    sys.stdout.flush()


CONFIGS = {
    "E": ("E damp=.3 ramp=60 sat=1", dict(block_damping=0.3,
                                          damping_ramp_iters=60)),
    "F": ("F damp=.3 ramp=40 sat=1", dict(block_damping=0.3,
                                          damping_ramp_iters=40)),
    "G": ("G damp=.3 ramp=60 sat=4", dict(block_damping=0.3,
                                          damping_ramp_iters=60,
                                          block_saturation=4)),
    "H": ("H damp=.3 ramp=40 sat=4", dict(block_damping=0.3,
                                          damping_ramp_iters=40,
                                          block_saturation=4)),
    "I": ("I damp=.5 ramp=40 sat=1", dict(block_damping=0.5,
                                          damping_ramp_iters=40)),
    "J": ("J damp=1 sat=1", dict()),
}

if __name__ == "__main__":
    for key in sys.argv[1:] or ["E"]:
        tag, kw = CONFIGS[key]
        run(tag, **kw)
