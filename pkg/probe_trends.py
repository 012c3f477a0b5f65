"""Reduced-scale probes of the two trend experiments."""
import time

import numpy as np

from starbdris import driver
from starbdris.scenario import (GeometryConfig, NoiseConfig, PowerConfig,
                                SystemDims, build_scenario)


def run_pair(m, n, p_dbm, seed):
    dims = SystemDims(M=m, N=n, K_T=1, K_R=1)
    sc = build_scenario(GeometryConfig(rng_seed=seed), dims,
                        PowerConfig(p_bs_dbm=p_dbm), NoiseConfig())
    out = {}
    for mode in ("active", "passive"):
        t0 = time.perf_counter()
        res = driver.run_ao(sc, mode=mode)
        out[mode] = (res.final.sum_rate, time.perf_counter() - t0,
                     res.trace.is_monotone())
    return out


def main():
    seeds = list(range(1, 11))
    t_all = time.perf_counter()
    print("== power sweep, N=36 M=10 ==")
    gains = {}
    for p in (10.0, 15.0, 20.0, 25.0, 30.0, 35.0):
        act, pas, t_a, t_p = [], [], 0.0, 0.0
        mono = True
        for s in seeds:
            r = run_pair(10, 36, p, s)
            act.append(r["active"][0]); pas.append(r["passive"][0])
            t_a += r["active"][1]; t_p += r["passive"][1]
            mono &= r["active"][2] and r["passive"][2]
        ma, mp = np.mean(act), np.mean(pas)
        gains[p] = (ma - mp) / mp
        print(f"P={p:4.0f} dBm: active={ma:8.4f} passive={mp:8.4f} "
              f"gain={gains[p]:6.1%} t_act={t_a/len(seeds):.2f}s "
              f"t_pas={t_p/len(seeds):.2f}s mono={mono}")
    print(f"gain(10)={gains[10.0]:.1%} vs 2x gain(35)={2*gains[35.0]:.1%} "
          f"-> {'OK' if gains[10.0] >= 2*gains[35.0] else 'FAIL'}")

    print("== size sweep, P=20 dBm ==")
    size_gain = {}
    for m, n in ((4, 16), (10, 36), (10, 64)):
        act, pas, t_a, t_p = [], [], 0.0, 0.0
        for s in seeds:
            r = run_pair(m, n, 20.0, s)
            act.append(r["active"][0]); pas.append(r["passive"][0])
            t_a += r["active"][1]; t_p += r["passive"][1]
        ma, mp = np.mean(act), np.mean(pas)
        size_gain[n] = (ma - mp) / mp
        print(f"N={n:3d}: active={ma:8.4f} passive={mp:8.4f} "
              f"gain={size_gain[n]:6.1%} t_act={t_a/len(seeds):.2f}s "
              f"t_pas={t_p/len(seeds):.2f}s")
    ok = size_gain[16] <= size_gain[36] + 1e-12 and size_gain[36] <= size_gain[64] + 1e-12
    print(f"nondecreasing gain over N: {'OK' if ok else 'FAIL'}")
    print(f"total wall: {time.perf_counter() - t_all:.0f}s")


if __name__ == "__main__":
    main()
