"""
The penalty weight V trades backlog for throughput
==================================================

A stationary four-worker episode with random arrivals, channels and
harvested energy. Larger V admits more data (higher log utility) at the
price of longer queues.
"""
import numpy as np

from tsdcfl import scheduler as sc

for V in (1.0, 10.0, 100.0):
    res = sc.run_episode(sc.EpisodeConfig(slots=20_000, V=V), seed=1)
    slack = res.bound_rhs - res.drift_lhs
    print(f"V={V:>5}: utility {res.throughput_utility():.3f}  mean Q {res.Q.mean():7.2f}  "
          f"mean H {res.H.mean():7.2f}  battery {res.E.mean():.2f}  min bound slack {slack.min():.1f}")

# a single decision, spelled out
st = sc.WorkerState(Q=[4.0, 0.5], H=[6.0, 0.2], E=[3.0, 1.0], R=[0.0, 0.0], p=1.0,
                    r=[2.0, 5.0], f=[1.0, 0.0], delta=0.1, xi=0.1, W=1.0)
obs = sc.SlotObservation(D_arr=[2.0, 3.0], E_harv=[0.5, 0.5], r=[2.0, 5.0], L=1.0)
dec = sc.decide_slot(st, sc.ServerState(0.0, 4.0), obs, sc.SchedulerParams(V=10.0, T=1.0, theta=3.0))
print("y", np.round(dec.y, 3), "d", dec.d, "v", np.round(dec.v, 3), "e_store", dec.e_store)
