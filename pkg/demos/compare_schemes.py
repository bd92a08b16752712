"""
Three schemes on the six-worker profile
=======================================

Same seeds, same data, same scheduler; only the coding differs. Loss curves
coincide because every scheme applies the exact full gradient, so the only
thing that changes is how many slots each epoch takes.
"""
import numpy as np

from tsdcfl import ExperimentConfig, run_experiment

seeds, epochs = range(3), 100
times = {}
for scheme in ("tsdcfl", "cyclic", "fracrep"):
    runs = []
    for seed in seeds:
        cfg = ExperimentConfig(scheme=scheme, seed=seed, epochs=epochs)
        cfg.outputs.trace = False
        runs.append(run_experiment(cfg))
    times[scheme] = np.array([r.summary["mean_iteration_time"] for r in runs])
    last = runs[0]
    print(f"{scheme:8s} mean slots/epoch {times[scheme].mean():6.2f} (per seed {np.round(times[scheme], 2)})  "
          f"final loss {last.summary['final_loss']:.5f}  T_comp {last.T_comp}")

# where does the two-stage scheme spend its time?
cfg = ExperimentConfig(seed=0, epochs=epochs)
cfg.outputs.trace = False
rep = run_experiment(cfg)
s = np.array([e.s for e in rep.epochs])
mc = np.array([e.Mc for e in rep.epochs])
print("chosen s histogram:", np.bincount(s, minlength=3))
print("stage-1 completers per epoch:", np.bincount(mc))
print("copies per epoch, mean:", np.mean([e.copies for e in rep.epochs]))
