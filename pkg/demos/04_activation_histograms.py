"""
Where faulty activations land
=============================

Histograms of activation values with and without faults, for the
unprotected teacher and the ProAct thresholds from ``02_train_and_harden.py``.
Values above the range split are binned separately so the rare, very large
faulty activations stay visible. Also reports the activation L2 distance
between faulty and fault-free runs over a few shared plans.
"""
import numpy as np

from rrt import data, faultinject, metrics, model
from rrt.activation import ThresholdSet

test = data.load_mnist_dir(data.bundled_mnist_dir(), "test").head(300)
teacher = model.load_model("teacher")
proact = ThresholdSet.load("proact.json")

space = faultinject.FaultSpace(teacher, proact)
plan = faultinject.plan_faults(space, 1e-4, seed=3)
print(f"{len(plan)} flips planned over {space.total_words} words")

for name, ts in (("unprotected", None), ("proact", proact)):
    own = plan.restrict(faultinject.FaultSpace(teacher, ts).total_words)
    hist = metrics.activation_histograms(teacher, ts, test, plan=own, bins=5, range_split=4.0)
    last = hist[teacher.last_hidden]
    big = sum(c for lo, hi, c in last[5:])
    print(f"{name}: {big} last-layer activations above 4.0, largest bin edge {last[-1][1]:.3g}")
    metrics.dump_activation_histogram(teacher, ts, test, f"hist_{name}", plan=own, bins=20)

# Shared plans: flips aimed at threshold words are dropped for the
# unprotected model, so both see identical weight corruption.
plans = [faultinject.plan_faults(space, 1e-4, seed=s) for s in range(5)]
for name, ts in (("unprotected", None), ("proact", proact)):
    d = np.mean([metrics.l2_activation_distance(teacher, ts, p, test) for p in plans])
    print(f"{name}: mean activation L2 distance {d:.4g}")
