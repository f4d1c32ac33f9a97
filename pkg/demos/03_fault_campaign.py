"""
Monte-Carlo bit-flip campaign
=============================

Reuses the files written by ``02_train_and_harden.py`` and measures Top-1
accuracy under random bit flips at several bit error rates. Each trial has
its own seed, so the numbers do not depend on the worker count.
"""
from rrt import data, faultinject, metrics, model
from rrt.activation import ThresholdSet

test = data.load_mnist_dir(data.bundled_mnist_dir(), "test")
teacher = model.load_model("teacher")
methods = {"unprotected": None, "ranger-lw": ThresholdSet.load("ranger.json"),
           "proact": ThresholdSet.load("proact.json")}

# 30 trials per rate is enough to see the trend; use 500 for reporting.
cfg = faultinject.CampaignConfig(bers=(1e-6, 1e-5, 3e-5), trials=30, seed=0)
base = metrics.top1_accuracy(teacher, None, test)
for name, ts in methods.items():
    result = faultinject.run_campaign(teacher, ts, cfg, test, label=name)
    summary = metrics.ResilienceSummary.from_campaign(result, base)
    cells = "  ".join(f"{r['ber']:.0e}: {r['mean']:.3f} (drop {r['drop']:+.3f})" for r in summary.rows)
    print(f"{name:12s} {cells}")

# A single plan can be inspected directly: which words were hit, and where
# (first ten flips shown).
space = faultinject.FaultSpace(teacher, methods["proact"])
plan = faultinject.plan_faults(space, 3e-5, seed=42)
for word, bit in plan.pairs()[:10]:
    seg = space.segments[space.locate(word)]
    print(f"flip bit {bit:2d} of {seg.kind} {seg.name} in layer {seg.layer}")
