"""
Train a LeNet-5 teacher and compare clipping thresholds
=======================================================

Trains a ReLU LeNet-5 on the bundled 5000-image MNIST subset, then derives
three threshold sets: Ranger (profiled maxima, hard clip), FT-ClipAct (grid
search scored by fault injection) and ProAct (hybrid HyReLU thresholds
trained by distillation, last layer first). Takes about a minute.
"""
import numpy as np

from rrt import data, hardening, metrics, model
from rrt.optim import TrainConfig

train = data.load_mnist_dir(data.bundled_mnist_dir(), "train")
test = data.load_mnist_dir(data.bundled_mnist_dir(), "test")
teacher = model.train_baseline(model.lenet5(seed=1), train, TrainConfig(epochs=5, seed=1))
print(f"teacher top-1: {metrics.top1_accuracy(teacher, None, test):.4f}")

# Thresholds start from activation maxima on a held-out profiling split.
profiling, _ = data.split_validation(train, 3000, seed=0)
report = hardening.profile_max(teacher, profiling)
print("profiled layer maxima:", np.round(report.layer_max, 3))

ranger = hardening.harden_ranger(teacher, report)
ftclip = hardening.search_ftclipact(teacher, profiling.head(500), fi_budget=3, grid_size=10, report=report)

# A short ProAct schedule keeps the demo quick; the defaults are 50 epochs
# for the final hidden layer and 20 for each earlier layer.
cfg = TrainConfig(epochs_last_layer=10, epochs_other_layers=4, seed=1)
proact = hardening.train_proact(teacher, teacher, train, cfg, profile_data=profiling)

for name, ts in (("ranger-lw", ranger), ("ft-clipact", ftclip), ("proact", proact)):
    acc = metrics.top1_accuracy(teacher, ts, test)
    print(f"{name:10s} top-1 {acc:.4f}  thresholds {ts.count:3d}  "
          f"memory overhead {metrics.memory_overhead(teacher, ts):.2e}")

print("proact thresholds vs maxima:")
for i in range(teacher.last_hidden):
    print(f"  layer {i}: {proact.values[i]:.3f} (max {report.layer_max[i]:.3f})")
print(f"  last layer mean: {proact.last_layer.mean():.3f} (max mean {report.neuron_max[teacher.last_hidden].mean():.3f})")

model.save_model(teacher, "teacher")
proact.save("proact.json")
ranger.save("ranger.json")
