"""Bit-flip resilience toolkit: Q15.16 fault injection and clipped-activation hardening."""
from .activation import ThresholdSet, clipped_relu, hyrelu, hyrelu_grad
from .data import Dataset, load_dir
from .faultinject import CampaignConfig, FaultPlan, FaultSpace, apply_faults, plan_faults, run_campaign
from .hardening import harden_ranger, kd_loss, profile_max, search_ftclipact, train_fitact, train_proact
from .metrics import l2_activation_distance, memory_overhead, top1_accuracy
from .model import Network, build, forward, load_model, save_model, train_baseline
from .optim import TrainConfig

__version__ = "0.1.0"
