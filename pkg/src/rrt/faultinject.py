"""Bit-flip fault planning, injection and Monte-Carlo campaigns.

The fault space enumerates every stored 32-bit word: all weights and biases
(layer order, weight before bias, row-major) followed by every clipping
threshold (activation order, then neuron order). Injection encodes the target
value to Q15.16, XORs the flipped bits and decodes back to a float.

Randomness comes from numpy's Philox-4x64 counter-based generator seeded via
``SeedSequence``; per-trial seeds are a BLAKE2b hash of
``(master seed, BER index, trial index)`` so trials can run in any order.
"""
import hashlib
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fixedpoint as fx
from .errors import InvalidValueError

log = logging.getLogger(__name__)

DEFAULT_BERS = (1e-7, 3e-7, 1e-6, 3e-6, 1e-5, 3e-5)


@dataclass(frozen=True)
class Segment:
    kind: str  # "param" or "threshold"
    layer: int  # network layer index, or activation ordinal for thresholds
    name: str
    offset: int
    size: int


class FaultSpace:
    """Deterministic enumeration of the injectable words of (net, thresholds)."""

    def __init__(self, net, thresholds=None):
        self.segments = []
        offset = 0
        for i, name, arr in net.param_entries():
            self.segments.append(Segment("param", i, name, offset, int(np.size(arr))))
            offset += int(np.size(arr))
        self.n_param_words = offset
        if thresholds is not None:
            for idx, v in thresholds.values.items():
                self.segments.append(Segment("threshold", idx, "lambda", offset, int(np.size(v))))
                offset += int(np.size(v))
        self.n_threshold_words = offset - self.n_param_words
        self.total_words = offset
        self._offsets = np.array([s.offset for s in self.segments], dtype=np.int64)

    @property
    def total_bits(self):
        return self.total_words * fx.WORD_BITS

    def locate(self, words):
        return np.searchsorted(self._offsets, words, side="right") - 1

    def __repr__(self):
        return (f"FaultSpace(words={self.total_words}, params={self.n_param_words}, "
                f"thresholds={self.n_threshold_words})")


@dataclass
class FaultPlan:
    words: np.ndarray
    bits: np.ndarray
    seed: int = 0
    ber: float = 0.0

    def __len__(self):
        return len(self.words)

    def pairs(self):
        return list(zip(self.words.tolist(), self.bits.tolist()))

    def restrict(self, n_words):
        """Drop flips that fall outside the first ``n_words`` words."""
        keep = self.words < n_words
        return FaultPlan(self.words[keep], self.bits[keep], self.seed, self.ber)


def trial_seed(master_seed, ber_index, trial):
    digest = hashlib.blake2b(f"{master_seed}:{ber_index}:{trial}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def plan_faults(space, ber, seed):
    """Binomial(total_bits, ber) distinct bit positions, sampled uniformly.

    ``space`` is a :class:`FaultSpace` or a plain number of bits.
    """
    if not 0 <= ber <= 1:
        raise InvalidValueError(f"BER must lie in [0, 1], got {ber!r}")
    total_bits = space if isinstance(space, (int, np.integer)) else space.total_bits
    rng = make_rng(seed)
    n = int(rng.binomial(total_bits, ber)) if total_bits else 0
    pos = np.sort(rng.choice(total_bits, size=n, replace=False)) if n else np.zeros(0, dtype=np.int64)
    pos = pos.astype(np.int64)
    return FaultPlan(pos // fx.WORD_BITS, (pos % fx.WORD_BITS).astype(np.int64), seed, ber)


def _flip_words(values, masks):
    return fx.decode_q15_16(fx.encode_q15_16(values) ^ masks)


def apply_faults(net, thresholds, plan):
    """Return corrupted copies of ``(net, thresholds)``; the inputs are untouched.

    Faulty parameter tensors are float64 so decoded Q15.16 values stay exact.
    """
    space = FaultSpace(net, thresholds)
    faulty = net.copy()
    for p in faulty.params:
        for k in p:
            p[k] = p[k].astype(np.float64)
    fts = thresholds.copy() if thresholds is not None else None
    if len(plan) == 0:
        return faulty, fts
    if plan.words.min() < 0 or plan.words.max() >= space.total_words or plan.bits.min() < 0 or plan.bits.max() > 31:
        raise IndexError(f"fault plan addresses words outside the {space.total_words}-word space")

    words, inverse = np.unique(plan.words, return_inverse=True)
    masks = np.zeros(len(words), dtype=np.uint32)
    np.bitwise_or.at(masks, inverse, (np.uint32(1) << plan.bits.astype(np.uint32)))
    seg_of = space.locate(words)
    tflat = fts.flat() if fts is not None else None
    for s in np.unique(seg_of):
        seg = space.segments[s]
        sel = seg_of == s
        if seg.kind == "param":
            arr = faulty.params[seg.layer][seg.name].reshape(-1)
            local = words[sel] - seg.offset
            arr[local] = _flip_words(arr[local], masks[sel])
        else:
            local = words[sel] - space.n_param_words
            tflat[local] = _flip_words(tflat[local], masks[sel])
    if fts is not None:
        fts = fts.with_flat(tflat, validate=False)
    return faulty, fts


# ---------------------------------------------------------------- campaigns


@dataclass
class CampaignConfig:
    bers: tuple = DEFAULT_BERS
    trials: int = 500
    seed: int = 0
    batch_size: int = 256

    def __post_init__(self):
        self.bers = tuple(float(b) for b in self.bers)
        if not self.bers:
            raise InvalidValueError("campaign needs at least one BER")
        if any(not 0 <= b <= 1 for b in self.bers):
            raise InvalidValueError("BERs must lie in [0, 1]")
        if self.trials < 1:
            raise InvalidValueError("trials must be >= 1")


@dataclass
class TrialResult:
    ber_index: int
    ber: float
    trial: int
    seed: int
    flips: int
    top1: float
    error: str = ""


@dataclass
class CampaignResult:
    config: CampaignConfig
    trials: list
    fault_free_top1: float
    label: str = ""
    meta: dict = field(default_factory=dict)

    def summary(self):
        rows = []
        for bi, ber in enumerate(self.config.bers):
            acc = np.array([t.top1 for t in self.trials if t.ber_index == bi and not t.error])
            n = len(acc)
            mean = float(acc.mean()) if n else math.nan
            std = float(acc.std(ddof=1)) if n > 1 else 0.0
            half = 1.959963984540054 * std / math.sqrt(n) if n else math.nan
            rows.append({"ber": ber, "mean": mean, "std": std, "ci95_lo": mean - half,
                         "ci95_hi": mean + half, "trials": n})
        return rows

    @property
    def errors(self):
        return [t for t in self.trials if t.error]

    def trials_csv(self):
        lines = ["ber,trial,seed,top1"]
        lines += [f"{t.ber!r},{t.trial},{t.seed},{t.top1!r}" for t in self.trials]
        return "\n".join(lines) + "\n"

    def summary_csv(self):
        lines = ["ber,mean,std,ci95_lo,ci95_hi,trials"]
        for r in self.summary():
            lines.append(f"{r['ber']!r},{r['mean']!r},{r['std']!r},{r['ci95_lo']!r},{r['ci95_hi']!r},{r['trials']}")
        return "\n".join(lines) + "\n"

    def errors_csv(self):
        lines = ["ber,trial,seed,error"]
        lines += [f"{t.ber!r},{t.trial},{t.seed},\"{t.error}\"" for t in self.errors]
        return "\n".join(lines) + "\n"


def run_trial(net, thresholds, data, ber_index, ber, trial, master_seed, batch_size=256):
    from .metrics import top1_accuracy

    seed = trial_seed(master_seed, ber_index, trial)
    try:
        plan = plan_faults(FaultSpace(net, thresholds), ber, seed)
        fnet, fts = apply_faults(net, thresholds, plan)
        acc = top1_accuracy(fnet, fts, data, batch_size)
        return TrialResult(ber_index, ber, trial, seed, len(plan), acc)
    except Exception as exc:  # recorded per trial, reported by the caller
        log.warning("trial ber=%g t=%d failed: %r", ber, trial, exc)
        return TrialResult(ber_index, ber, trial, seed, -1, math.nan, repr(exc))


def run_campaign(net, thresholds, cfg, data, workers=1, label=""):
    """Evaluate Top-1 under ``cfg.trials`` fault plans per BER.

    Results are ordered by (BER index, trial) and do not depend on
    ``workers``; each trial works on its own corrupted copy.
    """
    from .metrics import top1_accuracy

    if len(data) == 0:
        raise InvalidValueError("campaign needs a non-empty evaluation set")
    tasks = [(bi, ber, t) for bi, ber in enumerate(cfg.bers) for t in range(cfg.trials)]

    def work(task):
        bi, ber, t = task
        return run_trial(net, thresholds, data, bi, ber, t, cfg.seed, cfg.batch_size)

    if workers <= 1:
        results = [work(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, tasks))
    results.sort(key=lambda r: (r.ber_index, r.trial))
    clean = top1_accuracy(net, thresholds, data, cfg.batch_size)
    space = FaultSpace(net, thresholds)
    return CampaignResult(cfg, results, clean, label,
                          {"param_words": space.n_param_words, "threshold_words": space.n_threshold_words})
