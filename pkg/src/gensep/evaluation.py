"""BSS-eval scores (time-invariant projection variant) and aggregation.

The estimate is split by orthogonal projections into a target part (onto the
true source), an interference part (onto the span of all references, minus
the target part) and an artifact remainder. Ratios are capped at +/-200 dB
so perfect or degenerate cases stay finite.
"""
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import ConditioningError, InputError
from .signal import Waveform, wiener_reconstruct

DB_CAP = 200.0
MAX_GRAM_COND = 1e10
METRICS = ("sdr", "sir", "sar")


@dataclass(frozen=True)
class BssScores:
    sdr: float
    sir: float
    sar: float

    def as_tuple(self):
        return (self.sdr, self.sir, self.sar)


@dataclass
class PairScores:
    per_source: list
    mean: BssScores
    permutation: tuple


def _samples(w):
    return np.asarray(w.samples if isinstance(w, Waveform) else w, dtype=np.float64).reshape(-1)


def _db(num, den):
    if den <= 0 or num / den > 10 ** (DB_CAP / 10):
        return DB_CAP
    if num <= 0:
        return -DB_CAP
    return float(np.clip(10.0 * np.log10(num / den), -DB_CAP, DB_CAP))


def bss_decompose(estimate, references, target_index):
    """Return (s_target, e_interf, e_artif); they sum to the estimate."""
    refs = [_samples(r) for r in references]
    est = _samples(estimate)
    n = min([est.size] + [r.size for r in refs])
    est = est[:n]
    R = np.vstack([r[:n] for r in refs])
    if not 0 <= target_index < R.shape[0]:
        raise InputError(f"target index {target_index} out of range")
    energies = np.sum(R * R, axis=1)
    if np.dot(est, est) == 0:
        raise InputError("estimate has zero energy")
    if np.any(energies == 0):
        raise InputError("a reference has zero energy")
    G = R @ R.T
    if np.linalg.cond(G) > MAX_GRAM_COND:
        raise ConditioningError("references are (nearly) collinear")
    target = R[target_index]
    s_target = (np.dot(est, target) / energies[target_index]) * target
    proj = np.linalg.solve(G, R @ est) @ R
    return s_target, proj - s_target, est - proj


def bss_eval(estimate, references, target_index):
    s_target, e_interf, e_artif = bss_decompose(estimate, references, target_index)
    t = float(np.dot(s_target, s_target))
    i = float(np.dot(e_interf, e_interf))
    a = float(np.dot(e_artif, e_artif))
    distortion = e_interf + e_artif
    signal = s_target + e_interf
    return BssScores(
        sdr=_db(t, float(np.dot(distortion, distortion))),
        sir=_db(t, i),
        sar=_db(float(np.dot(signal, signal)), a),
    )


def mean_scores(scores):
    arr = np.array([s.as_tuple() for s in scores])
    return BssScores(*(float(v) for v in arr.mean(axis=0)))


def score_pair(estimates, references, mixture=None):
    """Score two estimates, matching them to references by best mean SDR.

    ``estimates`` is a pair of waveforms, or a separation result together with
    ``mixture=(mix_mag, mix_phase)`` so it can be Wiener-reconstructed first.
    ``per_source[k]`` scores the estimate assigned to reference k.
    """
    if hasattr(estimates, "s1_hat"):
        if mixture is None:
            raise InputError("scoring a separation result needs the mixture magnitude and phase")
        estimates = wiener_reconstruct(estimates.s1_hat, estimates.s2_hat, *mixture)
    estimates = list(estimates)
    references = list(references)
    if len(estimates) != len(references):
        raise InputError(f"{len(estimates)} estimates for {len(references)} references")
    best = None
    for perm in permutations(range(len(references))):
        per = [bss_eval(estimates[perm[k]], references, k) for k in range(len(references))]
        mean = mean_scores(per)
        if best is None or mean.sdr > best.mean.sdr:
            best = PairScores(per, mean, perm)
    return best


def summarize(values):
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise InputError("cannot summarize an empty set of scores")
    q = np.percentile(v, [0, 25, 50, 75, 100], method="linear")
    return {"n": int(v.size), "min": float(q[0]), "q1": float(q[1]),
            "median": float(q[2]), "q3": float(q[3]), "max": float(q[4])}


def aggregate(scores_by_model):
    """Order statistics per model and metric.

    ``scores_by_model`` maps a model name to a list of :class:`BssScores`
    (one per speaker pair).
    """
    if not scores_by_model:
        raise InputError("no scores to aggregate")
    out = {}
    for model, scores in scores_by_model.items():
        scores = list(scores)
        if not scores:
            raise InputError(f"no scores for model {model!r}")
        out[model] = {m: summarize(getattr(s, m) for s in scores) for m in METRICS}
    return out
