"""Instance-similarity losses with analytic gradients and a finite-difference checker.

The multi-positive contrastive loss for one anchor ``q`` with positives
``P`` and negatives ``N`` at temperature ``tau`` is

    D    = mean_p exp(q.p / tau) + sum_n exp(q.n / tau)
    loss = mean_p [ -log(exp(q.p / tau) / D) ]
         = log D - mean_p (q.p / tau)
"""
from dataclasses import dataclass
import math

import numpy as np


@dataclass(frozen=True, eq=False)
class ContrastiveInstance:
    anchor: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    temperature: float = 0.07

    def __post_init__(self):
        q = np.asarray(self.anchor, dtype=np.float64).ravel()
        pos = np.asarray(self.positives, dtype=np.float64)
        if pos.size == 0:
            raise ValueError("a contrastive instance needs at least one positive")
        pos = pos.reshape(-1, q.shape[0])
        neg = np.asarray(self.negatives, dtype=np.float64)
        neg = neg.reshape(-1, q.shape[0]) if neg.size else np.zeros((0, q.shape[0]))
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        object.__setattr__(self, "anchor", q)
        object.__setattr__(self, "positives", pos)
        object.__setattr__(self, "negatives", neg)

    @property
    def dim(self):
        return self.anchor.shape[0]


@dataclass(frozen=True, eq=False)
class AuxPair:
    a: np.ndarray
    b: np.ndarray
    same_identity: bool

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64).ravel()
        b = np.asarray(self.b, dtype=np.float64).ravel()
        if a.shape != b.shape:
            raise ValueError("aux pair vectors must share a dimension")
        if not (np.linalg.norm(a) > 0 and np.linalg.norm(b) > 0):
            raise ValueError("aux pair vectors must be non-zero")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)


@dataclass(frozen=True)
class LossWeights:
    w_track: float = 0.25
    w_aux: float = 1.0

    def __post_init__(self):
        for v in (self.w_track, self.w_aux):
            if not (math.isfinite(v) and v >= 0):
                raise ValueError("loss weights must be finite and non-negative")


@dataclass
class InstanceGrad:
    anchor: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray


def _logits(inst):
    t = inst.temperature
    return inst.positives @ inst.anchor / t, inst.negatives @ inst.anchor / t


def _log_denominator(pos_logits, neg_logits):
    """log(mean(exp(pos)) + sum(exp(neg))) and the softmax weights of every term."""
    k = pos_logits.shape[0]
    terms = np.concatenate([pos_logits - math.log(k), neg_logits])
    mx = terms.max()
    e = np.exp(terms - mx)
    z = e.sum()
    w = e / z
    return mx + math.log(z), w[:k], w[k:]


def pos_d(inst):
    """Mean of ``exp(q.p / tau)`` over the positives."""
    pos_logits, _ = _logits(inst)
    return float(np.mean(np.exp(pos_logits)))


def instance_loss(inst):
    pos_logits, neg_logits = _logits(inst)
    log_d, _, _ = _log_denominator(pos_logits, neg_logits)
    return log_d - float(np.mean(pos_logits))


def loss_track(batch, average=False):
    """Sum (or mean, with ``average=True``) of the per-anchor losses."""
    batch = list(batch)
    if not batch:
        raise ValueError("loss_track needs a non-empty batch")
    total = math.fsum(instance_loss(inst) for inst in batch)
    return total / len(batch) if average else total


def grad_loss_track(inst):
    """Exact gradient of :func:`instance_loss` w.r.t. anchor, positives and negatives."""
    t = inst.temperature
    q = inst.anchor
    k = inst.positives.shape[0]
    pos_logits, neg_logits = _logits(inst)
    _, w_pos, w_neg = _log_denominator(pos_logits, neg_logits)
    g_anchor = (w_pos @ inst.positives + w_neg @ inst.negatives - inst.positives.mean(axis=0)) / t
    g_pos = np.outer(w_pos - 1.0 / k, q) / t
    g_neg = np.outer(w_neg, q) / t
    return InstanceGrad(g_anchor, g_pos, g_neg)


def _cos(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def aux_pair_loss(pair):
    target = 1.0 if pair.same_identity else 0.0
    return (_cos(pair.a, pair.b) - target) ** 2


def loss_aux(pairs):
    """Mean squared gap between pair cosine and the same-identity indicator."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("loss_aux needs at least one pair")
    return math.fsum(aux_pair_loss(p) for p in pairs) / len(pairs)


def grad_loss_aux(pair):
    """Gradient of :func:`aux_pair_loss` w.r.t. ``(a, b)``."""
    a, b = pair.a, pair.b
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    c = np.dot(a, b) / (na * nb)
    coef = 2.0 * (c - (1.0 if pair.same_identity else 0.0))
    ga = coef * (b / (na * nb) - c * a / na**2)
    gb = coef * (a / (na * nb) - c * b / nb**2)
    return ga, gb


def weighted_loss(instances, pairs, weights=LossWeights()):
    return weights.w_track * loss_track(instances) + weights.w_aux * loss_aux(pairs)


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------

def finite_diff_check(fn, grad, x, step=1e-4):
    """Max relative error between ``grad(x)`` and central differences of ``fn``.

    The relative error of each coordinate is ``|fd - g| / max(1, |g|)``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=np.float64).ravel()
    g = np.asarray(grad(x), dtype=np.float64).ravel()
    worst = 0.0
    for i in range(x.shape[0]):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        fd = (fn(xp) - fn(xm)) / (2.0 * step)
        worst = max(worst, abs(fd - g[i]) / max(1.0, abs(g[i])))
    return worst


def pack_instance(inst):
    return np.concatenate([inst.anchor, inst.positives.ravel(), inst.negatives.ravel()])


def unpack_instance(x, like):
    d = like.dim
    k = like.positives.shape[0]
    m = like.negatives.shape[0]
    return ContrastiveInstance(
        x[:d], x[d : d + k * d].reshape(k, d), x[d + k * d : d + (k + m) * d].reshape(m, d), like.temperature
    )


def check_track_instance(inst, step=1e-4):
    def fn(x):
        return instance_loss(unpack_instance(x, inst))

    def grad(x):
        g = grad_loss_track(unpack_instance(x, inst))
        return np.concatenate([g.anchor, g.positives.ravel(), g.negatives.ravel()])

    return finite_diff_check(fn, grad, pack_instance(inst), step)


def check_aux_pair(pair, step=1e-4):
    d = pair.a.shape[0]

    def fn(x):
        return aux_pair_loss(AuxPair(x[:d], x[d:], pair.same_identity))

    def grad(x):
        return np.concatenate(grad_loss_aux(AuxPair(x[:d], x[d:], pair.same_identity)))

    return finite_diff_check(fn, grad, np.concatenate([pair.a, pair.b]), step)


def random_instance(rng, max_dim=8, max_pos=3, max_neg=5, temperature=0.07):
    d = int(rng.integers(2, max_dim + 1))
    k = int(rng.integers(1, max_pos + 1))
    m = int(rng.integers(0, max_neg + 1))

    def sphere(n):
        v = rng.normal(size=(n, d))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    return ContrastiveInstance(sphere(1)[0], sphere(k), sphere(m), temperature)


def random_aux_pair(rng, max_dim=8):
    d = int(rng.integers(2, max_dim + 1))
    return AuxPair(rng.normal(size=d), rng.normal(size=d), bool(rng.integers(0, 2)))


def gradcheck_report(loss="track", instances=100, seed=0, step=1e-4, temperature=0.07):
    """Run the finite-difference sweep used by the ``gradcheck`` command."""
    rng = np.random.default_rng(seed)
    out = {"seed": seed, "step": step, "instances": instances, "losses": {}}
    kinds = ["track", "aux"] if loss == "both" else [loss]
    for kind in kinds:
        errs = []
        for _ in range(instances):
            if kind == "track":
                errs.append(check_track_instance(random_instance(rng, temperature=temperature), step))
            elif kind == "aux":
                errs.append(check_aux_pair(random_aux_pair(rng), step))
            else:
                raise ValueError(f"unknown loss {kind!r}")
        out["losses"][kind] = {"max_rel_err": float(max(errs)), "mean_rel_err": math.fsum(errs) / len(errs)}
    out["max_rel_err"] = max(v["max_rel_err"] for v in out["losses"].values())
    return out
