"""Metric-DP token perturbation (MADLIB, Mahalanobis, Vickrey) and DP-ratio checks."""

import hashlib
import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.stats import norm

from models.schemas import (
    DPRatioEntry,
    DPRatioReport,
    MechanismConfig,
    MechanismKind,
    PerturbationOutcome,
)
from services.embedding_service import EmbeddingModel, covariance, distance, nearest, nearest_batch

logger = logging.getLogger(__name__)


def derive_rng(seed: int, doc_id: str) -> np.random.Generator:
    """
    Independent generator for one document, fixed by (seed, doc_id) alone,
    so outputs do not depend on processing order or worker count.
    """
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(np.random.SeedSequence([seed, int.from_bytes(digest, "big")]))


def sample_noise(dim: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """
    One draw with density proportional to exp(-epsilon * ||z||).

    Direction: normalized standard normal vector (uniform on the sphere).
    Magnitude: Gamma(shape=dim, scale=1/epsilon). Draw order is fixed:
    the normal vector first, then the magnitude.
    """
    if dim < 1 or epsilon <= 0:
        raise ValueError("dim must be >= 1 and epsilon > 0")
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    magnitude = rng.gamma(shape=dim, scale=1.0 / epsilon)
    return magnitude * direction


def sample_noise_batch(n: int, dim: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent noise vectors as an (n, dim) array."""
    if dim < 1 or epsilon <= 0:
        raise ValueError("dim must be >= 1 and epsilon > 0")
    directions = rng.standard_normal((n, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    magnitudes = rng.gamma(shape=dim, scale=1.0 / epsilon, size=n)
    return magnitudes[:, None] * directions


def vickrey_first_probability(d1: float, d2: float, t: float) -> float:
    """P(choose the nearest of the two candidates); 1 when both distances vanish."""
    num = (1.0 - t) * d2
    den = num + t * d1
    return 1.0 if den == 0 else num / den


class Mechanism:
    """A perturbation mechanism bound to one embedding model."""

    def __init__(
        self,
        model: EmbeddingModel,
        kind: MechanismKind = "madlib",
        lam: float = 0.2,
        t: float = 0.5,
        prune: bool = False,
    ):
        self.model = model
        self.kind = kind
        self.lam = lam
        self.t = t
        self.prune = prune
        self._root: Optional[np.ndarray] = None
        if kind == "mahalanobis" and lam > 0:
            self._root = covariance(model, lam).regularized_root

    @classmethod
    def from_config(cls, model: EmbeddingModel, cfg: MechanismConfig, prune: bool = False) -> "Mechanism":
        return cls(model, cfg.kind, cfg.lam, cfg.t, prune)

    def noise(self, epsilon: float, rng: np.random.Generator) -> np.ndarray:
        z = sample_noise(self.model.dim, epsilon, rng)
        if self._root is not None:
            z = self._root @ z
        return z

    def perturb(self, w: str, epsilon: float, rng: np.random.Generator) -> PerturbationOutcome:
        """Noisy embedding of ``w`` mapped back to a vocabulary token."""
        point = self.model.vector(w)
        z = self.noise(epsilon, rng)
        noisy = point + z

        if self.kind == "vickrey" and len(self.model) > 1:
            first, second = nearest(self.model, noisy, k=2, prune=self.prune)
            p1 = vickrey_first_probability(first.distance, second.distance, self.t)
            if p1 >= 1.0:
                output = first.token
            elif p1 <= 0.0:
                output = second.token
            else:
                output = first.token if rng.random() < p1 else second.token
        else:
            output = nearest(self.model, noisy, k=1, prune=self.prune)[0].token

        return PerturbationOutcome(
            input=w,
            output=output,
            noise_norm=float(np.linalg.norm(z)),
            self_substituted=output == w,
        )

    def sample_outputs(self, w: str, epsilon: float, n: int, rng: np.random.Generator) -> np.ndarray:
        """Row indices of ``n`` independent perturbations of ``w`` (vectorized)."""
        z = sample_noise_batch(n, self.model.dim, epsilon, rng)
        if self._root is not None:
            z = z @ self._root.T
        points = self.model.vector(w) + z

        if self.kind == "vickrey" and len(self.model) > 1:
            rows, dists = nearest_batch(self.model, points, k=2)
            num = (1.0 - self.t) * dists[:, 1]
            den = num + self.t * dists[:, 0]
            p1 = np.divide(num, den, out=np.ones_like(num), where=den > 0)
            pick_first = rng.random(n) < p1
            return np.where(pick_first, rows[:, 0], rows[:, 1])

        rows, _ = nearest_batch(self.model, points, k=1)
        return rows[:, 0]


def perturb_token(
    model: EmbeddingModel,
    cfg: MechanismConfig,
    w: str,
    rng: np.random.Generator,
) -> PerturbationOutcome:
    """Perturb one in-vocabulary token at ``cfg.epsilon``."""
    return Mechanism.from_config(model, cfg).perturb(w, cfg.epsilon, rng)


def verify_dp_ratio(
    model: EmbeddingModel,
    cfg: MechanismConfig,
    w: str,
    w2: str,
    samples: int = 100_000,
    confidence: float = 0.99,
    min_count: int = 1000,
    batch_size: int = 50_000,
) -> DPRatioReport:
    """
    Monte-Carlo check of P[M(w)=z] / P[M(w2)=z] <= exp(epsilon * d(w, w2)).

    Each output token gets the empirical log-ratio and a normal-approximation
    slack on it. Tokens seen fewer than ``min_count`` times under either
    input are inconclusive rather than violations.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    mechanism = Mechanism.from_config(model, cfg)
    d = distance(model, w, w2)
    bound = cfg.epsilon * d
    z_score = float(norm.ppf(1.0 - (1.0 - confidence) / 2.0))

    streams = np.random.SeedSequence(cfg.seed).spawn(2)
    histograms = []
    for word, stream in zip((w, w2), streams):
        rng = np.random.default_rng(stream)
        counts = np.zeros(len(model), dtype=np.int64)
        remaining = samples
        while remaining > 0:
            n = min(batch_size, remaining)
            counts += np.bincount(mechanism.sample_outputs(word, cfg.epsilon, n, rng), minlength=len(model))
            remaining -= n
        histograms.append(counts)

    entries: List[DPRatioEntry] = []
    for i in np.flatnonzero((histograms[0] + histograms[1]) > 0).tolist():
        c1, c2 = int(histograms[0][i]), int(histograms[1][i])
        if c1 < min_count or c2 < min_count:
            entries.append(DPRatioEntry(token=model.vocab[i], count_w=c1, count_w2=c2, status="inconclusive"))
            continue
        p1, p2 = c1 / samples, c2 / samples
        log_ratio = math.log(p1 / p2)
        slack = z_score * math.sqrt((1.0 - p1) / c1 + (1.0 - p2) / c2)
        status = "violation" if log_ratio - slack > bound else "ok"
        entries.append(
            DPRatioEntry(
                token=model.vocab[i], count_w=c1, count_w2=c2,
                log_ratio=log_ratio, slack=slack, status=status,
            )
        )

    conclusive = [e for e in entries if e.log_ratio is not None]
    if any(e.status == "violation" for e in entries):
        verdict = "fail"
    elif conclusive:
        verdict = "pass"
    else:
        verdict = "inconclusive"
    max_log_ratio = max((e.log_ratio for e in conclusive), default=None)

    logger.info(f"DP ratio {w!r} vs {w2!r} at epsilon={cfg.epsilon}: {verdict} (max={max_log_ratio}, bound={bound:.4f})")
    return DPRatioReport(
        mechanism=cfg.kind,
        w=w,
        w2=w2,
        epsilon=cfg.epsilon,
        distance=d,
        bound=bound,
        samples=samples,
        confidence=confidence,
        entries=entries,
        max_log_ratio=max_log_ratio,
        verdict=verdict,
    )


def self_substitution_curve(
    model: EmbeddingModel,
    cfg: MechanismConfig,
    tokens: Sequence[str],
    epsilons: Sequence[float],
    trials: int = 10_000,
) -> Dict[float, float]:
    """Self-substitution rate per epsilon over ``trials`` perturbations."""
    if not tokens:
        raise ValueError("tokens must not be empty")
    mechanism = Mechanism.from_config(model, cfg)
    curve: Dict[float, float] = {}
    for epsilon in epsilons:
        rng = derive_rng(cfg.seed, f"self-sub:{epsilon!r}")
        hits = 0
        for i in range(trials):
            w = tokens[i % len(tokens)]
            hits += mechanism.perturb(w, epsilon, rng).self_substituted
        curve[float(epsilon)] = hits / trials
        logger.debug(f"epsilon={epsilon}: self-substitution rate {curve[float(epsilon)]:.4f}")
    return curve
