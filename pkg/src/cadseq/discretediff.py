"""Absorbing-state discrete diffusion over token lattices.

Forward corruption independently replaces tokens with a MASK sentinel
(id = K, one past the vocabulary) at a rate set by a mask schedule. The
reverse chain is exact for this transition family: unmasked positions are
frozen, and a masked position either reveals a token drawn from the
denoiser's clean-token distribution or stays masked. The denoiser itself
is a pluggable callable; three reference implementations ship for testing
and demos (oracle, uniform, per-position frequency table).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    InconsistentStateError,
    InvalidDistributionError,
    ResidualMaskError,
    SchemaError,
)

DEFAULT_STEPS = 100
DEFAULT_LAMBDA_AUX = 0.1
_ALPHA_FLOOR = 1e-9


@dataclass
class MaskSchedule:
    """Per-step mask rates gamma (length T) and survival products
    alpha_bar (length T+1, alpha_bar[0] = 1)."""

    T: int
    gamma: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self) -> None:
        self.T = int(self.T)
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if self.T < 1:
            raise ValueError("schedule needs at least one step")
        if self.gamma.shape != (self.T,) or self.alpha_bar.shape != (self.T + 1,):
            raise ValueError("gamma must have T entries and alpha_bar T+1")
        if not (self.gamma > 0).all() or not (self.gamma <= 1).all():
            raise ValueError("mask rates must lie in (0, 1]")
        if self.alpha_bar[0] != 1.0:
            raise ValueError("alpha_bar[0] must be 1")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        if self.alpha_bar[-1] > 1e-6:
            raise ValueError("terminal alpha_bar must not exceed 1e-6")
        recur = self.alpha_bar[:-1] * (1.0 - self.gamma)
        if np.abs(recur - self.alpha_bar[1:]).max() > 1e-9:
            raise ValueError("alpha_bar does not match the gamma recurrence")


@dataclass
class TokenLattice:
    """Token sequence at a diffusion timestep. Tokens live in 0..K-1 with
    K itself serving as the MASK id; a clean lattice (t = 0) has no MASK."""

    tokens: np.ndarray
    t: int
    K: int

    def __post_init__(self) -> None:
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.t = int(self.t)
        self.K = int(self.K)
        if self.tokens.ndim != 1 or len(self.tokens) < 1:
            raise ValueError("tokens must be a non-empty 1-d sequence")
        if self.K < 1:
            raise ValueError("vocabulary must hold at least one token")
        if self.t < 0:
            raise ValueError("timestep must be non-negative")
        if self.tokens.min() < 0 or self.tokens.max() > self.K:
            raise ValueError("token ids must lie in 0..K (K = MASK)")
        if self.t == 0 and (self.tokens == self.K).any():
            raise ValueError("clean lattice must not contain MASK")

    @property
    def L(self) -> int:
        return len(self.tokens)

    @property
    def mask(self) -> int:
        return self.K


def linear_schedule(T: int = DEFAULT_STEPS) -> MaskSchedule:
    """Linear survival schedule: alpha_bar[t] = 1 - t/T, so the expected
    masked fraction grows linearly and the terminus is fully masked. The
    terminal value is floored at 1e-9 to keep downstream ratios finite."""
    if T < 1:
        raise ValueError("schedule needs at least one step")
    alpha_bar = 1.0 - np.arange(T + 1, dtype=np.float64) / T
    alpha_bar[T] = max(alpha_bar[T], _ALPHA_FLOOR)
    gamma = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    return MaskSchedule(T, gamma, alpha_bar)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def forward_corrupt(x0: TokenLattice, t: int, schedule: MaskSchedule,
                    seed=None) -> TokenLattice:
    """Jump the clean lattice straight to timestep t: each position is
    masked independently with probability 1 - alpha_bar[t]."""
    if x0.t != 0:
        raise InconsistentStateError("forward corruption starts from t = 0")
    if not 0 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside 0..{schedule.T}")
    rng = _rng(seed)
    tokens = x0.tokens.copy()
    hit = rng.random(len(tokens)) < 1.0 - schedule.alpha_bar[t]
    tokens[hit] = x0.K
    return TokenLattice(tokens, t, x0.K)


def forward_step(x_prev: TokenLattice, t: int, schedule: MaskSchedule,
                 seed=None) -> TokenLattice:
    """Single corruption step t-1 -> t: every still-unmasked position is
    masked with probability gamma[t]. Composing steps 1..t reproduces
    forward_corrupt's closed form."""
    if x_prev.t != t - 1:
        raise InconsistentStateError(
            f"input lattice sits at t = {x_prev.t}, expected {t - 1}")
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside 1..{schedule.T}")
    rng = _rng(seed)
    tokens = x_prev.tokens.copy()
    live = tokens != x_prev.K
    hit = rng.random(len(tokens)) < schedule.gamma[t - 1]
    tokens[live & hit] = x_prev.K
    return TokenLattice(tokens, t, x_prev.K)


def reveal_probability(t: int, schedule: MaskSchedule) -> float:
    """Chance that a masked position uncovers its clean token on the
    reverse step t -> t-1. Equals 1 at t = 1, so nothing stays masked."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"timestep {t} outside 1..{schedule.T}")
    ab = schedule.alpha_bar
    return float((ab[t - 1] - ab[t]) / (1.0 - ab[t]))


def posterior(x_t_token: int, x0_token: int, t: int, schedule: MaskSchedule,
              k: int) -> dict[int, float]:
    """Exact reverse-transition distribution for one position given both
    endpoints. Unmasked positions are frozen; a masked position reveals
    the clean token with reveal_probability(t) and otherwise stays MASK.

    Returns a token -> probability dict over the two-point support.
    """
    mask = k
    if not 0 <= x0_token < k:
        raise InconsistentStateError("clean token must be a vocabulary id")
    if x_t_token != mask:
        if x_t_token != x0_token:
            raise InconsistentStateError(
                f"corrupted token {x_t_token} is neither MASK nor {x0_token}")
        return {int(x_t_token): 1.0}
    r = reveal_probability(t, schedule)
    return {int(x0_token): r, mask: 1.0 - r}


def _check_rows(probs: np.ndarray, L: int, K: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (L, K):
        raise InvalidDistributionError(
            f"denoiser output shape {probs.shape}, expected {(L, K)}")
    if not np.isfinite(probs).all() or probs.min() < -1e-9:
        raise InvalidDistributionError("denoiser rows contain invalid mass")
    if np.abs(probs.sum(axis=1) - 1.0).max() > 1e-9:
        raise InvalidDistributionError("denoiser rows must sum to 1")
    return np.clip(probs, 0.0, None)


def _sample_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    idx = (u[:, None] * cum[:, -1:] > cum).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def reverse_step(x_t: TokenLattice, denoiser, c, schedule: MaskSchedule,
                 seed=None, repredict_unmasked: bool = False) -> TokenLattice:
    """One ancestral step t -> t-1. The sum over clean-token hypotheses
    collapses in closed form: each masked position reveals a draw from the
    denoiser row with probability reveal_probability(t), else stays MASK.

    Unmasked positions are frozen by default; repredict_unmasked redraws
    them from the denoiser row instead (they stay unmasked either way).
    """
    t = x_t.t
    if t < 1:
        raise ValueError("reverse step needs t >= 1")
    probs = _check_rows(denoiser(x_t, c), x_t.L, x_t.K)
    rng = _rng(seed)
    u_reveal = rng.random(x_t.L)
    u_token = rng.random(x_t.L)
    draws = _sample_rows(probs, u_token)
    masked = x_t.tokens == x_t.K
    reveal = masked & (u_reveal < reveal_probability(t, schedule))
    tokens = x_t.tokens.copy()
    tokens[reveal] = draws[reveal]
    if repredict_unmasked:
        tokens[~masked] = draws[~masked]
    return TokenLattice(tokens, t - 1, x_t.K)


@dataclass
class VlbTerms:
    kl: float
    aux_ce: float
    combined: float
    lambda_aux: float


def vlb_terms(x0: TokenLattice, x_t: TokenLattice, t: int, denoiser, c,
              schedule: MaskSchedule,
              lambda_aux: float = DEFAULT_LAMBDA_AUX) -> VlbTerms:
    """Per-step training objective. kl sums, over masked positions, the
    divergence between the exact reverse transition and the denoiser-
    induced one; for this transition family that reduces to
    -reveal_probability(t) * log p(x0). aux_ce sums -log p(x0) over all
    positions. combined = kl + lambda_aux * aux_ce.
    """
    if x0.K != x_t.K or x0.L != x_t.L:
        raise InconsistentStateError("lattice pair must share shape and K")
    if x0.t != 0:
        raise InconsistentStateError("reference lattice must be clean")
    mism = (x_t.tokens != x0.tokens) & (x_t.tokens != x_t.K)
    if mism.any():
        raise InconsistentStateError(
            "corrupted lattice disagrees with the clean one outside MASK")
    probs = _check_rows(denoiser(x_t, c), x_t.L, x_t.K)
    p0 = probs[np.arange(x0.L), x0.tokens]
    with np.errstate(divide="ignore"):
        neg_log = -np.log(p0)
    masked = x_t.tokens == x_t.K
    r = reveal_probability(t, schedule)
    kl = float(r * neg_log[masked].sum()) if masked.any() else 0.0
    aux_ce = float(neg_log.sum())
    return VlbTerms(kl, aux_ce, kl + lambda_aux * aux_ce, lambda_aux)


def sample(denoiser, c, L: int, K: int, schedule: MaskSchedule,
           seed=None) -> TokenLattice:
    """Ancestral generation: start fully masked at t = T and apply
    reverse_step down to t = 0. The final step reveals everything, so a
    leftover MASK indicates a broken schedule and raises."""
    rng = _rng(seed)
    lat = TokenLattice(np.full(L, K, dtype=np.int64), schedule.T, K)
    for _ in range(schedule.T):
        lat = reverse_step(lat, denoiser, c, schedule, rng)
    if (lat.tokens == K).any():
        raise ResidualMaskError("sampling finished with MASK tokens present")
    return lat


class OracleDenoiser:
    """Point mass on a fixed target sequence. Running the reverse chain
    with it reconstructs the target exactly; its VLB is zero."""

    def __init__(self, target: TokenLattice) -> None:
        if (target.tokens == target.K).any():
            raise InconsistentStateError("oracle target must be clean")
        self.target = target

    def __call__(self, lattice: TokenLattice, c) -> np.ndarray:
        if lattice.L != self.target.L or lattice.K != self.target.K:
            raise InconsistentStateError("lattice does not match oracle target")
        out = np.zeros((lattice.L, lattice.K))
        out[np.arange(lattice.L), self.target.tokens] = 1.0
        return out


class UniformDenoiser:
    """Equal mass on every vocabulary token, ignoring the input."""

    def __call__(self, lattice: TokenLattice, c) -> np.ndarray:
        return np.full((lattice.L, lattice.K), 1.0 / lattice.K)


class FrequencyTableDenoiser:
    """Per-position unigram table estimated from a corpus of clean
    sequences. Ignores the corrupted tokens and the condition vector, so
    it is a conditioning-free baseline rather than a learned model."""

    def __init__(self, table: np.ndarray) -> None:
        table = np.asarray(table, dtype=np.float64)
        if table.ndim != 2:
            raise InvalidDistributionError("table must be an L x K matrix")
        self.table = _check_rows(table, *table.shape)

    @classmethod
    def from_corpus(cls, corpus, k: int,
                    smoothing: float = 0.0) -> "FrequencyTableDenoiser":
        rows = [np.asarray(seq, dtype=np.int64) for seq in corpus]
        if not rows:
            raise ValueError("corpus is empty")
        L = len(rows[0])
        if any(len(r) != L for r in rows):
            raise ValueError("corpus sequences must share one length")
        counts = np.zeros((L, k), dtype=np.float64)
        for r in rows:
            if r.min() < 0 or r.max() >= k:
                raise ValueError("corpus token outside vocabulary")
            counts[np.arange(L), r] += 1.0
        table = (counts + smoothing) / (len(rows) + smoothing * k)
        return cls(table)

    def __call__(self, lattice: TokenLattice, c) -> np.ndarray:
        if self.table.shape != (lattice.L, lattice.K):
            raise InconsistentStateError(
                f"table shape {self.table.shape} does not match lattice")
        return self.table


def schedule_to_json(schedule: MaskSchedule) -> str:
    return json.dumps([float(a) for a in schedule.alpha_bar])


def schedule_from_json(text: str) -> MaskSchedule:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schedule is not valid JSON: {exc}") from exc
    if not isinstance(raw, list) or len(raw) < 2:
        raise SchemaError("schedule JSON must be an array of at least 2 reals")
    alpha_bar = np.asarray(raw, dtype=np.float64)
    gamma = 1.0 - alpha_bar[1:] / alpha_bar[:-1]
    try:
        return MaskSchedule(len(raw) - 1, gamma, alpha_bar)
    except ValueError as exc:
        raise SchemaError(f"schedule JSON invalid: {exc}") from exc


def lattice_to_json(lattice: TokenLattice, T: int) -> str:
    return json.dumps({
        "L": lattice.L,
        "K": lattice.K,
        "T": int(T),
        "t": lattice.t,
        "tokens": [int(v) for v in lattice.tokens],
    })


def lattice_from_json(text: str) -> tuple[TokenLattice, int]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"lattice is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise SchemaError("lattice JSON must be an object")
    for key in ("L", "K", "T", "t", "tokens"):
        if key not in raw:
            raise SchemaError(f"lattice JSON missing field {key!r}")
    tokens = raw["tokens"]
    if not isinstance(tokens, list) or len(tokens) != raw["L"]:
        raise SchemaError("lattice token array does not match header L")
    try:
        lat = TokenLattice(np.asarray(tokens, dtype=np.int64),
                           raw["t"], raw["K"])
    except ValueError as exc:
        raise SchemaError(f"lattice JSON invalid: {exc}") from exc
    return lat, int(raw["T"])
