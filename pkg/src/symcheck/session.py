"""Consultation sessions: inquiry loop, imputed diagnosis, termination.

Each round the engine scores the candidate symptoms and asks the best one;
the answer updates the evidence and the candidate filter; the diagnosis is
re-estimated from imputed completions; and the session stops on statistical
confidence, on the inquiry budget, or when no candidates remain.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diagnosis import PredictiveSummary, summarize_predictions
from .errors import ContractError
from .knowledge import (
    CooccurrenceIndex,
    EvidenceState,
    KnowledgeBase,
    SymptomId,
    initial_candidates,
    update_candidates,
)
from .reward import RewardBreakdown, RewardEngine, select_next

REASON_CONFIDENCE = "confidence"
REASON_BUDGET = "budget"
REASON_NO_CANDIDATES = "no_candidates"

POLICY_INFO = "info"
POLICY_RANDOM = "random"


@dataclass
class SessionConfig:
    n_t: int = 15
    n_m: int = 100
    top_k: int = 5
    policy: str = POLICY_INFO

    def __post_init__(self):
        if self.n_t < 0 or self.n_m < 2:
            raise ContractError("need n_t >= 0 and n_m >= 2")
        if self.policy not in (POLICY_INFO, POLICY_RANDOM):
            raise ContractError(f"unknown policy {self.policy!r}")


def should_terminate(summary: PredictiveSummary, rounds: int,
                     config: SessionConfig) -> tuple[bool, str | None]:
    """Confidence rule first, then the inquiry budget.

    Confidence: the top disease's mean beats every other disease's mean
    plus three of its standard deviations (strict inequality).
    """
    d = int(summary.mu.argmax())
    others = np.delete(np.arange(len(summary.mu)), d)
    if np.all(summary.mu[d] > summary.mu[others] + 3.0 * summary.sigma[others]):
        return True, REASON_CONFIDENCE
    if rounds >= config.n_t:
        return True, REASON_BUDGET
    return False, None


@dataclass
class RoundLog:
    round: int
    symptom: SymptomId
    answer: int
    reward: float
    mu_top: float
    chosen_rank: list[int]


@dataclass
class SessionRecord:
    session_id: str
    seed: int
    initial: list[tuple[SymptomId, int]]
    transcript: list[RoundLog] = field(default_factory=list)
    termination_reason: str | None = None

    def to_dict(self, summary: PredictiveSummary | None = None) -> dict:
        out = {
            "session_id": self.session_id,
            "seed": self.seed,
            "initial": [[int(s), int(v)] for s, v in self.initial],
            "rounds": len(self.transcript),
            "termination_reason": self.termination_reason,
            "transcript": [
                {"round": r.round, "symptom": int(r.symptom),
                 "answer": int(r.answer), "reward": r.reward,
                 "mu_top": r.mu_top}
                for r in self.transcript
            ],
        }
        if summary is not None:
            out["mu"] = summary.mu.tolist()
            out["sigma"] = summary.sigma.tolist()
            out["ranking"] = summary.ranking()
        return out


class Session:
    """Single consultation; single-writer, sharing only immutable models."""

    def __init__(self, kb: KnowledgeBase, engine: RewardEngine,
                 index: CooccurrenceIndex, config: SessionConfig,
                 initial: Sequence[tuple[SymptomId, int]], seed: int,
                 session_id: str | None = None, keep_breakdowns: bool = False):
        for s, v in initial:
            if not 0 <= s < kb.n_symptoms:
                raise ContractError(f"unknown symptom id {s}")
            if v not in (0, 1):
                raise ContractError(f"answer for symptom {s} must be 0 or 1")
        if not any(v == 1 for _, v in initial):
            raise ContractError(
                "a session needs at least one positive symptom in the "
                "self-report to anchor the candidate set")
        observed = dict(initial)
        if len(observed) != len(initial):
            raise ContractError("duplicate symptom in self-report")

        self.kb = kb
        self.engine = engine
        self.index = index
        self.config = config
        self.record = SessionRecord(session_id or uuid.uuid4().hex[:12],
                                    seed, [(int(s), int(v)) for s, v in initial])
        self.rng = np.random.default_rng(seed)
        self.state = EvidenceState(observed, initial_candidates(index, observed))
        self.keep_breakdowns = keep_breakdowns
        self.breakdowns: list[RewardBreakdown] = []
        self.pending: SymptomId | None = None
        self.summary: PredictiveSummary | None = None
        self.terminated = False
        self._last_reward = 0.0
        self._advance()

    # -- public API ---------------------------------------------------------

    @property
    def rounds(self) -> int:
        return self.state.rounds

    def answer(self, s: SymptomId, value: int) -> None:
        """Record the answer to the pending question and advance the loop."""
        if self.terminated:
            raise ContractError("session complete")
        if self.pending is None or s != self.pending:
            raise ContractError(
                f"symptom {s} is not the pending question ({self.pending})")
        self.state = update_candidates(self.state, self.index, s, value)
        self.pending = None
        self._advance(answered=(s, value))

    def ranking(self) -> list[int]:
        return self.summary.ranking()

    def top_k(self) -> list[dict]:
        summary = self.summary
        return [
            {
                "disease": d,
                "code": self.kb.disease_codes[d],
                "name": self.kb.disease_names[d],
                "mu": float(summary.mu[d]),
                "sigma": float(summary.sigma[d]),
            }
            for d in summary.ranking()[: self.config.top_k]
        ]

    def to_dict(self) -> dict:
        return self.record.to_dict(self.summary)

    # -- internals ----------------------------------------------------------

    def diagnose(self) -> PredictiveSummary:
        """Impute unobserved features n_m times and summarize the classifier."""
        completions, _ = self.engine.vae.sample_unobserved(
            dict(self.state.observed), self.config.n_m, self.rng)
        symptom_values = completions[:, : self.kb.n_symptoms].astype(np.float32)
        return summarize_predictions(self.engine.diag, symptom_values)

    def _advance(self, answered: tuple[SymptomId, int] | None = None) -> None:
        self.summary = self.diagnose()
        if answered is not None:
            self.record.transcript.append(RoundLog(
                round=self.state.rounds,
                symptom=answered[0],
                answer=answered[1],
                reward=self._last_reward,
                mu_top=float(self.summary.mu.max()),
                chosen_rank=self.summary.ranking()[: self.config.top_k],
            ))
        stop, reason = should_terminate(self.summary, self.state.rounds,
                                        self.config)
        if stop:
            self._finish(reason)
            return
        if not self._has_candidates():
            self._finish(REASON_NO_CANDIDATES)
            return
        self._ask_next()

    def _has_candidates(self) -> bool:
        if self.engine.config.enable_filtering:
            return bool(self.state.candidates)
        return len(self.state.observed) < self.kb.n_symptoms

    def _ask_next(self) -> None:
        if self.config.policy == POLICY_RANDOM:
            if self.engine.config.enable_filtering:
                pool = sorted(self.state.candidates)
            else:
                pool = [s for s in range(self.kb.n_symptoms)
                        if s not in self.state.observed]
            self.pending = pool[int(self.rng.integers(len(pool)))]
            self._last_reward = 0.0
            return
        breakdown = self.engine.candidate_rewards(self.state, self.rng)
        if self.keep_breakdowns:
            self.breakdowns.append(breakdown)
        self.pending = select_next(breakdown)
        self._last_reward = breakdown.by_symptom()[self.pending].total

    def _finish(self, reason: str) -> None:
        self.terminated = True
        self.pending = None
        self.record.termination_reason = reason


def replay(kb: KnowledgeBase, engine: RewardEngine, index: CooccurrenceIndex,
           config: SessionConfig, record: SessionRecord) -> Session:
    """Re-run a transcript's answers under its seed; must reproduce exactly."""
    session = Session(kb, engine, index, config,
                      record.initial, record.seed,
                      session_id=record.session_id)
    for entry in record.transcript:
        if session.terminated:
            raise ContractError("replay diverged: session ended early")
        if session.pending != entry.symptom:
            raise ContractError(
                f"replay diverged at round {entry.round}: asked "
                f"{session.pending}, transcript has {entry.symptom}")
        session.answer(entry.symptom, entry.answer)
    return session
