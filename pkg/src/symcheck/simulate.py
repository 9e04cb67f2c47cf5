"""Synthetic patient generation from a knowledge base.

A record is drawn by sampling a disease uniformly at random, then running an
independent Bernoulli trial for each symptom associated with that disease at
its marginal probability.  Symptoms not associated with the disease are
absent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .knowledge import DatasetRecord, KnowledgeBase, SymptomId


@dataclass(frozen=True)
class SimConfig:
    seed: int
    n_train: int
    n_val: int
    n_test: int


def generate_record(kb: KnowledgeBase, rng: np.random.Generator) -> DatasetRecord:
    d = int(rng.integers(kb.n_diseases))
    pairs = kb.marginals[d]
    draws = rng.random(len(pairs))
    positives = frozenset(s for (s, p), u in zip(pairs, draws) if u < p)
    return DatasetRecord(d, positives)


def generate_split(kb: KnowledgeBase, n: int, seed_seq: np.random.SeedSequence
                   ) -> list[DatasetRecord]:
    rng = np.random.default_rng(seed_seq)
    return [generate_record(kb, rng) for _ in range(n)]


def generate_dataset(kb: KnowledgeBase, config: SimConfig
                     ) -> tuple[list[DatasetRecord], list[DatasetRecord], list[DatasetRecord]]:
    """Train/val/test splits from independent child streams of the seed."""
    root = np.random.SeedSequence(config.seed)
    train_seq, val_seq, test_seq = root.spawn(3)
    return (
        generate_split(kb, config.n_train, train_seq),
        generate_split(kb, config.n_val, val_seq),
        generate_split(kb, config.n_test, test_seq),
    )


def pick_self_report(record: DatasetRecord, rng: np.random.Generator
                     ) -> SymptomId | None:
    """Uniform choice among the record's positives; None if there are none."""
    positives = sorted(record.positives)
    if not positives:
        return None
    return positives[int(rng.integers(len(positives)))]
