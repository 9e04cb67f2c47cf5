"""Knowledge base, dataset records, evidence state, and co-occurrence index.

Identifier convention used everywhere in the package: symptoms and diseases
get dense integer ids assigned by sorted code order.  In the joint feature
space of the two models, features ``0 .. n_symptoms-1`` are symptoms and
features ``n_symptoms .. n_symptoms+n_diseases-1`` are diseases.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DatasetError, KnowledgeBaseError

SymptomId = int
DiseaseId = int


@dataclass(frozen=True)
class KnowledgeBase:
    """Symptom/disease tables plus per-disease symptom marginals.

    ``marginals[d]`` lists ``(symptom_id, p)`` pairs with ``p`` the probability
    that a patient with disease ``d`` presents that symptom.  Ids are stable
    for a given file: both tables are sorted by code before ids are assigned.
    """

    symptom_codes: tuple[str, ...]
    symptom_names: tuple[str, ...]
    disease_codes: tuple[str, ...]
    disease_names: tuple[str, ...]
    marginals: tuple[tuple[tuple[SymptomId, float], ...], ...]

    @property
    def n_symptoms(self) -> int:
        return len(self.symptom_codes)

    @property
    def n_diseases(self) -> int:
        return len(self.disease_codes)

    @property
    def n_features(self) -> int:
        """Size of the joint feature space (symptoms then diseases)."""
        return self.n_symptoms + self.n_diseases

    def disease_feature(self, d: DiseaseId) -> int:
        """Feature id of disease ``d`` in the joint feature space."""
        return self.n_symptoms + d

    def symptom_id(self, code: str) -> SymptomId:
        try:
            return self._symptom_index[code]
        except KeyError:
            raise KeyError(f"unknown symptom code {code!r}") from None

    def disease_id(self, code: str) -> DiseaseId:
        try:
            return self._disease_index[code]
        except KeyError:
            raise KeyError(f"unknown disease code {code!r}") from None

    @property
    def _symptom_index(self) -> dict[str, int]:
        idx = self.__dict__.get("_sym_idx")
        if idx is None:
            idx = {c: i for i, c in enumerate(self.symptom_codes)}
            object.__setattr__(self, "_sym_idx", idx)
        return idx

    @property
    def _disease_index(self) -> dict[str, int]:
        idx = self.__dict__.get("_dis_idx")
        if idx is None:
            idx = {c: i for i, c in enumerate(self.disease_codes)}
            object.__setattr__(self, "_dis_idx", idx)
        return idx

    def marginal_matrix(self) -> np.ndarray:
        """Dense (n_diseases, n_symptoms) matrix of p(symptom=1 | disease)."""
        m = np.zeros((self.n_diseases, self.n_symptoms))
        for d, pairs in enumerate(self.marginals):
            for s, p in pairs:
                m[d, s] = p
        return m

    def fingerprint(self) -> str:
        """Stable content hash, recorded in model sidecars."""
        payload = json.dumps(kb_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass(frozen=True)
class DatasetRecord:
    """One synthetic patient: a disease label and the set of present symptoms.

    Symptoms not listed are absent (value 0); there is no "unknown" at rest.
    """

    disease: DiseaseId
    positives: frozenset[SymptomId]


@dataclass
class EvidenceState:
    """Per-session record of answered symptoms and surviving candidates.

    ``observed`` maps symptom id to its binary answer.  ``candidates`` is the
    filtered inquiry set; it never intersects ``observed``.  ``rounds`` counts
    inquiries made after the initial self-report.
    """

    observed: dict[SymptomId, int]
    candidates: set[SymptomId]
    rounds: int = 0

    def copy(self) -> "EvidenceState":
        return EvidenceState(dict(self.observed), set(self.candidates), self.rounds)


class CooccurrenceIndex:
    """For each symptom s, the set of symptoms seen together with s.

    ``sets[s]`` holds every symptom j with empirical P(x_j=1 | x_s=1) above
    the threshold.  A symptom never observed positive gets the full symptom
    set: with no evidence, filtering must not remove candidates.
    """

    def __init__(self, sets: Sequence[frozenset[SymptomId]], threshold: float):
        self.sets = tuple(sets)
        self.threshold = threshold

    @property
    def n_symptoms(self) -> int:
        return len(self.sets)

    def __getitem__(self, s: SymptomId) -> frozenset[SymptomId]:
        return self.sets[s]

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "sets": [sorted(s) for s in self.sets],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CooccurrenceIndex":
        return cls([frozenset(s) for s in d["sets"]], float(d["threshold"]))


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise KnowledgeBaseError(message)


def kb_from_dict(data: dict) -> KnowledgeBase:
    """Validate the documented schema and assign ids by sorted code order."""
    _require(isinstance(data, dict), "top level must be an object")
    _require("symptoms" in data and "diseases" in data,
             "missing 'symptoms' or 'diseases' key")

    symptoms = sorted(data["symptoms"], key=lambda s: s["code"])
    seen: set[str] = set()
    for s in symptoms:
        _require(s["code"] not in seen, f"duplicate symptom code {s['code']!r}")
        seen.add(s["code"])
    symptom_codes = tuple(s["code"] for s in symptoms)
    symptom_names = tuple(s.get("name", s["code"]) for s in symptoms)
    sym_index = {c: i for i, c in enumerate(symptom_codes)}
    _require(len(symptom_codes) >= 1, "need at least one symptom")

    diseases = sorted(data["diseases"], key=lambda d: d["code"])
    seen = set()
    for d in diseases:
        _require(d["code"] not in seen, f"duplicate disease code {d['code']!r}")
        seen.add(d["code"])
    _require(len(diseases) >= 2, "need at least two diseases")

    disease_codes = tuple(d["code"] for d in diseases)
    disease_names = tuple(d.get("name", d["code"]) for d in diseases)
    marginals = []
    for d in diseases:
        pairs = []
        _require(len(d["symptoms"]) >= 1,
                 f"disease {d['code']!r} has no associated symptoms")
        for entry in d["symptoms"]:
            code, prob = entry["code"], float(entry["prob"])
            _require(code in sym_index,
                     f"disease {d['code']!r} references unknown symptom {code!r}")
            _require(0.0 < prob <= 1.0,
                     f"probability {prob} for symptom {code!r} of disease "
                     f"{d['code']!r} is outside (0, 1]")
            pairs.append((sym_index[code], prob))
        pairs.sort()
        marginals.append(tuple(pairs))

    return KnowledgeBase(symptom_codes, symptom_names, disease_codes,
                         disease_names, tuple(marginals))


def kb_to_dict(kb: KnowledgeBase) -> dict:
    return {
        "symptoms": [
            {"code": c, "name": n}
            for c, n in zip(kb.symptom_codes, kb.symptom_names)
        ],
        "diseases": [
            {
                "code": kb.disease_codes[d],
                "name": kb.disease_names[d],
                "symptoms": [
                    {"code": kb.symptom_codes[s], "prob": p}
                    for s, p in kb.marginals[d]
                ],
            }
            for d in range(kb.n_diseases)
        ],
    }


def load_knowledge_base(path: str | Path) -> KnowledgeBase:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise KnowledgeBaseError(
            f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    try:
        return kb_from_dict(data)
    except (KeyError, TypeError) as e:
        raise KnowledgeBaseError(f"{path}: schema violation: {e}") from e


def save_knowledge_base(kb: KnowledgeBase, path: str | Path) -> None:
    Path(path).write_text(json.dumps(kb_to_dict(kb), indent=2) + "\n")


def load_records(path: str | Path, kb: KnowledgeBase) -> list[DatasetRecord]:
    """Read a JSON-lines dataset, mapping codes to ids against ``kb``."""
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                disease = kb.disease_id(row["disease"])
                positives = frozenset(kb.symptom_id(c) for c in row["positives"])
            except (json.JSONDecodeError, KeyError) as e:
                raise DatasetError(f"{path}:{lineno}: {e}") from e
            records.append(DatasetRecord(disease, positives))
    return records


def save_records(records: Iterable[DatasetRecord], path: str | Path,
                 kb: KnowledgeBase) -> None:
    with open(path, "w") as f:
        for r in records:
            row = {
                "disease": kb.disease_codes[r.disease],
                "positives": sorted(kb.symptom_codes[s] for s in r.positives),
            }
            f.write(json.dumps(row) + "\n")


def build_cooccurrence(records: Sequence[DatasetRecord], n_symptoms: int,
                       threshold: float = 0.0) -> CooccurrenceIndex:
    """Empirical co-occurrence sets from positive symptom pairs.

    ``j in sets[s]`` iff count(x_j=1 and x_s=1) / count(x_s=1) > threshold.
    Symptoms with zero positive support fall back to the full symptom set.
    """
    if not 0.0 <= threshold < 1.0:
        raise ContractError(f"threshold must be in [0, 1), got {threshold}")
    counts = np.zeros((n_symptoms, n_symptoms), dtype=np.int64)
    for r in records:
        pos = sorted(r.positives)
        for s in pos:
            counts[s, pos] += 1
    support = counts.diagonal()
    everything = frozenset(range(n_symptoms))
    sets = []
    for s in range(n_symptoms):
        if support[s] == 0:
            sets.append(everything)
        else:
            ratio = counts[s] / support[s]
            sets.append(frozenset(np.flatnonzero(ratio > threshold).tolist()))
    return CooccurrenceIndex(sets, threshold)


def update_candidates(state: EvidenceState, index: CooccurrenceIndex,
                      s: SymptomId, value: int) -> EvidenceState:
    """Record an answer and filter candidates on positive answers.

    Positive answers intersect the candidate set with the answered symptom's
    co-occurrence set; negative answers only remove the symptom itself.
    Returns a new state; the input is not mutated.
    """
    if s in state.observed:
        raise ContractError(f"symptom {s} was already answered")
    if value not in (0, 1):
        raise ContractError(f"answer must be 0 or 1, got {value!r}")
    observed = dict(state.observed)
    observed[s] = value
    candidates = set(state.candidates)
    candidates.discard(s)
    if value == 1:
        candidates &= index[s]
        candidates.discard(s)
    return EvidenceState(observed, candidates, state.rounds + 1)


def initial_candidates(index: CooccurrenceIndex,
                       initial: dict[SymptomId, int]) -> set[SymptomId]:
    """Candidate set after a self-report: intersection of S_i over positives."""
    candidates: set[SymptomId] | None = None
    for s, v in initial.items():
        if v == 1:
            candidates = set(index[s]) if candidates is None else candidates & index[s]
    if candidates is None:
        raise ContractError("self-report contains no positive symptom")
    return candidates - set(initial)
