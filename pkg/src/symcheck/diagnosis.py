"""Knowledge-guided self-attention disease classifier.

Features (symptoms then diseases) enter as [value, embedding] rows.  Each
block computes masked self-attention over all feature pairs; disease-disease
pairs are forbidden by a large negative additive mask.  A row-stochastic
conditional-probability matrix built from the knowledge base anchors the
first block's attention through a KL penalty, and consecutive blocks are
penalized for drifting from each other.  Disease logits come from an MLP
head over the final disease embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import ContractError, NonFiniteError, TrainingDiverged
from .knowledge import DatasetRecord, KnowledgeBase

MASK_NEG = -1e9


@dataclass(frozen=True)
class PriorMatrices:
    """Additive attention mask and conditional-probability prior.

    ``mask`` is 0 where a feature pair is considered and -1e9 on the
    forbidden disease-disease pairs.  ``prior`` holds P(column | row) for
    symptom->symptom and disease->symptom pairs, each nonzero row summing
    to 1; all-zero rows are exempt from the attention regularizer.
    """

    mask: np.ndarray
    prior: np.ndarray

    @property
    def valid_rows(self) -> np.ndarray:
        return self.prior.sum(axis=1) > 0


def build_priors(kb: KnowledgeBase, records: Sequence[DatasetRecord]) -> PriorMatrices:
    n_s, n_d = kb.n_symptoms, kb.n_diseases
    f = n_s + n_d

    mask = np.zeros((f, f), dtype=np.float64)
    mask[n_s:, n_s:] = MASK_NEG

    prior = np.zeros((f, f), dtype=np.float64)
    # disease rows: knowledge-base marginals, renormalized per disease
    for d in range(n_d):
        row = np.zeros(n_s)
        for s, p in kb.marginals[d]:
            row[s] = p
        total = row.sum()
        if total > 0:
            prior[n_s + d, :n_s] = row / total
    # symptom rows: empirical co-occurrence of positive pairs
    counts = np.zeros((n_s, n_s), dtype=np.float64)
    for r in records:
        pos = sorted(r.positives)
        for s in pos:
            counts[s, pos] += 1
    support = counts.diagonal().copy()
    for s in range(n_s):
        if support[s] > 0:
            row = counts[s] / support[s]
            prior[s, :n_s] = row / row.sum()
    return PriorMatrices(mask, prior)


@dataclass
class DiagConfig:
    embed_dim: int = 64
    att_dim: int = 64
    blocks: int = 2
    mlp_hidden: int = 128
    lambda_reg: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass(frozen=True)
class PredictiveSummary:
    """Per-disease mean and standard deviation over imputed predictions."""

    mu: np.ndarray
    sigma: np.ndarray
    n_samples: int

    def ranking(self) -> list[int]:
        """Disease ids sorted by mean probability, highest first."""
        return sorted(range(len(self.mu)), key=lambda d: (-self.mu[d], d))


class DiagModel:
    """Stacked masked self-attention blocks plus a disease head."""

    def __init__(self, n_symptoms: int, n_diseases: int, priors: PriorMatrices,
                 config: DiagConfig, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(config.seed)
        if config.blocks < 1:
            raise ContractError("need at least one attention block")
        self.config = config
        self.n_symptoms = n_symptoms
        self.n_diseases = n_diseases
        self.n_features = n_symptoms + n_diseases
        dt = config.np_dtype()
        self.mask = priors.mask.astype(dt)
        self.prior = priors.prior.astype(np.float64)
        k, c, mh = config.embed_dim, config.att_dim, config.mlp_hidden
        store = nn.ParamStore(dtype=dt)
        store.add("embed", rng.normal(scale=0.1, size=(self.n_features, k)))
        in_dim = 1 + k
        for j in range(config.blocks):
            store.add(f"block{j}.wq", nn.glorot_uniform((in_dim, c), rng))
            store.add(f"block{j}.wk", nn.glorot_uniform((in_dim, c), rng))
            store.add(f"block{j}.wv", nn.glorot_uniform((in_dim, c), rng))
            store.add(f"block{j}.m1", nn.glorot_uniform((c, mh), rng))
            store.add(f"block{j}.b1", np.zeros(mh))
            store.add(f"block{j}.m2", nn.glorot_uniform((mh, k), rng))
            store.add(f"block{j}.b2", np.zeros(k))
            in_dim = k
        store.add("head.w1", nn.glorot_uniform((k, mh), rng))
        store.add("head.b1", np.zeros(mh))
        store.add("head.w2", nn.glorot_uniform((mh, 1), rng))
        store.add("head.b2", np.zeros(1))
        self.store = store

    def forward_graph(self, values: np.ndarray) -> dict:
        """Run the network on a batch of symptom vectors (batch, n_symptoms).

        Unobserved symptoms must already be filled (0 outside the imputation
        path).  Returns probabilities, log-probabilities, per-block attention
        in probability and log domains, and the final embeddings.
        """
        if values.ndim != 2 or values.shape[1] != self.n_symptoms:
            raise ContractError(
                f"expected (batch, {self.n_symptoms}) symptom values, "
                f"got {values.shape}")
        s = self.store
        batch = values.shape[0]
        dt = s.dtype
        col = np.zeros((batch, self.n_features, 1), dtype=dt)
        col[:, : self.n_symptoms, 0] = values
        e = nn.concat_last(nn.Tensor(col), nn.expand_batch(s["embed"], batch))
        scale = 1.0 / np.sqrt(self.config.att_dim)
        attention, log_attention = [], []
        for j in range(self.config.blocks):
            q = nn.matmul(e, s[f"block{j}.wq"])
            k = nn.matmul(e, s[f"block{j}.wk"])
            v = nn.matmul(e, s[f"block{j}.wv"])
            scores = nn.mul(nn.matmul(q, nn.swap_last(k)), scale)
            log_a = nn.masked_log_softmax(scores, self.mask)
            a = nn.exp(log_a)
            h = nn.matmul(a, v)
            e = nn.affine(nn.relu(nn.affine(h, s[f"block{j}.m1"], s[f"block{j}.b1"])),
                          s[f"block{j}.m2"], s[f"block{j}.b2"])
            attention.append(a)
            log_attention.append(log_a)
        e_d = nn.narrow(e, -2, self.n_symptoms, self.n_diseases)
        hidden = nn.relu(nn.affine(e_d, s["head.w1"], s["head.b1"]))
        logits = nn.reshape(nn.affine(hidden, s["head.w2"], s["head.b2"]),
                            (batch, self.n_diseases))
        return {
            "probs": nn.softmax(logits),
            "log_probs": nn.log_softmax(logits),
            "attention": attention,
            "log_attention": log_attention,
            "embeddings": e,
        }

    def attention_reg_graph(self, out: dict) -> nn.Tensor:
        """Sum over blocks of row-averaged KL(A^(j-1) || A^(j)), A^(0)=prior."""
        batch = out["attention"][0].shape[0]
        prior = self.prior
        valid = prior.sum(axis=1) > 0
        n_valid = max(int(valid.sum()), 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = float(np.where(prior > 0, prior * np.log(
                np.where(prior > 0, prior, 1.0)), 0.0).sum())
        cross = nn.sum_axis(nn.mul_const(out["log_attention"][0],
                                         prior.astype(self.store.dtype)))
        reg = nn.mul(nn.add(nn.mul(cross, -1.0), batch * plogp),
                     1.0 / (batch * n_valid))
        for j in range(1, self.config.blocks):
            diff = nn.sub(out["log_attention"][j - 1], out["log_attention"][j])
            term = nn.sum_axis(nn.mul(out["attention"][j - 1], diff))
            reg = nn.add(reg, nn.mul(term, 1.0 / (batch * self.n_features)))
        return reg

    def loss_graph(self, values: np.ndarray, labels: np.ndarray) -> dict:
        """Cross-entropy on the true disease plus the attention KL penalty."""
        out = self.forward_graph(values)
        batch = values.shape[0]
        onehot = np.zeros((batch, self.n_diseases), dtype=self.store.dtype)
        onehot[np.arange(batch), labels] = 1.0
        ce = nn.mul(nn.sum_axis(nn.mul_const(out["log_probs"], onehot)),
                    -1.0 / batch)
        reg = self.attention_reg_graph(out)
        loss = nn.add(ce, nn.mul(reg, self.config.lambda_reg))
        return {"loss": loss, "ce": ce, "reg": reg, **out}

    def forward_probs(self, values: np.ndarray, chunk: int | None = None) -> np.ndarray:
        """Inference-only batched probabilities, chunked to bound memory."""
        values = np.asarray(values)
        if values.ndim == 1:
            values = values[None, :]
        if chunk is None:
            chunk = max(1, int(2 ** 24 / max(self.n_features ** 2, 1)))
        rows = []
        with nn.no_grad():
            for start in range(0, len(values), chunk):
                out = self.forward_graph(values[start:start + chunk])
                rows.append(out["probs"].data.astype(np.float64))
        return np.concatenate(rows, axis=0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = self.store.state_arrays()
        arrays["mask"] = self.mask.copy()
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.store.load_arrays({k: v for k, v in arrays.items() if k != "mask"})
        self.mask = np.asarray(arrays["mask"], dtype=self.store.dtype)


def export_embeddings(model: DiagModel) -> np.ndarray:
    """Frozen copy of the feature embedding table for the VAE."""
    return model.store["embed"].data.copy()


def summarize_predictions(model: DiagModel, inputs: np.ndarray) -> PredictiveSummary:
    """Mean and standard deviation of p_D across imputed symptom vectors."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[0] < 2:
        raise ContractError("need at least 2 imputed inputs for a deviation")
    probs = model.forward_probs(inputs)
    return PredictiveSummary(probs.mean(axis=0), probs.std(axis=0), len(inputs))


def records_to_values(records: Sequence[DatasetRecord], n_symptoms: int,
                      dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    values = np.zeros((len(records), n_symptoms), dtype=dtype)
    labels = np.zeros(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        for s in r.positives:
            values[i, s] = 1.0
        labels[i] = r.disease
    return values, labels


def top1_accuracy(model: DiagModel, values: np.ndarray, labels: np.ndarray) -> float:
    probs = model.forward_probs(values)
    return float((probs.argmax(axis=1) == labels).mean())


def train_diag(model: DiagModel, train: Sequence[DatasetRecord],
               val: Sequence[DatasetRecord], log_every: int | None = None
               ) -> list[dict]:
    """Adam training with early stopping on validation Top-1.

    On divergence the best parameters are restored and TrainingDiverged is
    raised with that state attached.
    """
    cfg = model.config
    rng = np.random.default_rng(cfg.seed)
    x_train, y_train = records_to_values(train, model.n_symptoms)
    x_val, y_val = records_to_values(val, model.n_symptoms)
    history: list[dict] = []
    best = {"top1": -1.0, "arrays": model.store.state_arrays(), "epoch": -1}
    try:
        for epoch in range(cfg.max_epochs):
            order = rng.permutation(len(x_train))
            tr_loss = tr_reg = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                model.store.zero_grad()
                out = model.loss_graph(x_train[idx], y_train[idx])
                out["loss"].backward()
                nn.adam_step(model.store, lr=cfg.learning_rate)
                tr_loss += out["loss"].item() * len(idx)
                tr_reg += out["reg"].item() * len(idx)
            val_top1 = top1_accuracy(model, x_val, y_val)
            entry = {
                "epoch": epoch,
                "train_loss": tr_loss / len(order),
                "train_reg": tr_reg / len(order),
                "val_top1": val_top1,
            }
            history.append(entry)
            if log_every and epoch % log_every == 0:
                print(f"[diag] epoch {epoch}: loss {entry['train_loss']:.4f} "
                      f"val@1 {val_top1:.4f}")
            if val_top1 > best["top1"]:
                best = {"top1": val_top1, "arrays": model.store.state_arrays(),
                        "epoch": epoch}
            elif epoch - best["epoch"] >= cfg.patience:
                break
    except NonFiniteError as e:
        model.store.load_arrays(best["arrays"])
        raise TrainingDiverged(f"diagnosis training diverged: {e}",
                               best_state=best["arrays"]) from e
    model.store.load_arrays(best["arrays"])
    return history
