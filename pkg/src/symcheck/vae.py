"""Product-of-Experts VAE over the joint symptom+disease feature space.

Each observed feature contributes an independent diagonal-Gaussian expert in
latent space; the posterior is the precision-weighted product of the experts
with a standard-normal prior, so conditioning on one more feature is a
constant-time update.  The decoder maps latent draws to Bernoulli
probabilities for every feature.  Feature embeddings are produced by the
diagnosis model and stay frozen here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .errors import ContractError, NonFiniteError, TrainingDiverged
from .knowledge import DatasetRecord, KnowledgeBase


@dataclass(frozen=True)
class DiagGaussian:
    """Diagonal Gaussian: the currency of the encoder and all latent KLs."""

    mu: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.var.shape:
            raise ContractError("mu and var must have the same shape")
        if not np.all(self.var > 0):
            raise ContractError("variances must be strictly positive")


def standard_prior(dim: int) -> DiagGaussian:
    return DiagGaussian(np.zeros(dim), np.ones(dim))


def poe_product(experts: Sequence[DiagGaussian], prior: DiagGaussian) -> DiagGaussian:
    """Precision-weighted product of Gaussian experts with the prior.

    V = (V0^-1 + sum Vi^-1)^-1,  mu = (mu0 V0^-1 + sum mui Vi^-1) V.
    """
    prec = 1.0 / prior.var
    mp = prior.mu / prior.var
    for e in experts:
        if not np.all(e.var > 0):
            raise ContractError("expert variance must be strictly positive")
        prec = prec + 1.0 / e.var
        mp = mp + e.mu / e.var
    var = 1.0 / prec
    return DiagGaussian(mp * var, var)


def gaussian_kl(q1: DiagGaussian, q2: DiagGaussian) -> float:
    """KL(q1 || q2) for diagonal Gaussians, in nats."""
    if q1.mu.shape != q2.mu.shape:
        raise ContractError(
            f"dimension mismatch: {q1.mu.shape} vs {q2.mu.shape}")
    ratio = q1.var / q2.var
    return float(0.5 * np.sum(np.log(1.0 / ratio) + ratio
                              + (q1.mu - q2.mu) ** 2 / q2.var - 1.0))


@dataclass
class VaeConfig:
    latent_dim: int = 32
    hidden: int = 64
    decoder_hidden: int = 64
    beta: float = 1.0
    beta_warmup_epochs: int = 5  # linear ramp 0 -> beta; fights early collapse
    drop_max: float = 0.95
    var_floor: float = 1e-6
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    dtype: str = "float32"

    def np_dtype(self):
        return np.dtype(self.dtype)

    def beta_at(self, epoch: int) -> float:
        if self.beta_warmup_epochs <= 0:
            return self.beta
        return self.beta * min(1.0, (epoch + 1) / self.beta_warmup_epochs)


def embedding_fingerprint(embeddings: np.ndarray) -> str:
    return hashlib.sha256(
        np.ascontiguousarray(embeddings, dtype="<f4").tobytes()).hexdigest()[:16]


def records_to_features(records: Sequence[DatasetRecord], n_symptoms: int,
                        n_diseases: int, dtype=np.float32) -> np.ndarray:
    """Complete data matrix over the joint feature space (symptoms, diseases)."""
    x = np.zeros((len(records), n_symptoms + n_diseases), dtype=dtype)
    for i, r in enumerate(records):
        for s in r.positives:
            x[i, s] = 1.0
        x[i, n_symptoms + r.disease] = 1.0
    return x


class PoeVae:
    """Trainable encoder/decoder pair; freeze() yields the inference model."""

    def __init__(self, embeddings: np.ndarray, config: VaeConfig,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(config.seed)
        self.config = config
        self.n_features, self.embed_dim = embeddings.shape
        dt = config.np_dtype()
        self.embeddings = np.ascontiguousarray(embeddings, dtype=dt)
        L, h, dh = config.latent_dim, config.hidden, config.decoder_hidden
        store = nn.ParamStore(dtype=dt)
        store.add("enc.w1x", nn.glorot_uniform((1, h), rng))
        store.add("enc.w1e", nn.glorot_uniform((self.embed_dim, h), rng))
        store.add("enc.b1", np.zeros(h))
        store.add("enc.w2", nn.glorot_uniform((h, 2 * L), rng))
        store.add("enc.b2", np.zeros(2 * L))
        store.add("dec.w1", nn.glorot_uniform((L, dh), rng))
        store.add("dec.b1", np.zeros(dh))
        store.add("dec.w2", nn.glorot_uniform((dh, self.n_features), rng))
        store.add("dec.b2", np.zeros(self.n_features))
        self.store = store

    def expert_graph(self, values: np.ndarray):
        """Per-feature expert parameters for a batch: (B,F,L) mu and var.

        The embedding half of the first layer is shared across the batch;
        only the value column differs per sample.
        """
        s = self.store
        b = values.shape[0]
        emb_part = nn.affine(nn.Tensor(self.embeddings), s["enc.w1e"], s["enc.b1"])
        emb_part = nn.expand_batch(emb_part, b)
        x_col = nn.Tensor(values[:, :, None].astype(self.store.dtype))
        h1 = nn.relu(nn.add(nn.matmul(x_col, s["enc.w1x"]), emb_part))
        out = nn.affine(h1, s["enc.w2"], s["enc.b2"])
        L = self.config.latent_dim
        mu = nn.narrow(out, -1, 0, L)
        raw = nn.narrow(out, -1, L, L)
        var = nn.add(nn.softplus(raw), self.config.var_floor)
        return mu, var

    def posterior_graph(self, values: np.ndarray, keep: np.ndarray):
        """PoE posterior for each sample given a keep mask over features."""
        mu_i, var_i = self.expert_graph(values)
        mask = keep[:, :, None].astype(self.store.dtype)
        prec = nn.mul_const(nn.reciprocal(var_i), mask)
        post_prec = nn.add(nn.sum_axis(prec, axis=1), 1.0)
        post_mp = nn.sum_axis(nn.mul(mu_i, prec), axis=1)
        var = nn.reciprocal(post_prec)
        mu = nn.mul(post_mp, var)
        return mu, var

    def decode_graph(self, z: nn.Tensor) -> nn.Tensor:
        s = self.store
        h = nn.relu(nn.affine(z, s["dec.w1"], s["dec.b1"]))
        return nn.affine(h, s["dec.w2"], s["dec.b2"])

    def loss_graph(self, values: np.ndarray, keep: np.ndarray,
                   noise: np.ndarray, beta: float | None = None):
        """ELBO loss = reconstruction + beta * KL, both batch means.

        The encoder sees only kept features; reconstruction covers all
        features so the decoder learns to predict hidden ones.
        """
        mu, var = self.posterior_graph(values, keep)
        z = nn.add(mu, nn.mul(nn.sqrt(var), nn.Tensor(noise.astype(self.store.dtype))))
        logits = self.decode_graph(z)
        recon = nn.mul(nn.sum_axis(nn.bce_logits(
            logits, values.astype(self.store.dtype))), 1.0 / values.shape[0])
        kl_terms = nn.sub(nn.add(var, nn.mul(mu, mu)),
                          nn.add(nn.log(var), 1.0))
        kl = nn.mul(nn.sum_axis(kl_terms), 0.5 / values.shape[0])
        beta = self.config.beta if beta is None else beta
        loss = nn.add(recon, nn.mul(kl, beta))
        return loss, recon, kl

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = self.store.state_arrays()
        arrays["embed"] = self.embeddings.copy()
        return arrays

    def freeze(self) -> "InquiryModel":
        return InquiryModel(self.state_arrays(), self.config)


class InquiryModel:
    """Frozen VAE for inference: expert tables plus a numpy decoder.

    Expert parameters depend only on (feature, value), so both value tables
    are precomputed once; every posterior afterwards is table arithmetic.
    """

    def __init__(self, arrays: Mapping[str, np.ndarray], config: VaeConfig):
        self.config = config
        w = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
        self.weights = w
        self.embeddings = w["embed"]
        self.n_features = self.embeddings.shape[0]
        self.latent_dim = config.latent_dim
        emb_part = self.embeddings @ w["enc.w1e"] + w["enc.b1"]
        tables = []
        for value in (0.0, 1.0):
            h1 = np.maximum(emb_part + value * w["enc.w1x"][0], 0.0)
            out = h1 @ w["enc.w2"] + w["enc.b2"]
            mu = out[:, : self.latent_dim]
            raw = out[:, self.latent_dim:]
            var = np.logaddexp(0.0, raw) + config.var_floor
            tables.append((mu, var))
        # expert_mu[v][f], expert_var[v][f] for value v in {0, 1}
        self.expert_mu = np.stack([t[0] for t in tables])
        self.expert_var = np.stack([t[1] for t in tables])
        self.expert_prec = 1.0 / self.expert_var
        self.expert_mp = self.expert_mu * self.expert_prec

    def fingerprint(self) -> str:
        return embedding_fingerprint(self.embeddings)

    def expert(self, feature: int, value: int) -> DiagGaussian:
        return DiagGaussian(self.expert_mu[value, feature].copy(),
                            self.expert_var[value, feature].copy())

    def accumulate(self, evidence: Mapping[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """(precision, mu*precision) sums for prior + evidence experts."""
        prec = np.ones(self.latent_dim)
        mp = np.zeros(self.latent_dim)
        for f, v in evidence.items():
            prec = prec + self.expert_prec[v, f]
            mp = mp + self.expert_mp[v, f]
        return prec, mp

    def encode(self, evidence: Mapping[int, int]) -> DiagGaussian:
        prec, mp = self.accumulate(evidence)
        var = 1.0 / prec
        return DiagGaussian(mp * var, var)

    def decode_probs(self, z: np.ndarray) -> np.ndarray:
        """Bernoulli probabilities for every feature, one row per latent draw."""
        w = self.weights
        h = np.maximum(z @ w["dec.w1"] + w["dec.b1"], 0.0)
        logits = h @ w["dec.w2"] + w["dec.b2"]
        p = 1.0 / (1.0 + np.exp(-logits))
        return np.clip(p, 1e-9, 1.0 - 1e-9)

    def draw_latents(self, posterior: DiagGaussian, n: int,
                     rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal((n, self.latent_dim))
        return posterior.mu + np.sqrt(posterior.var) * eps

    def sample_unobserved(self, evidence: Mapping[int, int], n: int,
                          rng: np.random.Generator
                          ) -> tuple[np.ndarray, np.ndarray]:
        """n binary completions plus per-feature mean decoder probability.

        Observed features are echoed unchanged; unobserved ones are
        Bernoulli draws from each latent sample's decoder output.
        """
        if n < 1:
            raise ContractError("need at least one sample")
        posterior = self.encode(evidence)
        z = self.draw_latents(posterior, n, rng)
        probs = self.decode_probs(z)
        completions = (rng.random(probs.shape) < probs).astype(np.int8)
        for f, v in evidence.items():
            completions[:, f] = v
        return completions, probs.mean(axis=0)


def train_vae(vae: PoeVae, train: Sequence[DatasetRecord],
              val: Sequence[DatasetRecord], kb: KnowledgeBase,
              log_every: int | None = None) -> list[dict]:
    """Maximize the ELBO with per-sample random feature dropping.

    Per sample a drop probability rho ~ U[0, drop_max] is drawn and each
    feature is hidden independently with probability rho.  Early-stops on
    validation loss; on divergence restores the best state and raises.
    """
    cfg = vae.config
    rng = np.random.default_rng(cfg.seed)
    x_train = records_to_features(train, kb.n_symptoms, kb.n_diseases)
    x_val = records_to_features(val, kb.n_symptoms, kb.n_diseases)
    history: list[dict] = []
    best = {"loss": np.inf, "arrays": vae.store.state_arrays(), "epoch": -1}
    try:
        for epoch in range(cfg.max_epochs):
            beta = cfg.beta_at(epoch)
            order = rng.permutation(len(x_train))
            tr_loss = tr_recon = tr_kl = 0.0
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                batch = x_train[idx]
                rho = rng.uniform(0.0, cfg.drop_max, size=(len(idx), 1))
                keep = rng.random(batch.shape) >= rho
                noise = rng.standard_normal((len(idx), cfg.latent_dim))
                vae.store.zero_grad()
                loss, recon, kl = vae.loss_graph(batch, keep, noise, beta=beta)
                loss.backward()
                nn.adam_step(vae.store, lr=cfg.learning_rate)
                tr_loss += loss.item() * len(idx)
                tr_recon += recon.item() * len(idx)
                tr_kl += kl.item() * len(idx)
            val_loss, val_recon, val_kl = validate_elbo(vae, x_val, rng)
            entry = {
                "epoch": epoch,
                "beta": beta,
                "train_loss": tr_loss / len(order),
                "train_recon": tr_recon / len(order),
                "train_kl": tr_kl / len(order),
                "val_loss": val_loss,
                "val_recon": val_recon,
                "val_kl": val_kl,
            }
            history.append(entry)
            if log_every and epoch % log_every == 0:
                print(f"[vae] epoch {epoch}: train {entry['train_loss']:.4f} "
                      f"val {val_loss:.4f}")
            if val_loss < best["loss"]:
                best = {"loss": val_loss, "arrays": vae.store.state_arrays(),
                        "epoch": epoch}
            elif epoch - best["epoch"] >= cfg.patience:
                break
    except NonFiniteError as e:
        vae.store.load_arrays(best["arrays"])
        raise TrainingDiverged(f"VAE training diverged: {e}",
                               best_state=best["arrays"]) from e
    vae.store.load_arrays(best["arrays"])
    return history


def validate_elbo(vae: PoeVae, x_val: np.ndarray,
                  rng: np.random.Generator) -> tuple[float, float, float]:
    """Validation ELBO terms under the same dropping law as training."""
    cfg = vae.config
    total = recon_total = kl_total = 0.0
    with nn.no_grad():
        for start in range(0, len(x_val), cfg.batch_size):
            batch = x_val[start:start + cfg.batch_size]
            rho = rng.uniform(0.0, cfg.drop_max, size=(len(batch), 1))
            keep = rng.random(batch.shape) >= rho
            noise = rng.standard_normal((len(batch), cfg.latent_dim))
            loss, recon, kl = vae.loss_graph(batch, keep, noise)
            total += loss.item() * len(batch)
            recon_total += recon.item() * len(batch)
            kl_total += kl.item() * len(batch)
    n = max(len(x_val), 1)
    return total / n, recon_total / n, kl_total / n
