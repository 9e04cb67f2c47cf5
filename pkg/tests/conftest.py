"""Shared fixtures: a separable toy task with quickly trained models."""

import numpy as np
import pytest

from symcheck.diagnosis import DiagConfig, DiagModel, build_priors, train_diag
from symcheck.knowledge import build_cooccurrence, kb_from_dict
from symcheck.reward import RewardConfig, RewardEngine
from symcheck.simulate import SimConfig, generate_dataset
from symcheck.vae import PoeVae, VaeConfig, train_vae


def separable_kb(n=4, extra_prob=0.6):
    """Each disease has a unique always-present symptom plus a noisy shared one."""
    symptoms = [{"code": f"s{i}", "name": f"Symptom {i}"} for i in range(n)]
    symptoms.append({"code": "shared", "name": "Shared symptom"})
    return kb_from_dict({
        "symptoms": symptoms,
        "diseases": [
            {"code": f"d{i}", "name": f"Disease {i}",
             "symptoms": [{"code": f"s{i}", "prob": 1.0},
                          {"code": "shared", "prob": extra_prob}]}
            for i in range(n)
        ],
    })


def train_small_models(kb, seed=0, n_train=600, n_val=100,
                       diag_epochs=40, vae_epochs=40):
    train, val, _ = generate_dataset(kb, SimConfig(seed, n_train, n_val, 0))
    priors = build_priors(kb, train)
    diag = DiagModel(kb.n_symptoms, kb.n_diseases, priors, DiagConfig(
        embed_dim=8, att_dim=8, blocks=2, mlp_hidden=16, seed=seed,
        dtype="float64", batch_size=32, learning_rate=5e-3,
        max_epochs=diag_epochs, patience=diag_epochs))
    train_diag(diag, train, val)
    from symcheck.diagnosis import export_embeddings

    vae = PoeVae(export_embeddings(diag), VaeConfig(
        latent_dim=8, hidden=32, decoder_hidden=32, seed=seed, dtype="float64",
        beta=0.2, batch_size=32, learning_rate=1e-2, max_epochs=vae_epochs,
        patience=vae_epochs))
    train_vae(vae, train, val, kb)
    index = build_cooccurrence(train, kb.n_symptoms)
    return {"kb": kb, "diag": diag, "vae": vae.freeze(), "index": index,
            "train": train, "val": val}


@pytest.fixture(scope="session")
def small_trained():
    return train_small_models(separable_kb())


@pytest.fixture()
def small_engine(small_trained):
    return RewardEngine(small_trained["vae"], small_trained["diag"],
                        RewardConfig(n_mc=50))
