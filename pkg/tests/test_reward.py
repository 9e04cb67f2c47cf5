"""Reward estimation: pruning rule, joint weights, enumeration equivalence."""

import numpy as np
import pytest

from symcheck.diagnosis import DiagConfig, DiagModel, build_priors
from symcheck.errors import ContractError
from symcheck.knowledge import EvidenceState, kb_from_dict
from symcheck.reward import (
    CandidateReward,
    RewardBreakdown,
    RewardConfig,
    RewardEngine,
    prune_diseases,
    select_next,
)
from symcheck.simulate import SimConfig, generate_dataset
from symcheck.vae import PoeVae, VaeConfig, poe_product, train_vae

from helpers import brute_force_reward


def random_instance(n_symptoms=5, n_diseases=3, seed=0, latent=4,
                    **reward_overrides):
    """Random untrained model pair over a small feature space."""
    rng = np.random.default_rng(seed)
    kb = kb_from_dict({
        "symptoms": [{"code": f"s{i:02d}", "name": f"S{i}"}
                     for i in range(n_symptoms)],
        "diseases": [
            {"code": f"d{i:02d}", "name": f"D{i}",
             "symptoms": [{"code": f"s{j:02d}", "prob": 0.5}
                          for j in range(n_symptoms)][: 1 + i % n_symptoms]}
            for i in range(n_diseases)
        ],
    })
    embeddings = rng.normal(scale=0.5, size=(kb.n_features, 6))
    vcfg = VaeConfig(latent_dim=latent, hidden=8, decoder_hidden=8,
                     seed=seed, dtype="float64")
    vae = PoeVae(embeddings, vcfg, rng=rng).freeze()
    priors = build_priors(kb, [])
    dcfg = DiagConfig(embed_dim=6, att_dim=5, blocks=2, mlp_hidden=7,
                      seed=seed, dtype="float64")
    diag = DiagModel(kb.n_symptoms, kb.n_diseases, priors, dcfg,
                     rng=np.random.default_rng(seed + 1))
    engine = RewardEngine(vae, diag, RewardConfig(**reward_overrides))
    return kb, engine


class TestPruneDiseases:
    def test_dominant_top(self):
        kept = prune_diseases(np.array([0.5, 0.4, 0.08, 0.02]), 0.9, 0.25)
        assert list(kept) == [0]

    def test_near_tie_keeps_three(self):
        kept = prune_diseases(np.array([0.3, 0.29, 0.28, 0.13]), 0.9, 0.25)
        assert list(kept) == [0, 1, 2]

    def test_uniform_keeps_all(self):
        kept = prune_diseases(np.full(4, 0.25), 0.9, 0.25)
        assert list(kept) == [0, 1, 2, 3]

    def test_top_disease_always_kept(self):
        # floor above every probability still keeps the argmax
        kept = prune_diseases(np.array([0.6, 0.4]), 0.9, 0.99)
        assert list(kept) == [0]


class TestSelectNext:
    def _breakdown(self, totals: dict) -> RewardBreakdown:
        return RewardBreakdown([
            CandidateReward(s, t, 0.5, []) for s, t in totals.items()
        ])

    def test_argmax(self):
        assert select_next(self._breakdown({0: 0.1, 1: 0.3})) == 1

    def test_tie_breaks_low_id(self):
        assert select_next(self._breakdown({2: 0.2, 1: 0.2})) == 1

    def test_scale_invariant(self):
        a = self._breakdown({0: 0.1, 1: 0.3, 2: 0.2})
        b = self._breakdown({0: 0.7, 1: 2.1, 2: 1.4})
        assert select_next(a) == select_next(b)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            select_next(RewardBreakdown([]))


class TestSymptomProbability:
    def _constant_decoder(self, p=0.3):
        kb, engine = random_instance()
        w = engine.vae.weights
        w["dec.w1"][:] = 0.0
        w["dec.b1"][:] = 0.0
        w["dec.w2"][:] = 0.0
        w["dec.b2"][:] = np.log(p / (1 - p))
        return kb, engine

    def test_constant_decoder_exact(self):
        _, engine = self._constant_decoder(0.3)
        rng = np.random.default_rng(0)
        p = engine.estimate_symptom_probability({0: 1}, 2, 50, rng)
        assert abs(p - 0.3) < 1e-12

    def test_observed_symptom_rejected(self):
        _, engine = random_instance()
        with pytest.raises(ContractError):
            engine.estimate_symptom_probability({2: 1}, 2, 10,
                                                np.random.default_rng(0))

    def test_monte_carlo_convergence(self):
        _, engine = random_instance(seed=3)
        evidence = {0: 1, 1: 0}
        posterior = engine.vae.encode(evidence)
        rng = np.random.default_rng(7)
        z = engine.vae.draw_latents(posterior, 100, rng)
        per_draw = engine.vae.decode_probs(z)[:, 3]
        small = float(per_draw.mean())
        se = float(per_draw.std(ddof=1) / np.sqrt(100))
        big = engine.estimate_symptom_probability(
            evidence, 3, 10_000, np.random.default_rng(8))
        assert abs(big - small) < 3 * se + 1e-12


class TestJointWeights:
    def test_weights_sum_to_p_hat(self):
        _, engine = random_instance(seed=1)
        rng = np.random.default_rng(2)
        weights = engine.joint_weights({0: 1}, 3, rng, n_mc=64)
        p_hat = engine.estimate_symptom_probability(
            {0: 1}, 3, 64, np.random.default_rng(2))
        assert abs(weights.sum() - p_hat) < 1e-9

    def test_uniform_disease_factor_splits_evenly(self):
        kb, engine = random_instance(n_diseases=4)
        # zero head -> uniform p_D; constant decoder -> p_hat = 0.6
        w = engine.vae.weights
        w["dec.w1"][:] = 0.0
        w["dec.b1"][:] = 0.0
        w["dec.w2"][:] = 0.0
        w["dec.b2"][:] = np.log(0.6 / 0.4)
        for name in ("head.w1", "head.b1", "head.w2", "head.b2"):
            engine.diag.store[name].data[:] = 0.0
        weights = engine.joint_weights({0: 1}, 2, np.random.default_rng(0))
        np.testing.assert_allclose(weights, 0.15, atol=1e-9)


class TestCandidateRewards:
    def test_empty_candidates_signal_termination(self):
        _, engine = random_instance()
        state = EvidenceState({0: 1}, set())
        with pytest.raises(ContractError, match="terminate"):
            engine.candidate_rewards(state, np.random.default_rng(0))

    def test_filtering_toggle_changes_candidate_set(self):
        _, engine = random_instance(enable_filtering=False)
        state = EvidenceState({0: 1}, {1})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(0))
        assert [r.symptom for r in breakdown.rewards] == [1, 2, 3, 4]

    def test_deterministic_under_seed(self):
        _, engine = random_instance(seed=5)
        state = EvidenceState({0: 1, 1: 0}, {2, 3, 4})
        a = engine.candidate_rewards(state, np.random.default_rng(11)).to_dict()
        b = engine.candidate_rewards(state, np.random.default_rng(11)).to_dict()
        assert a == b

    def test_p_hat_matches_standalone_estimate(self):
        _, engine = random_instance(seed=6)
        state = EvidenceState({0: 1}, {2, 3})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(9))
        standalone = engine.estimate_symptom_probability(
            {0: 1}, breakdown.rewards[0].symptom, engine.config.n_mc,
            np.random.default_rng(9))
        assert abs(breakdown.rewards[0].p_positive - standalone) < 1e-12

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_brute_force_enumeration(self, seed):
        kb, engine = random_instance(
            n_symptoms=6, n_diseases=4, seed=seed,
            enable_pruning=False, enable_positive_only=False, n_mc=16)
        rng = np.random.default_rng(seed)
        observed = {0: int(rng.integers(2)), 4: int(rng.integers(2))}
        state = EvidenceState(observed, {1, 2, 3, 5})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(seed + 1))
        base = engine._zero_filled(observed)
        pd_base = engine.diag.forward_probs(base[None, :])[0]
        for r in breakdown.rewards:
            values = base.copy()
            values[r.symptom] = 1.0
            pd_pos = engine.diag.forward_probs(values[None, :])[0]
            expected = brute_force_reward(
                engine.vae, kb.n_symptoms, kb.n_diseases, observed,
                r.symptom, r.p_positive, pd_pos, pd_base)
            assert abs(r.total - expected) < 1e-9

    def test_positive_only_drops_negative_combos(self):
        _, engine = random_instance(seed=2, enable_pruning=False)
        state = EvidenceState({0: 1}, {1, 2})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(3))
        for r in breakdown.rewards:
            assert all(c.value == 1 for c in r.combos)

    def test_incremental_posteriors_match_scratch_products(self):
        from symcheck.vae import standard_prior

        _, engine = random_instance(seed=4)
        observed = {0: 1, 1: 0}
        prec, mp = engine.vae.accumulate(observed)
        prec_d, mp_d = engine._conditioned_acc(prec, mp, 2)
        fd = engine.n_symptoms + 2
        scratch = poe_product(
            [engine.vae.expert(f, v) for f, v in observed.items()]
            + [engine.vae.expert(fd, 1)],
            standard_prior(engine.vae.latent_dim))
        np.testing.assert_allclose(mp_d / prec_d, scratch.mu, atol=1e-12)
        np.testing.assert_allclose(1.0 / prec_d, scratch.var, atol=1e-12)

    def test_onehot_conditioning_runs(self):
        _, engine = random_instance(seed=8, disease_conditioning="onehot")
        state = EvidenceState({0: 1}, {1, 2})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(1))
        assert all(np.isfinite(r.total) for r in breakdown.rewards)

    def test_ablation_arm_uses_vae_disease_factor(self):
        _, engine_diag = random_instance(seed=9)
        _, engine_vae = random_instance(seed=9, use_diag_for_joint=False)
        state = EvidenceState({0: 1}, {1, 2, 3})
        a = engine_diag.candidate_rewards(state, np.random.default_rng(4))
        b = engine_vae.candidate_rewards(state, np.random.default_rng(4))
        # same p_hat (same draws), different disease weights
        assert a.rewards[0].p_positive == b.rewards[0].p_positive
        totals_a = [r.total for r in a.rewards]
        totals_b = [r.total for r in b.rewards]
        assert totals_a != totals_b


@pytest.mark.slow
class TestDegenerateKb:
    def test_implied_symptom_has_near_zero_reward(self):
        # b is present with certainty under both diseases; after observing a,
        # asking b carries no information
        kb = kb_from_dict({
            "symptoms": [{"code": "a", "name": "a"}, {"code": "b", "name": "b"},
                         {"code": "c", "name": "c"}],
            "diseases": [
                {"code": "d0", "name": "d0", "symptoms": [
                    {"code": "a", "prob": 1.0}, {"code": "b", "prob": 1.0}]},
                {"code": "d1", "name": "d1", "symptoms": [
                    {"code": "a", "prob": 1.0}, {"code": "b", "prob": 1.0},
                    {"code": "c", "prob": 1.0}]},
            ],
        })
        train, val, _ = generate_dataset(kb, SimConfig(0, 600, 100, 0))
        rng = np.random.default_rng(0)
        embeddings = rng.normal(scale=0.3, size=(kb.n_features, 6))
        vae = PoeVae(embeddings, VaeConfig(
            latent_dim=6, hidden=16, decoder_hidden=16, seed=0, dtype="float64",
            batch_size=32, learning_rate=5e-3, max_epochs=40, patience=40))
        train_vae(vae, train, val, kb)
        priors = build_priors(kb, train)
        diag = DiagModel(kb.n_symptoms, kb.n_diseases, priors, DiagConfig(
            embed_dim=6, att_dim=6, blocks=2, mlp_hidden=12, seed=0,
            dtype="float64", batch_size=32, learning_rate=5e-3, max_epochs=30,
            patience=30))
        from symcheck.diagnosis import train_diag
        train_diag(diag, train, val)

        engine = RewardEngine(vae.freeze(), diag, RewardConfig(n_mc=200))
        state = EvidenceState({0: 1}, {1, 2})
        breakdown = engine.candidate_rewards(state, np.random.default_rng(1))
        rewards = breakdown.by_symptom()
        p_b = engine.estimate_symptom_probability(
            {0: 1}, 1, 400, np.random.default_rng(2))
        assert p_b > 0.9  # b is implied by the evidence
        assert abs(rewards[1].total) < 0.01
        assert rewards[2].total > rewards[1].total
