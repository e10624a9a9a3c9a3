import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ope_embeds.core import (
    DegenerateSupportError,
    LoggedDataset,
    PolicyMatrix,
    one_hot_codes,
)
from ope_embeds.estimators import (
    MipsConfig,
    dm,
    dr,
    ips,
    learned_mips,
    mips,
    mips_slope,
    mips_true,
    snips,
    switch_dr,
    vanilla_weights,
)
from ope_embeds.ml import SeededRng
from ope_embeds.reward_model import (
    InputRepr,
    RewardModel,
    TrainConfig,
    TrainInfo,
    train_reward_model,
)
from ope_embeds.synth import (
    SynthConfig,
    build_env,
    logging_policy,
    sample_logged_data,
    target_policy,
)


def tiny_dataset():
    return LoggedDataset(
        contexts=np.array([[1.0], [2.0]]),
        actions=np.array([0, 1]),
        rewards=np.array([1.0, 0.0]),
        logging_propensities=np.array([0.25, 0.8]),
        n_actions=2,
    )


def tiny_target():
    return PolicyMatrix(np.array([[0.5, 0.5], [0.6, 0.4]]))


def constant_model(n_actions, d_x, value):
    return RewardModel(
        action_features=np.eye(n_actions),
        embedding_layer=np.zeros((n_actions, d_x)),
        context_projection=None,
        bias=value,
        train_info=TrainInfo(0, 0.0, ()),
    )


def synth_run(seed=0, n=800, n_actions=8, **kw):
    defaults = dict(d_x=4, d_e=2, cardinality=4)
    defaults.update(kw)
    cfg = SynthConfig(n_actions=n_actions, seed=seed, **defaults)
    env = build_env(cfg)
    data, pi0 = sample_logged_data(env, n, SeededRng(seed).stream("d"), return_logging=True)
    tgt = target_policy(env, data.contexts)
    return env, data, tgt, pi0


class TestIpsSnips:
    def test_target_equals_logging_gives_mean_reward(self):
        env, data, _, pi0 = synth_run(seed=1)
        result = ips(data, pi0)
        assert np.isclose(result.estimate, data.rewards.mean(), atol=1e-12)

    def test_hand_case(self):
        assert np.isclose(ips(tiny_dataset(), tiny_target()).estimate, 1.0)
        assert np.isclose(snips(tiny_dataset(), tiny_target()).estimate, 0.8)

    def test_snips_equals_ips_for_constant_weights(self):
        ds = tiny_dataset()
        same = PolicyMatrix(np.array([[0.25, 0.75], [0.2, 0.8]]))
        w_same = vanilla_weights(ds, same)
        assert np.allclose(w_same, 1.0)
        assert np.isclose(ips(ds, same).estimate, snips(ds, same).estimate)

    @given(st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_snips_stays_in_reward_range(self, seed):
        rng = np.random.default_rng(seed)
        n, a = 20, 4
        probs = rng.dirichlet(np.ones(a), size=n)
        ds = LoggedDataset(
            contexts=rng.standard_normal((n, 2)),
            actions=rng.integers(0, a, n),
            rewards=rng.normal(0, 3, n),
            logging_propensities=rng.uniform(0.05, 1.0, n),
            n_actions=a,
        )
        est = snips(ds, PolicyMatrix(probs)).estimate
        assert ds.rewards.min() - 1e-12 <= est <= ds.rewards.max() + 1e-12

    def test_permutation_invariance(self):
        env, data, tgt, pi0 = synth_run(seed=2)
        row = pi0.probs.mean(axis=0)
        model = train_reward_model(data, InputRepr.ONE_HOT, TrainConfig(epochs=15, seed=0))
        perm = np.random.default_rng(0).permutation(data.n)
        data_p = LoggedDataset(
            contexts=data.contexts[perm],
            actions=data.actions[perm],
            rewards=data.rewards[perm],
            logging_propensities=data.logging_propensities[perm],
            n_actions=data.n_actions,
            observed_embeddings=data.observed_embeddings[perm],
        )
        tgt_p = PolicyMatrix(tgt.probs[perm])
        pi0_p = PolicyMatrix(pi0.probs[perm])
        cat = MipsConfig(embedding_kind="categorical", cardinality=4)
        pairs = [
            (ips(data, tgt), ips(data_p, tgt_p)),
            (snips(data, tgt), snips(data_p, tgt_p)),
            (dm(data, tgt, model), dm(data_p, tgt_p, model)),
            (dr(data, tgt, model), dr(data_p, tgt_p, model)),
            (switch_dr(data, tgt, model, 5.0), switch_dr(data_p, tgt_p, model, 5.0)),
            (
                mips(data, tgt, data.observed_embeddings, cat, logging=row),
                mips(data_p, tgt_p, data_p.observed_embeddings, cat, logging=row),
            ),
            (
                mips_true(env, data, tgt, logging=pi0),
                mips_true(env, data_p, tgt_p, logging=pi0_p),
            ),
        ]
        for a, b in pairs:
            assert np.isclose(a.estimate, b.estimate, atol=1e-12)

    def test_weight_mean_near_one_large_sample(self):
        # default synthetic configuration, true propensities
        cfg = SynthConfig(n_actions=20, seed=3)
        env = build_env(cfg)
        data = sample_logged_data(env, 100_000, SeededRng(3).stream("d"))
        tgt = target_policy(env, data.contexts)
        w = vanilla_weights(data, tgt)
        assert 0.9 <= w.mean() <= 1.1


class TestModelBased:
    def test_dm_constant_model(self):
        env, data, tgt, _ = synth_run(seed=4)
        model = constant_model(data.n_actions, data.d_context, 0.7)
        assert np.isclose(dm(data, tgt, model).estimate, 0.7, atol=1e-12)

    def test_dm_hand_case(self):
        ds = LoggedDataset(
            contexts=np.array([[1.0]]),
            actions=np.array([0]),
            rewards=np.array([0.5]),
            logging_propensities=np.array([0.5]),
            n_actions=2,
        )
        target = PolicyMatrix(np.array([[0.5, 0.5]]))
        model = RewardModel(
            action_features=np.eye(2),
            embedding_layer=np.array([[0.2], [0.8]]),
            context_projection=None,
            bias=0.0,
            train_info=TrainInfo(0, 0.0, ()),
        )
        assert np.isclose(dm(ds, target, model).estimate, 0.5)

    def test_dr_with_zero_model_equals_ips(self):
        env, data, tgt, _ = synth_run(seed=5)
        zero = constant_model(data.n_actions, data.d_context, 0.0)
        assert np.isclose(
            dr(data, tgt, zero).estimate, ips(data, tgt).estimate, atol=1e-12
        )

    def test_dr_perfect_model_equals_dm(self):
        # deterministic rewards + a model reproducing them exactly
        rng = np.random.default_rng(6)
        n, a, d = 50, 3, 2
        emb = rng.standard_normal((a, d))
        x = rng.standard_normal((n, d))
        acts = rng.integers(0, a, n)
        rewards = np.einsum("ij,ij->i", x, emb[acts])
        ds = LoggedDataset(
            contexts=x,
            actions=acts,
            rewards=rewards,
            logging_propensities=np.full(n, 1 / a),
            n_actions=a,
        )
        model = RewardModel(
            action_features=np.eye(a),
            embedding_layer=emb,
            context_projection=None,
            bias=0.0,
            train_info=TrainInfo(0, 0.0, ()),
        )
        tgt = PolicyMatrix(rng.dirichlet(np.ones(a), size=n))
        assert np.isclose(
            dr(ds, tgt, model).estimate, dm(ds, tgt, model).estimate, atol=1e-12
        )

    def test_dr_hand_case(self):
        # dm part 0.5, weights (2, 0.5), residuals (0.3, -0.1)
        ds = tiny_dataset()
        tgt = tiny_target()
        model = RewardModel(
            action_features=np.eye(2),
            embedding_layer=np.array([[0.7], [0.05]]),
            context_projection=None,
            bias=0.0,
            train_info=TrainInfo(0, 0.0, ()),
        )
        # predictions: a0 at x=1 -> 0.7; a1 at x=2 -> 0.1; residuals 0.3, -0.1
        dm_part = dm(ds, tgt, model).estimate
        expected = dm_part + (2.0 * 0.3 + 0.5 * (-0.1)) / 2
        assert np.isclose(dr(ds, tgt, model).estimate, expected, atol=1e-12)

    def test_switch_dr_limits(self):
        env, data, tgt, _ = synth_run(seed=7)
        model = train_reward_model(data, InputRepr.ONE_HOT, TrainConfig(epochs=20, seed=0))
        w = vanilla_weights(data, tgt)
        assert np.isclose(
            switch_dr(data, tgt, model, w.max() * 2).estimate,
            dr(data, tgt, model).estimate,
            atol=1e-12,
        )
        assert np.isclose(
            switch_dr(data, tgt, model, w[w > 0].min() / 2).estimate,
            dm(data, tgt, model).estimate,
            atol=1e-12,
        )

    def test_switch_dr_mid_tau_hand_case(self):
        ds = tiny_dataset()
        tgt = tiny_target()
        model = RewardModel(
            action_features=np.eye(2),
            embedding_layer=np.array([[0.7], [0.05]]),
            context_projection=None,
            bias=0.0,
            train_info=TrainInfo(0, 0.0, ()),
        )
        # weights are (2.0, 0.5); tau=1 keeps only the second correction term
        expected = dm(ds, tgt, model).estimate + (0.5 * (-0.1)) / 2
        assert np.isclose(switch_dr(ds, tgt, model, 1.0).estimate, expected, atol=1e-12)
        with pytest.raises(ValueError):
            switch_dr(ds, tgt, model, 0.0)


class TestMips:
    def test_single_action_gives_mean_reward(self):
        n = 40
        rng = np.random.default_rng(8)
        ds = LoggedDataset(
            contexts=rng.standard_normal((n, 2)),
            actions=np.zeros(n, dtype=int),
            rewards=rng.normal(1.0, 0.5, n),
            logging_propensities=np.ones(n),
            n_actions=1,
        )
        tgt = PolicyMatrix(np.ones((n, 1)))
        emb = rng.integers(0, 3, (n, 2))
        res = mips(ds, tgt, emb, MipsConfig(embedding_kind="categorical", cardinality=3))
        assert np.isclose(res.estimate, ds.rewards.mean(), atol=1e-9)

    def test_identical_embeddings_give_mean_reward(self):
        # every action shares one embedding; intercept-only classifier
        # recovers the empirical action priors, which cancel the logging
        # distribution, so the estimate collapses to the mean reward
        rng = np.random.default_rng(9)
        n, a = 4000, 5
        pi0 = rng.dirichlet(np.ones(a) * 3)
        acts = rng.choice(a, n, p=pi0)
        ds = LoggedDataset(
            contexts=rng.standard_normal((n, 2)),
            actions=acts,
            rewards=rng.normal(0.5, 1.0, n),
            logging_propensities=pi0[acts],
            n_actions=a,
        )
        tgt = PolicyMatrix(rng.dirichlet(np.ones(a), size=n))
        emb = np.ones((n, 1), dtype=int)
        counts = np.bincount(acts, minlength=a) / n
        res = mips(
            ds,
            tgt,
            emb,
            MipsConfig(embedding_kind="categorical", cardinality=2, max_iters=2000),
            logging=counts,
        )
        assert abs(res.estimate - ds.rewards.mean()) < 0.02

    def test_one_hot_action_embeddings_match_ips(self):
        # context-free logging so the marginal denominator equals the
        # logged propensities; separable embeddings converge to IPS
        rng = np.random.default_rng(10)
        n, a = 2000, 6
        pi0 = rng.dirichlet(np.ones(a) * 5)
        acts = rng.choice(a, n, p=pi0)
        ds = LoggedDataset(
            contexts=rng.standard_normal((n, 2)),
            actions=acts,
            rewards=rng.normal(1.0, 0.3, n),
            logging_propensities=pi0[acts],
            n_actions=a,
        )
        tgt = PolicyMatrix(rng.dirichlet(np.ones(a) * 2, size=n))
        emb = acts[:, None]
        res = mips(
            ds,
            tgt,
            emb,
            MipsConfig(embedding_kind="categorical", cardinality=a, max_iters=3000),
            logging=pi0,
        )
        reference = ips(ds, tgt).estimate
        assert abs(res.estimate - reference) / abs(reference) < 0.01

    def test_mips_true_weights_are_one_for_logging_target(self):
        env, data, _, pi0 = synth_run(seed=11)
        res = mips_true(env, data, pi0, logging=pi0)
        assert np.isclose(res.estimate, data.rewards.mean(), atol=1e-12)
        assert np.isclose(res.diagnostics["max_weight"], 1.0, atol=1e-12)

    def test_mips_true_hand_enumeration(self):
        # two actions, one embedding dimension with two categories
        cfg = SynthConfig(n_actions=2, d_x=2, d_e=1, cardinality=2, seed=12)
        env = build_env(cfg)
        data, pi0 = sample_logged_data(
            env, 30, SeededRng(12).stream("d"), return_logging=True
        )
        tgt = target_policy(env, data.contexts)
        res = mips_true(env, data, tgt, logging=pi0)
        p = env.embedding_probs[:, 0, :]  # (2 actions, 2 categories)
        weights = np.empty(30)
        for t in range(30):
            e = data.observed_embeddings[t, 0]
            num = tgt.probs[t, 0] * p[0, e] + tgt.probs[t, 1] * p[1, e]
            den = pi0.probs[t, 0] * p[0, e] + pi0.probs[t, 1] * p[1, e]
            weights[t] = num / den
        assert np.isclose(res.estimate, (weights * data.rewards).mean(), atol=1e-12)

    def test_mips_true_identical_distributions_weights_one(self):
        env, data, tgt, pi0 = synth_run(seed=13)
        probs = np.tile(env.embedding_probs[:1], (env.n_actions, 1, 1))
        env2 = dataclasses.replace(env, embedding_probs=probs)
        res = mips_true(env2, data, tgt, logging=pi0)
        assert np.isclose(res.diagnostics["max_weight"], 1.0, atol=1e-9)
        assert np.isclose(res.estimate, data.rewards.mean(), atol=1e-9)

    def test_mips_true_degenerate_support_error(self):
        env, data, tgt, pi0 = synth_run(seed=14)
        probs = env.embedding_probs.copy()
        probs[:, 0, :] = 0.0
        probs[:, 0, 0] = 1.0  # every action emits category 0 in dim 0
        env2 = dataclasses.replace(env, embedding_probs=probs)
        codes = data.observed_embeddings.copy()
        codes[0, 0] = 1  # observed embedding impossible under logging
        data2 = LoggedDataset(
            contexts=data.contexts,
            actions=data.actions,
            rewards=data.rewards,
            logging_propensities=data.logging_propensities,
            n_actions=data.n_actions,
            observed_embeddings=codes,
        )
        with pytest.raises(DegenerateSupportError):
            mips_true(env2, data2, tgt, logging=pi0)

    def test_mips_requires_embeddings(self):
        env, data, tgt, _ = synth_run(seed=15)
        with pytest.raises(ValueError):
            mips(data, tgt, np.zeros((3, 2)))


class TestSlope:
    def test_single_dimension_returns_plain_mips(self):
        env, data, tgt, pi0 = synth_run(seed=16, d_e=1)
        row = pi0.probs.mean(axis=0)
        cfg = MipsConfig()
        result, sel = mips_slope(data, tgt, env.embedding_table, cfg, logging=row)
        direct = mips(
            data,
            tgt,
            data.observed_embeddings,
            MipsConfig(embedding_kind="categorical", cardinality=env.config.cardinality),
            logging=row,
        )
        assert sel.subsets == ((0,),)
        assert sel.chosen == (0,)
        assert np.isclose(result.estimate, direct.estimate, atol=1e-12)

    def test_duplicated_dimension_deterministic(self):
        env, data, tgt, pi0 = synth_run(seed=17, d_e=2)
        codes = data.observed_embeddings.copy()
        codes[:, 1] = codes[:, 0]
        data2 = LoggedDataset(
            contexts=data.contexts,
            actions=data.actions,
            rewards=data.rewards,
            logging_propensities=data.logging_propensities,
            n_actions=data.n_actions,
            observed_embeddings=codes,
        )
        row = pi0.probs.mean(axis=0)
        r1, s1 = mips_slope(data2, tgt, env.embedding_table, logging=row)
        r2, s2 = mips_slope(data2, tgt, env.embedding_table, logging=row)
        assert s1.chosen == s2.chosen
        assert r1.estimate == r2.estimate
        # identical columns carry identical information: dropping either
        # leaves the same single-dimension estimate
        ests = dict(zip(s1.subsets, s1.estimates))
        assert len(s1.subsets) == 2

    def test_noise_dimension_slope_mse_not_worse_than_full(self):
        # dimension 0 identifies the action; dimension 1 is pure noise with a
        # fine alphabet that fragments the data and inflates weight variance.
        from ope_embeds.core import CategoricalEmbeddingTable

        a, card, n = 4, 12, 400
        pi0 = np.array([0.5, 0.3, 0.15, 0.05])
        values = np.array([0.0, 1.0, 2.0, 3.0])
        target_row = np.array([0.05, 0.15, 0.3, 0.5])
        true_value = float(target_row @ values)
        table = CategoricalEmbeddingTable(
            codes=np.stack([np.arange(a), np.zeros(a, dtype=int)], axis=1),
            cardinality=card,
        )
        se_slope, se_full = [], []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            acts = rng.choice(a, n, p=pi0)
            codes = np.stack([acts, rng.integers(0, card, n)], axis=1)
            rewards = values[acts] + 0.5 * rng.standard_normal(n)
            ds = LoggedDataset(
                contexts=rng.standard_normal((n, 1)),
                actions=acts,
                rewards=rewards,
                logging_propensities=pi0[acts],
                n_actions=a,
                observed_embeddings=codes,
            )
            tgt = PolicyMatrix(np.tile(target_row, (n, 1)))
            cfg = MipsConfig(max_iters=150)
            res, sel = mips_slope(ds, tgt, table, cfg, logging=pi0)
            full = mips(
                ds,
                tgt,
                codes,
                MipsConfig(embedding_kind="categorical", cardinality=card, max_iters=150),
                logging=pi0,
            )
            se_slope.append((res.estimate - true_value) ** 2)
            se_full.append((full.estimate - true_value) ** 2)
        assert np.mean(se_slope) <= np.mean(se_full) + 1e-12


class TestLearnedMips:
    def test_single_action_mean_reward(self):
        rng = np.random.default_rng(19)
        n = 60
        ds = LoggedDataset(
            contexts=rng.standard_normal((n, 2)),
            actions=np.zeros(n, dtype=int),
            rewards=rng.normal(2.0, 0.1, n),
            logging_propensities=np.ones(n),
            n_actions=1,
        )
        tgt = PolicyMatrix(np.ones((n, 1)))
        res = learned_mips(ds, tgt, train_cfg=TrainConfig(epochs=10, seed=0))
        assert np.isclose(res.estimate, ds.rewards.mean(), atol=1e-9)

    def test_deterministic(self):
        env, data, tgt, pi0 = synth_run(seed=20)
        row = pi0.probs.mean(axis=0)
        kw = dict(train_cfg=TrainConfig(epochs=30, seed=5), logging=row)
        assert (
            learned_mips(data, tgt, **kw).estimate
            == learned_mips(data, tgt, **kw).estimate
        )

    def test_uses_supplied_model(self):
        env, data, tgt, pi0 = synth_run(seed=21)
        model = train_reward_model(data, InputRepr.ONE_HOT, TrainConfig(epochs=15, seed=1))
        row = pi0.probs.mean(axis=0)
        a = learned_mips(data, tgt, model=model, logging=row)
        b = learned_mips(data, tgt, train_cfg=TrainConfig(epochs=15, seed=1), logging=row)
        assert np.isclose(a.estimate, b.estimate, atol=1e-12)
