import itertools
import json
import math

import numpy as np
import pytest

from clickintent.corpus import PrepConfig, prepare
from clickintent.domain import EOS, InsufficientData, Label
from clickintent.neural.classifiers import (
    LM_DEFAULT,
    S2L_DEFAULTS,
    LMMixtureModel,
    LSTMLanguageModel,
    NeuralConfig,
    S2LModel,
    lm_train,
    load_neural_model,
    s2l_train,
    train_lm_mixture,
)
from clickintent.neural.core import AdamState, adam_step, init_params
from clickintent.synthgen import last_event_sessions

from conftest import labeled, make_corpus


def test_best_grid_points():
    assert (LM_DEFAULT.hidden, LM_DEFAULT.lr, LM_DEFAULT.batch_size) == (80, 0.001, 50)
    assert (S2L_DEFAULTS["avg"].hidden, S2L_DEFAULTS["avg"].lr, S2L_DEFAULTS["avg"].batch_size) == (80, 0.01, 50)
    assert (S2L_DEFAULTS["last"].hidden, S2L_DEFAULTS["last"].lr, S2L_DEFAULTS["last"].batch_size) == (20, 0.01, 10)


class TestLanguageModel:
    def test_batch_layout(self, rng):
        lm = LSTMLanguageModel.initialise(3, rng)
        batch = lm.make_batch([(1, 2, 3), (6,)])
        np.testing.assert_array_equal(batch.tokens, [[7, 7], [1, 6], [2, 0], [3, 0]])
        np.testing.assert_array_equal(batch.targets, [[1, 6], [2, 8], [3, 0], [8, 0]])

    def test_untrained_cross_entropy_near_log9(self, rng):
        lm = LSTMLanguageModel.initialise(20, rng)
        seqs = [tuple(rng.integers(1, 7, size=12)) for _ in range(20)]
        assert abs(lm.cross_entropy(seqs) - math.log(9)) < 0.5

    def test_learns_deterministic_alternation(self):
        seqs = [labeled((1, 2) * 2, "BUY", f"b{i}") for i in range(20)]
        corpus = make_corpus(seqs + [labeled((3, 4), "NOBUY")])
        lm, result = lm_train(corpus, Label.BUY, NeuralConfig(16, 0.05, 5, patience=10, max_epochs=40),
                              np.random.default_rng(0))
        assert result.best_val_accuracy == 1.0
        # early stopping keeps the first perfect epoch; keep optimising to drive the loss down
        batch = lm.make_batch([s.symbols for s in seqs])
        state = AdamState(lr=0.05)
        for _ in range(300):
            adam_step(lm.params, lm.loss_and_grads(batch)[1], state)
        assert lm.cross_entropy([(1, 2) * 2]) < 0.05
        # probability of 2 following a 1 inside the pattern
        batch = lm.make_batch([(1, 2, 1, 2)])
        token_lp, _, _ = lm._target_logprobs(batch)
        assert math.exp(token_lp[3, 0]) > 0.95

    def test_single_token_sessions_train(self):
        corpus = make_corpus([labeled((4,), "BUY", f"b{i}") for i in range(6)] + [labeled((6,), "NOBUY")])
        lm, result = lm_train(corpus, Label.BUY, NeuralConfig(4, 0.05, 3, max_epochs=15), np.random.default_rng(1))
        assert result.epochs
        assert lm.sequence_loglik([(4,)])[0] > lm.sequence_loglik([(1,)])[0]

    def test_hand_set_lm_mass_bounded_by_one(self, rng):
        p = init_params(rng, 1, 9)
        for k in p:
            p[k] += rng.normal(0, 1.0, p[k].shape)
        lm = LSTMLanguageModel(p)
        codes = range(1, 7)
        total = 0.0
        for n in (1, 2):
            seqs = list(itertools.product(codes, repeat=n))
            total += math.fsum(np.exp(lm.sequence_loglik(seqs)))
        assert 0 < total <= 1.0
        # all continuations of BOS, events and specials included, sum to one
        batch = lm.make_batch([(1,)])
        _, logp, _ = lm._target_logprobs(batch)
        np.testing.assert_allclose(np.exp(logp).sum(axis=1), 1.0, atol=1e-12)

    def test_loglik_nonincreasing_in_prefix(self, rng):
        lm = LSTMLanguageModel.initialise(6, rng)
        seq = tuple(rng.integers(1, 7, size=10))
        batch = lm.make_batch([seq])
        token_lp, _, _ = lm._target_logprobs(batch)
        prefix_sums = np.cumsum(token_lp[: len(seq), 0])
        assert (np.diff(prefix_sums) <= 0).all()

    def test_identical_lms_give_prior(self, rng):
        p = init_params(rng, 4, 9)
        model = LMMixtureModel({Label.BUY: LSTMLanguageModel(p), Label.NOBUY: LSTMLanguageModel(p)},
                               {Label.BUY: math.log(0.3), Label.NOBUY: math.log(0.7)})
        for post in model.posteriors([(1, 2, 3), (6,) * 15, (4, 4)]):
            assert post.p_buy == pytest.approx(0.3, abs=1e-12)
            assert post.label is Label.NOBUY

    def test_empty_class(self):
        corpus = make_corpus([labeled((1, 2), "NOBUY")])
        with pytest.raises(InsufficientData):
            lm_train(corpus, Label.BUY, NeuralConfig(2, 0.01, 2, max_epochs=1))


def small_lm_corpus():
    buy = [labeled((3, 3, 1, 3), "BUY", f"b{i}") for i in range(8)]
    nobuy = [labeled((1, 2, 1, 2), "NOBUY", f"n{i}") for i in range(8)]
    return make_corpus(buy[:6] + nobuy[:6], buy[6:] + nobuy[6:], buy[6:] + nobuy[6:])


class TestLMMixture:
    def test_separates_and_round_trips(self):
        corpus = small_lm_corpus()
        model = train_lm_mixture(corpus, NeuralConfig(8, 0.05, 4, patience=3, max_epochs=10), seed=0)
        assert model.predict(corpus.test) == [s.label for s in corpus.test]
        again = load_neural_model(json.loads(json.dumps(model.to_dict())))
        for a, b in zip(model.posteriors(corpus.test), again.posteriors(corpus.test)):
            assert a.log_odds == b.log_odds

    def test_priors_from_train_frequencies(self):
        corpus = small_lm_corpus()
        corpus.train.append(labeled((1, 2), "NOBUY", "extra"))
        model = train_lm_mixture(corpus, NeuralConfig(2, 0.01, 4, max_epochs=1), seed=0)
        assert model.log_priors[Label.BUY] == pytest.approx(math.log(6 / 13))


def separable_corpus(n=400, seed=0):
    return prepare(last_event_sessions(n, seed), PrepConfig(seed=seed))


class TestS2L:
    def test_zero_params_output_half(self, rng):
        p = {k: np.zeros_like(v) for k, v in init_params(rng, 3, 1).items()}
        model = S2LModel(p, "avg")
        np.testing.assert_array_equal(model.predict_proba([(1, 2), (6,)]), [0.5, 0.5])
        assert model.predict([(1, 2)]) == [Label.NOBUY]

    def test_output_strictly_inside_unit_interval(self, rng):
        p = init_params(rng, 4, 1)
        p["c"][0] = 5.0
        out = S2LModel(p, "last").predict_proba([tuple(rng.integers(1, 7, size=8)) for _ in range(10)])
        assert ((out > 0) & (out < 1)).all()

    def test_padding_does_not_change_scores(self, rng):
        model = S2LModel(init_params(rng, 5, 1), "avg")
        seqs = [(1, 2, 3), (6, 6, 6, 6, 6, 6, 6, 6, 6)]
        alone = model.logits(seqs[:1])
        together = model.logits(seqs)
        np.testing.assert_allclose(alone[0], together[0], rtol=0, atol=1e-14)

    def test_logit_scaling_keeps_decisions(self, rng):
        model = S2LModel(init_params(rng, 5, 1), "last")
        seqs = [tuple(rng.integers(1, 7, size=6)) for _ in range(30)]
        before = model.predict(seqs)
        model.params["V"] *= 3.7
        model.params["c"] *= 3.7
        assert model.predict(seqs) == before

    @pytest.mark.parametrize("pooling", ["last", "avg"])
    def test_separable_corpus(self, pooling):
        corpus = separable_corpus()
        model = s2l_train(corpus, pooling, NeuralConfig(12, 0.02, 10, patience=5, max_epochs=30), seed=0)
        assert model.train_result.best_val_accuracy >= (0.95 if pooling == "last" else 0.6)

    def test_constant_label_corpus(self):
        train = [labeled(tuple(np.random.default_rng(i).integers(1, 7, size=5)), "BUY", f"b{i}") for i in range(30)]
        model = S2LModel.initialise(4, "avg", np.random.default_rng(0))
        batch = model.make_batch(train)
        state = AdamState(lr=0.05)
        for _ in range(300):
            adam_step(model.params, model.loss_and_grads(batch)[1], state)
        assert model.loss_and_grads(batch)[0] < 0.01
        assert (model.predict_proba(train) > 0.99).all()

    def test_deterministic_and_round_trip(self):
        corpus = separable_corpus(100)
        cfg = NeuralConfig(4, 0.01, 10, max_epochs=3)
        a = s2l_train(corpus, "last", cfg, seed=5)
        b = s2l_train(corpus, "last", cfg, seed=5)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        again = load_neural_model(json.loads(json.dumps(a.to_dict())))
        assert again.pooling == "last"
        np.testing.assert_array_equal(again.logits(corpus.test), a.logits(corpus.test))

    def test_needs_both_classes(self):
        corpus = make_corpus([labeled((1, 2), "BUY")], [labeled((1, 2), "BUY")])
        with pytest.raises(InsufficientData):
            s2l_train(corpus, "last", NeuralConfig(2, 0.01, 2, max_epochs=1))

    def test_unknown_pooling(self, rng):
        with pytest.raises(ValueError):
            S2LModel(init_params(rng, 2, 1), "max")
