import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hss import autodiff as ad
from hss.corpus import collate
from hss.errors import ConfigError, ContractError
from hss.model import ModelConfig, rating_loss, sentence_nll

from helpers import interaction, loss_and_grads, tiny_model, two_sentence_batch, zero_params
from oracles import finite_difference, rel_error, scalar_gru_step

GEN_PREFIXES = ("attn.", "ctx.", "wrd.", "fuse.", "init.", "out.", "emb.E")


# -- rating head ---------------------------------------------------------------------------


def test_rating_zero_weights_gives_output_bias():
    m = tiny_model()
    zero_params(m, "rating.")
    m["rating.b_out"].value[:] = 2.5
    assert m.rating_forward(0, 1).value.tolist() == [2.5]


def test_rating_is_scalar_per_pair():
    for d in (2, 5):
        m = tiny_model(d=d)
        assert m.rating_forward([0, 1, 2], [2, 1, 0]).shape == (3,)


def test_rating_matches_hand_evaluated_chain():
    m = tiny_model(d=2, rating_layers=1)
    m["emb.U"].value[0] = [0.5, -1.0]
    m["emb.V"].value[1] = [2.0, 0.25]
    m["rating.W_uh"].value[...] = [[0.1, 0.2], [-0.3, 0.4]]
    m["rating.W_vh"].value[...] = [[0.5, -0.5], [0.0, 1.0]]
    m["rating.b_h"].value[...] = [0.05, -0.1]
    m["rating.W_out"].value[...] = [[1.5, -2.0]]
    m["rating.b_out"].value[...] = [3.0]
    h1 = math.tanh(0.1 * 0.5 + 0.2 * -1.0 + 0.5 * 2.0 - 0.5 * 0.25 + 0.05)
    h2 = math.tanh(-0.3 * 0.5 + 0.4 * -1.0 + 0.0 * 2.0 + 1.0 * 0.25 - 0.1)
    expected = 1.5 * h1 - 2.0 * h2 + 3.0
    assert m.rating_forward(0, 1).item() == pytest.approx(expected, abs=1e-14)


def test_rating_loss_examples():
    assert rating_loss([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert rating_loss([3.0], [5.0]) == 4.0
    assert rating_loss([2.0, 4.0], [1.0, 1.0]) == 5.0
    with pytest.raises(ContractError):
        rating_loss([], [])


# -- attention -----------------------------------------------------------------------------


def test_attention_single_feature():
    m = tiny_model(features=(5,))
    o, alpha = m.feature_attention(np.ones(4))
    assert alpha.value.tolist() == [[1.0]]
    assert np.array_equal(o.value[0], m["emb.E"].value[5])


def test_attention_identical_features_uniform():
    m = tiny_model(features=(4, 5))
    m["emb.E"].value[5] = m["emb.E"].value[4]
    _, alpha = m.feature_attention(np.arange(4.0))
    np.testing.assert_allclose(alpha.value, [[0.5, 0.5]], atol=1e-15)


def test_attention_zero_weights_uniform():
    m = tiny_model()
    zero_params(m, "attn.")
    _, alpha = m.feature_attention(np.arange(4.0))
    np.testing.assert_allclose(alpha.value, [[1 / 3] * 3], atol=1e-15)


def test_attention_empty_lexicon():
    with pytest.raises(ConfigError):
        ModelConfig(2, 2, 10, ())


def test_attention_distribution_over_many_states():
    m = tiny_model()
    states = np.random.default_rng(0).normal(0, 3, size=(1000, 4))
    _, alpha = m.feature_attention(states)
    assert np.all(alpha.value >= 0)
    assert np.max(np.abs(alpha.value.sum(axis=1) - 1)) < 1e-9


# -- context GRU ---------------------------------------------------------------------------


def test_context_init():
    m = tiny_model()
    zero_params(m, "ctx.")
    assert np.all(m.context_init(np.ones(4), np.ones(4)).value == 0)
    m["ctx.b0"].value[:] = [-1.0, 2.0, -3.0, 0.5]
    c0 = m.context_init(np.ones(4), np.ones(4)).value
    assert c0.tolist() == [[0.0, 2.0, 0.0, 0.5]]
    assert c0.shape == (1, 4)


def test_context_step_zero_weights():
    m = tiny_model()
    zero_params(m, "ctx.")
    c = np.array([0.4, -0.2, 1.0, 0.0])
    out = m.context_step(c, np.ones(4)).value[0]
    np.testing.assert_allclose(out, 0.5 * c, atol=1e-15)
    assert np.all(m.context_step(np.zeros(4), np.ones(4)).value == 0)


@pytest.mark.parametrize("which", ["ctx", "wrd"])
def test_gru_steps_match_scalar_oracle(which):
    m = tiny_model(seed=3)
    rng = np.random.default_rng(7)
    x, h = rng.normal(size=4), rng.normal(size=4)
    got = (m.context_step(h, x) if which == "ctx" else m.word_step(h, x)).value[0]
    want = scalar_gru_step(
        x.tolist(), h.tolist(), m[f"{which}.W_x"].value.tolist(), m[f"{which}.W_h"].value.tolist(), m[f"{which}.b"].value.tolist()
    )
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


# -- word level --------------------------------------------------------------------------


def test_word_input():
    m = tiny_model()
    assert m["fuse.W_s"].shape == (4, 12)
    u, v = np.ones(4), -np.ones(4)
    base = m.word_input(7, u, v).value
    assert base.shape == (1, 4)
    assert not np.allclose(m.word_input(7, 2 * u, v).value, base)
    zero_params(m, "fuse.W")
    np.testing.assert_array_equal(m.word_input(7, u, v).value[0], m["fuse.b_L"].value)


def test_sentence_init():
    m = tiny_model()
    assert m["init.W1"].shape == (4, 16)
    u, v, o = np.ones(4), np.ones(4), np.ones(4)
    a = m.sentence_init(np.zeros(4), u, v, o).value
    b = m.sentence_init(np.ones(4), u, v, o).value
    assert not np.allclose(a, b)
    zero_params(m, "init.W")
    np.testing.assert_array_equal(m.sentence_init(np.ones(4), u, v, o).value[0], m["init.b2"].value)


def test_word_step_zero_weights():
    m = tiny_model()
    zero_params(m, "wrd.")
    h = np.array([1.0, -2.0, 0.5, 3.0])
    np.testing.assert_allclose(m.word_step(h, np.ones(4)).value[0], 0.5 * h, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 5.0), st.integers(1, 12))
def test_gru_state_bound(seed, scale, steps):
    m = tiny_model(seed=seed % 50)
    rng = np.random.default_rng(seed)
    h = rng.normal(0, scale, size=4)
    h0 = np.max(np.abs(h))
    for _ in range(steps):
        h = m.word_step(h, rng.normal(0, 3, size=4)).value[0]
        assert np.max(np.abs(h)) <= max(h0, 1.0) + 1e-12


def test_output_distribution():
    m = tiny_model()
    y = m.output_distribution(np.ones(4)).value[0]
    assert abs(y.sum() - 1) < 1e-9
    zero_params(m, "out.")
    np.testing.assert_allclose(m.output_distribution(np.ones(4)).value[0], np.full(12, 1 / 12), atol=1e-15)
    m["out.b"].value[9] = 50.0
    assert int(np.argmax(m.output_distribution(np.ones(4)).value[0])) == 9


def test_sentence_nll_examples():
    assert sentence_nll(np.zeros((3, 4)), [0, 1, 2]) == 0.0
    assert sentence_nll(np.array([[-1.0, -5.0]]), [0]) == 1.0
    v = np.full((5, 100), -math.log(100))
    assert sentence_nll(v, [1, 2, 3, 4, 5]) == pytest.approx(5 * math.log(100), abs=1e-12)
    assert sentence_nll(v, [1, 2, 3, 4, 5], [1, 1, 1, 0, 0]) == pytest.approx(3 * math.log(100))
    with pytest.raises(ContractError):
        sentence_nll(v, [1, 2])


# -- joint objective ------------------------------------------------------------------------


def test_forward_output_invariants():
    m = tiny_model()
    out = m.forward(two_sentence_batch())
    for lp in out.log_probs:
        assert np.all(lp <= 0)
    for a in out.attention:
        assert abs(a.sum() - 1) < 1e-9


def test_zero_beta_gives_rating_loss_only():
    m = tiny_model()
    terms, grads = loss_and_grads(m, two_sentence_batch([0.0, 0.0]))
    assert terms.joint.item() == terms.rating.item()
    for name, g in grads.items():
        if name.startswith(GEN_PREFIXES):
            assert np.all(g == 0), name


def test_joint_loss_matches_hand_assembly():
    m = tiny_model()
    batch = two_sentence_batch([1 / 3, 0.0])
    terms = m.forward_loss(batch)
    out = terms.output
    r_hat = m.rating_forward(1, 2).item()
    lr = rating_loss([r_hat], [4.0])
    tokens = [4, 7, 8, 2]
    ls = sentence_nll(out.log_probs[0][:, 0, :], tokens)
    assert terms.joint.item() == pytest.approx(lr + ls / 3, rel=1e-12)


def test_doubling_beta_doubles_sentence_gradient():
    m = tiny_model()
    base_terms, base = loss_and_grads(m, two_sentence_batch([0.0, 0.0]))
    _, one = loss_and_grads(m, two_sentence_batch([0.25, 0.0]))
    _, two = loss_and_grads(m, two_sentence_batch([0.5, 0.0]))
    for name in base:
        np.testing.assert_allclose(two[name] - base[name], 2 * (one[name] - base[name]), atol=1e-12)


def test_padding_does_not_change_loss():
    m = tiny_model()
    short = interaction(0, 1, 3.0, [[4, 7]])
    long = interaction(2, 0, 5.0, [[5, 8, 9, 10, 11, 6]])
    alone = m.forward(collate([short])).sentence_nll[0][0]
    padded = m.forward(collate([short, long])).sentence_nll[0][0]
    assert padded == pytest.approx(alone, abs=1e-12)


def test_teacher_forced_pass_is_deterministic():
    a = tiny_model(seed=5).forward_loss(two_sentence_batch()).joint.item()
    b = tiny_model(seed=5).forward_loss(two_sentence_batch()).joint.item()
    assert a == b


def test_dropout_changes_training_pass_only():
    m = tiny_model(dropout=0.5)
    batch = two_sentence_batch()
    eval_a = m.forward_loss(batch).joint.item()
    train = m.forward_loss(batch, training=True).joint.item()
    assert eval_a == m.forward_loss(batch).joint.item()
    assert train != eval_a


def test_shared_embedding_rows():
    m = tiny_model()
    u, v = np.ones(4), np.ones(4)
    for row, is_feature in [(5, True), (9, False)]:
        before_w = m.word_input(row, u, v).value.copy()
        before_o = m.feature_attention(np.ones(4))[0].value.copy()
        m["emb.E"].value[row] += 0.3
        changed_w = not np.array_equal(m.word_input(row, u, v).value, before_w)
        changed_o = not np.array_equal(m.feature_attention(np.ones(4))[0].value, before_o)
        m["emb.E"].value[row] -= 0.3
        assert changed_w
        assert changed_o == is_feature


def full_gradient_check(model, batch, tol):
    _, grads = loss_and_grads(model, batch)
    names = sorted(model.params)
    numeric = finite_difference(
        lambda: model.forward_loss(batch).joint.item(), [model.params[n].value for n in names], eps=1e-5
    )
    worst = max(rel_error(grads[n], g) for n, g in zip(names, numeric))
    assert worst < tol
    return worst


def test_full_model_gradient_check():
    m = tiny_model(d=4, vocab=12, features=(4, 5, 6), init_std=0.5)
    full_gradient_check(m, two_sentence_batch([0.7, 0.5]), 1e-3)


def test_denoising_zero_beta_sentence_contributes_nothing():
    m = tiny_model()
    _, with_zero = loss_and_grads(m, two_sentence_batch([0.0, 0.5]))
    batch = two_sentence_batch([0.0, 0.5])
    batch.slots[0].beta[:] = 0.0
    # remove the first sentence's loss term outright: it still feeds the context chain
    for p in m.params.values():
        p.grad = None
    with ad.Tape() as tape:
        u, v = m.embed(batch.users, batch.items)
        pred = m.rating_from_embeddings(u, v)
        rating = ad.mean((pred - batch.ratings) * (pred - batch.ratings))
        c = m.context_init(u, v)
        s0 = batch.slots[0]
        _, h_last, _, _ = m.decode_slot(c, u, v, s0.inputs, s0.targets, s0.mask)
        c = m.context_step(c, h_last)
        s1 = batch.slots[1]
        nll, _, _, _ = m.decode_slot(c, u, v, s1.inputs, s1.targets, s1.mask)
        loss = rating + ad.sum(nll * s1.beta)
    tape.backward(loss)
    for name, p in m.params.items():
        np.testing.assert_allclose(with_zero[name], p.grad, rtol=0, atol=1e-12)
