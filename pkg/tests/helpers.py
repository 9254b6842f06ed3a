import numpy as np

from hss.autodiff import Tape
from hss.corpus import Interaction, collate, make_sentence_record
from hss.model import HSSModel, ModelConfig


def tiny_model(d=4, vocab=12, features=(4, 5, 6), users=3, items=3, seed=0, dropout=0.0, **kw):
    cfg = ModelConfig(users, items, vocab, features, d=d, dropout=dropout, **kw)
    model = HSSModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 100)
    # non-zero biases so every path is exercised by gradient checks
    for name, p in model.params.items():
        if ".b" in name:
            p.value[...] = rng.normal(0, 0.3, size=p.shape)
    for name in ("emb.U", "emb.V", "emb.E"):
        model.params[name].value[...] = rng.normal(0, 0.5, size=model.params[name].shape)
    return model


def zero_params(model, prefix):
    for name, p in model.params.items():
        if name.startswith(prefix):
            p.value[...] = 0.0


def interaction(user, item, rating, sentences, features=(4, 5, 6)):
    return Interaction(user, item, rating, [make_sentence_record(s, set(features)) for s in sentences])


def two_sentence_batch(betas=None):
    x = interaction(1, 2, 4.0, [[4, 7, 8], [9, 5, 10, 11]])
    batch = collate([x])
    if betas is not None:
        for slot, b in zip(batch.slots, betas):
            slot.beta[:] = b
    return batch


def loss_and_grads(model, batch, training=False):
    for p in model.params.values():
        p.grad = None
    with Tape() as tape:
        terms = model.forward_loss(batch, training)
    tape.backward(terms.joint)
    return terms, {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value)) for k, p in model.params.items()}
