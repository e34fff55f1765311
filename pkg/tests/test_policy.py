import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pctpack import oracles
from pctpack.env import EnvConfig, PackingEnv
from pctpack.policy import (C_CLIP, Descriptor, Policy, act, backward, describe, embed_state, forward,
                            forward_features, load_checkpoint, loss_terms, save_checkpoint, zeros_like)
from pctpack.verify import _fixture


def state(seed, packed=4):
    env = PackingEnv(EnvConfig(), seed)
    rng = np.random.default_rng(seed)
    while env.t < packed and not env.done:
        env.step(int(rng.integers(len(env.leaves))))
    return env


def test_probabilities_are_a_distribution():
    env = state(0)
    pol = Policy.create(Descriptor(), 0)
    fwd = pol.evaluate(env.tree, env.item, env.leaves)
    assert fwd.probs.shape == (len(env.leaves),)
    assert fwd.probs.sum() == pytest.approx(1.0)
    # clipped logits bound the ratio of any two probabilities
    assert np.log(fwd.probs.max() / fwd.probs.min()) <= 2 * C_CLIP + 1e-9


@given(st.integers(0, 10_000), st.integers(0, 40), st.integers(0, 60))
def test_padding_never_changes_outputs(seed, extra_int, extra_leaf):
    tree, item, leaves, pol = _fixture(seed, 3, 5)
    plain = pol.evaluate(tree, item, leaves)
    feats = embed_state(tree, item, leaves, pol.desc, len(tree.internals) + extra_int, len(leaves) + extra_leaf)
    padded = forward_features(pol.params, feats)
    assert np.array_equal(padded.logp, plain.logp)
    assert padded.value == plain.value


@given(st.integers(0, 10_000))
def test_matches_dense_reference(seed):
    tree, item, leaves, pol = _fixture(seed, 4, 6)
    feats = embed_state(tree, item, leaves, pol.desc, 20, 40)
    lp, v = oracles.dense_policy(pol.params, feats.internal, feats.internal_mask, feats.leaves,
                                 feats.leaf_mask, feats.item)
    fwd = pol.evaluate(tree, item, leaves)
    assert np.abs(lp[feats.leaf_mask] - fwd.logp).max() <= 1e-10
    assert np.all(np.isneginf(lp[~feats.leaf_mask]))
    assert abs(v - fwd.value) <= 1e-10


def test_too_many_leaves_rejected():
    tree, item, leaves, pol = _fixture(1, 2, 6)
    with pytest.raises(ValueError):
        embed_state(tree, item, leaves, pol.desc, 10, 2)


@pytest.mark.parametrize("entropy", [0.0, 0.05])
def test_gradient_matches_finite_differences(entropy):
    tree, item, leaves, pol = _fixture(2, 2, 2)
    xb, xl, xi = describe(tree, item, leaves, pol.desc)
    p = pol.params
    fwd = forward(p, xb, xl, xi)
    _, g_logp, g_value = loss_terms(fwd, 1, 0.4, 0.9, 1.0, 0.5, entropy)
    grads = backward(p, fwd, g_logp, g_value, zeros_like(p))
    rng = np.random.default_rng(0)
    for name in ("b_w1", "l_b2", "wq", "wv", "p_wk", "c_w2", "n_w1"):
        flat = p[name].reshape(-1)
        for i in rng.choice(flat.size, size=min(5, flat.size), replace=False):
            old = flat[i]
            flat[i] = old + 1e-6
            up = loss_terms(forward(p, xb, xl, xi), 1, 0.4, 0.9, 1.0, 0.5, entropy)[0]
            flat[i] = old - 1e-6
            down = loss_terms(forward(p, xb, xl, xi), 1, 0.4, 0.9, 1.0, 0.5, entropy)[0]
            flat[i] = old
            num = (up - down) / 2e-6
            assert grads[name].reshape(-1)[i] == pytest.approx(num, rel=1e-4, abs=1e-8)


def test_positive_advantage_raises_chosen_probability():
    tree, item, leaves, pol = _fixture(3, 3, 5)
    xb, xl, xi = describe(tree, item, leaves, pol.desc)
    fwd = forward(pol.params, xb, xl, xi)
    _, g_logp, g_value = loss_terms(fwd, 2, 1.0, fwd.value, 1.0, 1.0)
    grads = backward(pol.params, fwd, g_logp, g_value, zeros_like(pol.params))
    for k in pol.params:
        pol.params[k] -= 1e-3 * grads[k]
    assert forward(pol.params, xb, xl, xi).logp[2] > fwd.logp[2]


def test_checkpoint_round_trip(tmp_path):
    pol = Policy.create(Descriptor(density=True), 7)
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, pol, {"note": "x"})
    back, meta = load_checkpoint(path, Descriptor(density=True))
    assert meta["note"] == "x"
    for k in pol.params:
        assert np.array_equal(back.params[k], pol.params[k])


def test_checkpoint_mismatch_and_garbage(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, Policy.create(Descriptor(), 0))
    with pytest.raises(ValueError):
        load_checkpoint(path, Descriptor(density=True))
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(ValueError):
        load_checkpoint(bad)


def test_argmax_act_is_deterministic():
    env = state(4)
    pol = Policy.create(Descriptor(), 1)
    assert act(env, pol) == act(env, pol) == int(np.argmax(pol.evaluate(env.tree, env.item, env.leaves).logp))
    with pytest.raises(ValueError):
        act(env, pol, "greedy")


def test_descriptor_widths():
    d = Descriptor.for_config(EnvConfig(setting=3, constraint="isle"))
    assert (d.internal_width, d.leaf_width, d.item_width) == (8, 6, 5)
