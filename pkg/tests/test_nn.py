import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relgraph.errors import (
    ChecksumError,
    DimensionMismatch,
    LengthMismatch,
    MissingGradients,
    SequenceTooLong,
    TargetTooLong,
    TokenOutOfRange,
)
from relgraph.nn import tensor as T
from relgraph.nn.checkpoint import dumps, load_checkpoint, loads, save_checkpoint
from relgraph.nn.model import (
    ModelConfig,
    ModelState,
    cross_entropy_loss,
    decode_tokens,
    encode_sequence,
    encoder_forward,
    gcn_forward,
    greedy,
    normalized_adjacency,
)
from relgraph.nn.optim import adam_step

from .conftest import random_graph
from .oracles import dense_gcn_layer, finite_difference_check, full_model_instance

SMALL = ModelConfig(vocab_size=12, d_model=4, d_ff=6, max_seq_len=8, max_decode_len=3, gcn_layers=2)


def _tensors(params, grad=False):
    return {k: T.Tensor(a, requires_grad=grad) for k, a in params.items()}


# -------------------------------------------------------------------- encoder


def test_zero_block_single_token_is_its_embedding():
    s = ModelState.initialize(ModelConfig(vocab_size=10, d_model=4, n_enc=0), 1)
    out = encode_sequence(s, (7,))
    # token embedding plus the first position's embedding, nothing else
    assert np.array_equal(out, s.params["enc.tok"][7] + s.params["enc.pos"][0])


def test_pad_length_does_not_matter():
    s = ModelState.initialize(SMALL, 2)
    p = _tensors(s.params)
    a = encoder_forward(p, np.array([[5, 6, 7, 0]]), SMALL).data
    b = encoder_forward(p, np.array([[5, 6, 7, 0, 0, 0, 0, 0]]), SMALL).data
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_encoder_errors():
    s = ModelState.initialize(SMALL, 0)
    with pytest.raises(TokenOutOfRange):
        encode_sequence(s, (12,))
    with pytest.raises(SequenceTooLong):
        encode_sequence(s, tuple([1] * 9))


def test_encoder_gradient():
    s = ModelState.initialize(SMALL, 3)
    ids = np.array([[4, 5, 6, 0], [7, 8, 0, 0]])
    w = np.random.default_rng(0).normal(size=(2, 4))

    def loss_fn(arrays):
        p = _tensors(arrays, grad=True)
        out = T.sum_(T.mul(encoder_forward(p, ids, SMALL), w))
        out.backward()
        return float(out.data), {k: t.grad for k, t in p.items() if k.startswith("enc.") and t.grad is not None}

    enc = {k: v.copy() for k, v in s.params.items()}
    assert finite_difference_check(loss_fn, enc) < 1e-4


# ------------------------------------------------------------------------ GCN


def _identity_params(d, layers=1):
    return {**{f"gcn.{i}.w": T.Tensor(np.eye(d)) for i in range(layers)},
            **{f"gcn.{i}.b": T.Tensor(np.zeros(d)) for i in range(layers)}}


def test_two_node_propagation():
    adj = normalized_adjacency(np.array([[0, 1], [1, 0]]), 2)
    assert np.allclose(adj.toarray(), [[0.5, 0.5], [0.5, 0.5]])
    out = gcn_forward(_identity_params(2), adj, np.eye(2), 1, activation="linear", residual=False).data
    assert np.allclose(out, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)


def test_isolated_node_is_fixed_point():
    adj = normalized_adjacency(np.array([[0, 1], [1, 0]]), 3)
    x = np.arange(9.0).reshape(3, 3)
    out = gcn_forward(_identity_params(3), adj, x, 1, activation="linear", residual=False).data
    assert np.array_equal(out[2], x[2])


def test_gcn_dimension_mismatch():
    adj = normalized_adjacency(np.zeros((2, 0), int), 2)
    with pytest.raises(DimensionMismatch):
        gcn_forward(_identity_params(3), adj, np.zeros((2, 4)), 1)


@given(st.integers(1, 50), st.floats(0.0, 0.3), st.integers(0, 2**16))
def test_sparse_matches_dense(n, p, seed):
    rng = np.random.default_rng(seed)
    ei = random_graph(rng, n, p)
    h, w = rng.normal(size=(n, 5)), rng.normal(size=(5, 5))
    params = {"gcn.0.w": T.Tensor(w), "gcn.0.b": T.Tensor(np.zeros(5))}
    out = gcn_forward(params, normalized_adjacency(ei, n), h, 1, activation="linear", residual=False).data
    assert np.abs(out - dense_gcn_layer(ei, n, h, w)).max() < 1e-10


@given(st.integers(2, 12), st.integers(0, 2**16))
def test_gcn_equivariance(n, seed):
    rng = np.random.default_rng(seed)
    ei = random_graph(rng, n, 0.4)
    x = rng.normal(size=(n, 4))
    p = _tensors(ModelState.initialize(SMALL, seed).group_params("gcn"))
    perm = rng.permutation(n)  # new id of node i is perm[i]
    out = gcn_forward(p, normalized_adjacency(ei, n), x, 2).data
    xp = np.empty_like(x)
    xp[perm] = x
    outp = gcn_forward(p, normalized_adjacency(perm[ei], n), xp, 2).data
    assert np.allclose(outp[perm], out, rtol=0, atol=1e-12)


def test_gcn_gradient():
    rng = np.random.default_rng(4)
    ei = random_graph(rng, 6, 0.5)
    adj = normalized_adjacency(ei, 6)
    x0 = rng.normal(size=(6, 4))
    w = rng.normal(size=(6, 4))
    params = {k: v.copy() for k, v in ModelState.initialize(SMALL, 4).group_params("gcn").items()}
    params["x"] = x0

    def loss_fn(arrays):
        p = _tensors(arrays, grad=True)
        out = T.sum_(T.mul(gcn_forward(p, adj, p["x"], 2), w))
        out.backward()
        return float(out.data), {k: t.grad for k, t in p.items()}

    assert finite_difference_check(loss_fn, params) < 1e-4


# -------------------------------------------------------------------- decoder


def test_decoder_distributions_normalized():
    s = ModelState.initialize(SMALL, 5)
    probs = decode_tokens(s, np.random.default_rng(0).normal(size=4))
    assert probs.shape == (3, 12)
    assert np.abs(probs.sum(axis=1) - 1).max() <= 1e-12


def test_zero_projection_is_uniform():
    s = ModelState.initialize(SMALL, 5)
    s.params["dec.w"][:] = 0
    s.params["dec.b"][:] = 0
    probs = decode_tokens(s, np.ones(4), 2)
    assert np.allclose(probs, 1 / 12, rtol=0, atol=1e-15)


def test_target_too_long():
    with pytest.raises(TargetTooLong):
        decode_tokens(ModelState.initialize(SMALL, 0), np.zeros(4), 4)


def test_cross_entropy_values():
    assert cross_entropy_loss(np.full((1, 4), 0.25), [2]) == pytest.approx(math.log(4), abs=1e-12)
    assert cross_entropy_loss(np.full((1, 10), 0.1), [7]) == pytest.approx(math.log(10), abs=1e-12)
    assert cross_entropy_loss(np.eye(3), [0, 1, 2]) == 0.0
    with pytest.raises(LengthMismatch):
        cross_entropy_loss(np.eye(3), [0, 1])


def test_cross_entropy_logits_matches_probabilities():
    logits = np.random.default_rng(1).normal(size=(2, 3, 5))
    targets = np.array([[0, 1, 2], [4, 3, 0]])
    z = np.exp(logits - logits.max(-1, keepdims=True))
    probs = z / z.sum(-1, keepdims=True)
    expect = np.mean([cross_entropy_loss(probs[i], targets[i]) for i in range(2)])
    assert float(T.cross_entropy_logits(logits, targets).data) == pytest.approx(expect, abs=1e-12)


def test_greedy_stops_at_pad_and_breaks_ties_low():
    assert greedy(np.array([[0, 1, 1], [1, 0, 0]])) == [1]
    assert greedy(np.array([[0, 2, 2], [0, 0, 3], [5, 0, 0]])) == [1, 2]


# ---------------------------------------------------------------------- Adam


def _scalar_state():
    cfg = ModelConfig(vocab_size=1, d_model=1, n_enc=0, max_seq_len=1, max_decode_len=1, gcn_layers=0)
    s = ModelState.initialize(cfg, 0)
    for k in s.params:
        s.params[k] = np.ones_like(s.params[k])
    return s


def test_adam_degenerate_is_sgd():
    s = _scalar_state()
    adam_step(s, {k: np.ones_like(a) for k, a in s.params.items()}, lr=0.1, beta1=0.0, beta2=0.0, eps=0.0)
    assert all(a.item() == pytest.approx(0.9, abs=1e-15) for a in s.params.values())
    assert s.step == 1


def test_adam_zero_gradient_fixed_point():
    s = ModelState.initialize(SMALL, 1)
    before = {k: a.copy() for k, a in s.params.items()}
    adam_step(s, {k: np.zeros_like(a) for k, a in s.params.items()})
    assert all(np.array_equal(before[k], s.params[k]) for k in before)


def test_adam_respects_freeze():
    s = ModelState.initialize(SMALL, 1)
    s.frozen = frozenset({"encoder"})
    enc = {k: a.copy() for k, a in s.group_params("encoder").items()}
    grads = {k: np.ones_like(a) for k, a in s.params.items() if s.trainable(k)}
    adam_step(s, grads)
    assert all(np.array_equal(enc[k], s.params[k]) for k in enc)
    assert not np.array_equal(s.params["dec.b"], np.zeros(12))


def test_adam_missing_gradients():
    s = ModelState.initialize(SMALL, 1)
    with pytest.raises(MissingGradients):
        adam_step(s, {"dec.b": np.zeros(12)})


# ---------------------------------------------------------------- full model


@pytest.mark.parametrize("seed", range(3))
def test_full_model_gradient(seed):
    _, params, loss_fn = full_model_instance(seed, n_nodes=3, vocab=20)
    assert finite_difference_check(loss_fn, params) < 1e-4


def test_full_model_gradient_with_stats():
    _, params, loss_fn = full_model_instance(11, n_nodes=4, vocab=15, stats=True)
    assert finite_difference_check(loss_fn, params) < 1e-4


def test_forward_is_pure():
    _, params, loss_fn = full_model_instance(2)
    a, ga = loss_fn(params)
    b, gb = loss_fn(params)
    assert a == b and all(np.array_equal(ga[k], gb[k]) for k in ga)


# ----------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    s = ModelState.initialize(SMALL, 9)
    s.step, s.frozen = 17, frozenset({"encoder"})
    path = save_checkpoint(s, tmp_path / "a.ckpt")
    back = load_checkpoint(path)
    assert back.config == s.config and back.step == 17 and back.seed == 9 and back.frozen == s.frozen
    assert all(np.array_equal(back.params[k], s.params[k]) for k in s.params)
    assert dumps(back) == path.read_bytes()


def test_checkpoint_corruption_detected():
    blob = bytearray(dumps(ModelState.initialize(SMALL, 0)))
    blob[100] ^= 1
    with pytest.raises(ChecksumError):
        loads(bytes(blob))
    with pytest.raises(ChecksumError):
        loads(b"nope")
