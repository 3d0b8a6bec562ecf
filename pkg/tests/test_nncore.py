import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cases import SMALL, gradcheck_cases, randomized, toy_ids
from dancer.errors import InputError, OptimizationError, UsageError
from dancer.nncore import AdamState, EncoderDecoder, EncoderDecoderConfig, Parameter, adam_step, backward, gradient_check
from dancer.nncore import autograd as ag


@pytest.mark.parametrize("name", list(gradcheck_cases()))
def test_gradients_match_finite_differences(name):
    fn, params = gradcheck_cases()[name]
    report = gradient_check(fn, params, tolerance=1e-4)
    assert report.passed, str(report)


def test_linear_model_gradient_is_exact():
    rng = np.random.default_rng(1)
    w = Parameter(rng.normal(size=(3, 2)), "w")
    x = rng.normal(size=(4, 3))
    report = gradient_check(lambda: ag.sum(ag.matmul(x, w)), [w])
    assert report.worst < 1e-10


def test_corrupted_backward_is_reported():
    p = Parameter(np.array([0.3, -1.2, 2.0]), "p")

    def broken_square(a):
        return ag._node(a.data ** 2, (a,), lambda g: (g * a.data,))  # missing factor 2

    report = gradient_check(lambda: ag.sum(broken_square(p)), [p])
    assert not report.passed and report.failures() == ["p"]
    assert "FAIL p" in str(report)


def test_closed_form_gradients():
    p = Parameter(np.arange(6.0).reshape(2, 3), "p")
    backward(ag.sum(p))
    assert np.array_equal(p.grad, np.ones((2, 3)))

    logits = Parameter(np.array([[0.2, -1.0, 3.0, 0.5]]), "logits")
    backward(ag.cross_entropy(logits, np.array([2])))
    probs = np.exp(logits.data) / np.exp(logits.data).sum()
    assert np.allclose(logits.grad, probs - np.eye(4)[2], atol=1e-15)


def test_backward_usage_errors():
    p = Parameter(np.ones(3), "p")
    with pytest.raises(UsageError):
        backward(p)
    with ag.no_grad():
        loss = ag.sum(p * 2.0)
    with pytest.raises(UsageError):
        backward(loss)
    loss = ag.sum(p * 2.0)
    backward(loss)
    with pytest.raises(UsageError):
        backward(loss)


def test_untouched_parameters_get_zero_grad():
    net = randomized()
    net.zero_grad()
    states, _ = net.encode(toy_ids())
    backward(ag.sum(states))
    assert np.any(net.params["enc.embed"].grad)
    assert not any(np.any(p.grad) for k, p in net.params.items() if not k.startswith("enc."))


def test_zero_loss_scale_gives_zero_gradients():
    net = randomized()
    net.zero_grad()
    backward(ag.mul(net.reconstruction_loss(toy_ids()), 0.0))
    assert all(not np.any(p.grad) for p in net.parameters())


# forward passes

def test_zero_parameters_give_zero_state():
    # gates are sigmoid(0) = 1/2 and the candidate tanh(0) = 0, so c and h stay 0
    net = EncoderDecoder(SMALL, init="zeros")
    with ag.no_grad():
        states, sentence = net.encode(toy_ids(batch=3))
    assert not np.any(states.data) and not np.any(sentence.data)


def test_encode_is_deterministic_and_position_sensitive():
    net = randomized()
    with ag.no_grad():
        a = net.encode([2, 5, 3])[1].data
        b = net.encode([2, 5, 3])[1].data
        c = net.encode([2, 0, 5, 3])[1].data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_encoder_width_and_input_errors():
    net = randomized()
    with ag.no_grad():
        states, sentence = net.encode(toy_ids())
    assert states.shape == (2, 6, 2 * SMALL.hidden_dim) and sentence.shape == (2, 8)
    with pytest.raises(InputError):
        net.encode([2, 7, 3])
    with pytest.raises(InputError):
        net.encode(np.full((1, SMALL.max_len + 3), 4))


def softmax_np(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def lstm_np(x, h, c, wx, wh, b):
    n = h.shape[-1]
    z = x @ wx + h @ wh + b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, o, g = sig(z[:, :n]), sig(z[:, n:2 * n]), sig(z[:, 2 * n:3 * n]), np.tanh(z[:, 3 * n:])
    c = f * c + i * g
    return o * np.tanh(c), c


def test_decode_step_matches_independent_recomputation():
    cfg = EncoderDecoderConfig(vocab_size=5, embed_dim=3, hidden_dim=4, max_len=3)
    net = randomized(cfg, seed=3)
    P = {k: p.data for k, p in net.params.items()}
    ids = np.array([[2, 4, 1, 0, 3]])
    with ag.no_grad():
        states, sentence = net.encode(ids)
        state = net.initial_state(sentence)
        _, logits, attention = net.decode_step(np.array([2]), state, states)
    H = states.data[0]
    h0 = np.tanh(sentence.data @ P["bridge.l0.W"] + P["bridge.l0.b"])
    h, _ = lstm_np(P["dec.embed"][[2]], h0, np.zeros_like(h0), P["dec.l0.W_x"], P["dec.l0.W_h"], P["dec.l0.b"])
    att = softmax_np((h @ P["att.W"]) @ H.T)
    ctx = att @ H
    hid = np.tanh(np.concatenate([ctx, h], axis=-1) @ P["att.W_c"] + P["att.b_c"])
    ref_logits = hid @ P["out.W"] + P["out.b"]
    assert np.allclose(attention.data, att, atol=1e-12)
    assert np.allclose(logits.data, ref_logits, atol=1e-12)
    dist = softmax_np(logits.data)
    assert abs(dist.sum() - 1) < 1e-6 and np.all(dist >= 0)


def test_single_encoder_step_gets_all_attention():
    net = randomized()
    with ag.no_grad():
        states, sentence = net.encode([[4]])
        _, _, attention = net.decode_step(np.array([2]), net.initial_state(sentence), states)
    assert attention.data[0, 0] == 1.0


def test_uniform_logits_give_uniform_distribution():
    with ag.no_grad():
        p = ag.softmax(ag.as_tensor(np.zeros((1, 9)))).data
    assert np.allclose(p, 1 / 9, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_step_distributions_are_normalized(seed):
    net = randomized(seed=seed % 50)
    with ag.no_grad():
        steps = net.step_log_probs(toy_ids(seed), toy_ids(seed)[:, :-1])
    for lp in steps:
        p = np.exp(lp.data)
        assert np.all(p >= 0) and np.allclose(p.sum(axis=-1), 1, atol=1e-6)


# optimizer

def test_adam_quadratic():
    x = Parameter(np.array([0.0]), "x")
    state = AdamState(lr=0.1)
    for _ in range(500):
        loss = (x - 3.0) * (x - 3.0)
        backward(ag.sum(loss))
        adam_step(state, [x])
    assert abs(x.data[0] - 3) < 1e-2
    assert state.step == 500 and not np.any(x.grad)


def test_adam_zero_grads_and_determinism():
    a = randomized(seed=4)
    b = a.copy()
    before = a.state_dict()
    adam_step(AdamState(lr=0.1), a.parameters())
    assert all(np.array_equal(before[k], v) for k, v in a.state_dict().items())
    for net in (a, b):
        backward(net.reconstruction_loss(toy_ids()))
    sa, sb = AdamState(lr=0.01), AdamState(lr=0.01)
    adam_step(sa, a.parameters())
    adam_step(sb, b.parameters())
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)


def test_adam_rejects_non_finite_gradient_by_name():
    good, bad = Parameter(np.zeros(2), "good"), Parameter(np.zeros(2), "bad")
    bad.grad[0] = np.nan
    with pytest.raises(OptimizationError, match="'bad'"):
        adam_step(AdamState(), [good, bad])
    assert np.array_equal(good.data, np.zeros(2))


def test_adam_state_roundtrip():
    net = randomized()
    state = AdamState(lr=0.01)
    backward(net.reconstruction_loss(toy_ids()))
    adam_step(state, net.parameters())
    back = AdamState.restore(state.hyper(), state.state_arrays())
    assert back.hyper() == state.hyper()
    assert all(np.array_equal(back.m[k], state.m[k]) and np.array_equal(back.v[k], state.v[k]) for k in state.m)
