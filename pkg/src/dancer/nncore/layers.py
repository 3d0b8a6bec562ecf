"""Attentional encoder-decoder shared by the judge and the rewriting policy.

Encoder: token embedding, ``encoder_layers`` stacked LSTMs, each optionally
bidirectional (forward/backward outputs concatenated per step).

Decoder: ``decoder_layers`` stacked LSTMs fed the previous token's embedding.
The top decoder state ``s`` attends over encoder states ``H`` with a
bilinear score ``s W_a H_t``; the context is concatenated with ``s``,
passed through ``tanh(W_c [ctx; s] + b_c)`` and projected to vocabulary
logits. Decoder states start from ``tanh(W_bridge z + b)`` where ``z`` is
the encoder's sentence vector.

LSTM gate order in the packed weight matrices is input, forget, output,
candidate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..corpus import EOS_ID, PAD_ID, SOS_ID
from ..errors import ConfigError, InputError, UsageError
from . import autograd as ag
from .autograd import Parameter, Tensor


@dataclass(frozen=True)
class EncoderDecoderConfig:
    vocab_size: int
    embed_dim: int = 32
    hidden_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 1
    bidirectional_encoder: bool = True
    max_len: int = 30

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "hidden_dim", "encoder_layers", "decoder_layers", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def encoder_width(self) -> int:
        return self.hidden_dim * (2 if self.bidirectional_encoder else 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderDecoderConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# ------------------------------------------------------------------ LSTM cell

def lstm_cell(x_proj: Tensor, h: Tensor, c: Tensor, w_h: Tensor):
    """One step given the precomputed input projection ``x W_x + b``."""
    n = h.shape[-1]
    hc = ag.lstm_cell(x_proj, h, c, w_h)
    return hc[:, :n], hc[:, n:]


def run_lstm(inputs: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, reverse: bool = False):
    """Run an LSTM over ``inputs`` (B, T, D) from zero state.

    Returns the list of per-step hidden states in input order and the final
    hidden state (after the last processed step).
    """
    batch, steps, _ = inputs.shape
    n = w_h.shape[0]
    proj = inputs @ w_x + b
    h = Tensor(np.zeros((batch, n)))
    c = Tensor(np.zeros((batch, n)))
    outs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h, c = lstm_cell(proj[:, t, :], h, c, w_h)
        outs[t] = h
    return outs, h


# -------------------------------------------------------------------- network

class EncoderDecoder:
    """Parameter container plus forward passes.

    ``params`` maps unique names to :class:`Parameter`; iteration order is
    stable and defines serialization order.
    """

    def __init__(self, config: EncoderDecoderConfig, seed: int | None = 0, init: str = "uniform"):
        self.config = config
        self.params: dict[str, Parameter] = {}
        rng = np.random.default_rng(seed)
        cfg = config
        n = cfg.hidden_dim

        def add(name, shape, scale=0.08):
            if init == "zeros":
                value = np.zeros(shape)
            else:
                value = rng.uniform(-scale, scale, size=shape)
            self.params[name] = Parameter(value, name)
            return self.params[name]

        def add_lstm(prefix, in_dim):
            add(f"{prefix}.W_x", (in_dim, 4 * n))
            add(f"{prefix}.W_h", (n, 4 * n))
            b = add(f"{prefix}.b", (4 * n,))
            if init != "zeros":
                b.data[n:2 * n] = 1.0

        add("enc.embed", (cfg.vocab_size, cfg.embed_dim), scale=0.1)
        in_dim = cfg.embed_dim
        dirs = ("fwd", "bwd") if cfg.bidirectional_encoder else ("fwd",)
        for layer in range(cfg.encoder_layers):
            for d in dirs:
                add_lstm(f"enc.l{layer}.{d}", in_dim)
            in_dim = cfg.encoder_width
        for layer in range(cfg.decoder_layers):
            add(f"bridge.l{layer}.W", (cfg.encoder_width, n))
            add(f"bridge.l{layer}.b", (n,))
        add("dec.embed", (cfg.vocab_size, cfg.embed_dim), scale=0.1)
        in_dim = cfg.embed_dim
        for layer in range(cfg.decoder_layers):
            add_lstm(f"dec.l{layer}", in_dim)
            in_dim = n
        add("att.W", (n, cfg.encoder_width))
        add("att.W_c", (cfg.encoder_width + n, n))
        add("att.b_c", (n,))
        add("out.W", (n, cfg.vocab_size))
        add("out.b", (cfg.vocab_size,))

    # -- parameter plumbing

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        if set(state) != set(self.params):
            raise ConfigError("state dict does not match the model's parameter names")
        for k, p in self.params.items():
            value = np.asarray(state[k], dtype=p.data.dtype)
            if value.shape != p.data.shape:
                raise ConfigError(f"shape mismatch for {k}: {value.shape} vs {p.data.shape}")
            if not p.data.flags.writeable:
                raise UsageError(f"parameter {k} is frozen")
            p.data[...] = value

    def copy(self) -> "EncoderDecoder":
        other = EncoderDecoder.__new__(EncoderDecoder)
        other.config = self.config
        other.params = {k: Parameter(p.data.copy(), k) for k, p in self.params.items()}
        return other

    def zero_grad(self) -> None:
        ag.zero_grad(self.parameters())

    # -- forward passes

    def _check_ids(self, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        if ids.ndim != 2:
            raise InputError("token ids must be a sequence or a batch of equal-length sequences")
        if ids.shape[1] > self.config.max_len + 2:
            raise InputError(f"sequence length {ids.shape[1]} exceeds max_len + 2 = {self.config.max_len + 2}")
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise InputError(f"token id outside [0, {self.config.vocab_size})")
        return ids

    def encode(self, ids):
        """Encode a (B, T) batch.

        Returns ``(states, sentence)``: per-step top-layer states (B, T, W)
        and the sentence vector (B, W) made of the final forward state and
        the final backward state (the one computed at position 0).
        """
        ids = self._check_ids(ids)
        p = self.params
        x = ag.embedding(p["enc.embed"], ids)
        dirs = ("fwd", "bwd") if self.config.bidirectional_encoder else ("fwd",)
        for layer in range(self.config.encoder_layers):
            per_dir, finals = [], []
            for d in dirs:
                pre = f"enc.l{layer}.{d}"
                outs, last = run_lstm(x, p[f"{pre}.W_x"], p[f"{pre}.W_h"], p[f"{pre}.b"], reverse=(d == "bwd"))
                per_dir.append(ag.stack(outs, axis=1))
                finals.append(last)
            x = ag.concat(per_dir, axis=-1) if len(per_dir) > 1 else per_dir[0]
            sentence = ag.concat(finals, axis=-1) if len(finals) > 1 else finals[0]
        return x, sentence

    def initial_state(self, sentence: Tensor):
        p = self.params
        state = []
        for layer in range(self.config.decoder_layers):
            h = ag.tanh(sentence @ p[f"bridge.l{layer}.W"] + p[f"bridge.l{layer}.b"])
            state.append((h, Tensor(np.zeros(h.shape))))
        return state

    def decode_step(self, prev_tokens, state, enc_states: Tensor):
        """Advance the decoder one token.

        Returns ``(new_state, logits, attention)`` with logits (B, V) and
        attention weights (B, T).
        """
        p = self.params
        prev_tokens = np.asarray(prev_tokens, dtype=np.int64)
        if len(state) != self.config.decoder_layers:
            raise UsageError("decoder state has the wrong number of layers")
        if enc_states.shape[0] != prev_tokens.shape[0] or state[0][0].shape[0] != prev_tokens.shape[0]:
            raise UsageError("decoder state / encoder states / token batch sizes disagree")
        x = ag.embedding(p["dec.embed"], prev_tokens)
        new_state = []
        for layer, (h, c) in enumerate(state):
            pre = f"dec.l{layer}"
            h, c = lstm_cell(x @ p[f"{pre}.W_x"] + p[f"{pre}.b"], h, c, p[f"{pre}.W_h"])
            new_state.append((h, c))
            x = h
        scores = ag.einsum("bw,btw->bt", x @ p["att.W"], enc_states)
        attention = ag.softmax(scores, axis=-1)
        context = ag.einsum("bt,btw->bw", attention, enc_states)
        hidden = ag.tanh(ag.concat([context, x], axis=-1) @ p["att.W_c"] + p["att.b_c"])
        logits = hidden @ p["out.W"] + p["out.b"]
        return new_state, logits, attention

    def step_log_probs(self, ids, decoder_inputs):
        """Teacher-forced log-probabilities, one (B, V) tensor per step."""
        enc_states, sentence = self.encode(ids)
        decoder_inputs = np.asarray(decoder_inputs, dtype=np.int64)
        if decoder_inputs.ndim == 1:
            decoder_inputs = decoder_inputs[None, :]
        state = self.initial_state(sentence)
        out = []
        for t in range(decoder_inputs.shape[1]):
            state, logits, _ = self.decode_step(decoder_inputs[:, t], state, enc_states)
            out.append(ag.log_softmax(logits, axis=-1))
        return out

    def reconstruction_loss(self, ids) -> Tensor:
        """Mean token cross-entropy of reconstructing ``ids[:, 1:]`` from ``ids``."""
        ids = self._check_ids(ids)
        steps = self.step_log_probs(ids, ids[:, :-1])
        nll = [ag.sum(ag.pick(lp, ids[:, t + 1])) for t, lp in enumerate(steps)]
        total = ag.sum(ag.stack(nll))
        return ag.mul(total, -1.0 / (ids.shape[0] * len(steps)))

    def sequence_log_prob(self, ids, outputs, lengths) -> Tensor:
        """Per-example sum of ``log p(y_t | x, y_<t)`` over the first ``lengths[b]`` output tokens.

        ``outputs`` is a (B, T) array of generated tokens padded after each
        episode's end; decoding starts from SOS.
        """
        outputs = np.asarray(outputs, dtype=np.int64)
        lengths = np.asarray(lengths)
        batch, steps = outputs.shape
        inputs = np.concatenate([np.full((batch, 1), SOS_ID), outputs[:, :-1]], axis=1)
        step_lp = self.step_log_probs(ids, inputs)
        mask = (np.arange(steps)[None, :] < lengths[:, None]).astype(float)
        picked = ag.stack([ag.pick(lp, outputs[:, t]) for t, lp in enumerate(step_lp)], axis=1)
        return ag.sum(picked * mask, axis=1)

    def generate(self, ids, max_len: int, rngs=None, greedy: bool = False):
        """Sample (or greedily decode) continuations for a batch.

        ``rngs`` holds one ``numpy.random.Generator`` per row so each
        episode's draws depend only on its own seed. Returns
        ``(tokens, logprobs)``, lists of per-row arrays that stop after the
        first EOS or at ``max_len``.
        """
        ids = self._check_ids(ids)
        batch = ids.shape[0]
        if not greedy and (rngs is None or len(rngs) != batch):
            raise UsageError("sampling needs one random generator per batch row")
        tokens = [[] for _ in range(batch)]
        logps = [[] for _ in range(batch)]
        done = np.zeros(batch, dtype=bool)
        with ag.no_grad():
            enc_states, sentence = self.encode(ids)
            state = self.initial_state(sentence)
            prev = np.full(batch, SOS_ID)
            for _ in range(max_len):
                state, logits, _ = self.decode_step(prev, state, enc_states)
                lp = ag.log_softmax(logits, axis=-1).data
                nxt = np.full(batch, PAD_ID)
                for b in range(batch):
                    if done[b]:
                        continue
                    if greedy:
                        tok = int(np.argmax(lp[b]))
                    else:
                        cdf = np.cumsum(np.exp(lp[b]))
                        tok = min(int(np.searchsorted(cdf, rngs[b].random() * cdf[-1], side="right")), cdf.size - 1)
                    tokens[b].append(tok)
                    logps[b].append(float(lp[b, tok]))
                    nxt[b] = tok
                    if tok == EOS_ID:
                        done[b] = True
                if done.all():
                    break
                prev = nxt
        return [np.array(t, dtype=np.int64) for t in tokens], [np.array(l) for l in logps]
