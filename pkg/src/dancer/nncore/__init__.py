"""Desk-scale neural network core: autograd, LSTM encoder-decoder, Adam."""

from .autograd import Parameter, Tensor, backward, no_grad, zero_grad
from .gradcheck import GradCheckReport, gradient_check
from .layers import EncoderDecoder, EncoderDecoderConfig
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "EncoderDecoder",
    "EncoderDecoderConfig",
    "GradCheckReport",
    "Parameter",
    "Tensor",
    "adam_step",
    "backward",
    "gradient_check",
    "no_grad",
    "zero_grad",
]
