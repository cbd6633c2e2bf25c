"""Recurrent update cells built on the autodiff tape.

The LSTM uses the two-bias convention (separate input and hidden biases), so
its parameter count is ``4 * (in*h + h*h + 2h)``; this is the only convention
consistent with the published model sizes.  Gate pre-activations are laid out
``[i | f | o | g]`` (the three sigmoid gates first, then the tanh candidate).
The plain RNN cell is the ablation alternative:
``h' = tanh(W_in x + b_in + W_h h + b_h)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, add, linear, lstm_gates, slice_cols, tanh


@dataclass
class LstmParams:
    w_in: Tensor  # (4h, in)
    w_h: Tensor  # (4h, h)
    b_in: Tensor  # (4h,)
    b_h: Tensor  # (4h,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_in.shape[1]

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors().values())

    def tensors(self) -> dict[str, Tensor]:
        return {"w_in": self.w_in, "w_h": self.w_h, "b_in": self.b_in, "b_h": self.b_h}


@dataclass
class RnnParams:
    w_in: Tensor  # (h, in)
    w_h: Tensor  # (h, h)
    b_in: Tensor  # (h,)
    b_h: Tensor  # (h,)

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[1]

    @property
    def input_size(self) -> int:
        return self.w_in.shape[1]

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors().values())

    def tensors(self) -> dict[str, Tensor]:
        return {"w_in": self.w_in, "w_h": self.w_h, "b_in": self.b_in, "b_h": self.b_h}


def lstm_param_count(input_size: int, hidden_size: int) -> int:
    return 4 * (input_size * hidden_size + hidden_size * hidden_size + 2 * hidden_size)


def rnn_param_count(input_size: int, hidden_size: int) -> int:
    return input_size * hidden_size + hidden_size * hidden_size + 2 * hidden_size


def _uniform(rng: np.random.Generator, shape, bound: float) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_lstm_params(input_size: int, hidden_size: int, rng: np.random.Generator) -> LstmParams:
    k = 1.0 / np.sqrt(hidden_size)
    return LstmParams(
        w_in=_uniform(rng, (4 * hidden_size, input_size), k),
        w_h=_uniform(rng, (4 * hidden_size, hidden_size), k),
        b_in=_uniform(rng, 4 * hidden_size, k),
        b_h=_uniform(rng, 4 * hidden_size, k),
    )


def init_rnn_params(input_size: int, hidden_size: int, rng: np.random.Generator) -> RnnParams:
    k = 1.0 / np.sqrt(hidden_size)
    return RnnParams(
        w_in=_uniform(rng, (hidden_size, input_size), k),
        w_h=_uniform(rng, (hidden_size, hidden_size), k),
        b_in=_uniform(rng, hidden_size, k),
        b_h=_uniform(rng, hidden_size, k),
    )


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step; returns the new hidden and cell states."""
    pre = add(linear(x, p.w_in, p.b_in), linear(h, p.w_h, p.b_h))
    packed = lstm_gates(pre, c)
    n = p.hidden_size
    return slice_cols(packed, 0, n), slice_cols(packed, n, 2 * n)


def rnn_cell(x: Tensor, h: Tensor, p: RnnParams) -> Tensor:
    """One plain tanh recurrent step."""
    return tanh(add(linear(x, p.w_in, p.b_in), linear(h, p.w_h, p.b_h)))
