"""Stacked LSTM (non-peephole) with backpropagation through time."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from src.errors import DimensionError, TapeError

# Per layer: (c, h), each of shape (batch, hidden)
LstmState = List[Tuple[np.ndarray, np.ndarray]]


@dataclass
class _LayerCache:
    x: np.ndarray
    c_prev: np.ndarray
    h_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray


@dataclass
class StepTape:
    owner: int
    layers: List[_LayerCache]


@dataclass
class SequenceTape:
    owner: int
    steps: List[StepTape]


class LstmStack:
    """
    num_layers LSTM cells; layer l takes the hidden state of layer l-1.

    Gates are packed in the order input, forget, candidate, output:
    W_x is (input, 4*hidden), W_h is (hidden, 4*hidden), b is (4*hidden,).
    """

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        num_layers: int,
        rng: Optional[np.random.Generator] = None,
    ):
        if min(input_size, hidden_size, num_layers) < 1:
            raise DimensionError("LSTM sizes must be at least 1")
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        rng = rng if rng is not None else np.random.default_rng(0)
        a = 1.0 / np.sqrt(hidden_size)
        self.weights = []
        for layer in range(num_layers):
            fan_in = input_size if layer == 0 else hidden_size
            self.weights.append({
                "W_x": rng.uniform(-a, a, size=(fan_in, 4 * hidden_size)),
                "W_h": rng.uniform(-a, a, size=(hidden_size, 4 * hidden_size)),
                "b": rng.uniform(-a, a, size=4 * hidden_size),
            })

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {}
        for layer, w in enumerate(self.weights):
            for name, value in w.items():
                params[f"layer{layer}.{name}"] = value
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def zero_state(self, batch: int = 1) -> LstmState:
        return [
            (np.zeros((batch, self.hidden_size)), np.zeros((batch, self.hidden_size)))
            for _ in range(self.num_layers)
        ]

    def step(self, x, state: Optional[LstmState] = None) -> Tuple[np.ndarray, LstmState, StepTape]:
        """
        Advance every layer by one time step.

        Args:
            x: Input of shape (batch, input_size) or (input_size,)
            state: Previous (c, h) per layer; zeros when omitted

        Returns:
            (h of the top layer, new state, tape)
        """
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise DimensionError(f"LSTM input {x.shape} does not match input size {self.input_size}")
        if state is None:
            state = self.zero_state(x.shape[0])
        if len(state) != self.num_layers:
            raise DimensionError(f"state has {len(state)} layers, expected {self.num_layers}")

        H = self.hidden_size
        new_state, caches = [], []
        inp = x
        for w, (c_prev, h_prev) in zip(self.weights, state):
            if c_prev.shape != (inp.shape[0], H) or h_prev.shape != (inp.shape[0], H):
                raise DimensionError("LSTM state does not match batch and hidden size")
            z = inp @ w["W_x"] + h_prev @ w["W_h"] + w["b"]
            i = expit(z[:, :H])
            f = expit(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = expit(z[:, 3 * H:])
            c = f * c_prev + i * g
            tanh_c = np.tanh(c)
            h = o * tanh_c
            caches.append(_LayerCache(inp, c_prev, h_prev, i, f, g, o, tanh_c))
            new_state.append((c, h))
            inp = h

        out = inp[0] if single else inp
        return out, new_state, StepTape(owner=id(self), layers=caches)

    def step_backward(
        self,
        tape: StepTape,
        dh_top: np.ndarray,
        dstate: Optional[LstmState],
        grads: Dict[str, np.ndarray],
    ) -> Tuple[np.ndarray, LstmState]:
        """
        Backward through one step, accumulating parameter gradients into grads.

        Args:
            tape: Tape of the matching step()
            dh_top: Gradient wrt the top-layer output of this step
            dstate: Gradient wrt the state this step produced (None at the last step)
            grads: Accumulator keyed like parameters()

        Returns:
            (gradient wrt the step input, gradient wrt the incoming state)
        """
        if tape.owner != id(self) or len(tape.layers) != self.num_layers:
            raise TapeError("tape was not produced by this LSTM")
        H = self.hidden_size
        dh_top = np.asarray(dh_top, dtype=float)
        if dh_top.ndim == 1:
            dh_top = dh_top[None, :]

        dprev: LstmState = [None] * self.num_layers
        dh_in = dh_top
        for layer in range(self.num_layers - 1, -1, -1):
            cache = tape.layers[layer]
            w = self.weights[layer]
            if dstate is not None:
                dc_next, dh_next = dstate[layer]
                dh = dh_in + dh_next
            else:
                dc_next = 0.0
                dh = dh_in

            do = dh * cache.tanh_c
            dc = dc_next + dh * cache.o * (1.0 - cache.tanh_c ** 2)
            di = dc * cache.g
            dg = dc * cache.i
            df = dc * cache.c_prev

            dz = np.empty((dh.shape[0], 4 * H))
            dz[:, :H] = di * cache.i * (1.0 - cache.i)
            dz[:, H:2 * H] = df * cache.f * (1.0 - cache.f)
            dz[:, 2 * H:3 * H] = dg * (1.0 - cache.g ** 2)
            dz[:, 3 * H:] = do * cache.o * (1.0 - cache.o)

            grads[f"layer{layer}.W_x"] += cache.x.T @ dz
            grads[f"layer{layer}.W_h"] += cache.h_prev.T @ dz
            grads[f"layer{layer}.b"] += dz.sum(axis=0)

            dprev[layer] = (dc * cache.f, dz @ w["W_h"].T)
            dh_in = dz @ w["W_x"].T

        return dh_in, dprev

    def run(self, xs, state: Optional[LstmState] = None) -> Tuple[np.ndarray, LstmState, SequenceTape]:
        """Unroll over xs of shape (T, batch, input_size); returns top hidden states (T, batch, hidden)."""
        xs = np.asarray(xs, dtype=float)
        if xs.ndim != 3:
            raise DimensionError(f"expected (T, batch, input) inputs, got {xs.shape}")
        if state is None:
            state = self.zero_state(xs.shape[1])
        outputs, steps = [], []
        for x in xs:
            h, state, tape = self.step(x, state)
            outputs.append(h)
            steps.append(tape)
        return np.stack(outputs), state, SequenceTape(owner=id(self), steps=steps)

    def backward(self, tape: SequenceTape, dhs) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """BPTT over the whole unrolled sequence; dhs has shape (T, batch, hidden)."""
        if tape.owner != id(self):
            raise TapeError("tape was not produced by this LSTM")
        dhs = np.asarray(dhs, dtype=float)
        if dhs.shape[0] != len(tape.steps):
            raise DimensionError(f"{dhs.shape[0]} output gradients for {len(tape.steps)} steps")
        grads = {k: np.zeros_like(v) for k, v in self.parameters().items()}
        dxs = [None] * len(tape.steps)
        dstate = None
        for t in range(len(tape.steps) - 1, -1, -1):
            dxs[t], dstate = self.step_backward(tape.steps[t], dhs[t], dstate, grads)
        return np.stack(dxs), grads

    def load_tensors(self, tensors: Dict[str, np.ndarray], prefix: str = ""):
        for name, value in self.parameters().items():
            key = f"{prefix}{name}"
            if key not in tensors:
                raise DimensionError(f"checkpoint is missing tensor {key}")
            if tensors[key].shape != value.shape:
                raise DimensionError(f"tensor {key} has shape {tensors[key].shape}, expected {value.shape}")
            value[...] = tensors[key]
