"""Dense multilayer perceptron with exact hand-derived gradients."""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DimensionError, TapeError

ACTIVATIONS = ("relu", "linear")


@dataclass
class DenseLayer:
    """y = act(x @ W + b), W has shape (fan_in, fan_out)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise DimensionError(f"weight {self.W.shape} and bias {self.b.shape} do not match")


@dataclass
class MlpTape:
    """Activations of one forward pass, enough for the exact backward pass."""

    owner: int
    inputs: List[np.ndarray]
    preacts: List[np.ndarray]
    batched: bool


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


class Mlp:
    """Chain of dense layers; accepts one vector or a batch of row vectors."""

    def __init__(self, layers: Sequence[DenseLayer]):
        if not layers:
            raise DimensionError("an MLP needs at least one layer")
        for k in range(1, len(layers)):
            if layers[k].W.shape[0] != layers[k - 1].W.shape[1]:
                raise DimensionError(
                    f"layer {k} expects {layers[k].W.shape[0]} inputs, "
                    f"previous layer gives {layers[k - 1].W.shape[1]}"
                )
        self.layers = list(layers)

    @classmethod
    def build(
        cls,
        widths: Sequence[int],
        rng: np.random.Generator,
        hidden_activation: str = "relu",
        output_activation: str = "linear",
    ) -> "Mlp":
        """
        Glorot-uniform initialized MLP.

        Args:
            widths: [input, hidden..., output] widths
            rng: Generator used for the weights; biases start at zero
        """
        if len(widths) < 2 or min(widths) < 1:
            raise DimensionError(f"invalid widths {list(widths)}")
        layers = []
        for k in range(len(widths) - 1):
            last = k == len(widths) - 2
            layers.append(
                DenseLayer(
                    W=glorot_uniform(widths[k], widths[k + 1], rng),
                    b=np.zeros(widths[k + 1]),
                    activation=output_activation if last else hidden_activation,
                )
            )
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def widths(self) -> List[int]:
        return [self.input_dim] + [layer.W.shape[1] for layer in self.layers]

    def parameters(self) -> Dict[str, np.ndarray]:
        """Live references keyed "0.W", "0.b", "1.W", ...; in-place updates train the model."""
        params = {}
        for k, layer in enumerate(self.layers):
            params[f"{k}.W"] = layer.W
            params[f"{k}.b"] = layer.b
        return params

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, x) -> Tuple[np.ndarray, MlpTape]:
        x = np.asarray(x, dtype=float)
        batched = x.ndim == 2
        h = x if batched else x[None, :]
        if h.ndim != 2 or h.shape[1] != self.input_dim:
            raise DimensionError(f"input of shape {x.shape} does not match width {self.input_dim}")

        inputs, preacts = [], []
        for layer in self.layers:
            inputs.append(h)
            z = h @ layer.W + layer.b
            preacts.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z

        tape = MlpTape(owner=id(self), inputs=inputs, preacts=preacts, batched=batched)
        return (h if batched else h[0]), tape

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: MlpTape, dy) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
        """
        Gradients of sum(y * dy).

        Returns:
            (dx, grads) with grads keyed like parameters(); batch rows are summed
        """
        if tape.owner != id(self) or len(tape.inputs) != len(self.layers):
            raise TapeError("tape was not produced by this network")
        g = np.asarray(dy, dtype=float)
        if not tape.batched:
            g = g[None, :]
        if g.shape != tape.preacts[-1].shape:
            raise DimensionError(f"gradient shape {g.shape} does not match output {tape.preacts[-1].shape}")

        grads = {}
        for k in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[k]
            if layer.activation == "relu":
                g = g * (tape.preacts[k] > 0.0)
            grads[f"{k}.W"] = tape.inputs[k].T @ g
            grads[f"{k}.b"] = g.sum(axis=0)
            g = g @ layer.W.T
        return (g if tape.batched else g[0]), grads

    def copy(self) -> "Mlp":
        return Mlp([DenseLayer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])

    def spec(self) -> Dict[str, object]:
        """Architecture summary for checkpoint sidecars."""
        return {"widths": self.widths, "activations": [l.activation for l in self.layers]}

    @classmethod
    def from_tensors(
        cls,
        tensors: Dict[str, np.ndarray],
        activations: Sequence[str],
        prefix: str = "",
    ) -> "Mlp":
        layers = []
        for k, act in enumerate(activations):
            try:
                W = np.array(tensors[f"{prefix}{k}.W"], dtype=float)
                b = np.array(tensors[f"{prefix}{k}.b"], dtype=float)
            except KeyError as e:
                raise DimensionError(f"checkpoint is missing tensor {e}") from e
            layers.append(DenseLayer(W, b, act))
        return cls(layers)


def zero_like_grads(params: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def prefixed(prefix: str, tensors: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return {f"{prefix}{k}": v for k, v in tensors.items()}


def mean_squared(y: np.ndarray, target: np.ndarray, weights: Optional[np.ndarray] = None):
    """Mean over rows of the squared error, with the gradient wrt y."""
    diff = y - target
    rows = diff.shape[0] if diff.ndim == 2 else 1
    if weights is None:
        weights = np.ones(diff.shape[-1])
    loss = float(np.sum(weights * diff * diff) / rows)
    return loss, 2.0 * weights * diff / rows
