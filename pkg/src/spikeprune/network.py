"""Feed-forward spiking networks unrolled over T timesteps.

The static input is injected as current at every timestep (direct encoding).
The classifier head is a membrane-accumulator: the final linear layer's
output is averaged over time without a fire step, so the logits feed a
standard cross-entropy loss. Every hidden weighted layer is followed by a
LIF layer (conv layers through a batch-norm).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, StateError
from .layers import (
    LIF,
    AvgPool2d,
    BatchNorm2d,
    Conv2d,
    Flatten,
    Layer,
    LIFParams,
    Linear,
)

WEIGHTED_KINDS = ("conv", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int | None = None
    out_channels: int | None = None
    kernel: int | None = None
    stride: int | None = None
    padding: int | None = None
    window: int | None = None
    in_features: int | None = None
    out_features: int | None = None

    def to_dict(self):
        d = {"kind": self.kind}
        for k, v in self.__dict__.items():
            if k != "kind" and v is not None:
                d[k] = v
        return d

    @staticmethod
    def from_dict(d):
        return LayerSpec(**d)


@dataclass
class NetworkSpec:
    """Ordered layer descriptors plus the timestep count and membrane constants."""

    input_shape: tuple
    layers: list
    t_steps: int = 5
    lif: LIFParams = field(default_factory=LIFParams)

    def to_dict(self):
        return {
            "input_shape": list(self.input_shape),
            "layers": [l.to_dict() for l in self.layers],
            "t_steps": self.t_steps,
            "lif": self.lif.to_dict(),
        }

    @staticmethod
    def from_dict(d):
        return NetworkSpec(
            input_shape=tuple(d["input_shape"]),
            layers=[LayerSpec.from_dict(l) for l in d["layers"]],
            t_steps=int(d["t_steps"]),
            lif=LIFParams(**d["lif"]),
        )


def vgg_mini(input_shape=(1, 8, 8), channels=(8, 16), classes=3, kernel=3, pool=2,
             t_steps=5, lif=None) -> NetworkSpec:
    """VGG-style stack of conv+BN+LIF blocks with one average pool per block."""
    c, h, w = input_shape
    layers = []
    prev = c
    for ch in channels:
        layers.append(LayerSpec("conv", in_channels=prev, out_channels=ch,
                                kernel=kernel, stride=1, padding=kernel // 2))
        layers.append(LayerSpec("batchnorm", out_channels=ch))
        layers.append(LayerSpec("lif"))
        layers.append(LayerSpec("avgpool", window=pool, stride=pool))
        prev = ch
        h //= pool
        w //= pool
    layers.append(LayerSpec("flatten"))
    layers.append(LayerSpec("linear", in_features=prev * h * w, out_features=classes))
    return NetworkSpec(input_shape=tuple(input_shape), layers=layers,
                       t_steps=t_steps, lif=lif or LIFParams())


def trace_shapes(spec: NetworkSpec) -> list:
    """Activation shape after each layer; raises DimensionError if layers do not compose."""
    shape = tuple(spec.input_shape)
    out = []
    for i, ls in enumerate(spec.layers):
        if ls.kind == "conv":
            if len(shape) != 3 or shape[0] != ls.in_channels:
                raise DimensionError(f"layer {i}: conv expects [{ls.in_channels},H,W], got {shape}")
            h = (shape[1] + 2 * ls.padding - ls.kernel) // ls.stride + 1
            w = (shape[2] + 2 * ls.padding - ls.kernel) // ls.stride + 1
            if h <= 0 or w <= 0:
                raise DimensionError(f"layer {i}: conv output collapses to {h}x{w}")
            shape = (ls.out_channels, h, w)
        elif ls.kind == "batchnorm":
            if len(shape) != 3 or shape[0] != ls.out_channels:
                raise DimensionError(f"layer {i}: batchnorm width {ls.out_channels} vs {shape}")
        elif ls.kind == "avgpool":
            if len(shape) != 3:
                raise DimensionError(f"layer {i}: avgpool needs a spatial input, got {shape}")
            h = (shape[1] - ls.window) // ls.stride + 1
            w = (shape[2] - ls.window) // ls.stride + 1
            if h <= 0 or w <= 0:
                raise DimensionError(f"layer {i}: pool output collapses to {h}x{w}")
            shape = (shape[0], h, w)
        elif ls.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif ls.kind == "linear":
            if len(shape) != 1 or shape[0] != ls.in_features:
                raise DimensionError(
                    f"layer {i}: linear expects {ls.in_features} features, got {shape}"
                )
            shape = (ls.out_features,)
        elif ls.kind == "lif":
            pass
        else:
            raise DimensionError(f"layer {i}: unknown kind {ls.kind!r}")
        out.append(shape)
    return out


def validate_spec(spec: NetworkSpec):
    """Shape composition plus the fire-placement rule.

    Every conv is followed by batchnorm then LIF; every linear except the
    final accumulator head is followed by LIF.
    """
    trace_shapes(spec)
    kinds = [l.kind for l in spec.layers]
    last_weighted = max(i for i, k in enumerate(kinds) if k in WEIGHTED_KINDS)
    for i, k in enumerate(kinds):
        if k == "conv":
            if kinds[i + 1:i + 3] != ["batchnorm", "lif"]:
                raise DimensionError(f"layer {i}: conv must be followed by batchnorm then lif")
        elif k == "linear" and i != last_weighted:
            if i + 1 >= len(kinds) or kinds[i + 1] != "lif":
                raise DimensionError(f"layer {i}: hidden linear must be followed by lif")
    if kinds[last_weighted] != "linear":
        raise DimensionError("the network head must be a linear layer")
    if spec.t_steps < 1:
        raise DimensionError(f"t_steps must be >= 1, got {spec.t_steps}")


class SpikingNetwork:
    """A network instance: owns the layer parameters and forward/backward caches.

    Single-writer: forward/backward mutate cached state and must not run
    concurrently on one instance. Read-only evaluation of distinct instances
    is independent.
    """

    def __init__(self, spec: NetworkSpec, rng: np.random.Generator):
        validate_spec(spec)
        self.spec = spec
        self.layers: list[Layer] = []
        for ls in spec.layers:
            if ls.kind == "conv":
                self.layers.append(Conv2d(ls.in_channels, ls.out_channels, ls.kernel,
                                          ls.stride, ls.padding, rng))
            elif ls.kind == "batchnorm":
                self.layers.append(BatchNorm2d(ls.out_channels))
            elif ls.kind == "lif":
                self.layers.append(LIF(spec.lif))
            elif ls.kind == "avgpool":
                self.layers.append(AvgPool2d(ls.window, ls.stride))
            elif ls.kind == "flatten":
                self.layers.append(Flatten())
            elif ls.kind == "linear":
                self.layers.append(Linear(ls.in_features, ls.out_features, rng))
        self._head_index = max(
            i for i, l in enumerate(self.layers) if l.kind in WEIGHTED_KINDS
        )
        self._forward_done = False
        self.features = None

    # ---- parameter access -------------------------------------------------

    def parameters(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params().items():
                out[f"layers.{i}.{name}"] = arr
        return out

    def set_parameter(self, name: str, value: np.ndarray):
        _, idx, pname = name.split(".")
        layer = self.layers[int(idx)]
        cur = layer.params()[pname]
        if cur.shape != value.shape:
            raise DimensionError(f"{name}: shape {value.shape} != expected {cur.shape}")
        setattr(layer, pname, np.array(value, dtype=np.float64))

    def grads(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            for name, arr in layer.grads().items():
                out[f"layers.{i}.{name}"] = arr
        return out

    def state_arrays(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, BatchNorm2d):
                for name, arr in layer.state_arrays().items():
                    out[f"layers.{i}.{name}"] = arr
        return out

    def set_state_array(self, name: str, value: np.ndarray):
        _, idx, sname = name.split(".")
        setattr(self.layers[int(idx)], sname, np.array(value, dtype=np.float64))

    def clone(self) -> "SpikingNetwork":
        """Independent copy with identical parameters and running statistics."""
        other = SpikingNetwork(self.spec, np.random.default_rng(0))
        for name, arr in self.parameters().items():
            other.set_parameter(name, arr.copy())
        for name, arr in self.state_arrays().items():
            other.set_state_array(name, arr.copy())
        return other

    def prunable(self) -> dict:
        """Conv and linear weight tensors, in layer order (biases and BN excluded)."""
        return {
            f"layers.{i}.weight": layer.weight
            for i, layer in enumerate(self.layers)
            if layer.kind in WEIGHTED_KINDS
        }

    # ---- criticality wiring ------------------------------------------------

    def lif_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if isinstance(l, LIF)]

    def lif_states(self) -> dict:
        """Current LIFState per LIF layer index; StateError if any is missing."""
        out = {}
        for i in self.lif_indices():
            st = self.layers[i].state
            if st is None:
                raise StateError("no recorded LIF state; run forward first")
            out[i] = st
        return out

    def scoring_lif(self, layer_index: int) -> int | None:
        """The LIF layer whose units score layer_index's outputs (None for the head)."""
        for j in range(layer_index + 1, len(self.layers)):
            k = self.layers[j].kind
            if k == "lif":
                return j
            if k in WEIGHTED_KINDS or k in ("avgpool", "flatten"):
                return None
        return None

    # ---- execution ----------------------------------------------------------

    def set_relaxed(self, on: bool):
        for layer in self.layers:
            if isinstance(layer, LIF):
                layer.relaxed = bool(on)

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Run the net on x [N, C, H, W]; returns logits [N, classes]."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.spec.input_shape):
            raise DimensionError(
                f"input shape {x.shape[1:]} != network input {tuple(self.spec.input_shape)}"
            )
        t = self.spec.t_steps
        acts = np.broadcast_to(x, (t,) + x.shape).copy()
        for i, layer in enumerate(self.layers):
            if i == self._head_index:
                self.features = acts.mean(axis=0)
            acts = layer.forward(acts, training)
        self._forward_done = True
        return acts.mean(axis=0)

    def backward(self, dlogits: np.ndarray):
        """Propagate loss gradient through time and layers; fills layer grads."""
        if not self._forward_done:
            raise StateError("backward before forward")
        t = self.spec.t_steps
        g = np.broadcast_to(dlogits / t, (t,) + dlogits.shape).copy()
        for layer in reversed(self.layers):
            g = layer.backward(g)
        self._forward_done = False
