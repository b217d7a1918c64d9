"""Tiny neural net core: flat parameter vectors, an MLP with tanh hidden
layers and a linear head, analytic backprop, and Adam. Everything is plain
float64 numpy so gradients can be checked against finite differences."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import InvariantError, NumericError


def _shape_len(shape: tuple[int, ...]) -> int:
    n = 1
    for d in shape:
        n *= d
    return n


@dataclass(frozen=True)
class ParamSet:
    """Flat parameter vector plus the shape descriptors that partition it."""

    shapes: tuple[tuple[int, ...], ...]
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        offsets = [0]
        for s in self.shapes:
            offsets.append(offsets[-1] + _shape_len(s))
        object.__setattr__(self, "_offsets", tuple(offsets))
        if self.values.shape != (offsets[-1],):
            raise InvariantError(
                f"flat vector has length {self.values.shape}, shapes need "
                f"{offsets[-1]}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericError("parameter vector contains non-finite values")

    @property
    def size(self) -> int:
        return self.values.size

    def offset(self, i: int) -> int:
        return self._offsets[i]

    def view(self, i: int) -> np.ndarray:
        """Reshaped window onto slot i of the flat vector (shares memory)."""
        return self.values[self._offsets[i]:self._offsets[i + 1]].reshape(
            self.shapes[i]
        )

    def with_values(self, values: np.ndarray) -> "ParamSet":
        return ParamSet(self.shapes, values, self.seed)

    def copy(self) -> "ParamSet":
        return self.with_values(self.values.copy())

    def checksum(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()


def mlp_shapes(sizes: tuple[int, ...]) -> tuple[tuple[int, ...], ...]:
    shapes: list[tuple[int, ...]] = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        shapes.append((b, a))
        shapes.append((b,))
    return tuple(shapes)


class Mlp:
    """Feed-forward net: tanh on hidden layers, linear output.

    A single-layer configuration (len(sizes) == 2) is purely linear, which the
    tests use for identity checks. Parameters live in the *leading* slots of a
    ParamSet so callers can append extra blocks (e.g. token embeddings).
    """

    def __init__(self, sizes: tuple[int, ...]):
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvariantError(f"bad layer sizes {sizes}")
        self.sizes = tuple(sizes)
        self.shapes = mlp_shapes(self.sizes)
        self.n_layers = len(sizes) - 1

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes)

    def init_params(
        self, seed: int, extra_shapes: tuple[tuple[int, ...], ...] = ()
    ) -> ParamSet:
        """Uniform in [-s, s] with s = 1/sqrt(fan_in), per weight block."""
        rng = np.random.default_rng(seed)
        chunks = []
        for shape in self.shapes + tuple(extra_shapes):
            fan_in = shape[-1] if len(shape) > 1 else self.sizes[-1]
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append(rng.uniform(-bound, bound, size=int(np.prod(shape))))
        return ParamSet(self.shapes + tuple(extra_shapes), np.concatenate(chunks), seed)

    def forward(self, params: ParamSet, x: np.ndarray) -> tuple[np.ndarray, list]:
        """Returns (output, cache); cache feeds backward()."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.sizes[0],):
            raise InvariantError(f"input shape {x.shape} != ({self.sizes[0]},)")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite input to forward pass")
        cache = [x]
        h = x
        for i in range(self.n_layers):
            w, b = params.view(2 * i), params.view(2 * i + 1)
            z = w @ h + b
            h = np.tanh(z) if i < self.n_layers - 1 else z
            cache.append(h)
        return h, cache

    def backward(
        self, params: ParamSet, cache: list, grad_output: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Gradient of output . grad_output w.r.t. every parameter and the input.

        Returns (grad_flat, grad_input); grad_flat has the full length of
        params.values with zeros outside the MLP slots.
        """
        grad_output = np.asarray(grad_output, dtype=float)
        if grad_output.shape != (self.sizes[-1],):
            raise InvariantError(
                f"grad_output shape {grad_output.shape} != ({self.sizes[-1]},)"
            )
        grads = np.zeros_like(params.values)
        gp = ParamSet(params.shapes, grads, params.seed)
        g = grad_output
        for i in reversed(range(self.n_layers)):
            h_in, h_out = cache[i], cache[i + 1]
            if i < self.n_layers - 1:  # undo tanh
                g = g * (1.0 - h_out * h_out)
            np.outer(g, h_in, out=gp.view(2 * i))
            gp.view(2 * i + 1)[:] = g
            g = params.view(2 * i).T @ g
        return grads, g


@dataclass
class OptimizerState:
    """Adam state for one ParamSet."""

    m: np.ndarray
    v: np.ndarray
    step: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.m.shape != self.v.shape:
            raise InvariantError("moment vectors differ in length")
        if self.step < 0:
            raise InvariantError("step counter must be >= 0")


def init_optimizer(params: ParamSet, lr: float) -> OptimizerState:
    return OptimizerState(
        m=np.zeros(params.size), v=np.zeros(params.size), step=0, lr=lr
    )


def optimizer_step(
    params: ParamSet, grads: np.ndarray, state: OptimizerState
) -> tuple[ParamSet, OptimizerState]:
    """One Adam update with bias correction; inputs are left untouched."""
    grads = np.asarray(grads, dtype=float)
    if grads.shape != params.values.shape:
        raise InvariantError("gradient length does not match parameters")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient; parameters unchanged")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_values = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = OptimizerState(
        m=m, v=v, step=t, lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps
    )
    return params.with_values(new_values), new_state


def write_params(params: ParamSet, path, step: int = 0) -> None:
    """Checkpoint: header (shapes, seed, step) then one value per line."""
    shape_txt = " ".join(",".join(str(d) for d in s) for s in params.shapes)
    lines = [f"{params.seed} {step} {len(params.shapes)}", shape_txt]
    lines.extend(f"{x:.17g}" for x in params.values)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params(path) -> tuple[ParamSet, int]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    seed, step, n_shapes = (int(x) for x in lines[0].split())
    shapes = tuple(tuple(int(d) for d in tok.split(",")) for tok in lines[1].split())
    if len(shapes) != n_shapes:
        raise InvariantError(f"checkpoint {path}: shape count mismatch")
    values = np.array([float(x) for x in lines[2:]])
    return ParamSet(shapes, values, seed), step
