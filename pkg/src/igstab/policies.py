"""State-feedback policies: zero-bias two-layer networks, linear gains, and
affine combinations.

Mixing and de-mixing keep policies symbolic (weighted term lists) instead of
distilling them into a single network; the iterative learner's bookkeeping
relies on the mixture weights being exact.  Weights are therefore carried as
``fractions.Fraction`` values (every float is a dyadic rational, so the weight
algebra is exact), and flattening groups repeated base policies so fixed
points like ``mix(pi, pi, a) == pi`` hold identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, PreconditionError

Activation = str  # "tanh" | "relu" | "identity"

_ACTIVATIONS: dict[str, Tuple[Callable, Callable]] = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    # Subgradient 0 at the kink, matching the loss convention downstream.
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0.0).astype(float)),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
}


def _check_input(x, in_dim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != in_dim:
        raise DimensionError("x", ("...", in_dim), arr.shape)
    return arr


class LinearPolicy:
    """``pi(x) = K x`` for a fixed gain matrix K (d x n)."""

    def __init__(self, gain):
        gain = np.asarray(gain, dtype=float)
        if gain.ndim != 2:
            raise DimensionError("gain", "(d, n)", gain.shape)
        gain.setflags(write=False)
        self.gain = gain

    @property
    def input_dim(self) -> int:
        return self.gain.shape[1]

    @property
    def output_dim(self) -> int:
        return self.gain.shape[0]

    def __call__(self, x):
        x = _check_input(x, self.input_dim)
        return x @ self.gain.T

    def __eq__(self, other):
        return isinstance(other, LinearPolicy) and np.array_equal(self.gain, other.gain)

    __hash__ = object.__hash__

    def to_json_dict(self) -> dict:
        return {"kind": "linear", "gain": [[float(v) for v in row] for row in self.gain]}


class MlpPolicy:
    """Zero-bias two-layer network ``pi(x) = W2 act(W1 x)``.

    The missing biases together with an odd (or zero-preserving) activation
    force ``pi(0) = 0`` structurally.  Parameters are exposed as the flat
    vector ``[W1.ravel(), W2.ravel()]`` of length ``hidden * (in + out)``.
    """

    def __init__(self, w1, w2, activation: Activation = "tanh"):
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        if activation not in _ACTIVATIONS:
            raise PreconditionError(f"unknown activation {activation!r}")
        if w1.ndim != 2 or w2.ndim != 2 or w2.shape[1] != w1.shape[0]:
            raise DimensionError("w2", ("out_dim", w1.shape[0]), w2.shape)
        w1.setflags(write=False)
        w2.setflags(write=False)
        self.w1 = w1
        self.w2 = w2
        self.activation = activation

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def num_params(self) -> int:
        return self.w1.size + self.w2.size

    def __call__(self, x):
        x = _check_input(x, self.input_dim)
        act = _ACTIVATIONS[self.activation][0]
        return act(x @ self.w1.T) @ self.w2.T

    def params(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2.ravel()])

    def with_params(self, theta: np.ndarray) -> "MlpPolicy":
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.num_params,):
            raise DimensionError("theta", (self.num_params,), theta.shape)
        k = self.w1.size
        w1 = theta[:k].reshape(self.w1.shape)
        w2 = theta[k:].reshape(self.w2.shape)
        return MlpPolicy(w1, w2, self.activation)

    def project(self, radius: float) -> "MlpPolicy":
        """Project the parameter vector onto the 2-norm ball of given radius."""
        theta = self.params()
        norm = float(np.linalg.norm(theta))
        if norm <= radius:
            return self
        return self.with_params(theta * (radius / norm))

    def __eq__(self, other):
        return (
            isinstance(other, MlpPolicy)
            and self.activation == other.activation
            and np.array_equal(self.w1, other.w1)
            and np.array_equal(self.w2, other.w2)
        )

    __hash__ = object.__hash__

    def grad_batch(self, x_batch: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Summed parameter gradient of ``sum_i upstream_i . pi(x_i)``."""
        x_batch = np.atleast_2d(np.asarray(x_batch, dtype=float))
        upstream = np.atleast_2d(np.asarray(upstream, dtype=float))
        act, act_prime = _ACTIVATIONS[self.activation]
        z = x_batch @ self.w1.T
        h = act(z)
        dw2 = upstream.T @ h
        dh = upstream @ self.w2
        dz = dh * act_prime(z)
        dw1 = dz.T @ x_batch
        return np.concatenate([dw1.ravel(), dw2.ravel()])

    def to_json_dict(self) -> dict:
        return {
            "kind": "mlp",
            "in_dim": self.input_dim,
            "hidden": self.hidden_dim,
            "out_dim": self.output_dim,
            "activation": self.activation,
            "weights": [float(v) for v in self.params()],
        }


@dataclass(frozen=True)
class AffineTerm:
    weight: Fraction
    base: Union[LinearPolicy, MlpPolicy, "AffinePolicy"]


class AffinePolicy:
    """Weighted sum of base policies, with exact rational weights.

    Weights may be negative: the final de-mixing step subtracts the residual
    expert component.  Construction flattens nested affine policies and merges
    repeated bases, so algebraically-equal mixtures compare equal term-wise.
    """

    def __init__(self, terms: Sequence[Tuple[Union[float, Fraction], object]]):
        flat: List[Tuple[Fraction, object]] = []
        for weight, base in terms:
            w = weight if isinstance(weight, Fraction) else Fraction(float(weight))
            if isinstance(base, AffinePolicy):
                flat.extend((w * tw, tb) for tw, tb in base.terms)
            else:
                flat.append((w, base))
        merged: List[Tuple[Fraction, object]] = []
        index: dict[int, int] = {}
        for w, base in flat:
            key = id(base)
            if key in index:
                j = index[key]
                merged[j] = (merged[j][0] + w, base)
            else:
                index[key] = len(merged)
                merged.append((w, base))
        merged = [(w, b) for w, b in merged if w != 0]
        if not merged:
            raise PreconditionError("affine policy needs at least one nonzero term")
        dims = {(b.input_dim, b.output_dim) for _, b in merged}
        if len(dims) != 1:
            raise DimensionError("terms", "matching dims", sorted(dims))
        self.terms: Tuple[Tuple[Fraction, object], ...] = tuple(merged)
        self.input_dim, self.output_dim = next(iter(dims))

    def __call__(self, x):
        out = None
        for w, base in self.terms:
            contribution = float(w) * base(x)
            out = contribution if out is None else out + contribution
        return out

    def __eq__(self, other):
        return (
            isinstance(other, AffinePolicy)
            and len(self.terms) == len(other.terms)
            and all(
                w1 == w2 and (b1 is b2 or b1 == b2)
                for (w1, b1), (w2, b2) in zip(self.terms, other.terms)
            )
        )

    __hash__ = object.__hash__

    def weight_of(self, base) -> Fraction:
        """Exact mixture weight of a specific base policy (0 if absent)."""
        for w, b in self.terms:
            if b is base:
                return w
        return Fraction(0)

    def weight_sum(self) -> Fraction:
        return sum((w for w, _ in self.terms), Fraction(0))

    def to_json_dict(self) -> dict:
        return {
            "kind": "affine",
            "terms": [
                {
                    "weight": {"num": str(w.numerator), "den": str(w.denominator)},
                    "base": to_json_dict(b),
                }
                for w, b in self.terms
            ],
        }


Policy = Union[LinearPolicy, MlpPolicy, AffinePolicy]


def _collapse(policy: Policy) -> Policy:
    """Unwrap a single-term, weight-one affine policy to its base."""
    if isinstance(policy, AffinePolicy) and len(policy.terms) == 1:
        w, base = policy.terms[0]
        if w == 1:
            return base
    return policy


def evaluate(policy: Policy, x) -> np.ndarray:
    """Deterministic policy evaluation (dims checked)."""
    return policy(x)


def mix(p1: Policy, p2: Policy, alpha: float) -> Policy:
    """Convex combination ``(1 - alpha) p1 + alpha p2`` with exact weights."""
    a = Fraction(float(alpha))
    if not 0 < a <= 1:
        raise PreconditionError(f"alpha must lie in (0, 1], got {alpha}")
    if (p1.input_dim, p1.output_dim) != (p2.input_dim, p2.output_dim):
        raise DimensionError("p2", (p1.input_dim, p1.output_dim), (p2.input_dim, p2.output_dim))
    return _collapse(AffinePolicy([(1 - a, p1), (a, p2)]))


def demix_final(pi_prev: Policy, pi_hat: Policy, pi_star: Policy, alpha: float, epochs: int) -> Policy:
    """Remove the residual expert component after the last mixing round.

    Returns ``[(1-a) pi_prev + a pi_hat - (1-a)^E pi_star] / (1 - (1-a)^E)``;
    the three weights sum to one exactly.
    """
    a = Fraction(float(alpha))
    if a == 0:
        raise PreconditionError("alpha must be positive to de-mix")
    if not 0 < a <= 1:
        raise PreconditionError(f"alpha must lie in (0, 1], got {alpha}")
    if epochs < 1:
        raise PreconditionError("epochs must be >= 1")
    residual = (1 - a) ** epochs
    z = 1 - residual
    if z <= 0:
        raise PreconditionError("(1 - alpha)^epochs must be < 1")
    return _collapse(
        AffinePolicy(
            [((1 - a) / z, pi_prev), (a / z, pi_hat), (-residual / z, pi_star)]
        )
    )


def random_mlp(
    in_dim: int, hidden: int, out_dim: int, activation: Activation = "tanh", seed: int = 0
) -> MlpPolicy:
    """Seeded Gaussian init scaled by 1/sqrt(fan_in); reproducible."""
    if min(in_dim, hidden, out_dim) <= 0:
        raise PreconditionError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((hidden, in_dim)) / np.sqrt(in_dim)
    w2 = rng.standard_normal((out_dim, hidden)) / np.sqrt(hidden)
    return MlpPolicy(w1, w2, activation)


def grad_wrt_params(policy: MlpPolicy, x, upstream) -> np.ndarray:
    """Gradient of ``upstream . pi(x, theta)`` with respect to theta."""
    if not isinstance(policy, MlpPolicy):
        raise PreconditionError("parameter gradients are defined for MlpPolicy only")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    upstream = np.asarray(upstream, dtype=float).reshape(1, -1)
    if x.shape[1] != policy.input_dim:
        raise DimensionError("x", (policy.input_dim,), (x.shape[1],))
    if upstream.shape[1] != policy.output_dim:
        raise DimensionError("upstream", (policy.output_dim,), (upstream.shape[1],))
    return policy.grad_batch(x, upstream)


def to_json_dict(policy: Policy) -> dict:
    return policy.to_json_dict()


def from_json_dict(data: dict) -> Policy:
    kind = data["kind"]
    if kind == "linear":
        return LinearPolicy(np.array(data["gain"], dtype=float))
    if kind == "mlp":
        hidden, in_dim, out_dim = data["hidden"], data["in_dim"], data["out_dim"]
        theta = np.asarray(data["weights"], dtype=float)
        w1 = theta[: hidden * in_dim].reshape(hidden, in_dim)
        w2 = theta[hidden * in_dim :].reshape(out_dim, hidden)
        return MlpPolicy(w1, w2, data["activation"])
    if kind == "affine":
        terms = []
        for item in data["terms"]:
            w = Fraction(int(item["weight"]["num"]), int(item["weight"]["den"]))
            terms.append((w, from_json_dict(item["base"])))
        return AffinePolicy(terms)
    raise PreconditionError(f"unknown policy kind {kind!r}")


def save_policy(policy: Policy, path) -> None:
    with open(path, "w") as fh:
        json.dump(to_json_dict(policy), fh, indent=2)


def load_policy(path) -> Policy:
    with open(path) as fh:
        return from_json_dict(json.load(fh))
