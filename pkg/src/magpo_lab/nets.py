"""Feed-forward policy and value networks over flat parameter vectors."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels
from . import autodiff as ad


@dataclass
class ParamVector:
    data: np.ndarray
    shapes: list

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        total = sum(int(np.prod(s)) for s in self.shapes)
        if total != self.data.size:
            raise ValueError(f"shape metadata covers {total} entries, data has {self.data.size}")

    def copy(self):
        return ParamVector(self.data.copy(), list(self.shapes))


_ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu, "tanh": ad.tanh}


class MLP:
    """Dense layers with a shared activation and a linear output layer.

    Weights use orthogonal init scaled by sqrt(2) for hidden layers and
    ``out_scale`` for the output layer; biases start at zero.
    """

    def __init__(self, in_dim, hidden, out_dim, activation="relu", out_scale=0.01):
        self.in_dim = in_dim
        self.hidden = tuple(hidden)
        self.out_dim = out_dim
        self.activation = activation
        self.out_scale = out_scale
        dims = (in_dim,) + self.hidden + (out_dim,)
        self.shapes = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            self.shapes += [(d_in, d_out), (d_out,)]

    @property
    def num_params(self):
        return sum(int(np.prod(s)) for s in self.shapes)

    def init(self, rng) -> ParamVector:
        chunks = []
        n_layers = len(self.shapes) // 2
        for k in range(n_layers):
            w_shape, b_shape = self.shapes[2 * k], self.shapes[2 * k + 1]
            gain = self.out_scale if k == n_layers - 1 else np.sqrt(2.0)
            chunks += [_orthogonal(w_shape, rng) * gain, np.zeros(b_shape)]
        return ParamVector(np.concatenate([c.ravel() for c in chunks]), list(self.shapes))

    def apply(self, params, x):
        """Forward pass; ``params`` may be an array, ParamVector or Tensor."""
        if isinstance(params, ParamVector):
            params = params.data
        if not isinstance(params, ad.Tensor):
            return ad.Tensor(self._apply_np(np.asarray(params), np.asarray(x, dtype=np.float64)))
        pieces = ad.split(params, [int(np.prod(s)) for s in self.shapes])
        act = _ACTIVATIONS[self.activation]
        h = ad.as_tensor(x)
        n_layers = len(self.shapes) // 2
        for k in range(n_layers):
            W = pieces[2 * k].reshape(self.shapes[2 * k])
            b = pieces[2 * k + 1]
            h = h @ W + b
            if k < n_layers - 1:
                h = act(h)
        return h

    def _apply_np(self, params, x):
        # inference-only path, no graph bookkeeping
        off = 0
        h = x
        n_layers = len(self.shapes) // 2
        for k in range(n_layers):
            w_shape = self.shapes[2 * k]
            size = w_shape[0] * w_shape[1]
            W = params[off:off + size].reshape(w_shape)
            off += size
            b = params[off:off + w_shape[1]]
            off += w_shape[1]
            h = h @ W + b
            if k < n_layers - 1:
                h = _np_act(self.activation, h)
        return h


def _np_act(name, h):
    if name == "relu":
        return np.maximum(h, 0.0)
    if name == "tanh":
        return np.tanh(h)
    return _kernels.gelu(h)[0]


def _orthogonal(shape, rng):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    return q if shape[0] >= shape[1] else q.T


class PolicyNet(MLP):
    """MLP with a categorical head; ``log_probs`` returns log-softmax output."""

    def __init__(self, in_dim, hidden, num_actions, activation="relu"):
        super().__init__(in_dim, hidden, num_actions, activation, out_scale=0.01)
        self.num_actions = num_actions

    def log_probs(self, params, x):
        return ad.log_softmax(self.apply(params, x))

    def probs(self, params, x):
        return np.exp(self.log_probs(params, x).value)


class ValueNet(MLP):
    def __init__(self, in_dim, hidden, activation="relu"):
        super().__init__(in_dim, hidden, 1, activation, out_scale=1.0)

    def value(self, params, x):
        v = self.apply(params, x)
        return v.reshape(v.shape[:-1])


# ---------------------------------------------------------------------------
# input encoding
# ---------------------------------------------------------------------------


def guider_input_dim(state_dim, num_agents, num_actions):
    return state_dim + (num_agents - 1) * num_actions + num_agents


def learner_input_dim(obs_dim, num_agents, share_ids=True):
    return obs_dim + (num_agents if share_ids else 0)


def guider_inputs(states, prefix_actions, num_agents, num_actions):
    """Inputs for every position at once, teacher-forced on ``prefix_actions``.

    ``states`` (B, state_dim); ``prefix_actions`` (B, n) in position order.
    Position j sees the one-hot actions of positions < j in slots
    ``0..j-1`` (later slots zero) and a one-hot of j.
    Returns (B, n, guider_input_dim).
    """
    B = states.shape[0]
    n, A = num_agents, num_actions
    slots = np.zeros((B, n, max(n - 1, 0) * A))
    if n > 1:
        onehot = np.zeros((B, n - 1, A))
        np.put_along_axis(onehot, prefix_actions[:, : n - 1, None], 1.0, axis=2)
        flat = onehot.reshape(B, (n - 1) * A)
        for j in range(1, n):
            slots[:, j, : j * A] = flat[:, : j * A]
    pos = np.broadcast_to(np.eye(n), (B, n, n))
    st = np.broadcast_to(states[:, None, :], (B, n, states.shape[1]))
    return np.concatenate([st, slots, pos], axis=2)


def guider_position_input(states, prior_actions, position, num_agents, num_actions):
    """Input rows for one position; ``prior_actions`` (B, position)."""
    B = states.shape[0]
    prior_actions = np.asarray(prior_actions, dtype=np.int64).reshape(B, -1)
    if prior_actions.shape[1] != position:
        raise ValueError(f"position {position} needs {position} prior actions, "
                         f"got {prior_actions.shape[1]}")
    slots = np.zeros((B, max(num_agents - 1, 0) * num_actions))
    for k in range(position):
        slots[np.arange(B), k * num_actions + prior_actions[:, k]] = 1.0
    pos = np.zeros((B, num_agents))
    pos[:, position] = 1.0
    return np.concatenate([states, slots, pos], axis=1)


def learner_inputs(obs, share_ids=True):
    """(B, n, obs_dim) -> (B, n, obs_dim [+ n]) with one-hot agent ids."""
    if not share_ids:
        return obs
    B, n, _ = obs.shape
    return np.concatenate([obs, np.broadcast_to(np.eye(n), (B, n, n))], axis=2)


def guider_forward(net: PolicyNet, params, state, prior_actions):
    """Action distribution of the next position given state and prefix."""
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    prior = np.asarray(prior_actions, dtype=np.int64).reshape(state.shape[0], -1)
    position = prior.shape[1]
    n = (net.in_dim - state.shape[1] + net.num_actions) // (net.num_actions + 1)
    if guider_input_dim(state.shape[1], n, net.num_actions) != net.in_dim or position >= n:
        raise ValueError("state/prefix dimensions do not match the guider network")
    x = guider_position_input(state, prior, position, n, net.num_actions)
    return net.probs(params, x)


def learner_forward(net: PolicyNet, params, observation, agent_id=None, num_agents=None):
    """Action distribution from a local observation (plus agent id if shared)."""
    obs = np.atleast_2d(np.asarray(observation, dtype=np.float64))
    if agent_id is not None:
        ids = np.zeros((obs.shape[0], num_agents))
        ids[:, agent_id] = 1.0
        obs = np.concatenate([obs, ids], axis=1)
    if obs.shape[1] != net.in_dim:
        raise ValueError(f"observation width {obs.shape[1]} != network input {net.in_dim}")
    return net.probs(params, obs)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, size, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, g):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return params - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(g, max_norm):
    norm = float(np.sqrt(g @ g))
    if max_norm is not None and norm > max_norm:
        g = g * (max_norm / norm)
    return g, norm


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"MAGPOCK1"


def save_checkpoint(path, vectors: dict, seed: int, step: int):
    """Header (JSON shape metadata, seed, step) + little-endian float64 data."""
    names = sorted(vectors)
    header = {
        "seed": int(seed),
        "step": int(step),
        "vectors": [{"name": k, "shapes": [list(s) for s in vectors[k].shapes],
                     "size": int(vectors[k].data.size)} for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(vectors[k].data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(vectors, seed, step)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    (hlen,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    off = 12 + hlen
    vectors = {}
    for entry in header["vectors"]:
        n = entry["size"]
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).astype(np.float64)
        off += 8 * n
        vectors[entry["name"]] = ParamVector(data, [tuple(s) for s in entry["shapes"]])
    return vectors, header["seed"], header["step"]
