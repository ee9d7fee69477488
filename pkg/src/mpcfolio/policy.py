"""Actor-critic policy over flattened observation features.

The actor maps the N x 11 observation to N+1 allocation logits; a softmax
projects them onto the simplex. The critic produces a scalar state value on
its own trunk by default (a shared trunk is available behind a flag). The
stochastic head adds a state-independent learnable log-std and samples logits
by reparameterization, so sampled allocations stay differentiable.

Parameters live in plain float64 arrays with a stable flat view used for
checkpointing; gradients come from the tape in `autodiff`.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .env import EnvConfig, PortfolioState, all_cash_weights, softmax_weights, step
from .errors import ConfigError, NumericError, ShapeError, TrainingError
from .marketdata import FeatureView, MarketSeries, StateFeatures

LOG_2PI = math.log(2.0 * math.pi)

CHECKPOINT_FORMAT = "mpcfolio-policy"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class PolicyConfig:
    n_assets: int
    hidden: tuple = (128, 128)
    mode: str = "deterministic"  # or "stochastic"
    shared_trunk: bool = False
    init_seed: int = 0
    feature_dim: int = 11

    def __post_init__(self):
        if self.mode not in ("deterministic", "stochastic"):
            raise ConfigError(f"unknown policy mode {self.mode!r}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden sizes must be >= 1, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def input_dim(self) -> int:
        return self.n_assets * self.feature_dim

    @property
    def action_dim(self) -> int:
        return self.n_assets + 1

    def to_dict(self) -> dict:
        return {
            "n_assets": self.n_assets,
            "hidden": list(self.hidden),
            "mode": self.mode,
            "shared_trunk": self.shared_trunk,
            "init_seed": self.init_seed,
            "feature_dim": self.feature_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"])
        return cls(**d)


def _orthogonal(rng, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class PolicyParams:
    """Named float64 arrays with a stable flat view; architecture is fixed."""

    TRUNK_GAIN = 1.0
    HEAD_GAIN = 0.01
    LOG_STD_INIT = -1.0

    def __init__(self, config: PolicyConfig, values: dict | None = None):
        self.config = config
        if values is not None:
            self.values = {k: np.array(v, dtype=np.float64) for k, v in values.items()}
        else:
            self.values = self._init_values()
        self._check_shapes()

    def _layer_dims(self) -> list:
        dims = [self.config.input_dim, *self.config.hidden]
        return list(zip(dims[:-1], dims[1:]))

    def _init_values(self) -> dict:
        cfg = self.config
        rng = np.random.default_rng(cfg.init_seed)
        vals: dict[str, np.ndarray] = {}
        for i, (din, dout) in enumerate(self._layer_dims()):
            vals[f"actor.w{i}"] = _orthogonal(rng, dout, din, self.TRUNK_GAIN)
            vals[f"actor.b{i}"] = np.zeros(dout)
        vals["actor.head_w"] = _orthogonal(rng, cfg.action_dim, cfg.hidden[-1], self.HEAD_GAIN)
        vals["actor.head_b"] = np.zeros(cfg.action_dim)
        if cfg.mode == "stochastic":
            vals["actor.log_std"] = np.full(cfg.action_dim, self.LOG_STD_INIT)
        if not cfg.shared_trunk:
            for i, (din, dout) in enumerate(self._layer_dims()):
                vals[f"critic.w{i}"] = _orthogonal(rng, dout, din, self.TRUNK_GAIN)
                vals[f"critic.b{i}"] = np.zeros(dout)
        vals["critic.head_w"] = _orthogonal(rng, 1, cfg.hidden[-1], self.HEAD_GAIN)
        vals["critic.head_b"] = np.zeros(1)
        return vals

    def _check_shapes(self):
        for name, arr in self.values.items():
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"non-finite parameter {name}")

    @property
    def names(self) -> list:
        return list(self.values)

    def actor_names(self) -> list:
        return [n for n in self.values if n.startswith("actor.")]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.values[n].ravel() for n in self.values])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        sizes = sum(v.size for v in self.values.values())
        if flat.shape != (sizes,):
            raise ShapeError(f"flat vector has shape {flat.shape}, expected ({sizes},)")
        offset = 0
        for name, arr in self.values.items():
            block = flat[offset : offset + arr.size]
            self.values[name] = block.reshape(arr.shape).copy()
            offset += arr.size

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, values=self.values)

    def n_params(self) -> int:
        return sum(v.size for v in self.values.values())


# -- forward passes ----------------------------------------------------------


def _flatten_obs(obs) -> np.ndarray:
    if isinstance(obs, StateFeatures):
        return obs.flat()
    return np.asarray(obs, dtype=np.float64).ravel()


def _trunk(params: PolicyParams, prefix: str, x: np.ndarray) -> np.ndarray:
    h = x
    for i in range(len(params.config.hidden)):
        h = np.tanh(params.values[f"{prefix}.w{i}"] @ h + params.values[f"{prefix}.b{i}"])
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activations in {prefix} layer {i}")
    return h


def actor_logits(params: PolicyParams, obs) -> np.ndarray:
    x = _flatten_obs(obs)
    h = _trunk(params, "actor", x)
    out = params.values["actor.head_w"] @ h + params.values["actor.head_b"]
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite actor head output")
    return out


def value(params: PolicyParams, obs) -> float:
    x = _flatten_obs(obs)
    prefix = "actor" if params.config.shared_trunk else "critic"
    h = _trunk(params, prefix, x)
    out = params.values["critic.head_w"] @ h + params.values["critic.head_b"]
    if not np.isfinite(out[0]):
        raise NumericError("non-finite critic head output")
    return float(out[0])


@dataclass
class ActOutput:
    logits: np.ndarray
    weights: np.ndarray
    log_prob: float | None = None


def act(params: PolicyParams, obs, mode: str | None = None, rng=None) -> ActOutput:
    """Allocation for one observation; stochastic mode reparameterizes logits."""
    mode = mode or params.config.mode
    mean = actor_logits(params, obs)
    if mode == "deterministic":
        return ActOutput(logits=mean, weights=softmax_weights(mean))
    if params.config.mode != "stochastic":
        raise ConfigError("policy was built deterministic; cannot sample")
    if rng is None:
        raise ConfigError("stochastic mode requires an rng")
    std = np.exp(params.values["actor.log_std"])
    z = rng.standard_normal(params.config.action_dim)
    logits = mean + std * z
    log_prob = float(
        -0.5 * np.sum(((logits - mean) / std) ** 2)
        - np.sum(params.values["actor.log_std"])
        - 0.5 * LOG_2PI * params.config.action_dim
    )
    return ActOutput(logits=logits, weights=softmax_weights(logits), log_prob=log_prob)


class Agent:
    """Thin adapter giving `env.run_episode` a stateless act() surface."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def act(self, obs, mode=None, rng=None) -> ActOutput:
        return act(self.params, obs, mode=mode, rng=rng)


# -- taped forward passes -----------------------------------------------------


def make_leaves(params: PolicyParams, scope: str = "actor") -> dict:
    """Differentiable views of the parameters; scope 'actor', 'critic' or 'all'."""
    if scope == "all":
        names = params.names
    else:
        names = [n for n in params.names if n.startswith(scope + ".")]
    return {n: ad.leaf(params.values[n]) for n in names}


def _pget(leaves: dict, params: PolicyParams, name: str):
    return leaves.get(name, params.values[name])


def trunk_taped(leaves, params, prefix, x):
    h = x
    for i in range(len(params.config.hidden)):
        h = ad.tanh(ad.affine(_pget(leaves, params, f"{prefix}.w{i}"),
                              _pget(leaves, params, f"{prefix}.b{i}"), h))
    return h


def actor_logits_taped(leaves, params, x):
    h = trunk_taped(leaves, params, "actor", x)
    return ad.affine(_pget(leaves, params, "actor.head_w"),
                     _pget(leaves, params, "actor.head_b"), h)


def actor_weights_taped(leaves, params, x, z=None):
    """Taped allocation; pass `z` draws to sample by reparameterization."""
    logits = actor_logits_taped(leaves, params, x)
    if z is not None:
        std = ad.exp(_pget(leaves, params, "actor.log_std"))
        logits = ad.add(logits, ad.mul(std, z))
    return ad.softmax(logits)


def value_taped(leaves, params, x):
    prefix = "actor" if params.config.shared_trunk else "critic"
    h = trunk_taped(leaves, params, prefix, x)
    out = ad.affine(_pget(leaves, params, "critic.head_w"),
                    _pget(leaves, params, "critic.head_b"), h)
    return ad.vsum(out)


def grad(objective: ad.Node, leaves: dict, params: PolicyParams) -> np.ndarray:
    """Reverse-mode gradient aligned with the flat view; non-leaf entries are 0."""
    objective.backward()
    parts = []
    for name, arr in params.values.items():
        node = leaves.get(name)
        if node is not None and node.grad is not None:
            parts.append(np.asarray(node.grad, dtype=np.float64).ravel())
        else:
            parts.append(np.zeros(arr.size))
    g = np.concatenate(parts)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    return g


def apply_flat_ascent(params: PolicyParams, grad_flat: np.ndarray, step_size: float) -> None:
    params.set_flat(params.flat() + step_size * grad_flat)


# -- checkpointing -------------------------------------------------------------


@dataclass
class Checkpoint:
    config: PolicyConfig
    flat: np.ndarray


def checkpoint(params: PolicyParams) -> Checkpoint:
    return Checkpoint(config=params.config, flat=params.flat())


def restore(params: PolicyParams, snapshot: Checkpoint) -> None:
    if snapshot.config != params.config:
        raise ShapeError(
            f"checkpoint architecture {snapshot.config} does not match {params.config}"
        )
    params.set_flat(snapshot.flat)


def save_checkpoint(params: PolicyParams, path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "dtype": "<f8",
        "data_b64": base64.b64encode(
            params.flat().astype("<f8").tobytes()
        ).decode("ascii"),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)


def load_checkpoint(path) -> PolicyParams:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ShapeError(f"not a policy checkpoint: {path}")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ShapeError(f"unsupported checkpoint version {payload.get('version')}")
    config = PolicyConfig.from_dict(payload["config"])
    flat = np.frombuffer(base64.b64decode(payload["data_b64"]), dtype="<f8")
    params = PolicyParams(config)
    params.set_flat(flat)
    return params


# -- pretraining ---------------------------------------------------------------


class _Adam:
    def __init__(self, names, shapes, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros(s) for n, s in zip(names, shapes)}
        self.v = {n: np.zeros(s) for n, s in zip(names, shapes)}
        self.t = 0

    def update(self, params: PolicyParams, grads: dict) -> None:
        self.t += 1
        for name, g in grads.items():
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            params.values[name] = params.values[name] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _collect_grads(leaves: dict) -> dict:
    return {
        name: np.asarray(node.grad if node.grad is not None else np.zeros_like(node.value))
        for name, node in leaves.items()
    }


class _AdvantageNorm:
    """Running standardization of the one-step advantage.

    Early in training the critic baseline lags the bootstrapped targets, so
    raw advantages share one sign and reinforce every sampled action alike;
    centering by running statistics restores a relative signal.
    """

    def __init__(self, beta=0.99):
        self.beta = beta
        self.mean = 0.0
        self.sq = 1e-8

    def update(self, adv: float) -> float:
        self.mean = self.beta * self.mean + (1 - self.beta) * adv
        self.sq = self.beta * self.sq + (1 - self.beta) * adv * adv
        std = max(np.sqrt(max(self.sq - self.mean ** 2, 0.0)), 1e-8)
        return (adv - self.mean) / std


def mean_train_reward(series, params, env_config, view=None) -> float:
    """Deterministic mean step reward on the train split."""
    from .env import run_episode

    result = run_episode(series, Agent(params), mode="deterministic",
                         split="train", env_config=env_config, view=view)
    return float(result.rewards.mean())


def pretrain(series: MarketSeries, env_config: EnvConfig,
             algo: str = "stochastic-ac", epochs: int = 10, seed: int = 0,
             config: PolicyConfig | None = None, lr: float = 3e-3,
             gamma: float = 0.99, value_coef: float = 0.5,
             entropy_coef: float = 1e-3, view: FeatureView | None = None) -> PolicyParams:
    """Desk-scale model-free actor-critic pretraining on the train split.

    Stochastic variant samples actions and follows the score-function gradient
    with a one-step advantage; deterministic variant ascends the differentiable
    one-step portfolio reward directly. Both fit the critic by one-step TD.
    Returns the epoch snapshot with the best deterministic mean train reward,
    never worse than the initial parameters. Validation and test data are
    never touched.
    """
    if algo not in ("stochastic-ac", "deterministic-ac"):
        raise ConfigError(f"unknown pretraining algo {algo!r}")
    mode = "stochastic" if algo == "stochastic-ac" else "deterministic"
    if config is None:
        config = PolicyConfig(n_assets=series.n_assets, mode=mode, init_seed=seed)
    else:
        if config.mode != mode:
            raise ConfigError(f"algo {algo!r} needs a {mode!r} policy, got {config.mode!r}")
        config = dataclasses.replace(config, init_seed=seed)
    if config.n_assets != series.n_assets:
        raise ConfigError("policy n_assets does not match series")

    start, stop = series.usable_range("train")
    n_steps = stop - 1 - start
    if n_steps < 100:
        raise ConfigError(f"train split has {n_steps} usable steps, need >= 100")

    view = view or FeatureView(series)
    params = PolicyParams(config)
    if epochs == 0:
        return params

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAC]))
    opt = _Adam(params.names, [v.shape for v in params.values.values()], lr=lr)
    scale = env_config.initial_value
    adv_norm = _AdvantageNorm()

    best_score = mean_train_reward(series, params, env_config, view=view)
    best_flat = params.flat()

    for _ in range(epochs):
        state = PortfolioState(env_config.initial_value, all_cash_weights(series.n_assets), start)
        for t in range(start, stop - 1):
            x = view.state(t).flat()
            if algo == "stochastic-ac":
                loss, exec_weights = _stochastic_step(
                    params, x, series, view, t, stop, state, env_config,
                    rng, gamma, scale, value_coef, entropy_coef, opt, adv_norm)
            else:
                loss, exec_weights = _deterministic_step(
                    params, x, series, view, t, stop, state, env_config,
                    gamma, scale, value_coef, opt)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at train step t={t}")
            state, _ = step(state, exec_weights, series.relatives(t), env_config.fee_rate)
        score = mean_train_reward(series, params, env_config, view=view)
        if score > best_score:
            best_score = score
            best_flat = params.flat()

    params.set_flat(best_flat)
    return params


def _stochastic_step(params, x, series, view, t, stop, state, env_config,
                     rng, gamma, scale, value_coef, entropy_coef, opt, adv_norm):
    leaves = make_leaves(params, "all")
    mean_node = actor_logits_taped(leaves, params, x)
    std = np.exp(params.values["actor.log_std"])
    z = rng.standard_normal(params.config.action_dim)
    sampled = mean_node.value + std * z
    exec_weights = softmax_weights(sampled)

    # transitions are action-independent, so the mean action's reward from the
    # same portfolio state is an exact counterfactual baseline for the sample
    _, reward = step(state, exec_weights, series.relatives(t), env_config.fee_rate)
    _, reward_mean = step(state, softmax_weights(mean_node.value),
                          series.relatives(t), env_config.fee_rate)
    adv = adv_norm.update((reward - reward_mean) / scale)
    r_norm = reward / scale
    v_next = value(params, view.state(t + 1).flat()) if t + 1 < stop - 1 else 0.0
    target = r_norm + gamma * v_next

    log_std_node = _pget(leaves, params, "actor.log_std")
    std_node = ad.exp(log_std_node)
    diff = ad.div(ad.sub(sampled, mean_node), std_node)
    log_prob = ad.sub(ad.mul(ad.vsum(ad.mul(diff, diff)), -0.5), ad.vsum(log_std_node))
    v_node = value_taped(leaves, params, x)
    critic_loss = ad.powc(ad.sub(v_node, target), 2)
    loss = ad.add_n([
        ad.mul(log_prob, -adv),
        ad.mul(critic_loss, value_coef),
        ad.mul(ad.vsum(log_std_node), -entropy_coef),
    ])
    loss.backward()
    opt.update(params, _collect_grads(leaves))
    return float(loss.value), exec_weights


def _deterministic_step(params, x, series, view, t, stop, state, env_config,
                        gamma, scale, value_coef, opt):
    leaves = make_leaves(params, "all")
    w_node = actor_weights_taped(leaves, params, x)
    exec_weights = softmax_weights(actor_logits(params, x))

    rel = series.relatives(t)
    relm1_full = np.concatenate(([0.0], rel - 1.0))
    v_norm = state.value / scale
    fee = env_config.fee_rate
    delta = ad.mul(ad.vsum(ad.absolute(ad.sub(w_node, state.weights))), fee * v_norm)
    rho = ad.dot(w_node, relm1_full)
    r_node = ad.sub(ad.mul(ad.sub(v_norm, delta), ad.add(rho, 1.0)), v_norm)

    _, reward = step(state, exec_weights, rel, env_config.fee_rate)
    r_norm = reward / scale
    v_next = value(params, view.state(t + 1).flat()) if t + 1 < stop - 1 else 0.0
    target = r_norm + gamma * v_next
    v_node = value_taped(leaves, params, x)
    critic_loss = ad.powc(ad.sub(v_node, target), 2)

    loss = ad.add_n([ad.mul(r_node, -1.0), ad.mul(critic_loss, value_coef)])
    loss.backward()
    opt.update(params, _collect_grads(leaves))
    return float(loss.value), exec_weights
