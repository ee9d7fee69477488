"""Inference-time MPC adaptation of a pre-trained policy against a forecaster.

At every real environment step the planner precomputes imagined states from
the forecaster (phase 1, no gradients, cached for the whole step), then runs E
epochs of gradient ascent on a discounted imagined return with a detached
terminal critic bootstrap (phase 2, gradients through actor parameters only),
executes the adapted deterministic action, and re-plans at the next step.

Two planning variants are implemented as separate code paths: the full one
with K noise-perturbed particles and a downside semi-deviation penalty, and a
vanilla one with a single deterministic trajectory optimizing the plain mean
return. With particles=1, sigma=0, lambda=0 both paths are bit-identical by
construction.

Because allocations do not move prices, imagined states never depend on the
actions taken, which is what makes the phase-1 cache valid across epochs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .env import EnvConfig, PortfolioState, all_cash_weights, step
from .errors import ConfigError, NumericError
from .forecast import NoiseCalibration, ParticlePath, build_trajectory, perturb
from .marketdata import FeatureView, MarketSeries
from .policy import PolicyParams, act, actor_weights_taped, grad, make_leaves, value

VARIANTS = ("vanilla", "noise_only", "noise_lambda")
RESET_MODES = ("persist", "reset_each_step")


@dataclass(frozen=True)
class MpcConfig:
    """Planning hyperparameters for one run."""

    horizon: int
    particles: int = 1
    epochs: int = 1
    step_size: float = 1e-3
    discount: float = 0.99
    risk_lambda: float = 0.0
    noise_sigma: float = 0.0
    eps_num: float = 1e-8
    variant: str = "vanilla"
    reset_mode: str = "persist"
    value_scale: float = 1.0

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")
        if self.particles < 1:
            raise ConfigError(f"particles must be >= 1, got {self.particles}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.step_size < 0:
            raise ConfigError(f"step_size must be >= 0, got {self.step_size}")
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError(f"discount must be in [0, 1), got {self.discount}")
        if self.risk_lambda < 0:
            raise ConfigError(f"risk_lambda must be >= 0, got {self.risk_lambda}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.eps_num <= 0:
            raise ConfigError(f"eps_num must be > 0, got {self.eps_num}")
        if self.value_scale <= 0:
            raise ConfigError(f"value_scale must be > 0, got {self.value_scale}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.reset_mode not in RESET_MODES:
            raise ConfigError(f"reset_mode must be one of {RESET_MODES}")
        if self.variant == "vanilla" and not (
            self.particles == 1 and self.noise_sigma == 0.0 and self.risk_lambda == 0.0
        ):
            raise ConfigError("vanilla variant requires particles=1, sigma=0, lambda=0")
        if self.variant == "noise_only" and self.risk_lambda != 0.0:
            raise ConfigError("noise_only variant requires lambda=0")

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "particles": self.particles,
            "epochs": self.epochs,
            "step_size": self.step_size,
            "discount": self.discount,
            "risk_lambda": self.risk_lambda,
            "noise_sigma": self.noise_sigma,
            "eps_num": self.eps_num,
            "variant": self.variant,
            "reset_mode": self.reset_mode,
            "value_scale": self.value_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MpcConfig":
        return cls(**d)


def imagined_reward(value_, prev_weights, weights, predicted_relatives, fee_rate) -> float:
    """One-step allocation reward under predicted relatives.

    Fee is proportional to L1 turnover over all N+1 entries; growth applies
    the weighted relatives (cash fixed at 1) after the fee.
    """
    prev = np.asarray(prev_weights, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    rel = np.asarray(predicted_relatives, dtype=np.float64)
    delta = fee_rate * value_ * float(np.abs(w - prev).sum())
    rho = float(np.dot(w[1:], rel - 1.0))
    return (value_ - delta) * (1.0 + rho) - value_


def particle_return(leaves, params, state0_flat, particle: ParticlePath,
                    prev_weights, value0: float, bootstrap: float,
                    fee_rate: float, discount: float,
                    action_noise=None, particle_index: int = 0) -> ad.Node:
    """Discounted imagined return of one particle as a differentiable scalar.

    Step 0 acts on the real observed state; later steps act on the cached
    imagined states. The running value and weights drift through the particle's
    relatives; the terminal bootstrap enters as a detached constant.
    """
    horizon = particle.relatives.shape[0]
    v = value0
    prev = np.asarray(prev_weights, dtype=np.float64)
    terms = []
    gamma_pow = 1.0
    for h in range(horizon):
        x = state0_flat if h == 0 else particle.states[h - 1].ravel()
        z = action_noise[h] if action_noise is not None else None
        w = actor_weights_taped(leaves, params, x, z)
        rel = particle.relatives[h]
        relm1_full = np.concatenate(([0.0], rel - 1.0))
        rel_full = np.concatenate(([1.0], rel))

        turnover = ad.vsum(ad.absolute(ad.sub(w, prev)))
        delta = ad.mul(ad.mul(turnover, v), fee_rate)
        rho = ad.dot(w, relm1_full)
        v_new = ad.mul(ad.sub(v, delta), ad.add(rho, 1.0))
        if not np.isfinite(v_new.value):
            raise NumericError(
                f"non-finite imagined value (particle {particle_index}, step {h})")
        reward = ad.sub(v_new, v)
        terms.append(ad.mul(reward, gamma_pow))

        drifted = ad.mul(w, rel_full)
        prev = ad.div(drifted, ad.vsum(drifted))
        v = v_new
        gamma_pow *= discount
    return ad.add(ad.add_n(terms), gamma_pow * bootstrap)


def risk_objective(particle_returns, risk_lambda: float, eps_num: float) -> ad.Node:
    """Mean return minus lambda times downside semi-deviation across particles.

    With lambda == 0 the penalty subgraph is skipped entirely, so the result
    reduces exactly (bitwise) to the plain particle mean.
    """
    k = float(len(particle_returns))
    mean = ad.div(ad.add_n(particle_returns), k)
    if risk_lambda == 0.0:
        return mean
    downs = [ad.powc(ad.clip_above_zero(ad.sub(j, mean)), 2) for j in particle_returns]
    downside_var = ad.div(ad.add_n(downs), k)
    penalty = ad.mul(ad.sqrt(ad.add(downside_var, eps_num)), risk_lambda)
    return ad.sub(mean, penalty)


@dataclass
class StepReport:
    """Per-step planning telemetry; nothing here feeds back into decisions."""

    t: int
    objective_before: float | None = None
    objective_after: float | None = None
    mean_return: float | None = None
    downside_variance: float | None = None
    grad_norms: list = field(default_factory=list)
    executed_weights: np.ndarray | None = None
    realized_reward: float | None = None
    incident: str | None = None

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "objective_before": self.objective_before,
            "objective_after": self.objective_after,
            "mean_return": self.mean_return,
            "downside_variance": self.downside_variance,
            "grad_norms": list(self.grad_norms),
            "executed_weights": None if self.executed_weights is None
            else [float(w) for w in self.executed_weights],
            "realized_reward": self.realized_reward,
            "incident": self.incident,
        }


def _draw_action_noise(params, horizon, k, rng):
    if params.config.mode != "stochastic":
        return [None] * k
    dim = params.config.action_dim
    return [rng.standard_normal((horizon, dim)) for _ in range(k)]


def _phase1(params, series, t, forecaster, cfg, normalizer, noise_calib, rng_noise,
            vanilla: bool):
    """Forecast states, noise draws, and detached bootstraps for one step."""
    h_eff = min(cfg.horizon, forecaster.available_horizon(series, t))
    if h_eff < 1:
        return None, None
    traj = build_trajectory(forecaster, series, t, h_eff, normalizer=normalizer)
    if vanilla:
        particles = [ParticlePath(states=traj.states, relatives=traj.relatives)]
    else:
        particles = perturb(traj, noise_calib, cfg.noise_sigma, cfg.particles, rng_noise)
    bootstraps = [value(params, p.states[-1].ravel()) for p in particles]
    return particles, bootstraps


def _ascend(params, leaves, objective, step_size):
    """One gradient-ascent update; returns the gradient norm."""
    g = grad(objective, leaves, params)
    with np.errstate(over="ignore", invalid="ignore"):
        flat = params.flat() + step_size * g
    if not np.all(np.isfinite(flat)):
        raise NumericError("non-finite parameters after update")
    params.set_flat(flat)
    return float(np.linalg.norm(g))


def adapt_step_full(params: PolicyParams, obs_flat, port_value, port_weights,
                    series, t, forecaster, cfg: MpcConfig, fee_rate,
                    normalizer=None, noise_calib: NoiseCalibration | None = None,
                    rng_action=None, rng_noise=None) -> tuple[np.ndarray, StepReport]:
    """Risk-penalized particle planning (noise + lambda path)."""
    report = StepReport(t=t)
    entry = params.flat()
    particles, bootstraps = _phase1(params, series, t, forecaster, cfg, normalizer,
                                    noise_calib, rng_noise, vanilla=False)
    if particles is not None:
        v0 = port_value / cfg.value_scale
        last_noise = None
        try:
            for _ in range(cfg.epochs):
                leaves = make_leaves(params, "actor")
                last_noise = _draw_action_noise(params, particles[0].relatives.shape[0],
                                                cfg.particles, rng_action)
                returns = [
                    particle_return(leaves, params, obs_flat, part, port_weights, v0,
                                    bootstraps[i], fee_rate, cfg.discount, last_noise[i],
                                    particle_index=i)
                    for i, part in enumerate(particles)
                ]
                objective = risk_objective(returns, cfg.risk_lambda, cfg.eps_num)
                j_vals = np.array([float(r.value) for r in returns])
                if report.objective_before is None:
                    report.objective_before = float(objective.value)
                report.mean_return = float(j_vals.mean())
                report.downside_variance = float(
                    np.mean(np.minimum(j_vals - j_vals.mean(), 0.0) ** 2)
                )
                report.grad_norms.append(_ascend(params, leaves, objective, cfg.step_size))
            report.objective_after = _objective_value(
                params, obs_flat, particles, port_weights, v0, bootstraps,
                fee_rate, cfg, last_noise)
        except NumericError as exc:
            params.set_flat(entry)
            report.incident = f"adaptation aborted: {exc}"
    weights = act(params, obs_flat, mode="deterministic").weights
    report.executed_weights = weights
    if cfg.reset_mode == "reset_each_step":
        params.set_flat(entry)
    return weights, report


def adapt_step_vanilla(params: PolicyParams, obs_flat, port_value, port_weights,
                       series, t, forecaster, cfg: MpcConfig, fee_rate,
                       normalizer=None, noise_calib=None,
                       rng_action=None, rng_noise=None) -> tuple[np.ndarray, StepReport]:
    """Single deterministic trajectory, plain mean-return ascent."""
    report = StepReport(t=t)
    entry = params.flat()
    particles, bootstraps = _phase1(params, series, t, forecaster, cfg, normalizer,
                                    noise_calib, rng_noise, vanilla=True)
    if particles is not None:
        v0 = port_value / cfg.value_scale
        last_noise = None
        try:
            for _ in range(cfg.epochs):
                leaves = make_leaves(params, "actor")
                last_noise = _draw_action_noise(params, particles[0].relatives.shape[0],
                                                cfg.particles, rng_action)
                returns = [
                    particle_return(leaves, params, obs_flat, part, port_weights, v0,
                                    bootstraps[i], fee_rate, cfg.discount, last_noise[i],
                                    particle_index=i)
                    for i, part in enumerate(particles)
                ]
                objective = ad.div(ad.add_n(returns), float(len(returns)))
                if report.objective_before is None:
                    report.objective_before = float(objective.value)
                report.mean_return = float(objective.value)
                report.grad_norms.append(_ascend(params, leaves, objective, cfg.step_size))
            report.objective_after = _objective_value(
                params, obs_flat, particles, port_weights, v0, bootstraps,
                fee_rate, cfg, last_noise)
        except NumericError as exc:
            params.set_flat(entry)
            report.incident = f"adaptation aborted: {exc}"
    weights = act(params, obs_flat, mode="deterministic").weights
    report.executed_weights = weights
    if cfg.reset_mode == "reset_each_step":
        params.set_flat(entry)
    return weights, report


def _objective_value(params, obs_flat, particles, prev_weights, v0, bootstraps,
                     fee_rate, cfg, action_noise) -> float:
    """Forward-only objective evaluation (reuses the last epoch's draws)."""
    leaves = make_leaves(params, "actor")
    noise = action_noise if action_noise is not None else [None] * len(particles)
    returns = [
        particle_return(leaves, params, obs_flat, part, prev_weights, v0,
                        bootstraps[i], fee_rate, cfg.discount, noise[i])
        for i, part in enumerate(particles)
    ]
    return float(risk_objective(returns, cfg.risk_lambda, cfg.eps_num).value)


@dataclass
class PilotResult:
    start_t: int
    values: np.ndarray
    rewards: np.ndarray
    weights: np.ndarray
    reports: list

    @property
    def value_curve(self) -> np.ndarray:
        return self.values


def run_pilot(series: MarketSeries, params: PolicyParams, forecaster,
              cfg: MpcConfig, env_config: EnvConfig | None = None,
              split: str = "test", seed: int = 0,
              noise_calib: NoiseCalibration | None = None,
              view: FeatureView | None = None,
              report_path=None) -> PilotResult:
    """Full-split run with per-step adaptation; deterministic given the seed.

    epochs=0 or step_size=0 skips planning entirely and reproduces the plain
    deterministic baseline episode. The caller's parameters are never mutated;
    adaptation acts on a working copy (persisting across steps unless
    reset_each_step is configured).
    """
    if env_config is None:
        env_config = EnvConfig(n_assets=series.n_assets)
    if cfg.noise_sigma > 0 and noise_calib is None:
        raise ConfigError("noise_sigma > 0 requires a fitted NoiseCalibration")
    view = view or FeatureView(series)
    normalizer = view.normalizer(split)
    work = params.copy()
    seq = np.random.SeedSequence([seed, 0x5EED])
    rng_action, rng_noise = (np.random.default_rng(s) for s in seq.spawn(2))

    start, stop = series.usable_range(split)
    last = stop - 1
    adapt = adapt_step_vanilla if cfg.variant == "vanilla" else adapt_step_full
    planning = cfg.epochs > 0 and cfg.step_size > 0

    state = PortfolioState(env_config.initial_value, all_cash_weights(series.n_assets), start)
    values = [state.value]
    rewards, targets, reports = [], [], []
    stream = open(report_path, "w", encoding="utf-8") if report_path else None
    try:
        for t in range(start, last):
            obs = view.state(t)
            if planning:
                weights, report = adapt(
                    work, obs.flat(), state.value, state.weights, series, t,
                    forecaster, cfg, env_config.fee_rate, normalizer=normalizer,
                    noise_calib=noise_calib, rng_action=rng_action, rng_noise=rng_noise)
            else:
                weights = act(work, obs, mode="deterministic").weights
                report = StepReport(t=t, executed_weights=weights)
            state, reward = step(state, weights, series.relatives(t), env_config.fee_rate)
            report.realized_reward = reward
            values.append(state.value)
            rewards.append(reward)
            targets.append(weights)
            reports.append(report)
            if stream is not None:
                stream.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    finally:
        if stream is not None:
            stream.close()
    return PilotResult(start_t=start, values=np.asarray(values),
                       rewards=np.asarray(rewards), weights=np.asarray(targets),
                       reports=reports)
