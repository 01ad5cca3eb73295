"""MADDPG with discrete actions relaxed by a pluggable gradient estimator.

Critics are centralised (joint observations and joint one-hot actions),
policies are decentralised (own observation to action logits). The actor
update differentiates the critic through the estimator's straight-through
output, so the estimator only shapes the backward pass.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, NonFiniteGradientError, Tensor
from .envs import GridEnv, make_env
from .estimators import EstimatorConfig, one_hot
from .evalstats import GradVarianceRecord, grad_variance_batch

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRICS_COLUMNS = ("step", "seed", "task", "estimator", "eval_mean_return", "eval_se")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_steps: int = 50_000
    batch_size: int = 256
    gamma: float = 0.99
    polyak: float = 0.01
    update_period: int = 100
    warmup_steps: int = 1000
    eval_period: int = 5000
    eval_episodes: int = 20
    buffer_capacity: int = 100_000
    hidden: int = 64
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    grad_clip: float = 10.0
    logit_reg: float = 1e-3  # weight of mean(logits^2) in the actor loss
    target_actions: str = "greedy"  # or "sampled"
    other_actions: str = "current"  # or "replay"
    gradvar_period: int = 0  # log per-sample gradient variance every N updates; 0 = off

    def __post_init__(self):
        if not 0 < self.polyak <= 1:
            raise ValueError("polyak rate must lie in (0, 1]")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.target_actions not in ("greedy", "sampled"):
            raise ValueError("target_actions must be 'greedy' or 'sampled'")
        if self.other_actions not in ("current", "replay"):
            raise ValueError("other_actions must be 'current' or 'replay'")
        for name in ("batch_size", "update_period", "eval_period", "eval_episodes",
                     "buffer_capacity", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ValueError("step counts must be non-negative")


class MLP:
    """ReLU multilayer perceptron with a linear head."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator):
        self.sizes = tuple(sizes)
        self.params: list[Tensor] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), requires_grad=True))
            self.params.append(Tensor(rng.uniform(-bound, bound, fan_out), requires_grad=True))

    def __call__(self, x) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = ad.add(ad.matmul(h, self.params[2 * k]), self.params[2 * k + 1])
            if k < n_layers - 1:
                h = ad.relu(h)
        return h

    def predict(self, x: np.ndarray) -> np.ndarray:
        h = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n_layers = len(self.params) // 2
        for k in range(n_layers):
            h = h @ self.params[2 * k].data + self.params[2 * k + 1].data
            if k < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h

    def copy(self) -> "MLP":
        twin = MLP.__new__(MLP)
        twin.sizes = self.sizes
        twin.params = [Tensor(p.data.copy(), requires_grad=True) for p in self.params]
        return twin

    def layer_map(self) -> list[tuple[int, str]]:
        """(layer, 'weight' | 'bias') for every flattened parameter entry."""
        out = []
        for k, p in enumerate(self.params):
            out += [(k // 2, "weight" if k % 2 == 0 else "bias")] * p.data.size
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self.params:
            h.update(p.data.tobytes())
        return h.hexdigest()


def polyak_update(online: Sequence[Tensor], target: Sequence[Tensor], rho: float) -> None:
    """target <- rho * online + (1 - rho) * target, in place."""
    if len(online) != len(target):
        raise ad.ShapeError("online and target parameter lists differ in length")
    for o, t in zip(online, target):
        if o.shape != t.shape:
            raise ad.ShapeError(f"shape mismatch {o.shape} vs {t.shape}")
    for o, t in zip(online, target):
        t.data *= 1.0 - rho
        t.data += rho * o.data


@dataclass
class AgentNets:
    policy: MLP
    critic: MLP
    target_policy: MLP
    target_critic: MLP
    policy_opt: AdamState
    critic_opt: AdamState

    @classmethod
    def build(cls, obs_size: int, n_actions: int, joint_size: int, hidden: int,
              rng: np.random.Generator, lr_actor: float, lr_critic: float) -> "AgentNets":
        policy = MLP([obs_size, hidden, hidden, n_actions], rng)
        critic = MLP([joint_size, hidden, hidden, 1], rng)
        return cls(policy, critic, policy.copy(), critic.copy(),
                   AdamState.for_params(policy.params, lr=lr_actor),
                   AdamState.for_params(critic.params, lr=lr_critic))


def build_agents(n_agents: int, obs_size: int, n_actions: int, hidden: int,
                 rng: np.random.Generator, lr_actor: float = 3e-4,
                 lr_critic: float = 3e-4) -> list[AgentNets]:
    joint = n_agents * (obs_size + n_actions)
    return [AgentNets.build(obs_size, n_actions, joint, hidden, rng, lr_actor, lr_critic)
            for _ in range(n_agents)]


class ReplayBuffer:
    """Fixed-capacity ring of joint transitions, sampled uniformly with replacement."""

    def __init__(self, capacity: int, n_agents: int, obs_size: int, n_actions: int):
        self.capacity = capacity
        self.n_actions = n_actions
        self.obs = np.zeros((capacity, n_agents, obs_size))
        self.next_obs = np.zeros((capacity, n_agents, obs_size))
        self.actions = np.zeros((capacity, n_agents), dtype=np.int64)
        self.rewards = np.zeros((capacity, n_agents))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, actions, rewards, next_obs, done: bool) -> None:
        actions = np.asarray(actions)
        if actions.ndim == 2:
            if not np.all(actions.sum(axis=1) == 1):
                raise ValueError("actions must be one-hot per agent")
            actions = actions.argmax(axis=1)
        c = self.cursor
        self.obs[c] = obs
        self.actions[c] = actions
        self.rewards[c] = rewards
        self.next_obs[c] = next_obs
        self.done[c] = float(done)
        self.cursor = (c + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Batch":
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], one_hot(self.actions[idx], self.n_actions),
                     self.rewards[idx], self.next_obs[idx], self.done[idx])


@dataclass
class Batch:
    obs: np.ndarray       # [B, N, obs]
    actions: np.ndarray   # [B, N, A] one-hot
    rewards: np.ndarray   # [B, N]
    next_obs: np.ndarray  # [B, N, obs]
    done: np.ndarray      # [B]

    def __len__(self) -> int:
        return self.obs.shape[0]


def _joint_input(obs: np.ndarray, actions: Sequence) -> Tensor:
    n = obs.shape[1]
    parts = [obs[:, j, :] for j in range(n)] + list(actions)
    return ad.concat(parts, axis=1)


def select_actions(agents: Sequence[AgentNets], joint_obs, estimator: EstimatorConfig,
                   rng: np.random.Generator) -> np.ndarray:
    """One hard one-hot action per agent from the estimator's forward path (no tape)."""
    rows = []
    for i, nets in enumerate(agents):
        zeta = nets.policy.predict(joint_obs[i])[0]
        idx = estimator.sample_hard(zeta, rng)
        rows.append(one_hot(idx, zeta.shape[-1]))
    return np.stack(rows)


def greedy_actions(agents: Sequence[AgentNets], joint_obs) -> np.ndarray:
    return np.array([int(np.argmax(nets.policy.predict(joint_obs[i])[0]))
                     for i, nets in enumerate(agents)])


def _clip(grads: list[np.ndarray], max_norm: float) -> list[np.ndarray]:
    if not max_norm:
        return grads
    norm = np.sqrt(sum(float((g ** 2).sum()) for g in grads))
    if norm > max_norm:
        grads = [g * (max_norm / norm) for g in grads]
    return grads


def _step(params, grads, state, what: str) -> None:
    try:
        ad.adam_step(params, grads, state)
    except NonFiniteGradientError as exc:
        raise TrainingError(f"{what}: {exc}") from exc


def critic_loss(agents: Sequence[AgentNets], batch: Batch, i: int, gamma: float,
                target_actions: str = "greedy", estimator: EstimatorConfig | None = None,
                rng: np.random.Generator | None = None) -> Tensor:
    """Squared TD error of Q_i against r_i + gamma (1 - done) Q_i'(o', mu'(o'))."""
    n = len(agents)
    next_acts = []
    for j, nets in enumerate(agents):
        zeta = nets.target_policy.predict(batch.next_obs[:, j, :])
        if target_actions == "greedy":
            idx = np.argmax(zeta, axis=-1)
        else:
            idx = estimator.sample_hard(zeta, rng)
        next_acts.append(one_hot(idx, zeta.shape[-1]))
    q_next = agents[i].target_critic(_joint_input(batch.next_obs, next_acts)).data[:, 0]
    y = batch.rewards[:, i] + gamma * (1.0 - batch.done) * q_next
    q = agents[i].critic(_joint_input(batch.obs, [batch.actions[:, j, :] for j in range(n)]))
    return ad.mse(q, y[:, None])


def critic_update(agents: Sequence[AgentNets], batch: Batch, i: int, gamma: float,
                  grad_clip: float = 0.0, target_actions: str = "greedy",
                  estimator: EstimatorConfig | None = None,
                  rng: np.random.Generator | None = None) -> float:
    """One Adam step on agent ``i``'s critic; returns the pre-step loss."""
    loss = critic_loss(agents, batch, i, gamma, target_actions, estimator, rng)
    value = float(loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"critic {i}: non-finite loss {value}")
    params = agents[i].critic.params
    grads = _clip(ad.grad_of(loss, params), grad_clip)
    _step(params, grads, agents[i].critic_opt, f"critic {i}")
    return value


@dataclass
class ActorGraph:
    loss: Tensor
    q: Tensor
    relaxed: object
    other_actions: list[np.ndarray]
    objective: Tensor


def actor_graph(agents: Sequence[AgentNets], batch: Batch, i: int, estimator: EstimatorConfig,
                rng: np.random.Generator, t: int = 0, other_actions: str = "current",
                logit_reg: float = 0.0) -> ActorGraph:
    """Build -mean Q_i(o, a) with a_i relaxed through the estimator.

    ``objective`` adds ``logit_reg * mean(zeta^2)``, which keeps the policy
    logits from saturating; ``loss`` is the bare -mean Q.
    """
    n = len(agents)
    zeta = agents[i].policy(batch.obs[:, i, :])
    relaxed = estimator.relax(zeta, rng, t)
    acts: list = []
    others = []
    for j in range(n):
        if j == i:
            acts.append(relaxed.output())
            continue
        if other_actions == "replay":
            a_j = batch.actions[:, j, :]
        else:
            z_j = agents[j].policy.predict(batch.obs[:, j, :])
            a_j = one_hot(estimator.sample_hard(z_j, rng), z_j.shape[-1])
        others.append(a_j)
        acts.append(a_j)
    q = agents[i].critic(_joint_input(batch.obs, acts))
    loss = ad.mul(ad.mean(q), -1.0)
    objective = loss
    if logit_reg:
        objective = ad.add(loss, ad.mul(ad.mean(ad.mul(zeta, zeta)), logit_reg))
    return ActorGraph(loss, q, relaxed, others, objective)


def actor_update(agents: Sequence[AgentNets], batch: Batch, i: int, estimator: EstimatorConfig,
                 rng: np.random.Generator, t: int = 0, grad_clip: float = 0.0,
                 other_actions: str = "current", logit_reg: float = 0.0) -> float:
    """One Adam ascent step on mean Q_i for agent ``i``'s policy; returns -mean Q."""
    g = actor_graph(agents, batch, i, estimator, rng, t, other_actions, logit_reg)
    value = float(g.loss.data)
    if not np.isfinite(value):
        raise TrainingError(f"actor {i}: non-finite loss {value}")
    params = agents[i].policy.params
    grads = _clip(ad.grad_of(g.objective, params), grad_clip)
    _step(params, grads, agents[i].policy_opt, f"actor {i}")
    return value


def per_sample_policy_grads(agents: Sequence[AgentNets], graph: ActorGraph, i: int) -> np.ndarray:
    """[batch, n_params] gradients of -Q_b w.r.t. agent ``i``'s policy, one backward per row."""
    params = agents[i].policy.params
    rows = []
    for b in range(graph.q.shape[0]):
        qb = ad.mul(ad.sum(ad.gather_rows(graph.q, [b])), -1.0)
        rows.append(np.concatenate([g.ravel() for g in ad.grad_of(qb, params)]))
    return np.stack(rows)


def evaluate(agents: Sequence[AgentNets], env: GridEnv, n_episodes: int, seed: int,
             policy: Callable | None = None) -> np.ndarray:
    """Summed (undiscounted, all-agent) return of each greedy evaluation episode."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    seeds = np.random.SeedSequence(seed).generate_state(n_episodes)
    act = policy or (lambda obs: greedy_actions(agents, obs))
    out = np.zeros(n_episodes)
    for e in range(n_episodes):
        js = env.reset(int(seeds[e]))
        total = 0.0
        while not js.done:
            js = env.step(np.asarray(act(js.observations), dtype=np.int64))
            total += float(js.rewards.sum())
        out[e] = total
    return out


def random_policy_return(task: str, n_episodes: int, seed: int) -> float:
    """Mean evaluation return of uniformly random joint actions (scripted baseline)."""
    env = make_env(task)
    rng = np.random.default_rng(seed)
    policy = lambda obs: rng.integers(0, env.spec.n_actions, size=env.spec.n_agents)  # noqa: E731
    return float(evaluate([], env, n_episodes, seed, policy=policy).mean())


@dataclass
class TrainResult:
    rows: list[dict]
    agents: list[AgentNets]
    gradvar: list[GradVarianceRecord] = field(default_factory=list)
    updates: int = 0


def train(task: str, estimator: EstimatorConfig, config: TrainConfig, seed: int = 0,
          on_row: Callable[[dict], None] | None = None) -> TrainResult:
    """Run MADDPG on ``task``; one metrics row per evaluation (step 0 included)."""
    env = make_env(task)
    eval_env = make_env(task)
    spec = env.spec
    init_ss, env_ss, act_ss, upd_ss, eval_ss = np.random.SeedSequence(seed).spawn(5)
    agents = build_agents(spec.n_agents, spec.obs_size, spec.n_actions, config.hidden,
                          np.random.default_rng(init_ss), config.lr_actor, config.lr_critic)
    estimator = estimator.with_horizon(int(0.6 * max(config.total_steps, 1)))
    buffer = ReplayBuffer(min(config.buffer_capacity, max(config.total_steps, 1)),
                          spec.n_agents, spec.obs_size, spec.n_actions)
    env_rng = np.random.default_rng(env_ss)
    act_rng = np.random.default_rng(act_ss)
    upd_rng = np.random.default_rng(upd_ss)
    eval_seed = int(eval_ss.generate_state(1)[0])
    result = TrainResult([], agents)

    def record(step: int) -> None:
        returns = evaluate(agents, eval_env, config.eval_episodes, eval_seed)
        se = float(returns.std(ddof=1) / np.sqrt(returns.size)) if returns.size > 1 else 0.0
        row = dict(step=step, seed=seed, task=task, estimator=estimator.label,
                   eval_mean_return=float(returns.mean()), eval_se=se)
        result.rows.append(row)
        log.info("step %d return %.4f", step, row["eval_mean_return"])
        if on_row:
            on_row(row)

    record(0)
    js = env.reset(int(env_rng.integers(2 ** 31)))
    obs = np.stack(js.observations)
    for step in range(1, config.total_steps + 1):
        actions = select_actions(agents, obs, estimator, act_rng)
        nxt = env.step(actions.argmax(axis=1))
        next_obs = np.stack(nxt.observations)
        # time-limit truncation is not a terminal state for bootstrapping
        terminal = nxt.done and nxt.step_index < spec.max_steps
        buffer.add(obs, actions, nxt.rewards, next_obs, terminal)
        if nxt.done:
            js = env.reset(int(env_rng.integers(2 ** 31)))
            obs = np.stack(js.observations)
        else:
            obs = next_obs
        if step >= config.warmup_steps and step % config.update_period == 0 and len(buffer):
            _update_all(agents, buffer, estimator, config, upd_rng, step, result)
        if step % config.eval_period == 0:
            record(step)
    return result


def _update_all(agents, buffer, estimator, config: TrainConfig, rng, step: int,
                result: TrainResult) -> None:
    batch = buffer.sample(config.batch_size, rng)
    log_var = config.gradvar_period and result.updates % config.gradvar_period == 0
    for i in range(len(agents)):
        critic_update(agents, batch, i, config.gamma, config.grad_clip, config.target_actions,
                      estimator, rng)
        g = actor_graph(agents, batch, i, estimator, rng, step, config.other_actions,
                        config.logit_reg)
        if not np.isfinite(g.loss.data):
            raise TrainingError(f"actor {i}: non-finite loss")
        if log_var:
            per_sample = per_sample_policy_grads(agents, g, i)
            result.gradvar += grad_variance_batch(per_sample, agents[i].policy.layer_map(),
                                                  step=step, agent=i)
        params = agents[i].policy.params
        grads = _clip(ad.grad_of(g.objective, params), config.grad_clip)
        _step(params, grads, agents[i].policy_opt, f"actor {i}")
    for nets in agents:
        polyak_update(nets.policy.params, nets.target_policy.params, config.polyak)
        polyak_update(nets.critic.params, nets.target_critic.params, config.polyak)
    result.updates += 1


def save_checkpoint(path: Path, agents: Sequence[AgentNets], config: dict) -> None:
    """Write ``params.npz`` and a JSON manifest (format version, shapes, config echo)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for i, nets in enumerate(agents):
        for part in ("policy", "critic", "target_policy", "target_critic"):
            for k, p in enumerate(getattr(nets, part).params):
                arrays[f"agent{i}/{part}/{k}"] = p.data
    with open(path / "params.npz", "wb") as fh:
        np.savez(fh, **arrays)
    manifest = {"format_version": CHECKPOINT_VERSION,
                "tensors": {k: list(v.shape) for k, v in arrays.items()},
                "config": config}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def load_checkpoint(path: Path, agents: Sequence[AgentNets]) -> dict:
    """Load parameters saved by :func:`save_checkpoint` into ``agents``; returns the manifest."""
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
    with np.load(path / "params.npz") as data:
        for i, nets in enumerate(agents):
            for part in ("policy", "critic", "target_policy", "target_critic"):
                for k, p in enumerate(getattr(nets, part).params):
                    arr = data[f"agent{i}/{part}/{k}"]
                    if arr.shape != p.shape:
                        raise ad.ShapeError(f"checkpoint tensor agent{i}/{part}/{k} has shape {arr.shape}")
                    p.data[...] = arr
    return manifest


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
