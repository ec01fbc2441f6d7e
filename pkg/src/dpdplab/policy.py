"""Learned dispatching: per-vehicle Q towers with neighborhood attention,
trained with Double DQN over whole-episode replay.

Every vehicle shares one set of weights.  A feasible vehicle's five-feature
row is embedded by an initial MLP; two stacked attention levels then mix
each vehicle's embedding with those of its nearest feasible neighbours
(Euclidean distance between current positions); the initial and both
attention-level representations are concatenated into a final MLP that
emits the scalar Q-value.  Infeasible vehicles are excluded before any
network evaluation: their Q-value is pinned to a large negative sentinel,
they are never sampled or selected, and no gradient ever flows to or from
their rows.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .env import JointState, Transition, run_episode
from .instance import Instance
from .neural import Adam, AttentionBlock, Mlp, load_tensors, save_tensors

SENTINEL_Q = -1e9


@dataclass
class QNetworkConfig:
    state_dim: int = 5
    embed_dim: int = 64
    mlp_hidden: tuple[int, ...] = (64, 64)
    attn_heads: int = 4
    attn_head_dim: int = 16
    neighbors: int = 8
    use_attention: bool = True
    use_score_feature: bool = True
    feature_scale: tuple[float, ...] = (0.02, 0.02, 1.0, 1.0, 1.0 / 144.0)

    def to_dict(self) -> dict:
        return {
            "state_dim": self.state_dim,
            "embed_dim": self.embed_dim,
            "mlp_hidden": list(self.mlp_hidden),
            "attn_heads": self.attn_heads,
            "attn_head_dim": self.attn_head_dim,
            "neighbors": self.neighbors,
            "use_attention": self.use_attention,
            "use_score_feature": self.use_score_feature,
            "feature_scale": list(self.feature_scale),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QNetworkConfig":
        return cls(
            state_dim=int(d["state_dim"]),
            embed_dim=int(d["embed_dim"]),
            mlp_hidden=tuple(d["mlp_hidden"]),
            attn_heads=int(d["attn_heads"]),
            attn_head_dim=int(d["attn_head_dim"]),
            neighbors=int(d["neighbors"]),
            use_attention=bool(d["use_attention"]),
            use_score_feature=bool(d["use_score_feature"]),
            feature_scale=tuple(d["feature_scale"]),
        )


def neighbor_indices(positions: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Group index matrix (rows, 1 + NE): self first, then the NE nearest
    others ordered by (distance, index).  NE clamps to rows - 1."""
    n = positions.shape[0]
    ne = min(n_neighbors, n - 1)
    idx = np.empty((n, ne + 1), dtype=int)
    if n == 1 or ne == 0:
        return np.arange(n, dtype=int).reshape(n, 1)
    diff = positions[:, None, :] - positions[None, :, :]
    d2 = (diff**2).sum(axis=2)
    for i in range(n):
        order = sorted((float(d2[i, j]), j) for j in range(n) if j != i)
        idx[i, 0] = i
        idx[i, 1:] = [j for _, j in order[:ne]]
    return idx


class QNetwork:
    """Shared-weight per-vehicle Q tower over a joint fleet state."""

    def __init__(self, config: QNetworkConfig | None = None, seed: int = 0):
        self.config = config or QNetworkConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.init_mlp = Mlp([cfg.state_dim, *cfg.mlp_hidden, cfg.embed_dim], rng)
        if cfg.use_attention:
            self.attn1 = AttentionBlock(
                cfg.embed_dim, cfg.attn_heads, cfg.attn_head_dim, cfg.embed_dim, rng
            )
            self.attn2 = AttentionBlock(
                cfg.embed_dim, cfg.attn_heads, cfg.attn_head_dim, cfg.embed_dim, rng
            )
            final_in = 3 * cfg.embed_dim
        else:
            self.attn1 = self.attn2 = None
            final_in = cfg.embed_dim
        self.final_mlp = Mlp([final_in, *cfg.mlp_hidden, 1], rng)
        self._cache: dict | None = None

    def blocks(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [("init.", self.init_mlp)]
        if self.attn1 is not None:
            out += [("attn1.", self.attn1), ("attn2.", self.attn2)]
        out.append(("final.", self.final_mlp))
        return out

    def parameters(self) -> Iterator[tuple[str, np.ndarray, np.ndarray]]:
        for prefix, block in self.blocks():
            yield from block.parameters(prefix)

    def zero_grad(self) -> None:
        for _, block in self.blocks():
            block.zero_grad()

    def copy_weights_from(self, other: "QNetwork") -> None:
        mine = {name: p for name, p, _ in self.parameters()}
        for name, p, _ in other.parameters():
            mine[name][...] = p

    def _scaled_features(self, state: JointState, feasible: list[int]) -> np.ndarray:
        feats = state.feature_matrix()[feasible]
        if not self.config.use_score_feature:
            feats[:, 2] = 0.0
        return feats * np.asarray(self.config.feature_scale, dtype=float)

    def q_values(self, state: JointState) -> np.ndarray:
        """Q per vehicle; infeasible rows get the sentinel without evaluation."""
        feasible = state.feasible_vehicles()
        q = np.full(state.n_vehicles, SENTINEL_Q, dtype=float)
        if not feasible:
            self._cache = None
            return q
        x = self._scaled_features(state, feasible)
        h0 = self.init_mlp.forward(x)
        if self.attn1 is not None:
            positions = np.array([state.positions[k] for k in feasible], dtype=float)
            idx = neighbor_indices(positions, self.config.neighbors)
            h1 = self.attn1.forward(h0[idx])
            h2 = self.attn2.forward(h1[idx])
            cat = np.concatenate([h0, h1, h2], axis=1)
        else:
            idx = None
            cat = h0
        out = self.final_mlp.forward(cat)
        q[feasible] = out[:, 0]
        self._cache = {"feasible": feasible, "idx": idx, "h0_shape": h0.shape}
        return q

    def backward(self, dq: np.ndarray) -> None:
        """Accumulate gradients of a scalar loss whose dL/dQ is ``dq`` (per vehicle).

        Components on infeasible rows must be zero: those rows never entered
        the forward pass.
        """
        if self._cache is None:
            raise RuntimeError("backward called before q_values")
        feasible = self._cache["feasible"]
        idx = self._cache["idx"]
        infeasible_mask = np.ones(len(dq), dtype=bool)
        infeasible_mask[feasible] = False
        if np.any(dq[infeasible_mask] != 0.0):
            raise ValueError("loss gradient on an infeasible row")
        dout = np.asarray(dq, dtype=float)[feasible].reshape(-1, 1)
        dcat = self.final_mlp.backward(dout)
        if self.attn1 is not None:
            d = self.config.embed_dim
            dh0 = dcat[:, :d].copy()
            dh1 = dcat[:, d : 2 * d].copy()
            dh2 = dcat[:, 2 * d :].copy()
            dx1 = self.attn2.backward(dh2)
            np.add.at(dh1, idx, dx1)
            dx0 = self.attn1.backward(dh1)
            np.add.at(dh0, idx, dx0)
        else:
            dh0 = dcat
        self.init_mlp.backward(dh0)
        self._cache = None

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: p for name, p, _ in self.parameters()}

    def save(self, path: str | Path, meta: dict | None = None) -> Path:
        payload = dict(meta or {})
        payload["qnetwork_config"] = self.config.to_dict()
        return save_tensors(path, self.tensors(), payload)

    @classmethod
    def load(cls, path: str | Path) -> tuple["QNetwork", dict]:
        tensors, meta = load_tensors(path)
        config = QNetworkConfig.from_dict(meta["qnetwork_config"])
        net = cls(config, seed=0)
        mine = {name: p for name, p, _ in net.parameters()}
        if set(mine) != set(tensors):
            raise ValueError("checkpoint tensors do not match the network layout")
        for name, arr in tensors.items():
            if mine[name].shape != arr.shape:
                raise ValueError(f"checkpoint tensor {name} has shape {arr.shape}, expected {mine[name].shape}")
            mine[name][...] = arr
        return net, meta


def select_action(
    state: JointState,
    net: QNetwork,
    epsilon: float = 0.0,
    rng: np.random.Generator | None = None,
) -> int:
    """Epsilon-greedy over feasible vehicles; greedy ties go to the lowest id."""
    feasible = state.feasible_vehicles()
    if not feasible:
        raise ValueError(f"no feasible vehicle for order {state.order_id}")
    if epsilon > 0.0:
        if rng is None:
            raise ValueError("exploration requires a random generator")
        if rng.random() < epsilon:
            return int(feasible[int(rng.integers(len(feasible)))])
    return int(np.argmax(net.q_values(state)))


def make_learned_policy(
    net: QNetwork, epsilon: float = 0.0, rng: np.random.Generator | None = None
) -> Callable[[JointState], int]:
    def policy(state: JointState) -> int:
        return select_action(state, net, epsilon, rng)

    policy.policy_name = "learned"
    return policy


@dataclass
class TrainerConfig:
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_final: float = 0.05
    epsilon_decay_fraction: float = 0.6
    buffer_capacity: int = 100_000
    batch_size: int = 64
    target_period: int = 5
    steps_per_episode: int = 1
    learning_rate: float = 1e-3
    alpha: float = 0.01
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "epsilon_start": self.epsilon_start,
            "epsilon_final": self.epsilon_final,
            "epsilon_decay_fraction": self.epsilon_decay_fraction,
            "buffer_capacity": self.buffer_capacity,
            "batch_size": self.batch_size,
            "target_period": self.target_period,
            "steps_per_episode": self.steps_per_episode,
            "learning_rate": self.learning_rate,
            "alpha": self.alpha,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**d)


class Trainer:
    """Double-DQN training loop: whole-episode rollouts feed a FIFO replay
    buffer; each episode takes ``steps_per_episode`` mini-batch gradient
    steps (none until the buffer holds a full batch) and the target network
    syncs every ``target_period`` episodes."""

    def __init__(self, qconfig: QNetworkConfig | None = None, config: TrainerConfig | None = None):
        self.config = config or TrainerConfig()
        self.online = QNetwork(qconfig, seed=self.config.seed)
        self.target = QNetwork(qconfig, seed=self.config.seed)
        self.target.copy_weights_from(self.online)
        self.buffer: deque[Transition] = deque(maxlen=self.config.buffer_capacity)
        self.rng = np.random.default_rng(self.config.seed)
        self.optimizer = Adam(self.online.parameters(), lr=self.config.learning_rate)
        self.episodes_trained = 0
        self.last_epsilon = self.config.epsilon_start

    def epsilon_at(self, episode: int, max_episode: int) -> float:
        cfg = self.config
        decay_span = max(1.0, cfg.epsilon_decay_fraction * max_episode)
        frac = min(1.0, episode / decay_span)
        return cfg.epsilon_start + frac * (cfg.epsilon_final - cfg.epsilon_start)

    def double_q_target(self, transition: Transition) -> float:
        """Terminal transitions return the raw reward; otherwise bootstrap with
        the online argmax evaluated by the target network."""
        if transition.interval_end or transition.next_state is None:
            return float(transition.reward)
        nxt = transition.next_state
        best = int(np.argmax(self.online.q_values(nxt)))
        target_q = self.target.q_values(nxt)[best]
        return float(transition.reward + self.config.gamma * target_q)

    def train_step(self) -> float | None:
        cfg = self.config
        if len(self.buffer) < cfg.batch_size:
            return None
        picks = self.rng.choice(len(self.buffer), size=cfg.batch_size, replace=False)
        batch = [self.buffer[int(i)] for i in picks]
        targets = [self.double_q_target(tr) for tr in batch]
        self.online.zero_grad()
        total = 0.0
        for tr, y in zip(batch, targets):
            q = self.online.q_values(tr.state)
            diff = float(q[tr.action]) - y
            total += diff * diff
            dq = np.zeros_like(q)
            dq[tr.action] = 2.0 * diff / cfg.batch_size
            self.online.backward(dq)
        self.optimizer.step()
        return total / cfg.batch_size

    def sync_target(self) -> None:
        self.target.copy_weights_from(self.online)

    def train(
        self,
        instances: Sequence[Instance],
        max_episode: int,
    ) -> list[dict]:
        """Run the full loop over episodes cycling through ``instances``.

        Returns one log row per episode: episode index, mean loss of the
        episode's gradient steps (NaN before the buffer warms up), NUV, TTL,
        TC and the exploration rate used.
        """
        if not instances:
            raise ValueError("need at least one training instance")
        log: list[dict] = []
        for episode in range(max_episode):
            eps = self.epsilon_at(episode, max_episode)
            self.last_epsilon = eps
            instance = instances[episode % len(instances)]
            policy = make_learned_policy(self.online, epsilon=eps, rng=self.rng)
            report, transitions = run_episode(
                instance, policy, record=True, alpha=self.config.alpha
            )
            self.buffer.extend(transitions)
            losses = [
                loss
                for _ in range(self.config.steps_per_episode)
                if (loss := self.train_step()) is not None
            ]
            self.episodes_trained += 1
            if self.episodes_trained % self.config.target_period == 0:
                self.sync_target()
            log.append(
                {
                    "episode": episode,
                    "loss": float(np.mean(losses)) if losses else float("nan"),
                    "nuv": report.nuv,
                    "ttl": report.ttl,
                    "tc": report.tc,
                    "epsilon": eps,
                }
            )
        return log

    def save_checkpoint(self, path: str | Path) -> Path:
        tensors = {f"online.{n}": p for n, p, _ in self.online.parameters()}
        tensors.update({f"target.{n}": p for n, p, _ in self.target.parameters()})
        meta = {
            "qnetwork_config": self.online.config.to_dict(),
            "trainer_config": self.config.to_dict(),
            "episodes_trained": self.episodes_trained,
            "epsilon": self.last_epsilon,
            "rng_state": _rng_state_to_json(self.rng),
        }
        return save_tensors(path, tensors, meta)

    @classmethod
    def load_checkpoint(cls, path: str | Path) -> "Trainer":
        tensors, meta = load_tensors(path)
        qconfig = QNetworkConfig.from_dict(meta["qnetwork_config"])
        tconfig = TrainerConfig.from_dict(meta["trainer_config"])
        trainer = cls(qconfig, tconfig)
        for net, prefix in ((trainer.online, "online."), (trainer.target, "target.")):
            mine = {name: p for name, p, _ in net.parameters()}
            for name, p in mine.items():
                p[...] = tensors[prefix + name]
        trainer.episodes_trained = int(meta["episodes_trained"])
        trainer.last_epsilon = float(meta.get("epsilon", tconfig.epsilon_start))
        trainer.rng = _rng_state_from_json(meta["rng_state"])
        return trainer


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    state = copy.deepcopy(rng.bit_generator.state)

    def convert(obj):
        if isinstance(obj, dict):
            return {k: convert(v) for k, v in obj.items()}
        if isinstance(obj, np.ndarray):
            return {"__ndarray__": obj.tolist(), "dtype": str(obj.dtype)}
        if isinstance(obj, (np.integer,)):
            return int(obj)
        return obj

    return convert(state)


def _rng_state_from_json(doc: dict) -> np.random.Generator:
    def restore(obj):
        if isinstance(obj, dict):
            if "__ndarray__" in obj:
                return np.array(obj["__ndarray__"], dtype=obj["dtype"])
            return {k: restore(v) for k, v in obj.items()}
        return obj

    state = restore(doc)
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
