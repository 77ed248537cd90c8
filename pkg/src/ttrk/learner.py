"""Q-learning on the tracking environment: replay buffer, train/target
networks over (egocentric map stack, feature vector), TD updates,
epsilon-greedy acting, and deterministic JSON checkpoints.

All randomness flows from TrainConfig.seed through named numpy streams;
network weights are initialized from one of those streams, so training is
reproducible bit-for-bit at a fixed thread count (torch_threads pins it).
"""
from __future__ import annotations

import base64
import json
import math
import os
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch
from torch import nn

from .env import Env, FeatureScaling, RLState

N_ACTIONS = 12

# conv: (out_channels, kernel, stride) pairs; dense: hidden widths
PROFILES = {
    "paper": {"in_channels": 5, "in_size": 25, "conv": [(20, 4, 3), (40, 3, 2)], "dense": [512, 512, 512]},
    "desk": {"in_channels": 5, "in_size": 25, "conv": [(8, 4, 3), (16, 3, 2)], "dense": [128, 128]},
    "tiny": {"in_channels": 2, "in_size": 7, "conv": [(3, 3, 2), (4, 2, 1)], "dense": [16]},
}


@dataclass
class TrainConfig:
    gamma: float = 0.99
    steps: int = 30_000
    batch: int = 64
    lr: float = 5e-4
    target_sync: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10_000
    buffer_capacity: int = 50_000
    warmup: int = 1_000
    checkpoint_every: int = 5_000
    seed: int = 0
    profile: str = "desk"
    torch_threads: int = 1
    # learner-boundary scaling of stored rewards (log-det sums are large)
    reward_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["version"] = 1
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d.pop("version", None)
        return cls(**d)


def effective_horizon(gamma: float, threshold: float = 1e-3) -> int:
    """Largest t with gamma**t strictly above the threshold."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    t = max(int(math.log(threshold) / math.log(gamma)) - 2, 0)
    while gamma ** (t + 1) > threshold:
        t += 1
    return t


class QNetwork(nn.Module):
    """Two conv layers over the map stack, flattened output concatenated
    with the feature vector, then dense layers and a linear Q head."""

    def __init__(self, n_phi: int, n_actions: int = N_ACTIONS, profile: str = "desk"):
        super().__init__()
        spec = PROFILES[profile]
        self.profile = profile
        self.n_phi = n_phi
        self.n_actions = n_actions
        convs = []
        ch = spec["in_channels"]
        for out_ch, kernel, stride in spec["conv"]:
            convs.append(nn.Conv2d(ch, out_ch, kernel, stride=stride))
            convs.append(nn.ReLU())
            ch = out_ch
        self.conv = nn.Sequential(*convs)
        with torch.no_grad():
            dummy = torch.zeros(1, spec["in_channels"], spec["in_size"], spec["in_size"])
            self.n_flat = int(self.conv(dummy).reshape(1, -1).shape[1])
        dense = []
        width = self.n_flat + n_phi
        for hidden in spec["dense"]:
            dense.append(nn.Linear(width, hidden))
            dense.append(nn.ReLU())
            width = hidden
        dense.append(nn.Linear(width, n_actions))
        self.dense = nn.Sequential(*dense)

    def forward(self, maps: torch.Tensor, phi: torch.Tensor) -> torch.Tensor:
        z = self.conv(maps).reshape(maps.shape[0], -1)
        return self.dense(torch.cat([z, phi], dim=1))


def init_parameters(net: QNetwork, rng: np.random.Generator) -> None:
    """Uniform fan-in initialization drawn from a numpy stream, keeping
    weight init independent of torch's global RNG."""
    with torch.no_grad():
        for name, p in net.named_parameters():
            if p.dim() > 1:
                fan_in = int(np.prod(p.shape[1:]))
            else:
                fan_in = int(p.shape[0])
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            vals = rng.uniform(-bound, bound, size=tuple(p.shape))
            p.copy_(torch.from_numpy(vals.astype(np.float32)).to(p.dtype))


def state_to_tensors(state: RLState, scaling: FeatureScaling, dtype=torch.float32):
    maps = torch.from_numpy(np.ascontiguousarray(np.transpose(state.maps, (2, 0, 1)))).to(dtype)
    phi = torch.from_numpy(scaling.apply(state.phi)).to(dtype)
    return maps, phi


def forward(net: QNetwork, state: RLState, scaling: FeatureScaling) -> np.ndarray:
    """Q-values for one environment state."""
    net.eval()
    with torch.no_grad():
        maps, phi = state_to_tensors(state, scaling)
        q = net(maps.unsqueeze(0), phi.unsqueeze(0))
    return q.squeeze(0).numpy()


def act(
    net: QNetwork,
    state: RLState,
    scaling: FeatureScaling,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    """Epsilon-greedy action; greedy ties resolve to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(net.n_actions))
    return int(np.argmax(forward(net, state, scaling)))


class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling. Stored map stacks
    are float16 to keep the full-capacity footprint manageable."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._data: List[tuple] = []
        self._next = 0

    def __len__(self) -> int:
        return len(self._data)

    def push(self, transition: tuple) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._next] = transition
        self._next = (self._next + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch: int) -> List[tuple]:
        idx = rng.integers(len(self._data), size=batch)
        return [self._data[i] for i in idx]


def _batch_tensors(transitions: List[tuple]):
    maps, phi, action, reward, nmaps, nphi, done = zip(*transitions)
    return (
        torch.from_numpy(np.stack(maps).astype(np.float32)),
        torch.from_numpy(np.stack(phi).astype(np.float32)),
        torch.from_numpy(np.asarray(action, dtype=np.int64)),
        torch.from_numpy(np.asarray(reward, dtype=np.float32)),
        torch.from_numpy(np.stack(nmaps).astype(np.float32)),
        torch.from_numpy(np.stack(nphi).astype(np.float32)),
        torch.from_numpy(np.asarray(done, dtype=np.float32)),
    )


def td_update(
    net: QNetwork,
    target_net: QNetwork,
    transitions: List[tuple],
    cfg: TrainConfig,
    optimizer: torch.optim.Optimizer,
) -> float:
    """One squared-TD-error gradient step; returns the mean loss."""
    maps, phi, action, reward, nmaps, nphi, done = _batch_tensors(transitions)
    net.train()
    q = net(maps, phi).gather(1, action.unsqueeze(1)).squeeze(1)
    with torch.no_grad():
        nq = target_net(nmaps, nphi).max(dim=1).values
        y = reward + cfg.gamma * (1.0 - done) * nq
    loss = torch.mean((q - y) ** 2)
    if not torch.isfinite(loss):
        raise RuntimeError("non-finite TD loss")
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def _epsilon(cfg: TrainConfig, step: int) -> float:
    frac = min(step / max(cfg.eps_decay_steps, 1), 1.0)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def _store_state(state: RLState, scaling: FeatureScaling):
    """Buffer representation: channel-first float16 maps, scaled phi."""
    maps = np.ascontiguousarray(np.transpose(state.maps, (2, 0, 1))).astype(np.float16)
    return maps, scaling.apply(state.phi).astype(np.float32)


# -- checkpoint format ---------------------------------------------------


def _b64(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr).tobytes()).decode("ascii")


def _unb64(text: str, dtype, shape) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype=dtype).reshape(shape).copy()


def _params_doc(net: QNetwork) -> list:
    out = []
    for name, p in net.state_dict().items():
        arr = p.detach().numpy().astype("<f4")
        out.append({"name": name, "shape": list(arr.shape), "data": _b64(arr)})
    return out


def _load_params(net: QNetwork, doc: list) -> None:
    state = {}
    for entry in doc:
        state[entry["name"]] = torch.from_numpy(
            _unb64(entry["data"], "<f4", entry["shape"]).astype(np.float32)
        )
    net.load_state_dict(state)


def _optimizer_doc(optimizer: torch.optim.Optimizer, net: QNetwork) -> list:
    name_of = {id(p): n for n, p in net.named_parameters()}
    out = []
    for group in optimizer.param_groups:
        for p in group["params"]:
            st = optimizer.state.get(p, {})
            if not st:
                continue
            out.append(
                {
                    "name": name_of[id(p)],
                    "step": int(st["step"]),
                    "exp_avg": _b64(st["exp_avg"].numpy().astype("<f4")),
                    "exp_avg_sq": _b64(st["exp_avg_sq"].numpy().astype("<f4")),
                }
            )
    return out


def _load_optimizer(optimizer: torch.optim.Optimizer, net: QNetwork, doc: list) -> None:
    params = dict(net.named_parameters())
    for entry in doc:
        p = params[entry["name"]]
        shape = tuple(p.shape)
        optimizer.state[p] = {
            "step": torch.tensor(float(entry["step"])),
            "exp_avg": torch.from_numpy(_unb64(entry["exp_avg"], "<f4", shape).astype(np.float32)),
            "exp_avg_sq": torch.from_numpy(
                _unb64(entry["exp_avg_sq"], "<f4", shape).astype(np.float32)
            ),
        }


def save_checkpoint(
    path,
    net: QNetwork,
    cfg: TrainConfig,
    scaling: FeatureScaling,
    step: int,
    extra: Optional[dict] = None,
) -> None:
    doc = {
        "version": 1,
        "kind": "full" if extra else "weights",
        "profile": net.profile,
        "n_phi": net.n_phi,
        "n_actions": net.n_actions,
        "step": step,
        "train_config": cfg.to_dict(),
        "scaling": asdict(scaling),
        "params": _params_doc(net),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path) -> dict:
    with open(path) as f:
        return json.load(f)


def network_from_checkpoint(doc: dict):
    """Rebuild (net, scaling) from a checkpoint document."""
    net = QNetwork(doc["n_phi"], doc["n_actions"], doc["profile"])
    _load_params(net, doc["params"])
    scaling = FeatureScaling(**doc["scaling"])
    return net, scaling


# -- training loop -------------------------------------------------------


def _rng_state_doc(rngs: Dict[str, np.random.Generator]) -> dict:
    return {k: json.loads(json.dumps(g.bit_generator.state)) for k, g in rngs.items()}


def _restore_rngs(doc: dict) -> Dict[str, np.random.Generator]:
    out = {}
    for k, state in doc.items():
        g = np.random.default_rng(0)
        g.bit_generator.state = state
        out[k] = g
    return out


def _buffer_doc(buffer: ReplayBuffer) -> dict:
    if len(buffer) == 0:
        return {"n": 0, "next": buffer._next}
    maps, phi, action, reward, nmaps, nphi, done = zip(*buffer._data)
    return {
        "n": len(buffer),
        "next": buffer._next,
        "maps": _b64(np.stack(maps).astype("<f2")),
        "phi": _b64(np.stack(phi).astype("<f4")),
        "action": _b64(np.asarray(action, dtype="<i4")),
        "reward": _b64(np.asarray(reward, dtype="<f8")),
        "nmaps": _b64(np.stack(nmaps).astype("<f2")),
        "nphi": _b64(np.stack(nphi).astype("<f4")),
        "done": _b64(np.asarray(done, dtype="<i1")),
        "shape_maps": list(np.asarray(maps[0]).shape),
        "n_phi": int(np.asarray(phi[0]).shape[0]),
    }


def _restore_buffer(doc: dict, capacity: int) -> ReplayBuffer:
    buf = ReplayBuffer(capacity)
    n = doc["n"]
    if n:
        sm = [n] + list(doc["shape_maps"])
        maps = _unb64(doc["maps"], "<f2", sm)
        phi = _unb64(doc["phi"], "<f4", (n, doc["n_phi"]))
        action = _unb64(doc["action"], "<i4", (n,))
        reward = _unb64(doc["reward"], "<f8", (n,))
        nmaps = _unb64(doc["nmaps"], "<f2", sm)
        nphi = _unb64(doc["nphi"], "<f4", (n, doc["n_phi"]))
        done = _unb64(doc["done"], "<i1", (n,))
        for i in range(n):
            buf._data.append(
                (maps[i], phi[i], int(action[i]), float(reward[i]), nmaps[i], nphi[i], bool(done[i]))
            )
    buf._next = doc["next"]
    return buf


def train(
    env_factory: Callable[[], Env],
    cfg: TrainConfig,
    out_dir=None,
    resume_from=None,
    save_state: bool = False,
) -> dict:
    """Run the training loop for exactly cfg.steps environment steps.

    Transitions are stored every step; one TD update runs per step once
    the warmup fill is reached; the target network syncs on a fixed step
    period. Weight checkpoints are written every checkpoint_every steps
    when out_dir is given; full resume states (buffer included) are
    written at episode boundaries when save_state is set.
    """
    torch.set_num_threads(cfg.torch_threads)
    env = env_factory()
    scaling = env.feature_scaling()
    n_phi = 6 * env.cfg.n_targets + 2

    if resume_from is not None:
        doc = load_checkpoint(resume_from)
        if doc.get("kind") != "full":
            raise ValueError("resume requires a full checkpoint (save_state=True)")
        net, scaling = network_from_checkpoint(doc)
        target_net = QNetwork(doc["n_phi"], doc["n_actions"], doc["profile"])
        _load_params(target_net, doc["target_params"])
        optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
        _load_optimizer(optimizer, net, doc["optimizer"])
        rngs = _restore_rngs(doc["rng"])
        buffer = _restore_buffer(doc["buffer"], cfg.buffer_capacity)
        global_step = doc["step"]
        episode_count = doc["episode"]
    else:
        children = np.random.SeedSequence(cfg.seed).spawn(3)
        rngs = {
            "init": np.random.default_rng(children[0]),
            "act": np.random.default_rng(children[1]),
            "sample": np.random.default_rng(children[2]),
        }
        net = QNetwork(n_phi, N_ACTIONS, cfg.profile)
        init_parameters(net, rngs["init"])
        target_net = QNetwork(n_phi, N_ACTIONS, cfg.profile)
        target_net.load_state_dict(net.state_dict())
        optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
        buffer = ReplayBuffer(cfg.buffer_capacity)
        global_step = 0
        episode_count = 0

    losses: List[tuple] = []
    episode_returns: List[tuple] = []
    final_path = None

    def maybe_checkpoint():
        if out_dir is not None:
            path = os.path.join(out_dir, f"checkpoint_step{global_step}.json")
            save_checkpoint(path, net, cfg, scaling, global_step)
            return path
        return None

    def save_resume(episode):
        if out_dir is not None and save_state:
            path = os.path.join(out_dir, f"resume_step{global_step}.json")
            save_checkpoint(
                path,
                net,
                cfg,
                scaling,
                global_step,
                extra={
                    "target_params": _params_doc(target_net),
                    "optimizer": _optimizer_doc(optimizer, net),
                    "rng": _rng_state_doc(rngs),
                    "buffer": _buffer_doc(buffer),
                    "episode": episode,
                },
            )

    while global_step < cfg.steps:
        ep_seed = int(rngs["init"].integers(2**63))
        state = env.reset(ep_seed)
        maps, phi = _store_state(state, scaling)
        ep_return = 0.0
        while not env.done and global_step < cfg.steps:
            eps = _epsilon(cfg, global_step)
            a = act(net, state, scaling, eps, rngs["act"])
            out = env.step(a)
            nmaps, nphi = _store_state(out.state, scaling)
            buffer.push((maps, phi, a, out.reward * cfg.reward_scale, nmaps, nphi, out.done))
            state, maps, phi = out.state, nmaps, nphi
            ep_return += out.reward
            global_step += 1
            if len(buffer) >= cfg.warmup:
                loss = td_update(net, target_net, buffer.sample(rngs["sample"], cfg.batch), cfg, optimizer)
                losses.append((global_step, loss, eps))
            if global_step % cfg.target_sync == 0:
                target_net.load_state_dict(net.state_dict())
            if global_step % cfg.checkpoint_every == 0:
                final_path = maybe_checkpoint() or final_path
        episode_count += 1
        episode_returns.append((episode_count, ep_seed, ep_return, env.t))
        save_resume(episode_count)

    if out_dir is not None:
        final_path = os.path.join(out_dir, "checkpoint_final.json")
        save_checkpoint(final_path, net, cfg, scaling, global_step)

    return {
        "net": net,
        "target_net": target_net,
        "scaling": scaling,
        "losses": losses,
        "episode_returns": episode_returns,
        "steps": global_step,
        "checkpoint": final_path,
    }
