"""Policy adapters with a common act(env) -> action-index interface, plus
the policy-spec string parser used by the command line.

Specs: "random", "greedy", "arvi[:key=value,...]" (receding-horizon
planner; keys horizon, execute, budget, time_budget, prune), and
"checkpoint:<path>" (greedy over a trained Q-network).
"""
from __future__ import annotations

from typing import List, Optional

import numpy as np

from .env import Env
from .planner import PlannerConfig, greedy_policy, plan, random_policy


class PolicySpecError(ValueError):
    pass


class RandomPolicy:
    name = "random"

    def __init__(self, seed: int = 0):
        self._seed = seed
        self.reset(seed)

    def reset(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def act(self, env: Env) -> int:
        return random_policy(self._rng)


class GreedyPolicy:
    name = "greedy"

    def reset(self, seed: int) -> None:
        pass

    def act(self, env: Env) -> int:
        return greedy_policy(env.snapshot())


class PlannerPolicy:
    """Replans every execute_steps steps and plays out the queued prefix."""

    name = "arvi"

    def __init__(self, cfg: Optional[PlannerConfig] = None):
        self.cfg = cfg or PlannerConfig()
        self._queue: List[int] = []
        self.decisions: List[dict] = []

    def reset(self, seed: int) -> None:
        self._queue = []
        self.decisions = []

    def act(self, env: Env) -> int:
        if not self._queue:
            actions, info = plan(env.snapshot(), self.cfg, return_info=True)
            self._queue = list(actions)
            self.decisions.append({"t": env.t, **info})
        return self._queue.pop(0)


class CheckpointPolicy:
    """Greedy (epsilon = 0) actions from a trained Q-network."""

    name = "checkpoint"

    def __init__(self, path):
        from . import learner

        self._learner = learner
        doc = learner.load_checkpoint(path)
        self.net, self.scaling = learner.network_from_checkpoint(doc)
        self.net.eval()
        self.path = str(path)

    def reset(self, seed: int) -> None:
        pass

    def act(self, env: Env) -> int:
        return int(np.argmax(self._learner.forward(self.net, env.state, self.scaling)))


def parse_policy(spec: str):
    """Build a policy from its command-line spec string."""
    head, _, rest = spec.partition(":")
    if head == "random":
        return RandomPolicy()
    if head == "greedy":
        return GreedyPolicy()
    if head == "arvi":
        kw = {}
        if rest:
            for item in rest.split(","):
                key, _, value = item.partition("=")
                if key not in ("horizon", "execute", "budget", "time_budget", "prune"):
                    raise PolicySpecError(f"unknown planner option {key!r}")
                try:
                    if key == "horizon":
                        kw["horizon"] = int(value)
                    elif key == "execute":
                        kw["execute_steps"] = int(value)
                    elif key == "budget":
                        kw["node_budget"] = int(value)
                    elif key == "time_budget":
                        kw["time_budget"] = float(value)
                        kw["node_budget"] = None
                    elif key == "prune":
                        kw["prune_cell"] = None if value in ("off", "none") else float(value)
                except ValueError as err:
                    raise PolicySpecError(f"bad planner option {item!r}: {err}")
        try:
            return PlannerPolicy(PlannerConfig(**kw))
        except ValueError as err:
            raise PolicySpecError(str(err))
    if head == "checkpoint":
        if not rest:
            raise PolicySpecError("checkpoint policy needs a path: checkpoint:<path>")
        try:
            return CheckpointPolicy(rest)
        except (OSError, KeyError, ValueError) as err:
            raise PolicySpecError(f"cannot load checkpoint {rest!r}: {err}")
    raise PolicySpecError(f"unknown policy spec {spec!r}")
