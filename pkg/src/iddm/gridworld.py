"""Gridworld with ``k`` functionally equivalent variants of each move.

Action ``4 * variant + direction`` moves one cell in ``direction`` (left, right,
up, down). Variant 0 is the original move and costs ``original_penalty``; every
other variant has the same effect but costs ``variant_penalty``. Stepping into
the goal pays ``goal_reward`` and moves to an absorbing sink. Bumping into a
wall or the border leaves the agent in place and still costs the move.
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ValidationError
from .mdp import TabularMdp, TabularPolicy, action_probs

logger = logging.getLogger(__name__)

DIRECTIONS = ("left", "right", "up", "down")
_DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))

# 7x7 reference maze; '#' wall, 'S' start, 'G' goal
REFERENCE_MAZE = (
    "S......",
    "..###..",
    "....#..",
    "##..#.#",
    ".......",
    ".##.##.",
    "......G",
)


@dataclass(frozen=True)
class GridSpec:
    width: int = 7
    height: int = 7
    walls: frozenset = field(default_factory=frozenset)
    start: tuple = (0, 0)
    goal: tuple = (6, 6)
    k_choices: int = 1
    goal_reward: float = 100.0
    original_penalty: float = -1.0
    variant_penalty: float = -5.0
    max_steps: int = 100
    gamma: float = 0.99
    # wrap-around borders: no bump transitions, so k=1 dynamics are injective
    wrap: bool = False

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(int(v) for v in c) for c in self.walls))
        object.__setattr__(self, "start", tuple(int(v) for v in self.start))
        object.__setattr__(self, "goal", tuple(int(v) for v in self.goal))
        for name in ("width", "height", "k_choices", "max_steps"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValidationError(f"gamma must lie in (0, 1), got {self.gamma}")
        for name in ("start", "goal"):
            if not self.in_bounds(getattr(self, name)):
                raise ValidationError(f"{name} {getattr(self, name)} lies outside the grid")
        for c in self.walls:
            if not self.in_bounds(c):
                raise ValidationError(f"wall {c} lies outside the grid")
        if self.start == self.goal:
            raise ValidationError("start and goal must differ")
        if self.start in self.walls or self.goal in self.walls:
            raise ValidationError("start and goal must not be walls")
        if self.goal not in self._flood(self.start):
            raise ValidationError(f"goal {self.goal} is not reachable from start {self.start}")

    @classmethod
    def from_ascii(cls, rows, **kwargs):
        if isinstance(rows, str):
            rows = rows.strip().splitlines()
        rows = [r.strip() for r in rows]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValidationError("maze rows must be non-empty and of equal length")
        walls, start, goal = set(), None, None
        for y, row in enumerate(rows):
            for x, ch in enumerate(row):
                if ch == "#":
                    walls.add((x, y))
                elif ch == "S":
                    start = (x, y)
                elif ch == "G":
                    goal = (x, y)
        if start is None or goal is None:
            raise ValidationError("maze needs one 'S' and one 'G'")
        return cls(width=len(rows[0]), height=len(rows), walls=frozenset(walls),
                   start=start, goal=goal, **kwargs)

    @classmethod
    def reference(cls, **kwargs):
        return cls.from_ascii(REFERENCE_MAZE, **kwargs)

    def in_bounds(self, cell):
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def neighbor(self, cell, direction):
        dx, dy = _DELTAS[direction]
        x, y = cell[0] + dx, cell[1] + dy
        if self.wrap:
            x, y = x % self.width, y % self.height
        nxt = (x, y)
        if not self.in_bounds(nxt) or nxt in self.walls:
            return cell
        return nxt

    def _flood(self, origin):
        seen, queue = {origin}, deque([origin])
        while queue:
            c = queue.popleft()
            for d in range(4):
                n = self.neighbor(c, d)
                if n not in seen:
                    seen.add(n)
                    queue.append(n)
        return seen

    def shortest_path_length(self):
        """Breadth-first number of moves from start to goal."""
        dist, queue = {self.start: 0}, deque([self.start])
        while queue:
            c = queue.popleft()
            if c == self.goal:
                return dist[c]
            for d in range(4):
                n = self.neighbor(c, d)
                if n not in dist:
                    dist[n] = dist[c] + 1
                    queue.append(n)
        raise ValidationError("goal unreachable")

    def to_dict(self):
        d = asdict(self)
        d["walls"] = sorted([list(c) for c in self.walls])
        d["start"] = list(self.start)
        d["goal"] = list(self.goal)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "maze" in d:
            return cls.from_ascii(d.pop("maze"), **d)
        if "walls" in d:
            d["walls"] = frozenset(tuple(c) for c in d["walls"])
        return cls(**d)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class GridAction:
    direction: int
    variant: int

    @property
    def index(self):
        return 4 * self.variant + self.direction

    @classmethod
    def from_index(cls, index, k_choices):
        if not 0 <= index < 4 * k_choices:
            raise ValidationError(f"action {index} out of range [0, {4 * k_choices})")
        return cls(direction=index % 4, variant=index // 4)


class Gridworld:
    """Exact tabular export of a :class:`GridSpec` plus cell/state bookkeeping.

    States are the non-wall cells in row-major order followed by one sink.
    The goal cell is kept as an (unreachable) absorbing state.
    """

    def __init__(self, spec: GridSpec):
        self.spec = spec
        self.cells = [(x, y) for y in range(spec.height) for x in range(spec.width)
                      if (x, y) not in spec.walls]
        self.index = {c: i for i, c in enumerate(self.cells)}
        self.sink = len(self.cells)
        self.n_states = self.sink + 1
        self.n_actions = 4 * spec.k_choices
        self.mdp = self._build()
        self.successor = self.mdp.transition.argmax(axis=2)

    def _build(self):
        spec, S, A = self.spec, self.n_states, self.n_actions
        T = np.zeros((S, A, S))
        R = np.zeros((S, A))
        goal = self.index[spec.goal]
        terminal = np.zeros(S, dtype=bool)
        terminal[[goal, self.sink]] = True
        for s, cell in enumerate(self.cells):
            if s == goal:
                T[s, :, s] = 1.0
                continue
            for a in range(A):
                act = GridAction.from_index(a, spec.k_choices)
                nxt = spec.neighbor(cell, act.direction)
                if nxt == spec.goal:
                    T[s, a, self.sink] = 1.0
                    R[s, a] = spec.goal_reward
                else:
                    T[s, a, self.index[nxt]] = 1.0
                    R[s, a] = spec.original_penalty if act.variant == 0 else spec.variant_penalty
        T[self.sink, :, self.sink] = 1.0
        mu = np.zeros(S)
        mu[self.index[spec.start]] = 1.0
        return TabularMdp(transition=T, init=mu, gamma=spec.gamma, reward=R, terminal=terminal)

    @property
    def start_state(self):
        return self.index[self.spec.start]

    def env(self, seed=None):
        return GridEnv(self, seed)


def build_gridworld(spec: GridSpec) -> TabularMdp:
    return Gridworld(spec).mdp


def env_step(mdp: TabularMdp, state, action, rng):
    """Sample one transition; returns ``(next_state, reward, entered_terminal)``."""
    if mdp.terminal[state]:
        raise ValidationError(f"cannot step from terminal state {state}")
    cdf = np.cumsum(mdp.transition[state, action])
    nxt = int(min(np.searchsorted(cdf, rng.random(), side="right"), mdp.n_states - 1))
    reward = 0.0 if mdp.reward is None else float(mdp.reward[state, action])
    return nxt, reward, bool(mdp.terminal[nxt])


class GridEnv:
    """Seeded simulator over the exported MDP with ``max_steps`` truncation."""

    def __init__(self, world: Gridworld, seed=None):
        self.world = world
        self.mdp = world.mdp
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.t = 0

    def reset(self):
        self.state = int(np.searchsorted(np.cumsum(self.mdp.init), self.rng.random(), side="right"))
        self.t = 0
        return self.state

    def step(self, action):
        if self.state is None:
            raise ValidationError("call reset() before step()")
        nxt, reward, terminal = env_step(self.mdp, self.state, action, self.rng)
        self.t += 1
        self.state = nxt
        done = terminal or self.t >= self.world.spec.max_steps
        return nxt, reward, done


@dataclass
class Rollouts:
    """Padded batch of complete episodes, shape (n_episodes, max_steps)."""

    s: np.ndarray
    a: np.ndarray
    sn: np.ndarray
    reward: np.ndarray
    mask: np.ndarray
    terminated: np.ndarray  # episode reached an absorbing state

    @property
    def n_steps(self):
        return int(self.mask.sum())

    @property
    def returns(self):
        return (self.reward * self.mask).sum(axis=1)

    def flat(self):
        m = self.mask
        return np.stack([self.s[m], self.a[m], self.sn[m]], axis=1)


def collect_rollouts(mdp: TabularMdp, policy: TabularPolicy, n_episodes, max_steps, rng) -> Rollouts:
    """Run ``n_episodes`` episodes in lockstep until each terminates or hits ``max_steps``."""
    probs = action_probs(mdp, policy)
    a_cdf = np.cumsum(probs, axis=1)
    t_cdf = np.cumsum(mdp.transition, axis=2)
    reward = np.zeros((mdp.n_states, mdp.n_actions)) if mdp.reward is None else mdp.reward
    E, H = n_episodes, max_steps
    S_, A_, SN = (np.zeros((E, H), dtype=np.int64) for _ in range(3))
    R = np.zeros((E, H))
    mask = np.zeros((E, H), dtype=bool)
    terminated = np.zeros(E, dtype=bool)
    state = np.searchsorted(np.cumsum(mdp.init), rng.random(E), side="right")
    state = np.minimum(state, mdp.n_states - 1)
    alive = ~mdp.terminal[state]
    for t in range(H):
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        st = state[idx]
        act = (rng.random(idx.size)[:, None] >= a_cdf[st]).sum(axis=1)
        act = np.minimum(act, mdp.n_actions - 1)
        nxt = (rng.random(idx.size)[:, None] >= t_cdf[st, act]).sum(axis=1)
        nxt = np.minimum(nxt, mdp.n_states - 1)
        S_[idx, t], A_[idx, t], SN[idx, t], R[idx, t] = st, act, nxt, reward[st, act]
        mask[idx, t] = True
        state[idx] = nxt
        ended = mdp.terminal[nxt]
        terminated[idx[ended]] = True
        alive[idx[ended]] = False
    return Rollouts(s=S_, a=A_, sn=SN, reward=R, mask=mask, terminated=terminated)


def value_iteration(mdp: TabularMdp, tol=1e-10, max_iter=100_000):
    if mdp.reward is None:
        raise ValidationError("expert training needs a reward table")
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        Q = mdp.reward + mdp.gamma * mdp.transition @ V
        V_new = Q.max(axis=1)
        if np.max(np.abs(V_new - V)) < tol:
            return mdp.reward + mdp.gamma * mdp.transition @ V_new
        V = V_new
    raise RuntimeError(f"value iteration did not reach {tol:g} in {max_iter} sweeps")


def train_expert(mdp: TabularMdp, temperature=0.01) -> TabularPolicy:
    """Softmax over optimal Q-values; low temperature gives a near-deterministic expert."""
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    Q = value_iteration(mdp)
    return TabularPolicy(Q / temperature)


@dataclass
class Demonstration:
    """Expert episodes as (s, a or None, s') records plus provenance metadata."""

    episodes: list
    meta: dict

    def __post_init__(self):
        for ep in self.episodes:
            for prev, nxt in zip(ep, ep[1:]):
                if prev[2] != nxt[0]:
                    raise ValidationError("consecutive records within an episode must chain")
        if not self.meta.get("includes_actions", True):
            if any(rec[1] is not None for ep in self.episodes for rec in ep):
                raise ValidationError("includes_actions is false but records carry actions")

    @property
    def pair_count(self):
        return sum(len(ep) for ep in self.episodes)

    @property
    def includes_actions(self):
        return bool(self.meta["includes_actions"])

    def transitions(self):
        """(n, 3) int array of (s, a, s'); missing actions are -1."""
        rows = [(s, -1 if a is None else a, sn) for ep in self.episodes for (s, a, sn) in ep]
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    def without_actions(self):
        meta = dict(self.meta, includes_actions=False)
        return Demonstration([[(s, None, sn) for (s, _, sn) in ep] for ep in self.episodes], meta)

    def to_jsonl(self):
        lines = [json.dumps({"meta": self.meta}, sort_keys=True)]
        for e, ep in enumerate(self.episodes):
            for t, (s, a, sn) in enumerate(ep):
                lines.append(json.dumps({"ep": e, "t": t, "s": s, "a": a, "sn": sn}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValidationError("empty demonstration file")
        head = json.loads(lines[0])
        if "meta" not in head:
            raise ValidationError("first line must be a {'meta': ...} object")
        episodes = {}
        for ln in lines[1:]:
            rec = json.loads(ln)
            episodes.setdefault(rec["ep"], []).append((rec["t"], rec["s"], rec["a"], rec["sn"]))
        eps = []
        for e in sorted(episodes):
            recs = sorted(episodes[e])
            eps.append([(s, a, sn) for (_, s, a, sn) in recs])
        demo = cls(eps, head["meta"])
        if demo.pair_count != demo.meta.get("pair_count", demo.pair_count):
            raise ValidationError("pair_count does not match the number of records")
        return demo

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_jsonl())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_jsonl(f.read())


def mdp_fingerprint(mdp: TabularMdp):
    return hashlib.sha256(mdp.to_json().encode()).hexdigest()


def collect_demos(mdp: TabularMdp, policy: TabularPolicy, n_pairs, include_actions=True, seed=0,
                  max_steps=100, fingerprint=None) -> Demonstration:
    """Roll whole episodes until ``n_pairs`` records exist, then truncate to exactly ``n_pairs``."""
    if n_pairs < 1:
        raise ValidationError("n_pairs must be >= 1")
    if (policy.n_states, policy.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ValidationError("policy does not match the mdp")
    rng = np.random.default_rng(seed)
    probs = action_probs(mdp, policy)
    episodes, count = [], 0
    while count < n_pairs:
        s = int(min(np.searchsorted(np.cumsum(mdp.init), rng.random(), side="right"), mdp.n_states - 1))
        ep = []
        for _ in range(max_steps):
            if mdp.terminal[s]:
                break
            a = int(min(np.searchsorted(np.cumsum(probs[s]), rng.random(), side="right"), mdp.n_actions - 1))
            sn, _, term = env_step(mdp, s, a, rng)
            ep.append((s, a if include_actions else None, sn))
            s = sn
            if term:
                break
        if not ep:
            raise ValidationError("initial state is terminal; no transitions to record")
        episodes.append(ep)
        count += len(ep)
    excess = count - n_pairs
    if excess:
        episodes[-1] = episodes[-1][: len(episodes[-1]) - excess]
    meta = {
        "env_fingerprint": fingerprint or mdp_fingerprint(mdp),
        "includes_actions": bool(include_actions),
        "seed": seed,
        "pair_count": n_pairs,
        "n_episodes": len(episodes),
    }
    return Demonstration(episodes, meta)
