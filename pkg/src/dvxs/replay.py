"""Bounded FIFO transition store with contiguous-sequence sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .params import read_arrays, write_arrays
from .world_model import ACTION_DIM


@dataclass
class Transition:
    observation: np.ndarray  # raw scan, meters
    action: np.ndarray       # normalized [-1,1]
    reward_ext: float
    reward_int: float
    done: bool
    episode: int


@dataclass
class SequenceBatch:
    obs: np.ndarray          # [B,T,obs_len]
    actions: np.ndarray      # [B,T,2]
    rewards_ext: np.ndarray  # [B,T]
    rewards_int: np.ndarray  # [B,T]
    dones: np.ndarray        # [B,T] bool


class NotReady(RuntimeError):
    """No episode long enough to sample the requested sequence length."""


class ReplayBuffer:
    def __init__(self, capacity: int, obs_len: int = 360):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs_len = obs_len
        self.obs = np.zeros((self.capacity, obs_len), np.float32)
        self.actions = np.zeros((self.capacity, ACTION_DIM), np.float32)
        self.rewards_ext = np.zeros(self.capacity, np.float32)
        self.rewards_int = np.zeros(self.capacity, np.float32)
        self.dones = np.zeros(self.capacity, bool)
        self.episodes = np.zeros(self.capacity, np.int64)
        self.total = 0  # absolute number of appends
        self._spans: deque[list] = deque()  # [episode, first_abs, last_abs]

    def __len__(self):
        return min(self.total, self.capacity)

    @property
    def oldest(self) -> int:
        return max(0, self.total - self.capacity)

    def append(self, t: Transition):
        i = self.total % self.capacity
        self.obs[i] = t.observation
        self.actions[i] = t.action
        self.rewards_ext[i] = t.reward_ext
        self.rewards_int[i] = t.reward_int
        self.dones[i] = t.done
        self.episodes[i] = t.episode
        if self._spans and self._spans[-1][0] == t.episode:
            self._spans[-1][2] = self.total
        else:
            self._spans.append([t.episode, self.total, self.total])
        self.total += 1
        while self._spans and self._spans[0][2] < self.oldest:
            self._spans.popleft()

    def ready(self, seq_len: int) -> bool:
        oldest = self.oldest
        for _, first, last in self._spans:
            if last - max(first, oldest) + 1 >= seq_len:
                return True
        return False

    def sample_sequences(self, batch: int, seq_len: int, rng: np.random.Generator) -> SequenceBatch:
        """Uniform over all in-episode windows of length seq_len."""
        if not self.ready(seq_len):
            raise NotReady(f"no stored episode holds {seq_len} contiguous steps yet")
        oldest = self.oldest
        starts = np.empty(batch, np.int64)
        filled = 0
        while filled < batch:
            s = int(rng.integers(oldest, self.total - seq_len + 1))
            if self.episodes[s % self.capacity] == self.episodes[(s + seq_len - 1) % self.capacity]:
                starts[filled] = s
                filled += 1
        idx = (starts[:, None] + np.arange(seq_len)[None, :]) % self.capacity
        return SequenceBatch(
            obs=self.obs[idx], actions=self.actions[idx],
            rewards_ext=self.rewards_ext[idx], rewards_int=self.rewards_int[idx],
            dones=self.dones[idx])

    # -- persistence ---------------------------------------------------------

    def state_arrays(self) -> dict:
        n = len(self)
        lo = self.oldest
        idx = (lo + np.arange(n)) % self.capacity
        return {
            "replay.obs": self.obs[idx],
            "replay.actions": self.actions[idx],
            "replay.rewards_ext": self.rewards_ext[idx],
            "replay.rewards_int": self.rewards_int[idx],
            "replay.dones": self.dones[idx].astype(np.float32),
            "replay.episodes": self.episodes[idx].astype(np.float32),
            "replay.meta": np.array([self.capacity, self.total], np.float32),
        }

    @classmethod
    def from_state_arrays(cls, arrays: dict) -> "ReplayBuffer":
        capacity, total = (int(v) for v in arrays["replay.meta"])
        obs = arrays["replay.obs"]
        buf = cls(capacity, obs_len=obs.shape[1] if obs.ndim == 2 else 360)
        episodes = arrays["replay.episodes"].astype(np.int64)
        dones = arrays["replay.dones"].astype(bool)
        first = total - obs.shape[0]
        for k in range(obs.shape[0]):
            buf.append(Transition(obs[k], arrays["replay.actions"][k],
                                  float(arrays["replay.rewards_ext"][k]),
                                  float(arrays["replay.rewards_int"][k]),
                                  bool(dones[k]), int(episodes[k])))
        # restore the absolute counter so resumed indices line up
        if first > 0:
            buf.total = total
            shift = first % capacity
            if shift:
                for name in ("obs", "actions", "rewards_ext", "rewards_int", "dones", "episodes"):
                    arr = getattr(buf, name)
                    arr[...] = np.roll(arr, shift, axis=0)
            for span in buf._spans:
                span[1] += first
                span[2] += first
        return buf

    def save(self, path):
        write_arrays(path, self.state_arrays())

    @classmethod
    def load(cls, path) -> "ReplayBuffer":
        arrays, _ = read_arrays(path)
        return cls.from_state_arrays(arrays)
