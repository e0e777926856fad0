"""Windowed training batches drawn from demonstration episodes."""

import numpy as np
import torch


def history_window(frames: np.ndarray, t: int, history_len: int) -> np.ndarray:
    """Frames strictly before t, left-padded by repeating the earliest one."""
    lo = max(0, t - history_len)
    window = [frames[i] for i in range(lo, t)]
    pad = window[0] if window else frames[0]
    while len(window) < history_len:
        window.insert(0, pad)
    return np.asarray(window, dtype=np.float32)


class WindowSampler:
    """Seeded sampler of (episode, t) training windows.

    Valid anchors satisfy 1 <= t and t + horizon < T_ep, so the history is
    strictly causal and the future-label frame exists.
    """

    def __init__(self, episodes, horizon: int, history_len: int,
                 windows_per_episode: int, seed: int):
        self.episodes = episodes
        self.horizon = horizon
        self.history_len = history_len
        self.windows_per_episode = windows_per_episode
        self.rng = np.random.default_rng(seed)
        self.text_cache = {}

    def epoch_indices(self):
        index = []
        for ei, ep in enumerate(self.episodes):
            hi = len(ep) - self.horizon - 1
            ts = self.rng.integers(1, hi, size=self.windows_per_episode)
            index.extend((ei, int(t)) for t in ts)
        order = self.rng.permutation(len(index))
        return [index[i] for i in order]

    def batches(self, batch_size: int, vocab, text_max_len: int, dtype):
        idx = self.epoch_indices()
        for start in range(0, len(idx) - batch_size + 1, batch_size):
            yield self.collate(idx[start:start + batch_size], vocab,
                               text_max_len, dtype)

    def collate(self, pairs, vocab, text_max_len: int, dtype):
        hist, frame, state, future, actions, ids, masks = [], [], [], [], [], [], []
        for ei, t in pairs:
            ep = self.episodes[ei]
            hist.append(history_window(ep.frames, t, self.history_len))
            frame.append(ep.frames[t])
            state.append(ep.states[t])
            future.append(ep.frames[t + self.horizon])
            actions.append(ep.actions[t:t + self.horizon])
            if ep.instruction not in self.text_cache:
                self.text_cache[ep.instruction] = vocab.encode(
                    ep.instruction, text_max_len)
            i, m = self.text_cache[ep.instruction]
            ids.append(i)
            masks.append(m)
        return {
            "history_frames": torch.as_tensor(np.stack(hist), dtype=dtype),
            "frame": torch.as_tensor(np.stack(frame), dtype=dtype),
            "state": torch.as_tensor(np.stack(state), dtype=dtype),
            "future_frame": torch.as_tensor(np.stack(future), dtype=dtype),
            "actions": torch.as_tensor(np.stack(actions), dtype=dtype),
            "text_ids": torch.as_tensor(np.stack(ids)),
            "text_mask": np.stack(masks),
        }
