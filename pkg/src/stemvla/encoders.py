"""Modality encoders: instruction text, current image, proprioceptive state.

Text and image encoders are frozen stand-ins for pretrained models; the
state encoder trains with the policy.
"""

import itertools
from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn as nn

from .nn_blocks import SelfAttnBlock
from .world.env import COLOR_NAMES, INSTRUCTION_TEMPLATES


class Modality(str, Enum):
    text = "text"
    image = "image"
    state = "state"
    history = "history"
    query = "query"


@dataclass
class TokenBlock:
    embeddings: torch.Tensor   # [L, D]
    modality_tag: Modality
    positions: np.ndarray      # [L] integer positions within the block
    mask: np.ndarray = None    # [L] bool, True where the token is real

    def __post_init__(self):
        assert self.embeddings.dim() == 2 and self.embeddings.shape[0] >= 1
        assert torch.isfinite(self.embeddings).all()
        if self.mask is None:
            self.mask = np.ones(self.embeddings.shape[0], dtype=bool)


PAD, BOS, EOS, UNK = 0, 1, 2, 3


class Vocabulary:
    """Whitespace tokenizer over the synthetic instruction templates."""

    def __init__(self, words):
        self.id_to_word = ["<pad>", "<bos>", "<eos>", "<unk>"] + sorted(set(words))
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}

    def __len__(self):
        return len(self.id_to_word)

    def encode(self, instruction: str, max_len: int):
        if not instruction:
            raise ValueError("instruction must be non-empty")
        words = instruction.split()
        ids = [BOS] + [self.word_to_id.get(w, UNK) for w in words] + [EOS]
        if len(ids) > max_len:
            raise ValueError(f"instruction too long ({len(ids)} > {max_len} tokens)")
        mask = np.zeros(max_len, dtype=bool)
        mask[:len(ids)] = True
        ids = ids + [PAD] * (max_len - len(ids))
        return np.asarray(ids, dtype=np.int64), mask

    @classmethod
    def from_file(cls, path):
        with open(path) as f:
            words = [line.rstrip("\n") for line in f if line.strip()]
        vocab = cls.__new__(cls)
        vocab.id_to_word = words
        vocab.word_to_id = {w: i for i, w in enumerate(words)}
        return vocab

    def to_file(self, path):
        with open(path, "w") as f:
            for w in self.id_to_word:
                f.write(w + "\n")


def build_default_vocab() -> Vocabulary:
    words = []
    for task_id, templates in INSTRUCTION_TEMPLATES.items():
        for tpl in templates:
            for color, base in itertools.product(COLOR_NAMES, COLOR_NAMES):
                words.extend(tpl.format(color=color, base=base).split())
    return Vocabulary(words)


class TextEncoder(nn.Module):
    """Frozen random embedding table over the template vocabulary."""

    def __init__(self, vocab: Vocabulary, d_model: int, max_len: int):
        super().__init__()
        self.vocab = vocab
        self.max_len = max_len
        self.embed = nn.Embedding(len(vocab), d_model, padding_idx=PAD)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.embed(ids)

    def encode(self, instruction: str) -> TokenBlock:
        ids, mask = self.vocab.encode(instruction, self.max_len)
        emb = self.embed(torch.from_numpy(ids))
        return TokenBlock(emb, Modality.text, np.arange(self.max_len), mask)


class ImageEncoder(nn.Module):
    """Frozen visual encoder over patch tokens.

    Pixels first pass a random pointwise color projection with a ReLU, so
    hue-selective channels exist before any spatial mixing; each patch then
    pools those channels into zeroth and first spatial moments (a count and a
    centroid per channel), which makes object positions linearly readable
    downstream. A single frozen transformer layer mixes the patch tokens.
    """

    def __init__(self, image_size: int, patch_size: int, d_model: int,
                 n_heads: int = 4, d_ff: int = 256, color_channels: int = 24):
        super().__init__()
        if image_size % patch_size != 0:
            raise ValueError("image size must be divisible by patch size")
        self.image_size = image_size
        self.patch_size = patch_size
        self.grid = image_size // patch_size
        self.n_patches = self.grid ** 2
        self.color_channels = color_channels
        self.color_proj = nn.Linear(3, color_channels)
        nn.init.normal_(self.color_proj.weight, std=1.5)
        nn.init.uniform_(self.color_proj.bias, -0.5, 0.5)
        self.patch_embed = nn.Linear(3 * (color_channels + 3), d_model)
        self.pos = nn.Parameter(torch.randn(self.n_patches, d_model) * 0.02)
        self.block = SelfAttnBlock(d_model, n_heads, d_ff)
        offs = (torch.arange(patch_size, dtype=torch.float32) + 0.5) / patch_size - 0.5
        self.register_buffer("offsets", offs)
        for p in self.parameters():
            p.requires_grad_(False)

    def patchify(self, images: torch.Tensor) -> torch.Tensor:
        b, h, w, c = images.shape
        if (h, w, c) != (self.image_size, self.image_size, 3):
            raise ValueError(f"expected [{self.image_size},{self.image_size},3] images, "
                             f"got {tuple(images.shape[1:])}")
        p = self.patch_size
        x = images.reshape(b, self.grid, p, self.grid, p, c)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, self.n_patches, p * p * c)
        return x

    def moments(self, images: torch.Tensor) -> torch.Tensor:
        """Per-patch (count, row-centroid, col-centroid) of the color features."""
        p, c = self.patch_size, self.color_channels
        pix = self.patchify(images).reshape(
            images.shape[0], self.n_patches, p, p, 3)
        feats = torch.cat([torch.relu(self.color_proj(pix)), pix], dim=-1)
        mass = feats.mean(dim=(2, 3))
        row = (feats * self.offsets.view(p, 1, 1)).mean(dim=(2, 3))
        col = (feats * self.offsets.view(1, p, 1)).mean(dim=(2, 3))
        return torch.cat([mass, row, col], dim=-1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.patch_embed(self.moments(images)) + self.pos
        return self.block(x)

    def encode(self, image: np.ndarray) -> TokenBlock:
        t = torch.as_tensor(np.asarray(image), dtype=self.pos.dtype).unsqueeze(0)
        emb = self.forward(t)[0]
        return TokenBlock(emb, Modality.image, np.arange(self.n_patches))


def pretrain_image_encoder(encoder: ImageEncoder, frames: np.ndarray,
                           steps: int = 200, mask_ratio: float = 0.5,
                           lr: float = 1e-3, seed: int = 0,
                           batch_size: int = 32):
    """Optional masked-patch reconstruction pretraining, then re-freeze."""
    gen = torch.Generator().manual_seed(seed)
    d_model = encoder.pos.shape[1]
    patch_dim = encoder.patch_size ** 2 * 3
    decoder = nn.Linear(d_model, patch_dim)
    mask_token = nn.Parameter(torch.zeros(d_model))
    for p in encoder.parameters():
        p.requires_grad_(True)
    params = list(encoder.parameters()) + list(decoder.parameters()) + [mask_token]
    opt = torch.optim.Adam(params, lr=lr)
    frames_t = torch.as_tensor(frames, dtype=torch.float32)
    losses = []
    for _ in range(steps):
        idx = torch.randint(0, frames_t.shape[0], (batch_size,), generator=gen)
        patches = encoder.patchify(frames_t[idx])
        keep = torch.rand(patches.shape[:2], generator=gen) >= mask_ratio
        x = encoder.patch_embed(encoder.moments(frames_t[idx]))
        x = torch.where(keep.unsqueeze(-1), x, mask_token)
        x = encoder.block(x + encoder.pos)
        rec = decoder(x)
        loss = ((rec - patches) ** 2)[~keep].mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    for p in encoder.parameters():
        p.requires_grad_(False)
    return losses


class StateEncoder(nn.Module):
    """Trainable: linear lift to a few tokens, one attention block, MLP."""

    def __init__(self, state_dim: int, n_tokens: int, d_model: int,
                 n_heads: int = 4, d_ff: int = 256):
        super().__init__()
        self.state_dim = state_dim
        self.n_tokens = n_tokens
        self.lift = nn.Linear(state_dim, n_tokens * d_model)
        self.block = SelfAttnBlock(d_model, n_heads, d_ff)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(states).all():
            raise ValueError("non-finite state vector")
        b = states.shape[0]
        x = self.lift(states).reshape(b, self.n_tokens, -1)
        return self.block(x)

    def encode(self, state: np.ndarray) -> TokenBlock:
        t = torch.as_tensor(np.asarray(state), dtype=torch.float32).unsqueeze(0)
        emb = self.forward(t)[0]
        return TokenBlock(emb.detach(), Modality.state, np.arange(self.n_tokens))
