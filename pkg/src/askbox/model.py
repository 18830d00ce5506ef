"""Encoder-decoder transformer over concatenated patch and text embeddings.

The encoder attends bidirectionally over [image patches | prompt tokens];
the decoder is causal and predicts target tokens autoregressively. Blocks
are pre-norm with a final LayerNorm per stack (skipped for zero-layer test
stacks, which therefore stay exact identities).

Pixels are centered on the renderer's background color before projection,
and patch projections are LayerNorm'ed, so patch tokens enter the encoder
at the same scale as text tokens; without this the shared background
direction drowns out the visual signal.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, TruncationError
from .world import BACKGROUND_RGB, RenderedImage

NEG_INF = -1e9

IMAGE_MEAN = tuple(c / 255.0 for c in BACKGROUND_RGB)
IMAGE_SCALE = 2.0


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    ffn_dim: int = 512
    enc_layers: int = 2
    dec_layers: int = 2
    image_size: int = 64
    patch_size: int = 16
    vocab_size: int = 1059
    max_seq_len: int = 256
    dropout: float = 0.0

    def validate(self) -> None:
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError("image_size must be divisible by patch_size")
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError("d_model must be divisible by n_heads")
        if not (0 <= self.dropout < 1):
            raise ConfigurationError("dropout must be in [0, 1)")
        if self.n_patches >= self.max_seq_len:
            raise ConfigurationError("max_seq_len leaves no room for text after patches")

    @property
    def n_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def max_text_len(self) -> int:
        return self.max_seq_len - self.n_patches

    def param_count(self) -> int:
        """Closed-form parameter count; matches the instantiated module."""
        d, f, v, s = self.d_model, self.ffn_dim, self.vocab_size, self.max_seq_len
        emb = v * d + self.n_patches * d + 2 * s * d
        ln = 2 * d
        patch = (self.patch_size**2 * 3) * d + d + ln
        attn = 4 * (d * d + d)
        ffn = d * f + f + f * d + d
        enc = self.enc_layers * (attn + ffn + 2 * ln) + ln
        dec = self.dec_layers * (2 * attn + ffn + 3 * ln) + ln
        head = d * v + v
        return emb + patch + enc + dec + head


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = nn.Linear(d_model, d_model)
        self.wk = nn.Linear(d_model, d_model)
        self.wv = nn.Linear(d_model, d_model)
        self.wo = nn.Linear(d_model, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, query, keyval, mask=None):
        # query: [B, Lq, d], keyval: [B, Lk, d], mask: additive [B|1, 1|Lq, Lk]
        b, lq, d = query.shape
        lk = keyval.shape[1]
        q = self.wq(query).view(b, lq, self.n_heads, self.d_head).transpose(1, 2)
        k = self.wk(keyval).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)
        v = self.wv(keyval).view(b, lk, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if mask is not None:
            scores = scores + mask.unsqueeze(1)
        weights = self.drop(scores.softmax(-1))
        out = (weights @ v).transpose(1, 2).reshape(b, lq, d)
        return self.wo(out)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.w1 = nn.Linear(d_model, ffn_dim)
        self.w2 = nn.Linear(ffn_dim, d_model)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.w2(self.drop(F.gelu(self.w1(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        y = self.norm1(x)
        x = x + self.drop(self.attn(y, y, mask))
        x = x + self.drop(self.ffn(self.norm2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ffn = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, causal_mask, memory_mask):
        y = self.norm1(x)
        x = x + self.drop(self.self_attn(y, y, causal_mask))
        x = x + self.drop(self.cross_attn(self.norm2(x), memory, memory_mask))
        x = x + self.drop(self.ffn(self.norm3(x)))
        return x


class Seq2SeqModel(nn.Module):
    """Unified model; task identity comes entirely from the prompt tokens."""

    def __init__(self, config: ModelConfig, pad_id: int = 0, bos_id: int = 1, eos_id: int = 2):
        super().__init__()
        config.validate()
        self.config = config
        self.pad_id, self.bos_id, self.eos_id = pad_id, bos_id, eos_id
        d = config.d_model
        self.tok_emb = nn.Embedding(config.vocab_size, d)
        self.img_pos = nn.Embedding(config.n_patches, d)
        self.txt_pos = nn.Embedding(config.max_seq_len, d)
        self.dec_pos = nn.Embedding(config.max_seq_len, d)
        self.patch_proj = nn.Linear(config.patch_size**2 * 3, d)
        self.patch_norm = nn.LayerNorm(d)
        self.enc_stack = nn.ModuleList(EncoderLayer(config) for _ in range(config.enc_layers))
        self.dec_stack = nn.ModuleList(DecoderLayer(config) for _ in range(config.dec_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.dec_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, config.vocab_size)
        self.emb_drop = nn.Dropout(config.dropout)
        for table in (self.tok_emb, self.txt_pos, self.dec_pos):
            nn.init.normal_(table.weight, std=d**-0.5)
        # patch positions start louder: emitting a location token requires
        # reading WHERE an attended patch sits, not just what it shows
        nn.init.normal_(self.img_pos.weight, std=0.3)

    # ---- embedding ----

    def patches(self, images: torch.Tensor) -> torch.Tensor:
        """Row-major patch flattening: [B, H, W, 3] -> [B, P, p*p*3]."""
        b, h, w, _ = images.shape
        if h != self.config.image_size or w != self.config.image_size:
            raise ConfigurationError(f"image size {h}x{w} does not match config")
        p = self.config.patch_size
        g = h // p
        x = images.view(b, g, p, g, p, 3)
        return x.permute(0, 1, 3, 2, 4, 5).reshape(b, g * g, p * p * 3)

    def patch_embed(self, images: torch.Tensor, add_positions: bool = True) -> torch.Tensor:
        """Normalized linear projection of patches, plus learned positions."""
        emb = self.patch_norm(self.patch_proj(self.patches(images)))
        if add_positions:
            emb = emb + self.img_pos.weight.unsqueeze(0)
        return emb

    def _text_embed(self, token_ids: torch.Tensor) -> torch.Tensor:
        d = self.config.d_model
        pos = torch.arange(token_ids.shape[1], device=token_ids.device)
        return self.tok_emb(token_ids) * math.sqrt(d) + self.txt_pos(pos).unsqueeze(0)

    # ---- encoder / decoder ----

    def encode(self, images: torch.Tensor, text_ids: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Memory over [patch block | text block] and its key padding mask."""
        if text_ids.shape[1] > self.config.max_text_len:
            raise TruncationError(
                f"prompt length {text_ids.shape[1]} exceeds capacity {self.config.max_text_len}"
            )
        img = self.patch_embed(images)
        txt = self._text_embed(text_ids)
        x = self.emb_drop(torch.cat([img, txt], dim=1))
        pad = torch.cat(
            [
                torch.zeros(images.shape[0], img.shape[1], dtype=torch.bool, device=text_ids.device),
                text_ids == self.pad_id,
            ],
            dim=1,
        )
        mask = torch.where(pad, NEG_INF, 0.0).unsqueeze(1)  # [B, 1, M]
        for layer in self.enc_stack:
            x = layer(x, mask)
        if self.enc_stack:
            x = self.enc_norm(x)
        return x, mask

    def decode(self, target_in: torch.Tensor, memory: torch.Tensor, memory_mask: torch.Tensor) -> torch.Tensor:
        if target_in.shape[1] > self.config.max_seq_len:
            raise TruncationError(f"target length {target_in.shape[1]} exceeds capacity")
        length = target_in.shape[1]
        pos = torch.arange(length, device=target_in.device)
        x = self.tok_emb(target_in) * math.sqrt(self.config.d_model) + self.dec_pos(pos).unsqueeze(0)
        x = self.emb_drop(x)
        causal = torch.triu(torch.full((length, length), NEG_INF, device=x.device), diagonal=1)
        causal = causal.unsqueeze(0)
        # decoder pad positions (from batch padding) also masked as keys
        pad = torch.where(target_in == self.pad_id, NEG_INF, 0.0).unsqueeze(1)
        causal = causal + pad
        for layer in self.dec_stack:
            x = layer(x, memory, causal, memory_mask)
        if self.dec_stack:
            x = self.dec_norm(x)
        return self.out_proj(x)

    def forward_teacher_forced(
        self, images: torch.Tensor, input_ids: torch.Tensor, target_ids: torch.Tensor
    ) -> torch.Tensor:
        """Logits aligned to target_ids[:, 1:]; position l is P(w_l | w_<l)."""
        memory, memory_mask = self.encode(images, input_ids)
        return self.decode(target_ids[:, :-1], memory, memory_mask)

    # ---- generation ----

    @torch.no_grad()
    def generate_batch(
        self, images: torch.Tensor, prompts: list[list[int]], max_new: int = 48
    ) -> list[list[int]]:
        """Greedy decoding for a batch of prompts; ties go to the lower id."""
        self.eval()
        text = pad_batch(prompts, self.pad_id)
        memory, memory_mask = self.encode(images, text)
        b = text.shape[0]
        seqs = torch.full((b, 1), self.bos_id, dtype=torch.long)
        finished = torch.zeros(b, dtype=torch.bool)
        out: list[list[int]] = [[] for _ in range(b)]
        for _ in range(max_new):
            logits = self.decode(seqs, memory, memory_mask)[:, -1, :]
            nxt = argmax_lowest_id(logits)
            # rows already finished keep decoding on pad, output untouched
            nxt = torch.where(finished, torch.full_like(nxt, self.pad_id), nxt)
            seqs = torch.cat([seqs, nxt.unsqueeze(1)], dim=1)
            for i, tok in enumerate(nxt.tolist()):
                if finished[i]:
                    continue
                if tok == self.eos_id:
                    finished[i] = True
                else:
                    out[i].append(tok)
            if bool(finished.all()):
                break
        return out

    @torch.no_grad()
    def generate(
        self,
        image: torch.Tensor,
        prompt: list[int],
        beam_width: int = 5,
        max_new: int = 48,
        return_score: bool = False,
    ):
        """Beam search; returns the best completed hypothesis.

        Hypotheses are ranked by length-normalized log-probability; all ties
        (within beams and at the end) resolve toward lower token ids, so
        generation is a pure function of (checkpoint, inputs).
        """
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        self.eval()
        memory, memory_mask = self.encode(image.unsqueeze(0), torch.tensor([prompt]))

        beams = [([self.bos_id], 0.0)]  # (tokens, total logprob)
        done: list[tuple[list[int], float]] = []
        for _ in range(max_new):
            seqs = torch.tensor([b[0] for b in beams], dtype=torch.long)
            mem = memory.expand(len(beams), -1, -1)
            mmask = memory_mask.expand(len(beams), -1, -1)
            logprobs = self.decode(seqs, mem, mmask)[:, -1, :].log_softmax(-1)
            scores = torch.tensor([b[1] for b in beams]).unsqueeze(1) + logprobs
            flat = scores.reshape(-1)
            order = stable_descending(flat)
            # top beam_width candidates total; a finished hypothesis keeps its
            # slot (no refill), so beam_width=1 reduces exactly to greedy
            next_beams = []
            for idx in order[:beam_width].tolist():
                beam_idx, token = divmod(idx, self.config.vocab_size)
                tokens = beams[beam_idx][0] + [token]
                score = float(flat[idx])
                if token == self.eos_id:
                    done.append((tokens, score / (len(tokens) - 1)))
                else:
                    next_beams.append((tokens, score))
            beams = next_beams
            if not beams:
                break
        for tokens, score in beams:
            done.append((tokens, score / (len(tokens) - 1)))
        best = max(enumerate(done), key=lambda kv: (kv[1][1], -kv[0]))[1]
        tokens = best[0][1:]
        if tokens and tokens[-1] == self.eos_id:
            tokens = tokens[:-1]
        if return_score:
            return tokens, best[1]
        return tokens


def pad_batch(seqs: list[list[int]], pad_id: int) -> torch.Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def argmax_lowest_id(logits: torch.Tensor) -> torch.Tensor:
    """Row-wise argmax with ties resolved to the smallest index."""
    maxes = logits.max(dim=-1, keepdim=True).values
    is_max = logits == maxes
    idx = torch.arange(logits.shape[-1], device=logits.device).expand_as(logits)
    return torch.where(is_max, idx, logits.shape[-1]).min(dim=-1).values


def stable_descending(values: torch.Tensor) -> torch.Tensor:
    """Indices sorting values descending; equal values keep index order."""
    return torch.sort(values, descending=True, stable=True).indices


def build_model(config: ModelConfig, seed: int = 0) -> Seq2SeqModel:
    """Seeded construction so identical (config, seed) gives identical weights."""
    torch.manual_seed(seed)
    return Seq2SeqModel(config)


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """uint8 H x W x 3 to float32 centered on the background color."""
    out = pixels.astype(np.float32) / 255.0
    out -= np.asarray(IMAGE_MEAN, dtype=np.float32)
    out *= IMAGE_SCALE
    return out


def image_tensor(image: RenderedImage) -> torch.Tensor:
    return torch.from_numpy(normalize_pixels(image.pixels))


def images_tensor(images: list[RenderedImage]) -> torch.Tensor:
    return torch.stack([image_tensor(im) for im in images])
