"""Neural building blocks: candidate scorer, masked policy head, recurrent
critic, and the role-aware attention used for agent coordination.

Everything runs in float64 on CPU; the models are small enough that exact
gradients matter more than throughput, and finite-difference checks sit in
the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

DTYPE = torch.float64

STAGES = ("order_assign", "tote_match", "robot_schedule")
STAGE_DIMS = {"order_assign": 6, "tote_match": 4, "robot_schedule": 5}

# Lexicographic greedy fallback per stage when no trained scorer exists:
# list of (column index, +1 maximize / -1 minimize)
FALLBACK_RULE = {
    "order_assign": [(4, +1), (3, +1)],    # pool overlap, then station slack
    "tote_match": [(1, +1), (2, -1)],      # line coverage, then nearest
    "robot_schedule": [(1, -1)],           # travel to pickup
}


@dataclass
class PolicyConfig:
    latent_dim: int = 128
    encoder_layers: int = 3
    attention_heads: int = 12
    head_dim: int = 10  # floor(128 / 12); heads project back up to latent_dim
    lambda_coupling: float = 0.1
    learning_rate: float = 3e-3
    batch_size: int = 64
    epochs: int = 12
    seed: int = 0

    def validate(self) -> None:
        if self.attention_heads * self.head_dim > 2 * self.latent_dim:
            raise ValueError("attention width implausibly larger than the latent")


class ReZeroBlock(nn.Module):
    """Self-attention plus feed-forward, both behind zero-initialized gates:
    at initialization the block is the identity."""

    def __init__(self, d_model: int, heads: int, head_dim: int):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.qkv = nn.Linear(d_model, 3 * inner, dtype=DTYPE)
        self.proj = nn.Linear(inner, d_model, dtype=DTYPE)
        self.ff = nn.Sequential(
            nn.Linear(d_model, 2 * d_model, dtype=DTYPE),
            nn.ReLU(),
            nn.Linear(2 * d_model, d_model, dtype=DTYPE),
        )
        self.gate_attn = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.gate_ff = nn.Parameter(torch.zeros((), dtype=DTYPE))

    def forward(self, h: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        b, n, _ = h.shape
        qkv = self.qkv(h).view(b, n, 3, self.heads, self.head_dim)
        q, k, v = qkv.unbind(dim=2)
        scores = torch.einsum("bihd,bjhd->bhij", q, k) / math.sqrt(self.head_dim)
        key_mask = valid[:, None, None, :]  # (b,1,1,n)
        scores = scores.masked_fill(~key_mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        mixed = torch.einsum("bhij,bjhd->bihd", attn, v).reshape(b, n, -1)
        h = h + self.gate_attn * self.proj(mixed)
        h = h + self.gate_ff * self.ff(h)
        return h


class CandidateScorer(nn.Module):
    """Feature rows -> latent per candidate -> one logit per candidate.

    No positional encoding: permuting candidate rows permutes logits the same
    way.
    """

    def __init__(self, d_in: int, config: PolicyConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.input = nn.Linear(d_in, config.latent_dim, dtype=DTYPE)
        self.blocks = nn.ModuleList(
            ReZeroBlock(config.latent_dim, config.attention_heads, config.head_dim)
            for _ in range(config.encoder_layers)
        )
        self.head = nn.Linear(config.latent_dim, 1, dtype=DTYPE)

    def encode(self, rows: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        if torch.isnan(rows).any():
            raise ValueError("NaN in feature rows")
        h = torch.relu(self.input(rows))
        for block in self.blocks:
            h = block(h, valid)
        return h

    def logits(self, rows: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        return self.head(self.encode(rows, valid)).squeeze(-1)


def policy_forward(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked softmax: zero probability on infeasible entries, total mass 1."""
    if not mask.any(dim=-1).all():
        raise ValueError("mask leaves no feasible action")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def imitation_loss(
    logits: torch.Tensor,
    mask: torch.Tensor,
    rows: torch.Tensor,
    target: torch.Tensor,
    lambda_coupling: float,
) -> torch.Tensor:
    """Cross-entropy toward the expert action plus a soft-coupling penalty:
    the probability-weighted candidate row (the input handed downstream) is
    pulled toward the expert row. Returns a per-sample vector."""
    probs = policy_forward(logits, mask)
    picked = probs.gather(1, target[:, None]).squeeze(1)
    ce = -torch.log(picked.clamp_min(1e-300))
    if lambda_coupling == 0.0:
        return ce
    expected_row = (probs[:, :, None] * rows).sum(dim=1)
    true_row = rows[torch.arange(rows.shape[0]), target]
    coupling = ((expected_row - true_row) ** 2).sum(dim=-1)
    return ce + lambda_coupling * coupling


class RecurrentCritic(nn.Module):
    """Affine+ReLU state encoder, one GRU layer, scalar value head."""

    def __init__(self, d_in: int, hidden: int = 64):
        super().__init__()
        self.enc = nn.Sequential(nn.Linear(d_in, hidden, dtype=DTYPE), nn.ReLU())
        self.gru = nn.GRU(hidden, hidden, batch_first=True, dtype=DTYPE)
        self.head = nn.Linear(hidden, 1, dtype=DTYPE)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        """(T, d_in) -> (T,) value per step, threading the hidden state."""
        out, _ = self.gru(self.enc(seq).unsqueeze(0))
        return self.head(out).squeeze(-1).squeeze(0)


class CoordinationHead(nn.Module):
    """Role-aware peer aggregation for one agent family.

    The agent's pooled latent gets its type embedding added, queries peer
    value vectors through scaled dot-product attention, and the aggregated
    context scores candidates through a zero-initialized gate, so a
    warm-started actor is exactly its imitation policy until training moves
    the gate.
    """

    def __init__(self, latent: int = 128, n_agents: int = 3, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.type_embed = nn.Parameter(
            0.01 * torch.randn(n_agents, latent, generator=gen, dtype=DTYPE)
        )
        self.wq = nn.Linear(latent, latent, dtype=DTYPE)
        self.wk = nn.Linear(latent, latent, dtype=DTYPE)
        self.wv = nn.Linear(latent, latent, dtype=DTYPE)
        self.mix = nn.Linear(latent, latent, dtype=DTYPE)
        self.gate = nn.Parameter(torch.zeros((), dtype=DTYPE))
        self.latent = latent

    def role_latent(self, agent_index: int, pooled: torch.Tensor) -> torch.Tensor:
        return pooled + self.type_embed[agent_index]

    def aggregate(
        self, agent_index: int, pooled: torch.Tensor, peers: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (context vector z, attention weights over peers)."""
        q = self.wq(self.role_latent(agent_index, pooled))
        keys = self.wk(peers)
        values = self.wv(peers)
        alpha = torch.softmax(keys @ q / math.sqrt(self.latent), dim=0)
        return values.T @ alpha, alpha

    def candidate_bonus(
        self, candidate_latents: torch.Tensor, context: torch.Tensor
    ) -> torch.Tensor:
        """(N, latent) x (latent,) -> (N,) additive logit adjustment."""
        return self.gate * (candidate_latents @ self.mix(context)) / math.sqrt(self.latent)


def gae_targets(
    rewards: list[float], values: list[float], gamma: float, lam: float
) -> tuple[list[float], list[float]]:
    """Standard generalized-advantage recursion.

    ``values`` carries one bootstrap entry beyond the rewards. Returns
    (advantages, value targets) with targets = advantage + value.
    """
    if len(values) != len(rewards) + 1:
        raise ValueError("need exactly one bootstrap value beyond the rewards")
    advantages = [0.0] * len(rewards)
    running = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        running = delta + gamma * lam * running
        advantages[t] = running
    targets = [a + v for a, v in zip(advantages, values[:-1])]
    return advantages, targets


def ppo_surrogate(
    ratio: torch.Tensor, advantage: torch.Tensor, clip_eps: float
) -> torch.Tensor:
    """Clipped PPO objective (to maximize); equals mean advantage at ratio 1."""
    clipped = torch.clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return torch.minimum(ratio * advantage, clipped * advantage).mean()


def pad_batch(matrices: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length candidate matrices into (B, N, d) plus validity."""
    n_max = max(m.shape[0] for m in matrices)
    d = matrices[0].shape[1]
    rows = torch.zeros(len(matrices), n_max, d, dtype=DTYPE)
    valid = torch.zeros(len(matrices), n_max, dtype=torch.bool)
    for i, m in enumerate(matrices):
        rows[i, : m.shape[0]] = m
        valid[i, : m.shape[0]] = True
    return rows, valid
