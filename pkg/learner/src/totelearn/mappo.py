"""Cooperative three-agent PPO over the decision environment.

Order, tote, and robot agents share per-stage candidate trunks (warm-started
from imitation), add role embeddings, and aggregate peer context through
attention behind a zero-initialized gate, so training starts exactly at the
imitation policy. A centralized recurrent critic reads the per-decision
global summaries; the global reward is the negative change of total tote
movements, which telescopes to minus the episode objective. ``ippo`` mode is
the ablation: per-agent critics on local observations, no impact shaping,
and the coordination gate frozen.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .imitation import ImitationBundle
from .models import (
    DTYPE,
    STAGE_DIMS,
    STAGES,
    CandidateScorer,
    CoordinationHead,
    PolicyConfig,
    RecurrentCritic,
    gae_targets,
    policy_forward,
    ppo_surrogate,
)
from . import wire

GLOBAL_SUMMARY_DIM = 8
AGENT_INDEX = {stage: i for i, stage in enumerate(STAGES)}


@dataclass
class MappoParams:
    gamma: float = 1.0
    lam_gae: float = 0.95
    clip_eps: float = 0.2
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    ppo_epochs: int = 2
    lambda_impact: float = 0.05
    entropy_bonus: float = 0.0
    seed: int = 0


class ImpactModel:
    """Counterfactual-versus-defer estimates of the burden one agent's action
    puts on another, one method per directed pair (swap the model to change
    the definition).

    All quantities use the standardized observation columns; deferring
    creates no downstream work, so each estimate is the (negated) cost the
    chosen action introduces that a defer would not.
    """

    def order_to_tote(self, row: list[float]) -> float:
        # new lines the assignment opens that nothing on site or inbound serves
        lines, _prio, _rank, _slack, pool, served = row
        return -max(0.0, lines - pool - served)

    def order_to_robot(self, row: list[float]) -> float:
        return 0.0

    def tote_to_robot(self, row: list[float]) -> float:
        # the retrieval's physical burden on the fleet
        return -row[2]  # travel-to-station column

    def tote_to_order(self, row: list[float]) -> float:
        return 0.0

    def robot_to_order(self, row: list[float]) -> float:
        return 0.0  # final stage: creates no downstream decisions

    def robot_to_tote(self, row: list[float]) -> float:
        return 0.0


IMPACT_PAIRS = {
    "order_assign": ("order_to_tote", "order_to_robot"),
    "tote_match": ("tote_to_order", "tote_to_robot"),
    "robot_schedule": ("robot_to_order", "robot_to_tote"),
}


def stage_objective(stage: str, row: list[float]) -> float:
    """Intrinsic per-stage objective of the chosen candidate row."""
    if stage == "order_assign":
        return -(row[3])  # leftover slack is wasted pooling opportunity
    if stage == "tote_match":
        return row[1]  # lines the tote serves
    return -row[1]  # travel the robot pays


def local_reward(
    stage: str,
    row: list[float],
    lambda_impact: float,
    impact_model: ImpactModel | None = None,
) -> float:
    """f_i plus weighted cross-agent impact terms for the chosen action."""
    value = stage_objective(stage, row)
    if lambda_impact != 0.0:
        model = impact_model or ImpactModel()
        for method in IMPACT_PAIRS[stage]:
            value += lambda_impact * getattr(model, method)(row)
    return value


@dataclass
class AgentBundle:
    config: PolicyConfig
    params: MappoParams
    scorers: dict[str, CandidateScorer]
    coordination: CoordinationHead
    central_critic: RecurrentCritic
    local_critics: dict[str, RecurrentCritic]
    warm_started: bool = True

    @staticmethod
    def from_imitation(
        imitation: ImitationBundle, params: MappoParams | None = None
    ) -> "AgentBundle":
        params = params or MappoParams()
        config = imitation.config
        torch.manual_seed(params.seed)
        scorers = {}
        for stage in STAGES:
            scorer = CandidateScorer(STAGE_DIMS[stage], config)
            if stage in imitation.scorers:
                scorer.load_state_dict(
                    copy.deepcopy(imitation.scorers[stage].state_dict())
                )
            scorers[stage] = scorer
        return AgentBundle(
            config=config,
            params=params,
            scorers=scorers,
            coordination=CoordinationHead(config.latent_dim, seed=params.seed),
            central_critic=RecurrentCritic(GLOBAL_SUMMARY_DIM),
            local_critics={
                stage: RecurrentCritic(STAGE_DIMS[stage] + 1) for stage in STAGES
            },
            warm_started=True,
        )

    @staticmethod
    def cold(config: PolicyConfig, params: MappoParams | None = None) -> "AgentBundle":
        empty = ImitationBundle(config=config, scorers={}, fallback={s: True for s in STAGES})
        bundle = AgentBundle.from_imitation(empty, params)
        bundle.warm_started = False
        return bundle

    def save(self, path: str | Path) -> None:
        torch.save(
            {
                "config": self.config.__dict__,
                "params": self.params.__dict__,
                "scorers": {s: m.state_dict() for s, m in self.scorers.items()},
                "coordination": self.coordination.state_dict(),
                "central_critic": self.central_critic.state_dict(),
                "local_critics": {s: m.state_dict() for s, m in self.local_critics.items()},
            },
            path,
        )


@dataclass
class _Step:
    stage: str
    rows: torch.Tensor  # canonical candidate rows
    canon_map: list[int]  # canonical position -> candidates index
    chosen: int  # index into rows
    logprob: float
    pooled_peers: torch.Tensor  # (3, latent) peer memory at decision time
    summary: list[float]
    local_obs: list[float]
    reward: float = 0.0


def _local_obs(observe: dict) -> list[float]:
    rows = observe["features"][1:]
    pooled = np.mean(rows, axis=0) if rows else np.zeros(1)
    return [*np.asarray(pooled, dtype=float), float(len(rows))]


def actor_forward(
    bundle: AgentBundle,
    stage: str,
    rows: torch.Tensor,
    peer_latents: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Masked distribution over the candidate rows plus the pooled latent.

    peer_latents is the (3, latent) memory of each agent family's last pooled
    encoding; the acting agent attends over all of them.
    """
    valid = torch.ones(1, rows.shape[0], dtype=torch.bool)
    latents = bundle.scorers[stage].encode(rows.unsqueeze(0), valid)[0]
    pooled = latents.mean(dim=0)
    z, _alpha = bundle.coordination.aggregate(AGENT_INDEX[stage], pooled, peer_latents)
    logits = bundle.scorers[stage].head(latents).squeeze(-1)
    logits = logits + bundle.coordination.candidate_bonus(latents, z)
    probs = policy_forward(logits.unsqueeze(0), valid)[0]
    return probs, pooled


def critic_value(critic: RecurrentCritic, summaries: list[list[float]]) -> torch.Tensor:
    seq = torch.tensor(summaries, dtype=DTYPE)
    return critic(seq)


@dataclass
class EpisodeBatch:
    steps: list[_Step]
    z_final: int
    global_rewards: list[float]


def collect_episode(
    client: wire.EpisodeClient,
    bundle: AgentBundle,
    mode: str,
    rng: torch.Generator,
    reset_kwargs: dict,
    sample: bool = True,
) -> EpisodeBatch:
    """One episode through the wire; asserts the telescoping reward identity."""
    steps: list[_Step] = []
    z_seq: list[int] = []
    peer_memory = torch.zeros(3, bundle.config.latent_dim, dtype=DTYPE)
    msg = client.reset(**reset_kwargs)
    while msg["kind"] == "observe":
        stage = msg["stage"]
        canon = msg["canonical_order"][1:]
        rows = torch.tensor([msg["features"][i] for i in canon], dtype=DTYPE)
        with torch.no_grad():
            probs, pooled = actor_forward(bundle, stage, rows, peer_memory)
        if sample:
            chosen = int(torch.multinomial(probs, 1, generator=rng))
        else:
            chosen = int(torch.argmax(probs))
        z_seq.append(msg["z_retrievals"] + msg["z_returns"])
        steps.append(
            _Step(
                stage=stage,
                rows=rows,
                canon_map=canon,
                chosen=chosen,
                logprob=float(torch.log(probs[chosen])),
                pooled_peers=peer_memory.clone(),
                summary=list(msg["global_summary"]),
                local_obs=_local_obs(msg),
            )
        )
        peer_memory = peer_memory.clone()
        peer_memory[AGENT_INDEX[stage]] = pooled
        msg = client.act(canon[chosen])
    if msg["kind"] != "terminal":
        raise RuntimeError(f"episode failed: {msg}")
    z_final = msg["metrics"]["z_final"]
    z_seq.append(z_final)
    global_rewards = [z_seq[t] - z_seq[t + 1] for t in range(len(steps))]
    assert sum(global_rewards) == -z_final, "telescoping identity violated"
    for t, step in enumerate(steps):
        shaped = global_rewards[t]
        if mode == "mappo":
            shaped += local_reward(step.stage, step.rows[step.chosen].tolist(),
                                   bundle.params.lambda_impact)
        else:
            shaped += local_reward(step.stage, step.rows[step.chosen].tolist(), 0.0)
        step.reward = shaped
    return EpisodeBatch(steps=steps, z_final=z_final, global_rewards=global_rewards)


def _update(
    bundle: AgentBundle, episodes: list[EpisodeBatch], mode: str
) -> dict:
    params = bundle.params
    use_central = mode == "mappo"
    stats = {
        "used_central_critic": use_central,
        "impact_terms": mode == "mappo" and params.lambda_impact != 0.0,
        "peer_attention": use_central,
    }

    # Critic fit and advantage computation.
    advantages: dict[int, list[float]] = {}
    if use_central:
        critic = bundle.central_critic
        optim = torch.optim.Adam(critic.parameters(), lr=params.critic_lr)
        all_targets = []
        for ep_idx, ep in enumerate(episodes):
            with torch.no_grad():
                values = critic_value(critic, [s.summary for s in ep.steps]).tolist()
            adv, targets = gae_targets(
                [s.reward for s in ep.steps], values + [0.0],
                params.gamma, params.lam_gae,
            )
            advantages[ep_idx] = adv
            all_targets.append(targets)
        for _ in range(params.ppo_epochs):
            loss = torch.zeros((), dtype=DTYPE)
            for ep, targets in zip(episodes, all_targets):
                pred = critic_value(critic, [s.summary for s in ep.steps])
                loss = loss + ((pred - torch.tensor(targets, dtype=DTYPE)) ** 2).mean()
            optim.zero_grad()
            (loss / len(episodes)).backward()
            optim.step()
    else:
        for stage in STAGES:
            critic = bundle.local_critics[stage]
            optim = torch.optim.Adam(critic.parameters(), lr=params.critic_lr)
            per_ep = []
            for ep_idx, ep in enumerate(episodes):
                idxs = [i for i, s in enumerate(ep.steps) if s.stage == stage]
                if not idxs:
                    continue
                obs = [ep.steps[i].local_obs for i in idxs]
                rewards = [ep.steps[i].reward for i in idxs]
                with torch.no_grad():
                    values = critic_value(critic, obs).tolist()
                adv, targets = gae_targets(
                    rewards, values + [0.0], params.gamma, params.lam_gae
                )
                advantages.setdefault(ep_idx, [0.0] * len(ep.steps))
                for j, i in enumerate(idxs):
                    advantages[ep_idx][i] = adv[j]
                per_ep.append((obs, targets))
            for _ in range(params.ppo_epochs):
                if not per_ep:
                    break
                loss = torch.zeros((), dtype=DTYPE)
                for obs, targets in per_ep:
                    pred = critic_value(critic, obs)
                    loss = loss + ((pred - torch.tensor(targets, dtype=DTYPE)) ** 2).mean()
                optim.zero_grad()
                (loss / len(per_ep)).backward()
                optim.step()

    # Normalize advantages per agent family across the batch.
    flat: dict[str, list[tuple[int, int]]] = {s: [] for s in STAGES}
    for ep_idx, ep in enumerate(episodes):
        for i, s in enumerate(ep.steps):
            flat[s.stage].append((ep_idx, i))
    norm_adv: dict[tuple[int, int], float] = {}
    for stage, members in flat.items():
        vals = np.array([advantages[e][i] for e, i in members]) if members else np.array([])
        if len(vals) > 1 and vals.std() > 1e-9:
            vals = (vals - vals.mean()) / vals.std()
        for (e, i), v in zip(members, vals):
            norm_adv[(e, i)] = float(v)

    # PPO actor updates, one pass per agent family.
    actor_params = []
    for stage in STAGES:
        actor_params += list(bundle.scorers[stage].parameters())
    if mode == "mappo":
        actor_params += list(bundle.coordination.parameters())
    optim = torch.optim.Adam(actor_params, lr=params.actor_lr)
    for _ in range(params.ppo_epochs):
        losses = []
        for stage in STAGES:
            members = flat[stage]
            if not members:
                continue
            ratios, advs, entropies = [], [], []
            for e, i in members:
                step = episodes[e].steps[i]
                probs, _ = actor_forward(bundle, stage, step.rows, step.pooled_peers)
                logp = torch.log(probs[step.chosen].clamp_min(1e-300))
                ratios.append(torch.exp(logp - step.logprob))
                advs.append(norm_adv[(e, i)])
                entropies.append(-(probs * torch.log(probs.clamp_min(1e-300))).sum())
            ratio_t = torch.stack(ratios)
            adv_t = torch.tensor(advs, dtype=DTYPE)
            objective = ppo_surrogate(ratio_t, adv_t, params.clip_eps)
            loss = -objective
            if params.entropy_bonus:
                loss = loss - params.entropy_bonus * torch.stack(entropies).mean()
            losses.append(loss)
        if losses:
            optim.zero_grad()
            torch.stack(losses).sum().backward()
            if mode == "ippo":
                # independent learners: the coordination pathway stays frozen
                for p in bundle.coordination.parameters():
                    p.grad = None
            optim.step()
    return stats


def train(
    env_address: str,
    bundle: AgentBundle,
    mode: str,
    iterations: int,
    episodes_per_iter: int,
    reset_kwargs_fn,
    seed: int = 0,
) -> dict:
    """Centralized-training loop over served episodes; returns learning curves."""
    if mode not in ("mappo", "ippo"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = torch.Generator().manual_seed(seed)
    curves = {"mean_z": [], "mean_reward": []}
    last_stats: dict = {}
    episode_index = 0
    with wire.EpisodeClient(env_address) as client:
        for _it in range(iterations):
            batch = []
            for _ in range(episodes_per_iter):
                try:
                    ep = collect_episode(
                        client, bundle, mode, rng,
                        reset_kwargs_fn(episode_index), sample=True,
                    )
                    batch.append(ep)
                except (ConnectionError, RuntimeError):
                    continue  # failed episode discarded, run continues
                finally:
                    episode_index += 1
            if not batch:
                continue
            last_stats = _update(bundle, batch, mode)
            curves["mean_z"].append(float(np.mean([ep.z_final for ep in batch])))
            curves["mean_reward"].append(
                float(np.mean([sum(s.reward for s in ep.steps) for ep in batch]))
            )
    curves["stats"] = last_stats
    return curves


def evaluate(
    env_address: str,
    bundle: AgentBundle,
    episodes: int,
    reset_kwargs_fn,
) -> float:
    """Mean objective over greedy (argmax) evaluation episodes."""
    rng = torch.Generator().manual_seed(0)
    zs = []
    with wire.EpisodeClient(env_address) as client:
        for k in range(episodes):
            ep = collect_episode(
                client, bundle, "mappo", rng, reset_kwargs_fn(k), sample=False
            )
            zs.append(ep.z_final)
    return float(np.mean(zs))
