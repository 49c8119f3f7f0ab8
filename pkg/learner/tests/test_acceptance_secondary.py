"""Secondary acceptance criteria: imitation quality, gradient fidelity,
coordination advantage, and inference latency. One PASS line per criterion
(run with ``-s`` to stream them)."""

import time

import numpy as np
import pytest
import torch

from totelearn import pipeline, wire
from totelearn.imitation import ImitationPolicy, evaluate_gap, imitation_loss, train
from totelearn.mappo import AgentBundle, MappoParams, actor_forward, collect_episode
import totelearn.mappo as mappo_mod
from totelearn.models import (
    DTYPE,
    CandidateScorer,
    PolicyConfig,
    RecurrentCritic,
    pad_batch,
    policy_forward,
    ppo_surrogate,
)

PASS = "ACCEPTANCE PASS"


def _announce(name: str, detail: str) -> None:
    print(f"{PASS}: {name} ({detail})")


@pytest.fixture(scope="module")
def accept_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("secondary-acceptance")


@pytest.fixture(scope="module")
def trained_imitation(accept_dir):
    """Dataset from 200 exactly-solved instances, trained within the budget."""
    t0 = time.perf_counter()
    dataset = pipeline.prepare_imitation_data(
        accept_dir / "data", preset="S-1", train_seeds=range(200)
    )
    bundle = train(dataset, PolicyConfig(epochs=12, seed=0))
    elapsed = time.perf_counter() - t0
    assert elapsed < 1800.0, f"imitation pipeline took {elapsed:.0f}s"
    return bundle, elapsed


def test_imitation_quality_on_held_out_instances(accept_dir, trained_imitation):
    bundle, build_seconds = trained_imitation
    cases = pipeline.prepare_eval_cases(
        accept_dir / "data", preset="S-1", eval_seeds=range(200, 250)
    )
    with wire.SimulatorServer() as server:
        results = evaluate_gap(bundle, cases, server.address)
    gap = results["end_to_end"]
    assert results["episodes"] == 50
    assert gap <= 8.0, f"end-to-end gap {gap:.2f}%"
    _announce(
        "imitation quality",
        f"mean end-to-end gap {gap:.2f}% on 50 held-out instances "
        f"(train+data {build_seconds:.0f}s)",
    )


def _finite_diff_worst(module, loss_fn, n_coords=20, h=1e-5, seed=0):
    """Max relative error between autograd and central differences over
    randomly sampled informative parameter coordinates."""
    for p in module.parameters():
        p.grad = None
    loss_fn().backward()
    params = [p for p in module.parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    worst, checked, tries = 0.0, 0, 0
    while checked < n_coords and tries < 50 * n_coords:
        tries += 1
        p = params[int(rng.integers(len(params)))]
        idx = np.unravel_index(int(rng.integers(p.numel())), p.shape)
        grad = float(p.grad[idx])
        with torch.no_grad():
            orig = float(p[idx])
            p[idx] = orig + h
            lp = float(loss_fn())
            p[idx] = orig - h
            lm = float(loss_fn())
            p[idx] = orig
        fd = (lp - lm) / (2 * h)
        if max(abs(fd), abs(grad)) < 1e-6:
            continue  # coordinate currently inert (e.g. behind a closed gate)
        worst = max(worst, abs(fd - grad) / max(abs(fd), abs(grad)))
        checked += 1
    assert checked == n_coords, "could not find enough informative coordinates"
    return worst


def test_gradient_fidelity_imitation_actor_critic():
    torch.manual_seed(0)
    gen = torch.Generator().manual_seed(1)

    # imitation loss through the candidate encoder
    scorer = CandidateScorer(4, PolicyConfig(seed=0))
    rows, valid = pad_batch([torch.randn(n, 4, generator=gen, dtype=DTYPE) for n in (3, 5, 4)])
    target = torch.tensor([1, 0, 2])

    def imit_loss():
        logits = scorer.logits(rows, valid)
        return imitation_loss(logits, valid, rows, target, 0.1).mean()

    err_imit = _finite_diff_worst(scorer, imit_loss, seed=2)

    # critic regression loss
    critic = RecurrentCritic(8)
    seq = torch.randn(12, 8, generator=gen, dtype=DTYPE)
    targets = torch.randn(12, generator=gen, dtype=DTYPE)

    def critic_loss():
        return ((critic(seq) - targets) ** 2).mean()

    err_critic = _finite_diff_worst(critic, critic_loss, seed=3)

    # actor PPO surrogate through trunk + coordination
    bundle = AgentBundle.cold(PolicyConfig(seed=1), MappoParams(seed=1))
    with torch.no_grad():
        bundle.coordination.gate.fill_(0.3)
        for block in bundle.scorers["tote_match"].blocks:
            block.gate_attn.fill_(0.2)
            block.gate_ff.fill_(0.2)
    cand_rows = torch.randn(6, 4, generator=gen, dtype=DTYPE)
    peers = torch.randn(3, 128, generator=gen, dtype=DTYPE)
    chosen = 2
    with torch.no_grad():
        probs0, _ = actor_forward(bundle, "tote_match", cand_rows, peers)
    old_logp = float(torch.log(probs0[chosen])) - 0.05
    advantage = torch.tensor([1.3], dtype=DTYPE)

    class ActorModule(torch.nn.Module):
        def __init__(self):
            super().__init__()
            self.trunk = bundle.scorers["tote_match"]
            self.coord = bundle.coordination

    actor = ActorModule()

    def actor_loss():
        probs, _ = actor_forward(bundle, "tote_match", cand_rows, peers)
        ratio = torch.exp(torch.log(probs[chosen].clamp_min(1e-300)) - old_logp)
        return -ppo_surrogate(ratio.unsqueeze(0), advantage, 0.2)

    err_actor = _finite_diff_worst(actor, actor_loss, seed=4)

    for name, err in (("imitation", err_imit), ("critic", err_critic), ("actor", err_actor)):
        assert err <= 1e-4, f"{name} loss gradient error {err:.2e}"
    _announce(
        "gradient fidelity",
        f"max rel err imitation {err_imit:.1e}, critic {err_critic:.1e}, "
        f"actor {err_actor:.1e} over 20 coordinates each",
    )


def test_coordination_advantage_mappo_vs_ippo(accept_dir, trained_imitation):
    bundle_im, _ = trained_imitation
    train_paths = [pipeline.scaled_l1_instance(accept_dir / "scaled", s) for s in range(6)]
    eval_paths = [
        pipeline.scaled_l1_instance(accept_dir / "scaled", 100 + s) for s in range(10)
    ]
    train_fn = lambda k: pipeline.inline_reset_kwargs(train_paths[k % len(train_paths)])
    eval_fn = lambda k: pipeline.inline_reset_kwargs(eval_paths[k % len(eval_paths)])

    wins = 0
    details = []
    with wire.SimulatorServer() as server:
        for rep in range(5):
            means = {}
            for mode in ("mappo", "ippo"):
                bundle = AgentBundle.from_imitation(bundle_im, MappoParams(seed=rep))
                mappo_mod.train(
                    server.address, bundle, mode,
                    iterations=4, episodes_per_iter=4,
                    reset_kwargs_fn=train_fn, seed=rep,
                )
                means[mode] = mappo_mod.evaluate(server.address, bundle, 10, eval_fn)
            if means["mappo"] <= means["ippo"]:
                wins += 1
            details.append(f"rep{rep}: {means['mappo']:.1f} vs {means['ippo']:.1f}")
    assert wins >= 4, f"coordination advantage in only {wins}/5 reps ({details})"
    _announce("coordination advantage", f"{wins}/5 repetitions, {'; '.join(details)}")


def test_inference_latency_p99(trained_imitation):
    bundle, _ = trained_imitation
    policy = ImitationPolicy(bundle)
    latencies = []
    with wire.SimulatorServer() as server:
        with wire.EpisodeClient(server.address) as client:
            for seed in (300, 301):
                msg = client.reset(preset="S-1", seed=seed)
                while msg["kind"] == "observe":
                    t0 = time.perf_counter()
                    idx = policy.choose(msg)
                    latencies.append(time.perf_counter() - t0)
                    msg = client.act(idx)
    p99 = sorted(latencies)[int(0.99 * (len(latencies) - 1))]
    assert p99 < 0.050, f"p99 forward {p99 * 1e3:.1f}ms"
    _announce(
        "inference latency",
        f"p99 {p99 * 1e3:.1f}ms over {len(latencies)} decisions",
    )
