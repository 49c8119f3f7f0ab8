"""Model primitives: gating, masking, losses, recursion identities."""

import math

import pytest
import torch

from totelearn.models import (
    DTYPE,
    CandidateScorer,
    CoordinationHead,
    PolicyConfig,
    RecurrentCritic,
    gae_targets,
    imitation_loss,
    pad_batch,
    policy_forward,
    ppo_surrogate,
)


def _rows(*shape):
    gen = torch.Generator().manual_seed(0)
    return torch.randn(*shape, generator=gen, dtype=DTYPE)


def test_encoder_is_identity_at_init():
    scorer = CandidateScorer(4, PolicyConfig())
    x = _rows(2, 5, 4)
    valid = torch.ones(2, 5, dtype=torch.bool)
    h0 = torch.relu(scorer.input(x))
    assert torch.allclose(scorer.encode(x, valid), h0)


def test_zero_input_zero_bias_gives_zero_h0():
    scorer = CandidateScorer(4, PolicyConfig())
    with torch.no_grad():
        scorer.input.bias.zero_()
    x = torch.zeros(1, 3, 4, dtype=DTYPE)
    valid = torch.ones(1, 3, dtype=torch.bool)
    assert torch.count_nonzero(scorer.encode(x, valid)) == 0


def test_encoder_rejects_nan():
    scorer = CandidateScorer(4, PolicyConfig())
    x = torch.full((1, 2, 4), float("nan"), dtype=DTYPE)
    with pytest.raises(ValueError):
        scorer.encode(x, torch.ones(1, 2, dtype=torch.bool))


def test_permutation_equivariance_after_training_step():
    torch.manual_seed(1)
    scorer = CandidateScorer(4, PolicyConfig())
    # move the gates off zero so attention actually mixes
    with torch.no_grad():
        for block in scorer.blocks:
            block.gate_attn.fill_(0.5)
            block.gate_ff.fill_(0.3)
    x = _rows(1, 6, 4)
    valid = torch.ones(1, 6, dtype=torch.bool)
    perm = torch.randperm(6, generator=torch.Generator().manual_seed(3))
    direct = scorer.logits(x, valid)[0]
    permuted = scorer.logits(x[:, perm], valid)[0]
    assert torch.allclose(direct[perm], permuted, atol=1e-10)


def test_policy_forward_single_feasible():
    logits = torch.tensor([[5.0, -1.0, 2.0]], dtype=DTYPE)
    mask = torch.tensor([[False, True, False]])
    probs = policy_forward(logits, mask)
    assert probs[0, 1] == pytest.approx(1.0)
    assert probs[0, 0] == 0.0 and probs[0, 2] == 0.0


def test_policy_forward_equal_logits_split():
    probs = policy_forward(
        torch.zeros(1, 2, dtype=DTYPE), torch.ones(1, 2, dtype=torch.bool)
    )
    assert probs.tolist() == [[0.5, 0.5]]


def test_policy_forward_ln2_example():
    logits = torch.tensor([[math.log(2.0), 0.0]], dtype=DTYPE)
    probs = policy_forward(logits, torch.ones(1, 2, dtype=torch.bool))
    assert probs[0, 0] == pytest.approx(2 / 3)
    assert probs[0, 1] == pytest.approx(1 / 3)


def test_policy_forward_rejects_all_false_mask():
    with pytest.raises(ValueError):
        policy_forward(torch.zeros(1, 2, dtype=DTYPE), torch.zeros(1, 2, dtype=torch.bool))


def test_policy_mass_sums_to_one_with_zero_on_masked():
    gen = torch.Generator().manual_seed(5)
    logits = torch.randn(4, 7, generator=gen, dtype=DTYPE)
    mask = torch.rand(4, 7, generator=gen) > 0.4
    mask[:, 0] = True
    probs = policy_forward(logits, mask)
    assert torch.allclose(probs.sum(-1), torch.ones(4, dtype=DTYPE), atol=1e-6)
    assert torch.count_nonzero(probs[~mask]) == 0


def test_imitation_loss_perfect_prediction_is_zero():
    rows = _rows(1, 3, 4)
    logits = torch.tensor([[50.0, 0.0, 0.0]], dtype=DTYPE)
    mask = torch.ones(1, 3, dtype=torch.bool)
    loss = imitation_loss(logits, mask, rows, torch.tensor([0]), 0.1)
    assert float(loss) == pytest.approx(0.0, abs=1e-12)


def test_imitation_loss_uniform_over_four_is_ln4():
    rows = torch.zeros(1, 4, 3, dtype=DTYPE)
    logits = torch.zeros(1, 4, dtype=DTYPE)
    mask = torch.ones(1, 4, dtype=torch.bool)
    loss = imitation_loss(logits, mask, rows, torch.tensor([2]), 0.0)
    assert float(loss) == pytest.approx(math.log(4.0))


def test_imitation_loss_lambda_zero_is_plain_ce():
    rows = _rows(1, 3, 4)
    logits = _rows(1, 3)
    mask = torch.ones(1, 3, dtype=torch.bool)
    ce_only = imitation_loss(logits, mask, rows, torch.tensor([1]), 0.0)
    probs = policy_forward(logits, mask)
    assert float(ce_only) == pytest.approx(-math.log(float(probs[0, 1])))


def test_critic_zero_params_outputs_zero():
    critic = RecurrentCritic(8)
    with torch.no_grad():
        for p in critic.parameters():
            p.zero_()
    seq = _rows(5, 8)
    assert torch.count_nonzero(critic(seq)) == 0


def test_critic_zero_recurrence_constant_on_repeats():
    torch.manual_seed(2)
    critic = RecurrentCritic(8)
    hidden = critic.gru.hidden_size
    with torch.no_grad():
        critic.gru.weight_hh_l0.zero_()
        critic.gru.bias_hh_l0.zero_()
        # drive the update gate shut so the hidden state carries nothing over
        critic.gru.bias_ih_l0[hidden : 2 * hidden].fill_(-50.0)
    row = _rows(1, 8)
    seq = row.repeat(6, 1)
    values = critic(seq)
    assert torch.allclose(values, values[0].expand(6), atol=1e-10)


def test_gae_single_step_closed_form():
    adv, target = gae_targets([1.0], [0.0, 0.0], 1.0, 1.0)
    assert adv == [1.0] and target == [1.0]


def test_gae_zero_rewards_zero_values():
    adv, target = gae_targets([0.0] * 5, [0.0] * 6, 1.0, 0.95)
    assert adv == [0.0] * 5 and target == [0.0] * 5


def test_gae_gamma_lambda_one_equals_mc_returns():
    import numpy as np

    rng = np.random.default_rng(0)
    rewards = rng.normal(size=10).tolist()
    values = rng.normal(size=11).tolist()
    values[-1] = 0.0  # terminal bootstrap
    adv, _ = gae_targets(rewards, values, 1.0, 1.0)
    returns = np.cumsum(rewards[::-1])[::-1]
    assert np.allclose(adv, returns - np.array(values[:-1]))


def test_gae_length_mismatch_rejected():
    with pytest.raises(ValueError):
        gae_targets([1.0, 2.0], [0.0, 0.0], 1.0, 1.0)


def test_type_embedding_is_additive():
    head = CoordinationHead(latent=2)
    with torch.no_grad():
        head.type_embed[0] = torch.tensor([0.5, -0.5], dtype=DTYPE)
    h = torch.tensor([1.0, 2.0], dtype=DTYPE)
    assert head.role_latent(0, h).tolist() == [1.5, 1.5]


def test_attention_weights_normalized_and_convex():
    head = CoordinationHead(latent=8, seed=3)
    pooled = _rows(8)
    peers = _rows(3, 8)
    z, alpha = head.aggregate(0, pooled, peers)
    assert alpha.sum().item() == pytest.approx(1.0)
    assert (alpha >= 0).all()
    manual = head.wv(peers).T @ alpha
    assert torch.allclose(z, manual, atol=1e-12)


def test_single_peer_gets_full_attention():
    head = CoordinationHead(latent=8, seed=4)
    z, alpha = head.aggregate(1, _rows(8), _rows(1, 8))
    assert alpha.tolist() == [1.0]
    assert torch.allclose(z, head.wv(_rows(1, 8))[0], atol=1e-12)


def test_coordination_gate_starts_closed():
    head = CoordinationHead(latent=8)
    bonus = head.candidate_bonus(_rows(5, 8), _rows(8))
    assert torch.count_nonzero(bonus) == 0


def test_ppo_surrogate_ratio_one_is_mean_advantage():
    adv = torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)
    ratio = torch.ones(3, dtype=DTYPE)
    assert float(ppo_surrogate(ratio, adv, 0.2)) == pytest.approx(float(adv.mean()))


def test_pad_batch_shapes():
    rows, valid = pad_batch([_rows(2, 3), _rows(5, 3)])
    assert rows.shape == (2, 5, 3)
    assert valid.tolist() == [[True, True, False, False, False], [True] * 5]
