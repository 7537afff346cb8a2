"""Tests for the return models and their joint training with the encoder."""

import math

import numpy as np
import pytest
import torch

from vdfp_lab.config import ReprConfig, ReturnModelConfig
from vdfp_lab.errors import DivergenceError
from vdfp_lab.reprmodel import TrajectoryEncoder
from vdfp_lab.returnmodel import (
    ICNNReturn,
    LeakyReLUReturn,
    LinearReturn,
    NEICNNReturn,
    ReturnLearner,
    build_return_model,
    certify_convexity,
)
from vdfp_lab.trajstore import Segment, collate


def generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def test_linear_is_affine() -> None:
    torch.manual_seed(0)
    model = LinearReturn(5).double()
    m = torch.randn(4, 5, dtype=torch.float64)
    expected = m @ model.linear.weight[0] + model.linear.bias
    torch.testing.assert_close(model(m), expected)

    m1, m2 = torch.randn(2, 5, dtype=torch.float64)
    for lam in np.linspace(0.0, 1.0, 11):
        mixed = model((lam * m1 + (1 - lam) * m2).unsqueeze(0))
        chord = lam * model(m1.unsqueeze(0)) + (1 - lam) * model(m2.unsqueeze(0))
        assert float(mixed) == pytest.approx(float(chord), abs=1e-9)


def test_leaky_relu_with_unit_slope_is_linear() -> None:
    torch.manual_seed(1)
    linear = LinearReturn(4)
    leaky = LeakyReLUReturn(4, alpha=1.0)
    leaky.load_state_dict(linear.state_dict())
    m = torch.randn(32, 4)
    torch.testing.assert_close(leaky(m), linear(m))


def test_builder_selects_kind() -> None:
    assert isinstance(build_return_model(3, ReturnModelConfig(kind="linear")), LinearReturn)
    assert isinstance(build_return_model(3, ReturnModelConfig(kind="icnn")), ICNNReturn)
    ne = build_return_model(3, ReturnModelConfig(kind="ne_icnn"))
    assert isinstance(ne, NEICNNReturn)
    assert ne.first.in_features == 6


def test_convex_kinds_certify() -> None:
    for kind in ("icnn", "ne_icnn", "leaky_relu"):
        torch.manual_seed(2)
        model = build_return_model(6, ReturnModelConfig(kind=kind, hidden=(16, 16)))
        assert certify_convexity(model, trials=10_000, generator=generator(3))
    assert certify_convexity(LinearReturn(6))


def test_sign_flipped_icnn_fails_certification() -> None:
    torch.manual_seed(4)
    model = ICNNReturn(4, hidden=(16,))
    with torch.no_grad():
        model.hidden_out.weight.copy_(-model.hidden_out.weight.abs() - 0.1)
        model.input_out.weight.zero_()
    assert not certify_convexity(model, trials=1000, generator=generator(5))


def test_convex_models_sit_above_jensen_bound() -> None:
    for kind in ("icnn", "ne_icnn"):
        torch.manual_seed(6)
        model = build_return_model(5, ReturnModelConfig(kind=kind, hidden=(8, 8))).double()
        samples = 3.0 * torch.randn(200, 5, dtype=torch.float64, generator=generator(7))
        with torch.no_grad():
            mean_of_u = float(model(samples).mean())
            u_of_mean = float(model(samples.mean(dim=0, keepdim=True)))
        assert mean_of_u >= u_of_mean - 1e-6


def test_projection_keeps_constrained_weights_nonnegative() -> None:
    torch.manual_seed(8)
    model = NEICNNReturn(3, hidden=(8, 8))
    optimizer = torch.optim.SGD(model.parameters(), lr=10.0)
    loss = model(torch.randn(16, 3)).sum()
    loss.backward()
    optimizer.step()
    model.project()
    for layer in model.constrained_layers():
        assert torch.all(layer.weight >= 0.0)


def learner(repr_dim: int = 8, lr: float = 1e-3) -> ReturnLearner:
    cfg = ReprConfig(
        filter_heights=(1, 2), filter_counts=(8, 8), repr_dim=repr_dim, dropout_prob=0.0
    )
    torch.manual_seed(9)
    encoder = TrajectoryEncoder(3, cfg)
    return ReturnLearner(encoder, LinearReturn(repr_dim), lr=lr)


def constant_reward_batch(rng: np.random.Generator, n: int = 64, length: int = 8):
    segments = []
    for _ in range(n):
        c = rng.uniform(-1.0, 1.0)
        states = np.column_stack([np.full(length, c), rng.normal(size=length)])
        segments.append(
            Segment(
                states=states,
                actions=rng.uniform(-1, 1, (length, 1)),
                rewards=np.full(length, c),
            )
        )
    return collate(segments, max_len=8)


def test_identical_segments_loss_is_single_squared_error() -> None:
    model = learner()
    rng = np.random.default_rng(10)
    segment = Segment(
        states=rng.normal(size=(3, 2)), actions=rng.normal(size=(3, 1)), rewards=np.ones(3)
    )
    batch = collate([segment] * 5, max_len=8)
    with torch.no_grad():
        prediction = float(model.predict(batch)[0])
    label = 1.0 + 0.9 + 0.81
    loss = model.train_step(batch, 0.9)
    assert loss == pytest.approx((prediction - label) ** 2, rel=1e-5)
    assert model.updates == 1


def test_zero_rewards_drive_loss_to_zero() -> None:
    model = learner(lr=3e-3)
    rng = np.random.default_rng(11)
    segments = [
        Segment(
            states=rng.normal(size=(4, 2)), actions=rng.normal(size=(4, 1)), rewards=np.zeros(4)
        )
        for _ in range(32)
    ]
    batch = collate(segments, max_len=8)
    for _ in range(500):
        loss = model.train_step(batch, 0.99)
    assert loss < 1e-4


def test_joint_regression_fits_constant_reward_returns() -> None:
    model = learner(lr=1e-3)
    rng = np.random.default_rng(12)
    for _ in range(2000):
        model.train_step(constant_reward_batch(rng), 0.9)
    batch = constant_reward_batch(rng, n=512)
    labels = batch.returns(0.9)
    with torch.no_grad():
        mse = float(((model.predict(batch) - labels) ** 2).mean())
    assert mse <= 0.01 * float(labels.var())


def test_zero_discount_fits_immediate_reward() -> None:
    model = learner(lr=1e-3)
    rng = np.random.default_rng(15)

    def batch(n: int = 64):
        segments = []
        for _ in range(n):
            c = rng.uniform(-1.0, 1.0)
            rewards = np.concatenate([[c], rng.normal(scale=2.0, size=7)])
            segments.append(
                Segment(
                    states=np.column_stack([np.full(8, c), rng.normal(size=8)]),
                    actions=rng.uniform(-1, 1, (8, 1)),
                    rewards=rewards,
                )
            )
        return collate(segments, max_len=8)

    for _ in range(2000):
        model.train_step(batch(), 0.0)
    held_out = batch(512)
    immediate = held_out.rewards[:, 0]
    torch.testing.assert_close(held_out.returns(0.0), immediate)
    with torch.no_grad():
        mse = float(((model.predict(held_out) - immediate) ** 2).mean())
    assert mse <= 0.01 * float(immediate.var())


def test_non_finite_loss_aborts() -> None:
    model = learner()
    rng = np.random.default_rng(13)
    segment = Segment(
        states=rng.normal(size=(2, 2)),
        actions=rng.normal(size=(2, 1)),
        rewards=np.array([math.nan, 1.0]),
    )
    with pytest.raises(DivergenceError):
        model.train_step(collate([segment], max_len=8), 0.9)


def test_runaway_predictions_abort_before_the_step() -> None:
    model = learner()
    model.divergence_limit = 1e-12
    rng = np.random.default_rng(16)
    before = [p.detach().clone() for p in model.model.parameters()]
    with pytest.raises(DivergenceError, match="return model diverged"):
        model.train_step(constant_reward_batch(rng), 0.9)
    assert model.updates == 0
    for old, new in zip(before, model.model.parameters()):
        assert torch.equal(old, new)


def test_loss_gradient_matches_finite_differences() -> None:
    torch.manual_seed(14)
    model = LinearReturn(9).double()
    m = torch.randn(6, 9, dtype=torch.float64)
    labels = torch.randn(6, dtype=torch.float64)

    def loss_at(weights: torch.Tensor) -> torch.Tensor:
        return ((m @ weights[:9] + weights[9] - labels) ** 2).mean()

    point = torch.cat([model.linear.weight[0], model.linear.bias]).detach().requires_grad_(True)
    (analytic,) = torch.autograd.grad(loss_at(point), point)
    numeric = torch.zeros(10, dtype=torch.float64)
    step = 1e-6
    for i in range(10):
        offset = torch.zeros(10, dtype=torch.float64)
        offset[i] = step
        with torch.no_grad():
            numeric[i] = (loss_at(point + offset) - loss_at(point - offset)) / (2 * step)
    error = float(torch.linalg.norm(analytic - numeric) / torch.linalg.norm(numeric))
    assert error <= 1e-4
