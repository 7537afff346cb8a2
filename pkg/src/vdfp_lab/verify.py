"""Fast property checks of the learned components against the brute-force oracles.

Each check builds tiny models in float64, compares them with an independent
reference from :mod:`vdfp_lab.oracles` and returns a :class:`CheckResult`.
The ``verify`` CLI command runs them all in a few seconds.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import torch
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from . import oracles
from .agents.base import Actor
from .agents.ppo import gae
from .agents.vd_ddpg import vdfp_objective, vdfp_policy_gradient
from .config import DelayConfig, ReprConfig, ReturnModelConfig, VAEConfig
from .dynamics import ConditionalVAE, LatentDistribution, clipped_noise, kl_divergence
from .envs import ENV_REGISTRY, make_env, wrap_delay
from .errors import UsageError
from .reprmodel import TrajectoryEncoder
from .returnmodel import build_return_model, certify_convexity
from .schemas import CheckResult
from .trajstore import Segment, discounted_return

logger = logging.getLogger(__name__)

Check = Callable[[], CheckResult]


def check_delay_conservation() -> CheckResult:
    """Delayed reward streams keep every episode total."""

    rng = np.random.default_rng(0)
    worst = 0.0
    for name in ENV_REGISTRY:
        for delay in (DelayConfig(mode="accumulate", d=3), DelayConfig(mode="shift", d=5)):
            env = wrap_delay(make_env(name), delay)
            env.reset(int(rng.integers(0, 2**31 - 1)))
            emitted = base = 0.0
            done = False
            while not done:
                result = env.step(rng.uniform(env.spec.action_low, env.spec.action_high))
                emitted += result.reward
                base += result.true_reward
                done = result.done
            worst = max(worst, abs(emitted - base))
    return CheckResult(
        name="delay_conservation", passed=worst <= 1e-9, detail=f"max |diff| {worst:.2e}"
    )


def check_discounted_return() -> CheckResult:
    rng = np.random.default_rng(1)
    rewards = rng.normal(size=40)
    segment = Segment(
        states=np.zeros((40, 1)), actions=np.zeros((40, 1)), rewards=rewards
    )
    diff = abs(discounted_return(segment, 0.97) - oracles.reversed_return(rewards, 0.97))
    return CheckResult(name="discounted_return", passed=diff <= 1e-9, detail=f"|diff| {diff:.2e}")


def check_conv_features() -> CheckResult:
    """Masked conv + max-pool agrees with the sliding-window loop."""

    row_dim, rows, length = 3, 8, 5
    cfg = ReprConfig(filter_heights=(1, 2, 3, 6), filter_counts=(2, 2, 2, 1), repr_dim=4)
    torch.manual_seed(0)
    encoder = TrajectoryEncoder(row_dim, cfg).double()
    rng = np.random.default_rng(2)
    matrix = np.zeros((rows, row_dim))
    matrix[:length] = rng.normal(size=(length, row_dim))
    mask = torch.zeros(1, rows, dtype=torch.float64)
    mask[0, :length] = 1.0
    with torch.no_grad():
        got = encoder.conv_features(torch.from_numpy(matrix).unsqueeze(0), mask)[0].numpy()
    filters = [
        (conv.weight.detach().permute(0, 2, 1).numpy(), conv.bias.detach().numpy())
        for conv in encoder.convs
    ]
    expected = oracles.naive_conv_features(matrix, length, filters)
    diff = float(np.abs(got - expected).max())
    return CheckResult(name="conv_features", passed=diff <= 1e-10, detail=f"max |diff| {diff:.2e}")


def check_kl_closed_form() -> CheckResult:
    zero = kl_divergence(LatentDistribution(torch.zeros(1, 4), torch.zeros(1, 4)))
    shifted = kl_divergence(LatentDistribution(torch.ones(1, 4), torch.zeros(1, 4)))
    ok = math.isclose(float(zero), 0.0, abs_tol=1e-7) and math.isclose(
        float(shifted), 2.0, rel_tol=1e-6
    )
    return CheckResult(
        name="kl_closed_form",
        passed=ok,
        detail=f"KL(0,1)={float(zero):.3g}, KL(1,1)={float(shifted):.3g}",
    )


def check_clipped_noise() -> CheckResult:
    generator = torch.Generator().manual_seed(3)
    noise = clipped_noise((4096, 8), 0.2, generator=generator)
    peak = float(noise.abs().max())
    return CheckResult(name="clipped_noise", passed=peak <= 0.2, detail=f"max |eps| {peak:.3f}")


def check_gae() -> CheckResult:
    rng = np.random.default_rng(4)
    rewards, values = rng.normal(size=25), rng.normal(size=25)
    got = gae(rewards, values, 0.99, 0.95, last_value=0.3)
    expected = oracles.recursive_gae(rewards, values, 0.99, 0.95, last_value=0.3)
    diff = float(np.abs(got - expected).max())
    return CheckResult(name="gae", passed=diff <= 1e-10, detail=f"max |diff| {diff:.2e}")


def policy_gradient_error(kind: str, seed: int = 5) -> float:
    """Relative L2 gap between the autograd actor gradient and central differences."""

    state_dim, action_dim, repr_dim = 3, 2, 4
    torch.manual_seed(seed)
    actor = Actor(state_dim, action_dim, [-1.0] * action_dim, [1.0] * action_dim, (8, 6)).double()
    vae_cfg = VAEConfig(z_dim=3, encoder_hidden=(8, 8), decoder_hidden=(8, 8))
    decoder = ConditionalVAE(state_dim + action_dim, repr_dim, vae_cfg).double()
    return_model = build_return_model(repr_dim, ReturnModelConfig(kind=kind, hidden=(8,))).double()
    states = torch.randn(16, state_dim, dtype=torch.float64)
    eps = clipped_noise((16, vae_cfg.z_dim), vae_cfg.clip_c, dtype=torch.float64)

    analytic = vdfp_policy_gradient(actor, decoder, return_model, states, eps).numpy()
    start = parameters_to_vector(actor.parameters()).detach().clone()

    def objective(point: np.ndarray) -> float:
        with torch.no_grad():
            vector_to_parameters(torch.from_numpy(point), actor.parameters())
            return float(vdfp_objective(actor, decoder, return_model, states, eps))

    numeric = oracles.finite_difference_gradient(objective, start.numpy())
    with torch.no_grad():
        vector_to_parameters(start, actor.parameters())
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12))


def check_policy_gradient() -> CheckResult:
    """Autograd chain through actor, decoder and U matches central differences."""

    errors = {kind: policy_gradient_error(kind) for kind in ("linear", "icnn", "ne_icnn")}
    detail = ", ".join(f"{kind} {err:.1e}" for kind, err in errors.items())
    return CheckResult(
        name="policy_gradient", passed=max(errors.values()) <= 1e-4, detail=f"rel err {detail}"
    )


def check_jensen(n_rollouts: int = 100_000) -> CheckResult:
    """Convex U never predicts above the mean of U; linear U matches it exactly."""

    mdp = oracles.FiniteMDP(
        transitions=np.array([[[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.9, 0.1]]]),
        rewards=np.array([[1.0, 0.0], [0.5, 2.0]]),
        gamma=0.9,
        horizon=6,
    )
    policy = np.array([[0.6, 0.4], [0.3, 0.7]])
    feature_map = oracles.occupancy_feature_map(2, 2, mdp.gamma)
    weights = np.array([0.3, -1.0, 2.0, 0.5])
    rng = np.random.default_rng(6)

    def log_sum_exp(m: np.ndarray) -> np.ndarray:
        peak = m.max(axis=1, keepdims=True)
        return (peak + np.log(np.exp(m - peak).sum(axis=1, keepdims=True))).reshape(-1)

    worst, linear_worst = math.inf, 0.0
    for state in range(2):
        for action in range(2):
            states, actions, _ = oracles.rollout(mdp, policy, state, action, n_rollouts, rng)
            features = feature_map(states, actions)
            gap, stderr = oracles.jensen_gap(log_sum_exp, features)
            worst = min(worst, gap / max(stderr, 1e-12))
            gap, stderr = oracles.jensen_gap(lambda m: m @ weights, features)
            linear_worst = max(linear_worst, abs(gap) / max(stderr, 1e-12))
    return CheckResult(
        name="jensen_lower_bound",
        passed=worst >= -3.0 and linear_worst <= 3.0,
        detail=f"convex min gap/stderr {worst:.2f}, linear max |gap|/stderr {linear_worst:.2f}",
    )


def check_icnn_convexity() -> CheckResult:
    generator = torch.Generator().manual_seed(7)
    results = []
    for kind in ("icnn", "ne_icnn"):
        torch.manual_seed(7)
        model = build_return_model(6, ReturnModelConfig(kind=kind, hidden=(16, 16)))
        results.append(certify_convexity(model, trials=500, generator=generator))
    return CheckResult(
        name="icnn_convexity", passed=all(results), detail=f"icnn={results[0]} ne_icnn={results[1]}"
    )


CHECKS: Dict[str, Check] = {
    "delay_conservation": check_delay_conservation,
    "discounted_return": check_discounted_return,
    "conv_features": check_conv_features,
    "kl_closed_form": check_kl_closed_form,
    "clipped_noise": check_clipped_noise,
    "gae": check_gae,
    "policy_gradient": check_policy_gradient,
    "jensen_lower_bound": check_jensen,
    "icnn_convexity": check_icnn_convexity,
}


def run_checks(names: Optional[Iterable[str]] = None) -> List[CheckResult]:
    """Run the selected checks (all by default); a raising check counts as failed."""

    selected = list(CHECKS) if names is None else list(names)
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks {unknown}; choose from {sorted(CHECKS)}")
    results: List[CheckResult] = []
    for name in selected:
        try:
            result = CHECKS[name]()
        except Exception as exc:  # noqa: BLE001 - reported as a failed check
            logger.exception("check %s raised", name)
            result = CheckResult(name=name, passed=False, detail=f"{type(exc).__name__}: {exc}")
        logger.debug("check %s: %s (%s)", name, result.passed, result.detail)
        results.append(result)
    return results
