"""Analytical FLOPs model for a pre-norm transformer encoder.

Counts multiply-accumulate work as 2 FLOPs and ignores norms, biases,
activations, and softmax (standard convention for transformer FLOPs
tables). All arithmetic is exact Python integers.

Per layer at token count n and width C:
    attention: 4*n*C^2 (Q, K, V, output projections) + 2*n^2*C
               (attention scores and the attention-weighted sum)
    MLP:       2 * mlp_ratio * n * C^2

When a layer removes tokens, the reduction happens between the
attention block and the MLP, so attention is charged at the pre-merge
count and the MLP at the post-merge count.
"""

from __future__ import annotations

from dataclasses import dataclass

MLP_RATIO = 4


class InfeasibleScheduleError(ValueError):
    """Raised when a reduction schedule drives the token count below 1."""


@dataclass(frozen=True)
class CostConfig:
    """Encoder geometry the FLOPs model needs."""

    n0: int
    width: int
    layers: int
    mlp_ratio: int = MLP_RATIO

    def __post_init__(self):
        if min(self.n0, self.width, self.layers, self.mlp_ratio) < 1:
            raise ValueError("all cost-model dimensions must be positive")


def attention_flops(n: int, width: int) -> int:
    """FLOPs for one self-attention block at n tokens."""
    if n < 1 or width < 1:
        raise ValueError(f"token count and width must be positive, got n={n}, width={width}")
    return 4 * n * width * width + 2 * n * n * width


def mlp_flops(n: int, width: int, mlp_ratio: int = MLP_RATIO) -> int:
    """FLOPs for one MLP block (hidden size mlp_ratio * width) at n tokens."""
    if n < 1 or width < 1 or mlp_ratio < 1:
        raise ValueError("token count, width, and ratio must be positive")
    return 2 * mlp_ratio * n * width * width


def layer_flops(n: int, cfg: CostConfig) -> int:
    """FLOPs for one full encoder layer at a constant n tokens.

    At the default ratio 4 this is 12*n*C^2 + 2*n^2*C.
    """
    return attention_flops(n, cfg.width) + mlp_flops(n, cfg.width, cfg.mlp_ratio)


@dataclass(frozen=True)
class CostReport:
    per_layer_flops: tuple[int, ...]
    total_flops: int
    token_trajectory: tuple[int, ...]  # token count at the end of each layer

    @property
    def final_tokens(self) -> int:
        return self.token_trajectory[-1]


def schedule_flops(cfg: CostConfig, schedule: list[int]) -> CostReport:
    """Total FLOPs for an encoder under a per-layer token-reduction schedule.

    schedule[l] tokens are removed inside layer l (0-based), after the
    attention block and before the MLP. A schedule shorter than the
    layer count is padded with zeros; a longer one is rejected.

    Raises InfeasibleScheduleError if any layer would end below 1 token.
    """
    if len(schedule) > cfg.layers:
        raise ValueError(
            f"schedule has {len(schedule)} entries for {cfg.layers} layers"
        )
    full = list(schedule) + [0] * (cfg.layers - len(schedule))
    for l, r in enumerate(full):
        if r < 0:
            raise ValueError(f"negative reduction {r} at layer {l}")

    per_layer: list[int] = []
    trajectory: list[int] = []
    n = cfg.n0
    total = 0
    for l, r in enumerate(full):
        n_out = n - r
        if n_out < 1:
            raise InfeasibleScheduleError(
                f"infeasible schedule: layer {l} would leave {n_out} tokens"
            )
        fl = attention_flops(n, cfg.width) + mlp_flops(n_out, cfg.width, cfg.mlp_ratio)
        per_layer.append(fl)
        trajectory.append(n_out)
        total += fl
        n = n_out
    return CostReport(
        per_layer_flops=tuple(per_layer),
        total_flops=total,
        token_trajectory=tuple(trajectory),
    )
