"""Proposal samplers: baseline random, doubled random, class-biased, class-exclusive.

The class-biased pair draws a fixed negative quota from the background pool,
fills the positive quota preferentially from its own class group, and tops
up from the other group only when its own group runs short. The
class-exclusive variant is identical minus the top-up. All samplers draw
uniformly without replacement and take an explicit generator, so callers own
the randomness.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, TypeVar

import numpy as np

from .assignment import LabeledProposal, ProposalPartition

BIAS_TAIL = "tail"
BIAS_HEAD = "head"
BIAS_NONE = "unbiased"

T = TypeVar("T")


@dataclass(frozen=True)
class SamplerConfig:
    """Batch size and positive share; quotas derive as num_pos = round(N_s * alpha)."""

    num_samples: int = 512
    pos_fraction: float = 0.25

    def __post_init__(self):
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if not 0.0 < self.pos_fraction < 1.0:
            raise ValueError("pos_fraction must be in (0, 1)")

    @property
    def num_pos(self) -> int:
        return int(round(self.num_samples * self.pos_fraction))

    @property
    def num_neg(self) -> int:
        return self.num_samples - self.num_pos

    def doubled(self) -> "SamplerConfig":
        return SamplerConfig(self.num_samples * 2, self.pos_fraction)


@dataclass(frozen=True)
class SampleSet:
    positives: tuple[LabeledProposal, ...]
    negatives: tuple[LabeledProposal, ...]
    bias: str


def sub_sample(pool: Sequence[T], num: int, rng: np.random.Generator) -> list[T]:
    """Uniform subset of size num without replacement; the whole pool if num
    >= len(pool). The whole-pool branch consumes no randomness."""
    if num < 0:
        raise ValueError("num must be >= 0")
    if num >= len(pool):
        return list(pool)
    if num == 0:
        return []
    picked = rng.choice(len(pool), size=num, replace=False)
    return [pool[i] for i in picked]


def random_sampler(
    partition: ProposalPartition, cfg: SamplerConfig, rng: np.random.Generator
) -> SampleSet:
    """Baseline sampler: positives drawn from both groups pooled together."""
    positives = sub_sample(list(partition.s_t) + list(partition.s_h), cfg.num_pos, rng)
    negatives = sub_sample(partition.s_b, cfg.num_neg, rng)
    return SampleSet(tuple(positives), tuple(negatives), BIAS_NONE)


def rs_dbl(
    partition: ProposalPartition, cfg: SamplerConfig, rng: np.random.Generator
) -> SampleSet:
    """Random sampler with doubled quotas; a sample-budget control."""
    return random_sampler(partition, cfg.doubled(), rng)


def _biased_sample(
    own: Sequence[LabeledProposal],
    other: Sequence[LabeledProposal],
    s_b: Sequence[LabeledProposal],
    cfg: SamplerConfig,
    rng: np.random.Generator,
    bias: str,
    top_up: bool,
) -> SampleSet:
    # Draw order matters for reproducibility: negatives, own-group positives,
    # then (class-biased only) the other-group top-up.
    negatives = sub_sample(s_b, cfg.num_neg, rng)
    positives = sub_sample(own, cfg.num_pos, rng)
    if top_up and len(own) < cfg.num_pos:
        positives.extend(sub_sample(other, cfg.num_pos - len(own), rng))
    return SampleSet(tuple(positives), tuple(negatives), bias)


def cbs(
    partition: ProposalPartition, cfg: SamplerConfig, rng: np.random.Generator
) -> tuple[SampleSet, SampleSet]:
    """Class-biased sampler pair (tail-biased result first, then head-biased).

    Each result fills its positive quota from its own group and, if the
    group undersupplies, tops up from the other group with the remainder.
    The two results draw independently from the shared pools, so a proposal
    may appear in both.
    """
    r_t = _biased_sample(partition.s_t, partition.s_h, partition.s_b, cfg, rng, BIAS_TAIL, True)
    r_h = _biased_sample(partition.s_h, partition.s_t, partition.s_b, cfg, rng, BIAS_HEAD, True)
    return r_t, r_h


def ces(
    partition: ProposalPartition, cfg: SamplerConfig, rng: np.random.Generator
) -> tuple[SampleSet, SampleSet]:
    """Class-exclusive sampler pair: like cbs but never tops up from the
    other group, so each result's positives come only from its own group."""
    r_t = _biased_sample(partition.s_t, partition.s_h, partition.s_b, cfg, rng, BIAS_TAIL, False)
    r_h = _biased_sample(partition.s_h, partition.s_t, partition.s_b, cfg, rng, BIAS_HEAD, False)
    return r_t, r_h
