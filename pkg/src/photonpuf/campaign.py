"""Batch evaluation campaigns: robustness, unpredictability, unclonability.

A campaign drives the simulator through one of the three canonical dataset
shapes and reduces the responses to distance reports:

* robustness: one token, one challenge, repeated noisy captures; distances
  are taken between the first (reference) capture and every later one,
  mirroring how authentication compares field captures to the enrolled key.
* unpredictability: one token, many challenges; same reference scheme.
* unclonability: many tokens, one challenge; same reference scheme.

When a hash configuration is supplied the same pairing is applied to hash
keys (helper enrolled on the reference), yielding Hamming reports next to the
Euclidean and correlation ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .hashing import HashConfig, hash_apply, hash_enroll
from .token import NoiseParams, TokenModel, new_token, respond

__all__ = ["TokenSpec", "Campaign", "CampaignResult", "run_campaign", "success_curve", "SuccessCurve"]

KINDS = ("robustness", "unpredictability", "unclonability")


@dataclass(frozen=True)
class TokenSpec:
    """Geometry shared by every token a campaign instantiates."""

    kind: str = "diffuser"
    grid_dims: tuple = (16, 16)
    out_dims: tuple = (128, 128)
    speckle_grain: float = 1.5
    wl_decorrelation_length: float | None = None

    def build(self, seed: int) -> TokenModel:
        return new_token(
            seed,
            kind=self.kind,
            grid_dims=self.grid_dims,
            out_dims=self.out_dims,
            wl_decorrelation_length=self.wl_decorrelation_length,
            speckle_grain=self.speckle_grain,
        )


@dataclass(frozen=True)
class Campaign:
    kind: str
    token_spec: TokenSpec
    token_seeds: tuple
    challenges: tuple
    noise: NoiseParams = field(default_factory=NoiseParams)
    repeats: int = 2
    # noise for the reference capture only (think: enrollment on a quiet
    # bench, later captures in the field); None means same as `noise`
    reference_noise: NoiseParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"campaign kind must be one of {KINDS}")
        object.__setattr__(self, "token_seeds", tuple(self.token_seeds))
        object.__setattr__(self, "challenges", tuple(self.challenges))
        if not self.token_seeds or not self.challenges:
            raise ValueError("need at least one token seed and one challenge")
        if self.kind == "robustness" and self.repeats < 2:
            raise ValueError("robustness needs at least two captures")
        if self.kind == "unpredictability" and len(self.challenges) < 2:
            raise ValueError("unpredictability needs at least two challenges")
        if self.kind == "unclonability" and len(self.token_seeds) < 2:
            raise ValueError("unclonability needs at least two token seeds")


@dataclass
class CampaignResult:
    kind: str
    euclidean: metrics.DistanceReport
    correlation: metrics.DistanceReport
    hash_hamming: metrics.DistanceReport | None = None


def _campaign_images(campaign: Campaign):
    """Captures for the campaign, reference first."""
    spec = campaign.token_spec
    noise = campaign.noise

    def _noise_for(i: int) -> NoiseParams:
        if i == 0 and campaign.reference_noise is not None:
            ref = campaign.reference_noise
            return ref.with_seed(ref.noise_seed + noise.noise_seed)
        return noise.with_seed(noise.noise_seed + i)

    images = []
    if campaign.kind == "robustness":
        token = spec.build(campaign.token_seeds[0])
        challenge = campaign.challenges[0]
        for i in range(campaign.repeats):
            images.append(respond(token, challenge, _noise_for(i)))
    elif campaign.kind == "unpredictability":
        token = spec.build(campaign.token_seeds[0])
        for i, challenge in enumerate(campaign.challenges):
            images.append(respond(token, challenge, _noise_for(i)))
    else:
        challenge = campaign.challenges[0]
        for i, seed in enumerate(campaign.token_seeds):
            token = spec.build(seed)
            images.append(respond(token, challenge, _noise_for(i)))
    return images


def _pairs(n: int):
    """Index pairs to score: the reference capture against every later one."""
    return [(0, i) for i in range(1, n)]


def run_campaign(campaign: Campaign, hash_cfg: HashConfig | None = None) -> CampaignResult:
    images = _campaign_images(campaign)
    pairs = _pairs(len(images))

    floats = [img.as_float() for img in images]
    ed = [metrics.euclidean(floats[i], floats[j]) for i, j in pairs]
    cc = [metrics.cross_correlation(floats[i], floats[j]) for i, j in pairs]

    hd_report = None
    if hash_cfg is not None:
        _, helper = hash_enroll(images[0], hash_cfg)
        keys = [hash_apply(img, helper) for img in images]
        hd = [metrics.fractional_hamming(keys[i], keys[j]) for i, j in pairs]
        hd_report = metrics.DistanceReport.from_values(
            hd, kind=campaign.kind, metric="fractional_hamming"
        )

    return CampaignResult(
        kind=campaign.kind,
        euclidean=metrics.DistanceReport.from_values(ed, kind=campaign.kind, metric="euclidean"),
        correlation=metrics.DistanceReport.from_values(
            cc, kind=campaign.kind, metric="cross_correlation"
        ),
        hash_hamming=hd_report,
    )


# ----------------------------------------------------------------------
# authentication success curve

@dataclass(frozen=True)
class SuccessCurve:
    thresholds: np.ndarray
    probabilities: np.ndarray

    def threshold_for(self, probability: float) -> int | None:
        """Smallest correction capability reaching the target probability."""
        hit = np.nonzero(self.probabilities >= probability)[0]
        return int(self.thresholds[hit[0]]) if hit.size else None

    def rows(self):
        return list(zip(self.thresholds.tolist(), self.probabilities.tolist()))


def success_curve(enroll_keys, auth_keys, thresholds=None) -> SuccessCurve:
    """Empirical probability that decoding with capability t would succeed.

    Pairs enrollment and authentication keys elementwise; a pair succeeds at
    threshold t when its Hamming distance is at most t. The curve is
    non-decreasing in t by construction.
    """
    enroll_keys = list(enroll_keys)
    auth_keys = list(auth_keys)
    if len(enroll_keys) != len(auth_keys) or not enroll_keys:
        raise ValueError("need equal, nonzero numbers of enrollment and authentication keys")
    distances = np.array(
        [metrics.hamming(a, b) for a, b in zip(enroll_keys, auth_keys)], dtype=np.int64
    )
    key_len = len(enroll_keys[0])
    if thresholds is None:
        thresholds = np.arange(key_len + 1)
    thresholds = np.asarray(thresholds, dtype=np.int64)
    probs = np.array([(distances <= t).mean() for t in thresholds])
    return SuccessCurve(thresholds, probs)
