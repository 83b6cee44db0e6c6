"""Desk-scale simulator showing how a biased reward propagates into a
generator trained by reward-weighted likelihood ascent.

The generator is deliberately tiny: a two-action template captioner that only
chooses the gender word, with one logit offset per concept plus a shared
observation weight. That isolates exactly the quantity a biased metric
distorts -- the probability of emitting the wrong gender -- while keeping the
expected-reward gradient computable in closed form for verification.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .audit import substream
from .caption_analysis import (
    DEFAULT_GENDER_LEXICON,
    GenderLexicon,
    SystemOutput,
    gender_error_rate,
)
from .corpus import (
    DEFAULT_LEXICON,
    Gender,
    Instance,
    build_manifest,
    render_captions,
    synthetic_image_map,
)
from .errors import InvalidInputError, TrainingError
from .ngram_metrics import build_idf, cider_d
from .textnorm import tokenize

CLIP_LIKE_SCALE = 2.5
TEXT_GENDER_AXIS = 0.2
IMAGE_GENDER_AXIS = 0.4


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@dataclass(frozen=True)
class Policy:
    """P(emit "man" | image) = sigmoid((a*s + theta_C) / temperature) with
    s = +1 for man images and -1 for woman images."""

    theta: dict[str, float]
    obs_weight: float
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError("temperature must be positive")
        for word, value in self.theta.items():
            if not math.isfinite(value):
                raise InvalidInputError(f"theta[{word!r}] is not finite")
        if not math.isfinite(self.obs_weight):
            raise InvalidInputError("observation weight is not finite")

    def logit(self, instance: Instance) -> float:
        s = 1.0 if instance.triple.gender is Gender.MAN else -1.0
        return (self.obs_weight * s + self.theta.get(instance.triple.concept.word, 0.0)) / self.temperature

    def p_man(self, instance: Instance) -> float:
        return _sigmoid(self.logit(instance))

    def greedy_gender(self, instance: Instance) -> Gender:
        # exact ties break to "man" (arbitrary but fixed)
        return Gender.MAN if self.p_man(instance) >= 0.5 else Gender.WOMAN

    def emitted_caption(self, instance: Instance, emitted: Gender) -> str:
        return render_captions(emitted, instance.triple.concept).good


# --------------------------------------------------------------------------
# Reward functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RewardFn:
    """Maps (instance, emitted gender) to a scalar reward.

    kind "cider_like" scores the emitted template caption against the
    instance's reference with real CIDEr-D (cached; there are only four
    caption combinations per concept). kind "clipscore_like" is a cosine
    between fixed synthetic embeddings with a per-concept offset `delta`
    added for the favored gender's captions, which makes the bias magnitude
    an experimental knob. kind "hybrid" sums the two.
    """

    kind: str
    table: dict[tuple[str, str, str], float]  # (concept, true_gender, emitted) -> reward

    def __call__(self, instance: Instance, emitted: Gender) -> float:
        key = (
            instance.triple.concept.word,
            instance.triple.gender.value,
            emitted.value,
        )
        value = self.table[key]
        if not math.isfinite(value):
            raise TrainingError(f"non-finite reward for instance {instance.id!r}")
        return value


def _clip_like_cos(true_gender: Gender, emitted: Gender, delta: float, favored: Gender) -> float:
    """Cosine between synthetic text/image embeddings in a 3-axis basis
    (concept, man, woman), plus an injected offset `delta` whenever the
    emitted gender is the favored one, regardless of what the image shows.

    The gender axes carry different weights on the two sides so the correct
    caption wins by a cosine margin of about 0.07; any delta above that flips
    the preference, making the bias magnitude a clean knob."""
    image = np.array(
        [1.0, IMAGE_GENDER_AXIS * (true_gender is Gender.MAN), IMAGE_GENDER_AXIS * (true_gender is Gender.WOMAN)]
    )
    text = np.array(
        [1.0, TEXT_GENDER_AXIS * (emitted is Gender.MAN), TEXT_GENDER_AXIS * (emitted is Gender.WOMAN)]
    )
    cos = float(np.dot(image, text) / (np.linalg.norm(image) * np.linalg.norm(text)))
    return cos + (delta if emitted is favored else 0.0)


def make_reward(
    kind: str,
    manifest: list[Instance],
    delta: float = 0.0,
    favored_gender: Gender = Gender.WOMAN,
    biased_concepts: set[str] | None = None,
) -> RewardFn:
    """Build a reward table over every (concept, true gender, emitted gender).

    `biased_concepts=None` applies the offset to every concept; pass a set to
    restrict it. `delta=0` gives the unbiased variant of either kind.
    """
    if kind not in ("clipscore_like", "cider_like", "hybrid"):
        raise InvalidInputError(f"unknown reward kind {kind!r}")

    concepts = {inst.triple.concept for inst in manifest}
    idf = build_idf([[tokenize(inst.triple.reference)] for inst in manifest])

    table: dict[tuple[str, str, str], float] = {}
    for concept in concepts:
        biased = biased_concepts is None or concept.word in biased_concepts
        for true_gender in (Gender.MAN, Gender.WOMAN):
            reference = tokenize(render_captions(true_gender, concept).reference)
            for emitted in (Gender.MAN, Gender.WOMAN):
                value = 0.0
                if kind in ("clipscore_like", "hybrid"):
                    value += CLIP_LIKE_SCALE * _clip_like_cos(
                        true_gender, emitted, delta if biased else 0.0, favored_gender
                    )
                if kind in ("cider_like", "hybrid"):
                    caption = tokenize(render_captions(emitted, concept).good)
                    value += cider_d(caption, [reference], idf)
                table[(concept.word, true_gender.value, emitted.value)] = value
    return RewardFn(kind=kind, table=table)


# --------------------------------------------------------------------------
# Gradients and training
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    samples_per_step: int = 5
    learning_rate: float = 1e-2
    steps: int = 500
    seed: int = 0
    weighting: str = "loo"  # "loo" (unbiased) or "softmax" (classical smoothed risk)
    # The observation weight models fixed perception quality; training it lets
    # an asymmetric reward masquerade as a correctness signal, so it stays
    # frozen unless explicitly enabled.
    train_obs_weight: bool = False

    def __post_init__(self):
        if self.samples_per_step < 2:
            raise InvalidInputError("need at least 2 samples per step for reward weighting")
        if self.weighting not in ("loo", "softmax"):
            raise InvalidInputError(f"unknown weighting {self.weighting!r}")


def expected_reward(policy: Policy, instance: Instance, reward: RewardFn) -> float:
    p = policy.p_man(instance)
    return p * reward(instance, Gender.MAN) + (1 - p) * reward(instance, Gender.WOMAN)


def exact_gradient(
    policy: Policy, instance: Instance, reward: RewardFn
) -> tuple[float, float]:
    """Closed-form gradient of the expected reward for one instance, as
    (d/d theta_C, d/d obs_weight); the two-action space makes it exact."""
    p = policy.p_man(instance)
    s = 1.0 if instance.triple.gender is Gender.MAN else -1.0
    gap = reward(instance, Gender.MAN) - reward(instance, Gender.WOMAN)
    base = gap * p * (1.0 - p) / policy.temperature
    return base, s * base


def sampled_gradient(
    policy: Policy,
    instance: Instance,
    reward: RewardFn,
    k: int,
    rng: np.random.Generator,
    weighting: str = "loo",
) -> tuple[float, float]:
    """One reward-weighted gradient estimate from k sampled emissions.

    "loo" weights each sample by its reward minus the mean reward of the
    other samples (divided by k), an exactly unbiased, reward-shift-invariant
    estimator of the expected-reward gradient. "softmax" uses classical
    softmax risk weights instead; it shares the shift invariance but trades
    unbiasedness for lower variance.
    """
    p = policy.p_man(instance)
    s = 1.0 if instance.triple.gender is Gender.MAN else -1.0
    draws = rng.random(k) < p
    rewards = np.array(
        [reward(instance, Gender.MAN if d else Gender.WOMAN) for d in draws]
    )
    if weighting == "loo":
        total = rewards.sum()
        baselines = (total - rewards) / (k - 1)
        weights = (rewards - baselines) / k
    else:
        shifted = np.exp(rewards - rewards.max())
        weights = shifted / shifted.sum()
    score = (draws.astype(float) - p) / policy.temperature
    d_theta = float(np.dot(weights, score))
    return d_theta, s * d_theta


def mrt_step(
    policy: Policy,
    batch: list[Instance],
    reward: RewardFn,
    config: TrainConfig,
    rng: np.random.Generator,
) -> Policy:
    """One reward-weighted update over the batch; returns the new policy."""
    if not batch:
        raise InvalidInputError("batch must be non-empty")
    grad_theta: dict[str, float] = {}
    grad_a = 0.0
    for instance in batch:
        d_theta, d_a = sampled_gradient(
            policy, instance, reward, config.samples_per_step, rng, config.weighting
        )
        word = instance.triple.concept.word
        grad_theta[word] = grad_theta.get(word, 0.0) + d_theta
        grad_a += d_a
    scale = config.learning_rate / len(batch)
    new_theta = dict(policy.theta)
    for word, g in grad_theta.items():
        new_theta[word] = new_theta.get(word, 0.0) + scale * g
    new_a = policy.obs_weight + (scale * grad_a if config.train_obs_weight else 0.0)
    return replace(policy, theta=new_theta, obs_weight=new_a)


def soft_error_rate(
    policy: Policy, manifest: list[Instance], gender: Gender | None = None
) -> float:
    """Mean probability of emitting the wrong gender (smooth analogue of the
    greedy error rate; strictly monotone in the logits). Restricting to one
    image gender tracks the disadvantaged group under a one-sided reward."""
    instances = [
        inst for inst in manifest if gender is None or inst.triple.gender is gender
    ]
    total = 0.0
    for inst in instances:
        p = policy.p_man(inst)
        total += (1.0 - p) if inst.triple.gender is Gender.MAN else p
    return total / len(instances)


def greedy_error_rates(policy: Policy, manifest: list[Instance]) -> dict[str, float]:
    wrong = {Gender.MAN: 0, Gender.WOMAN: 0}
    counts = {Gender.MAN: 0, Gender.WOMAN: 0}
    for inst in manifest:
        g = inst.triple.gender
        counts[g] += 1
        if policy.greedy_gender(inst) is not g:
            wrong[g] += 1
    overall = sum(wrong.values()) / max(1, sum(counts.values()))
    return {
        "overall": overall,
        "man_images": wrong[Gender.MAN] / max(1, counts[Gender.MAN]),
        "woman_images": wrong[Gender.WOMAN] / max(1, counts[Gender.WOMAN]),
    }


def evaluate_policy(
    policy: Policy,
    manifest: list[Instance],
    lexicon: GenderLexicon = DEFAULT_GENDER_LEXICON,
    reward: RewardFn | None = None,
    n_samples: int = 10_000,
    seed: int = 0,
):
    """Greedy-decode every instance and run the caption error analysis on the
    generated captions; also reports mean reward under greedy decoding."""
    outputs = [
        SystemOutput(
            instance_id=inst.id,
            caption=policy.emitted_caption(inst, policy.greedy_gender(inst)),
        )
        for inst in manifest
    ]
    report = gender_error_rate(
        outputs, manifest, lexicon, n_samples=n_samples, seed=seed
    )
    mean_reward = None
    if reward is not None:
        mean_reward = float(
            np.mean([reward(inst, policy.greedy_gender(inst)) for inst in manifest])
        )
    return report, mean_reward


@dataclass
class TrainResult:
    policy: Policy
    series: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "final_theta": dict(sorted(self.policy.theta.items())),
            "final_obs_weight": self.policy.obs_weight,
            "series": self.series,
        }


def train(
    policy: Policy,
    manifest: list[Instance],
    reward: RewardFn,
    config: TrainConfig,
) -> TrainResult:
    """Run the full training loop, recording per-step error rates and reward."""
    rng = substream(config.seed, "rl_sim", reward.kind, config.weighting)
    series: list[dict] = []

    def record(step: int) -> None:
        rates = greedy_error_rates(policy, manifest)
        series.append(
            {
                "step": step,
                "greedy_error": rates["overall"],
                "greedy_error_man_images": rates["man_images"],
                "greedy_error_woman_images": rates["woman_images"],
                "soft_error": soft_error_rate(policy, manifest),
                "soft_error_man_images": soft_error_rate(policy, manifest, Gender.MAN),
                "soft_error_woman_images": soft_error_rate(policy, manifest, Gender.WOMAN),
                "mean_reward": float(
                    np.mean([expected_reward(policy, inst, reward) for inst in manifest])
                ),
            }
        )

    record(0)
    for step in range(1, config.steps + 1):
        policy = mrt_step(policy, manifest, reward, config, rng)
        record(step)
    return TrainResult(policy=policy, series=series)


# --------------------------------------------------------------------------
# Experiment configuration files
# --------------------------------------------------------------------------

def default_sim_manifest(per_cell: int = 2) -> list[Instance]:
    concepts = DEFAULT_LEXICON.concepts()
    genders = [Gender.MAN, Gender.WOMAN]
    return build_manifest(
        concepts, genders, synthetic_image_map(concepts, genders, per_cell)
    )


def init_policy(
    manifest: list[Instance],
    obs_weight: float = 0.4,
    temperature: float = 1.0,
    theta_spread: float = 1.5,
    seed: int = 0,
    theta: dict[str, float] | None = None,
) -> Policy:
    """Seeded policy init; a nonzero spread leaves some concepts initially
    wrong so corrective rewards have visible work to do."""
    if theta is None:
        rng = substream(seed, "policy_init")
        words = sorted({inst.triple.concept.word for inst in manifest})
        theta = {w: float(rng.normal(0.0, theta_spread)) for w in words}
    return Policy(theta=theta, obs_weight=obs_weight, temperature=temperature)


DEFAULT_SIM_CONFIG = {
    "manifest": {"per_cell": 2},
    "policy": {"obs_weight": 0.4, "temperature": 1.0, "theta_spread": 1.5},
    "reward": {"kind": "clipscore_like", "delta": 0.1, "favored_gender": "woman"},
    "train": {"samples_per_step": 5, "learning_rate": 2.0, "steps": 500, "seed": 7, "weighting": "loo"},
}


def run_experiment(config: dict) -> dict:
    """Drive a full simulation from a config dict (see DEFAULT_SIM_CONFIG)."""
    merged = json.loads(json.dumps(DEFAULT_SIM_CONFIG))
    for key, value in config.items():
        if isinstance(value, dict) and key in merged:
            merged[key].update(value)
        else:
            merged[key] = value

    if "manifest_path" in merged:
        from .corpus import read_manifest

        manifest = read_manifest(merged["manifest_path"])
    else:
        manifest = default_sim_manifest(merged["manifest"]["per_cell"])

    train_cfg = TrainConfig(**merged["train"])
    policy = init_policy(
        manifest,
        obs_weight=merged["policy"]["obs_weight"],
        temperature=merged["policy"]["temperature"],
        theta_spread=merged["policy"]["theta_spread"],
        seed=train_cfg.seed,
        theta=merged["policy"].get("theta"),
    )
    reward_cfg = merged["reward"]
    reward = make_reward(
        reward_cfg["kind"],
        manifest,
        delta=reward_cfg.get("delta", 0.0),
        favored_gender=Gender(reward_cfg.get("favored_gender", "woman")),
        biased_concepts=(
            set(reward_cfg["biased_concepts"])
            if reward_cfg.get("biased_concepts") is not None
            else None
        ),
    )
    result = train(policy, manifest, reward, train_cfg)
    return {"config": merged, **result.to_json()}


def load_sim_config(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read sim config {path}: {exc}") from exc
