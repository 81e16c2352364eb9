"""Run configuration: every tunable of the pipeline in one JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .synth import GeneratorConfig


class ConfigError(ValueError):
    pass


@dataclass
class SamplingSection:
    k: int = 3
    depth_tolerance: float = 0.05
    workers: int = 1


@dataclass
class FusionSection:
    rounds: int = 2
    neighbor_radius: float = 0.3
    identity: bool = False
    seed: int = 0


@dataclass
class QueriesSection:
    tau_conf: float = 0.4
    num_queries: int = 2048
    max_samples: int = 1024
    drop_rate: float = 0.0  # training-time augmentation uses 0.7


@dataclass
class DecoderSection:
    num_layers: int = 3
    tau_sim: float = 0.5
    tau_dist: float = 0.8
    pe_dims: int = 128
    pe_temperature: float = 20.0
    size_init: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    modulated: bool = True
    weights: str = "random"
    seed: int = 0


@dataclass
class PostSection:
    box_margin: float | None = 0.2  # null disables box filtering
    nms_iou: float | None = 0.5  # null disables mask NMS
    min_score: float = 0.0


@dataclass
class LossSection:
    lambdas: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    betas: list = field(default_factory=lambda: [0.5, 0.5])


_SECTIONS = {
    "sampling": SamplingSection,
    "fusion": FusionSection,
    "queries": QueriesSection,
    "decoder": DecoderSection,
    "post": PostSection,
    "loss": LossSection,
}


@dataclass
class RunConfig:
    seed: int = 0
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    queries: QueriesSection = field(default_factory=QueriesSection)
    decoder: DecoderSection = field(default_factory=DecoderSection)
    post: PostSection = field(default_factory=PostSection)
    loss: LossSection = field(default_factory=LossSection)

    @classmethod
    def oracle(cls):
        """Untrained but analytically exact setup for instance-coded synthetic scenes.

        The fusion and decoder weights form an identity content path, so the
        instance codes painted into the feature maps drive the masks. The
        decoder boxes never move in this mode, so box filtering is disabled.
        Feature maps are rendered at image resolution so that a point's sample
        never blends a neighbouring instance's code.
        """
        cfg = cls()
        # full-resolution feature maps: no bilinear bleed across silhouettes
        cfg.generator.feature_size = cfg.generator.image_size
        cfg.fusion.identity = True
        cfg.decoder.weights = "oracle"
        cfg.decoder.tau_sim = 0.7
        cfg.decoder.tau_dist = 0.5
        cfg.post.box_margin = None
        return cfg

    def to_dict(self):
        d = {"seed": self.seed, "generator": self.generator.to_dict()}
        for name in _SECTIONS:
            d[name] = asdict(getattr(self, name))
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config: top level must be an object")
        known = {"seed", "generator", *_SECTIONS}
        for key in d:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls()
        if "seed" in d:
            cfg.seed = int(d["seed"])
        if "generator" in d:
            g = d["generator"]
            unknown = set(g) - {f.name for f in fields(GeneratorConfig)}
            if unknown:
                raise ConfigError(f"unknown config key 'generator.{sorted(unknown)[0]}'")
            cfg.generator = GeneratorConfig.from_dict({**cfg.generator.to_dict(), **g})
        for name, section_cls in _SECTIONS.items():
            if name not in d:
                continue
            sec = d[name]
            if not isinstance(sec, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(section_cls)}
            for key in sec:
                if key not in allowed:
                    raise ConfigError(f"unknown config key '{name}.{key}'")
            setattr(cfg, name, section_cls(**{**asdict(getattr(cfg, name)), **sec}))
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


PRESETS = {"default": RunConfig, "oracle": RunConfig.oracle}
