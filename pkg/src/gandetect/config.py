"""Experiment configuration: schema, validation, hashing, and presets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .classifier import TAP_NAMES
from .errors import CapabilityError, FormatError, ValidationError

VALID_METHODS = ("d-ad", "g-ad", "all-ad")
VALID_FORMATS = ("idx", "cifar10")


def _require_keys(block: dict, allowed: set, where: str):
    if not isinstance(block, dict):
        raise ValidationError(f"{where} must be a mapping, got {type(block).__name__}")
    unknown = set(block) - allowed
    if unknown:
        raise ValidationError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _tap_index(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ValidationError(f"{where}: tap must be an index or name, got {value!r}")
    if isinstance(value, str):
        if value not in TAP_NAMES:
            raise ValidationError(f"{where}: unknown tap {value!r}; expected one of {TAP_NAMES}")
        return TAP_NAMES.index(value)
    if not 0 <= value < len(TAP_NAMES):
        raise ValidationError(f"{where}: tap index {value} outside 0..{len(TAP_NAMES) - 1}")
    return int(value)


@dataclass(frozen=True)
class DatasetBlock:
    name: str = "mnist"
    format: str = "idx"
    root: str = "data"
    holdout_fraction: float = 0.1
    synthesize: tuple | None = None  # (n_train, n_test) to generate files when absent

    @classmethod
    def from_dict(cls, raw: dict) -> "DatasetBlock":
        _require_keys(raw, {"name", "format", "root", "holdout_fraction", "synthesize"}, "dataset")
        synth = raw.get("synthesize")
        if synth is not None:
            _require_keys(synth, {"train", "test"}, "dataset.synthesize")
            synth = (int(synth["train"]), int(synth["test"]))
        block = cls(
            name=str(raw.get("name", cls.name)),
            format=str(raw.get("format", cls.format)),
            root=str(raw.get("root", cls.root)),
            holdout_fraction=float(raw.get("holdout_fraction", cls.holdout_fraction)),
            synthesize=synth,
        )
        if block.format not in VALID_FORMATS:
            raise ValidationError(f"dataset.format must be one of {VALID_FORMATS}, got {block.format!r}")
        if not 0.0 < block.holdout_fraction < 1.0:
            raise ValidationError("dataset.holdout_fraction must lie in (0, 1)")
        if block.synthesize is not None and min(block.synthesize) < 1:
            raise ValidationError("dataset.synthesize counts must be positive")
        return block


@dataclass(frozen=True)
class ClassifierBlock:
    epochs: int = 4
    batch_size: int = 64
    lr: float = 1e-3
    channels: tuple = (8, 16, 32, 32)
    fc_width: int = 64

    @classmethod
    def from_dict(cls, raw: dict) -> "ClassifierBlock":
        _require_keys(raw, {"epochs", "batch_size", "lr", "channels", "fc_width"}, "classifier")
        block = cls(
            epochs=int(raw.get("epochs", cls.epochs)),
            batch_size=int(raw.get("batch_size", cls.batch_size)),
            lr=float(raw.get("lr", cls.lr)),
            channels=tuple(int(c) for c in raw.get("channels", cls.channels)),
            fc_width=int(raw.get("fc_width", cls.fc_width)),
        )
        if block.epochs < 1 or block.batch_size < 1:
            raise ValidationError("classifier epochs and batch_size must be >= 1")
        if block.lr <= 0:
            raise ValidationError("classifier.lr must be positive")
        if len(block.channels) != 4 or min(block.channels) < 1:
            raise ValidationError("classifier.channels must be four positive widths")
        return block


@dataclass(frozen=True)
class ACGANBlock:
    layers: tuple = (0,)
    unconditional_layers: tuple = ()
    epochs: int = 10
    batch_size: int = 64
    lr: float = 2e-4
    latent_dim: int | None = None
    mlp_hidden: int = 256
    g_base_channels: int = 64
    d_base_channels: int = 16
    instance_noise: float = 0.0

    @classmethod
    def from_dict(cls, raw: dict) -> "ACGANBlock":
        _require_keys(raw, {"layers", "unconditional_layers", "epochs", "batch_size", "lr",
                            "latent_dim", "mlp_hidden", "g_base_channels", "d_base_channels",
                            "instance_noise"},
                      "acgan")
        layers = tuple(_tap_index(v, "acgan.layers") for v in raw.get("layers", cls.layers))
        uncond = tuple(_tap_index(v, "acgan.unconditional_layers")
                       for v in raw.get("unconditional_layers", cls.unconditional_layers))
        block = cls(
            layers=layers,
            unconditional_layers=uncond,
            epochs=int(raw.get("epochs", cls.epochs)),
            batch_size=int(raw.get("batch_size", cls.batch_size)),
            lr=float(raw.get("lr", cls.lr)),
            latent_dim=None if raw.get("latent_dim") is None else int(raw["latent_dim"]),
            mlp_hidden=int(raw.get("mlp_hidden", cls.mlp_hidden)),
            g_base_channels=int(raw.get("g_base_channels", cls.g_base_channels)),
            d_base_channels=int(raw.get("d_base_channels", cls.d_base_channels)),
            instance_noise=float(raw.get("instance_noise", cls.instance_noise)),
        )
        if len(set(layers)) != len(layers):
            raise ValidationError("acgan.layers lists a tap twice")
        if block.epochs < 1 or block.batch_size < 1 or block.lr <= 0:
            raise ValidationError("acgan training hyperparameters out of range")
        if block.instance_noise < 0:
            raise ValidationError("acgan.instance_noise must be >= 0")
        return block


@dataclass(frozen=True)
class AttackBlock:
    name: str
    kind: str
    mode: str
    limit: int | None = None
    epsilon: float = 0.3
    kappa: float = 14.0
    posterior_threshold: float = 0.9
    outer_steps: int = 9
    inner_steps: int = 200
    lr: float = 0.01

    @classmethod
    def from_dict(cls, raw: dict) -> "AttackBlock":
        _require_keys(raw, {"name", "kind", "mode", "limit", "epsilon", "kappa",
                            "posterior_threshold", "outer_steps", "inner_steps", "lr"},
                      "attacks[]")
        if "kind" not in raw or "mode" not in raw:
            raise ValidationError("each attack block needs `kind` and `mode`")
        kind, mode = str(raw["kind"]), str(raw["mode"])
        block = cls(
            name=str(raw.get("name", f"{kind}-{mode}")),
            kind=kind,
            mode=mode,
            limit=None if raw.get("limit") is None else int(raw["limit"]),
            epsilon=float(raw.get("epsilon", cls.epsilon)),
            kappa=float(raw.get("kappa", cls.kappa)),
            posterior_threshold=float(raw.get("posterior_threshold", cls.posterior_threshold)),
            outer_steps=int(raw.get("outer_steps", cls.outer_steps)),
            inner_steps=int(raw.get("inner_steps", cls.inner_steps)),
            lr=float(raw.get("lr", cls.lr)),
        )
        block.to_spec()  # reuse the attack module's own validation
        if block.limit is not None and block.limit < 1:
            raise ValidationError(f"attacks[{block.name}].limit must be positive")
        return block

    def to_spec(self):
        from .attacks import AttackSpec

        return AttackSpec(
            kind=self.kind,
            mode=self.mode,
            epsilon=self.epsilon,
            kappa=self.kappa,
            posterior_threshold=self.posterior_threshold,
            outer_steps=self.outer_steps,
            inner_steps=self.inner_steps,
            lr=self.lr,
        ).validated()


@dataclass(frozen=True)
class BudgetBlock:
    restarts: int = 8
    steps: int = 500
    step_size: float = 0.05

    @classmethod
    def from_dict(cls, raw: dict) -> "BudgetBlock":
        _require_keys(raw, {"restarts", "steps", "step_size"}, "detector.budget")
        block = cls(
            restarts=int(raw.get("restarts", cls.restarts)),
            steps=int(raw.get("steps", cls.steps)),
            step_size=float(raw.get("step_size", cls.step_size)),
        )
        block.to_budget()
        return block

    def to_budget(self):
        from .detect import SearchBudget

        return SearchBudget(self.restarts, self.steps, self.step_size).validated()


@dataclass(frozen=True)
class DetectorBlock:
    layers: tuple = (0,)
    methods: tuple = ("d-ad",)
    g_ad_layers: tuple = ()
    target_fpr: float = 0.05
    calibration_count: int | None = None
    clean_count: int | None = None
    gmm_components: int = 5
    select_components: bool = False
    include_generator_statistic: bool = False
    budget: BudgetBlock = field(default_factory=BudgetBlock)

    @classmethod
    def from_dict(cls, raw: dict) -> "DetectorBlock":
        _require_keys(raw, {"layers", "methods", "g_ad_layers", "target_fpr",
                            "calibration_count", "clean_count", "gmm_components",
                            "select_components", "include_generator_statistic", "budget"},
                      "detector")
        layers = tuple(_tap_index(v, "detector.layers") for v in raw.get("layers", cls.layers))
        g_ad = tuple(_tap_index(v, "detector.g_ad_layers")
                     for v in raw.get("g_ad_layers", cls.g_ad_layers))
        block = cls(
            layers=layers,
            methods=tuple(str(m) for m in raw.get("methods", cls.methods)),
            g_ad_layers=g_ad,
            target_fpr=float(raw.get("target_fpr", cls.target_fpr)),
            calibration_count=None if raw.get("calibration_count") is None
            else int(raw["calibration_count"]),
            clean_count=None if raw.get("clean_count") is None else int(raw["clean_count"]),
            gmm_components=int(raw.get("gmm_components", cls.gmm_components)),
            select_components=bool(raw.get("select_components", cls.select_components)),
            include_generator_statistic=bool(raw.get("include_generator_statistic",
                                                     cls.include_generator_statistic)),
            budget=BudgetBlock.from_dict(raw.get("budget", {})),
        )
        for m in block.methods:
            if m not in VALID_METHODS:
                raise ValidationError(f"detector.methods: unknown method {m!r}")
        if not set(block.g_ad_layers) <= set(block.layers):
            raise ValidationError("detector.g_ad_layers must be a subset of detector.layers")
        if not 0 < block.target_fpr < 1:
            raise ValidationError("detector.target_fpr must lie in (0, 1)")
        if block.gmm_components < 1:
            raise ValidationError("detector.gmm_components must be >= 1")
        return block


@dataclass(frozen=True)
class EvalBlock:
    fpr_max: float = 0.2

    @classmethod
    def from_dict(cls, raw: dict) -> "EvalBlock":
        _require_keys(raw, {"fpr_max"}, "evaluate")
        block = cls(fpr_max=float(raw.get("fpr_max", cls.fpr_max)))
        if not 0 < block.fpr_max <= 1:
            raise ValidationError("evaluate.fpr_max must lie in (0, 1]")
        return block


@dataclass(frozen=True)
class RobustClassifyBlock:
    layer: int = 0
    attacks: tuple = ()

    @classmethod
    def from_dict(cls, raw: dict) -> "RobustClassifyBlock":
        _require_keys(raw, {"layer", "attacks"}, "robust_classify")
        return cls(
            layer=_tap_index(raw.get("layer", cls.layer), "robust_classify.layer"),
            attacks=tuple(str(a) for a in raw.get("attacks", cls.attacks)),
        )


@dataclass(frozen=True)
class VisualizeBlock:
    layers: tuple = ()
    attack: str | None = None
    source_class: int = 0
    target_class: int = 1
    count: int = 60
    format: str = "png"

    @classmethod
    def from_dict(cls, raw: dict) -> "VisualizeBlock":
        _require_keys(raw, {"layers", "attack", "source_class", "target_class", "count",
                            "format"}, "visualize")
        block = cls(
            layers=tuple(_tap_index(v, "visualize.layers") for v in raw.get("layers", cls.layers)),
            attack=None if raw.get("attack") is None else str(raw["attack"]),
            source_class=int(raw.get("source_class", cls.source_class)),
            target_class=int(raw.get("target_class", cls.target_class)),
            count=int(raw.get("count", cls.count)),
            format=str(raw.get("format", cls.format)),
        )
        if block.count < 5:
            raise ValidationError("visualize.count must be at least 5")
        return block


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    output_dir: str
    dataset: DatasetBlock
    classifier: ClassifierBlock
    acgan: ACGANBlock
    attacks: tuple  # of AttackBlock
    detector: DetectorBlock
    evaluate: EvalBlock
    robust_classify: RobustClassifyBlock
    visualize: VisualizeBlock

    def attack(self, name: str) -> AttackBlock:
        for block in self.attacks:
            if block.name == name:
                return block
        raise ValidationError(f"no attack named {name!r} in config")

    def validate(self) -> "ExperimentConfig":
        """Cross-block consistency; every block self-validated at parse time."""
        names = [a.name for a in self.attacks]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate attack names: {names}")
        for reserved in ("clean", "calibration"):
            if reserved in names:
                raise ValidationError(f"attack name {reserved!r} is reserved")
        if self.detector.include_generator_statistic:
            if not set(self.detector.layers) <= set(self.detector.g_ad_layers):
                raise ValidationError(
                    "detector.include_generator_statistic needs g_ad_layers to cover "
                    "every detector layer"
                )
        trained = set(self.acgan.layers) | set(self.acgan.unconditional_layers)
        for k in self.detector.layers:
            if k not in trained:
                raise ValidationError(
                    f"detector.layers includes tap {k} but no acgan block trains a model there"
                )
            if k not in self.acgan.layers:
                needy = [m for m in self.detector.methods if m in ("d-ad", "all-ad")]
                if needy:
                    raise CapabilityError(
                        f"detector.methods {needy} need the class posterior at tap {k}, but "
                        f"acgan.unconditional_layers only provides an unconditional model there"
                    )
        if self.robust_classify.attacks and self.robust_classify.layer not in self.acgan.layers:
            raise CapabilityError(
                f"robust_classify.layer {self.robust_classify.layer} has no class-conditional "
                f"model; robust classification needs one (acgan.layers)"
            )
        for name in self.robust_classify.attacks:
            self.attack(name)  # raises for unknown names
        if self.visualize.layers:
            if self.visualize.attack is None:
                raise ValidationError("visualize.layers set but visualize.attack missing")
            self.attack(self.visualize.attack)
            for k in self.visualize.layers:
                if k not in self.acgan.layers:
                    raise ValidationError(
                        f"visualize.layers includes tap {k} but acgan.layers does not train it"
                    )
        if self.visualize.source_class == self.visualize.target_class:
            raise ValidationError("visualize source and target classes must differ")
        return self

    def describe(self) -> dict:
        d = asdict(self)
        d["attacks"] = [asdict(a) for a in self.attacks]
        return d


def config_from_dict(raw: dict) -> ExperimentConfig:
    _require_keys(raw, {"name", "seed", "output_dir", "dataset", "classifier", "acgan",
                        "attacks", "detector", "evaluate", "robust_classify", "visualize"},
                  "config")
    for key in ("name", "output_dir"):
        if key not in raw:
            raise ValidationError(f"config is missing required key `{key}`")
    attacks_raw = raw.get("attacks", [])
    if not isinstance(attacks_raw, list):
        raise ValidationError("attacks must be a list of blocks")
    cfg = ExperimentConfig(
        name=str(raw["name"]),
        seed=int(raw.get("seed", 0)),
        output_dir=str(raw["output_dir"]),
        dataset=DatasetBlock.from_dict(raw.get("dataset", {})),
        classifier=ClassifierBlock.from_dict(raw.get("classifier", {})),
        acgan=ACGANBlock.from_dict(raw.get("acgan", {})),
        attacks=tuple(AttackBlock.from_dict(a) for a in attacks_raw),
        detector=DetectorBlock.from_dict(raw.get("detector", {})),
        evaluate=EvalBlock.from_dict(raw.get("evaluate", {})),
        robust_classify=RobustClassifyBlock.from_dict(raw.get("robust_classify", {})),
        visualize=VisualizeBlock.from_dict(raw.get("visualize", {})),
    )
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file does not exist: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise FormatError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{path} must contain a mapping at the top level")
    return config_from_dict(raw)


def preset_names() -> tuple:
    from importlib import resources

    files = resources.files("gandetect").joinpath("presets")
    return tuple(sorted(p.name[: -len(".yaml")] for p in files.iterdir()
                        if p.name.endswith(".yaml")))


def load_preset(name: str) -> ExperimentConfig:
    from importlib import resources

    ref = resources.files("gandetect").joinpath("presets", f"{name}.yaml")
    if not ref.is_file():
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    raw = yaml.safe_load(ref.read_text())
    return config_from_dict(raw)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None,
                   output_dir: str | None = None) -> ExperimentConfig:
    from dataclasses import replace

    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if output_dir is not None:
        cfg = replace(cfg, output_dir=str(output_dir))
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    """Content hash of everything that shapes results; the output path is
    excluded so relocating a run does not change its identity."""
    d = cfg.describe()
    d.pop("output_dir")
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
