from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Optional, Tuple


class StrictModel(BaseModel):
    """Base for configuration models: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class FlowConfig(StrictModel):
    """
    Hyperparameters of the conditional flow.
    Widths default to the desk-scale value; real 2048-d features use 1024.
    """
    blocks: int = Field(5, ge=0, description="Number of (permutation, coupling) blocks")
    hidden_width: int = Field(64, ge=1, description="Width of both hidden layers of every subnet")
    clamp: float = Field(2.0, gt=0, description="Soft clamp bound on coupling log-scales")


class SemanticConfig(StrictModel):
    """
    Relative positioning embedder settings.
    """
    cond_dim: Optional[int] = Field(None, ge=1, description="Condition space dimension; defaults to the attribute dimension")
    anchors: int = Field(4, ge=1, description="Anchor count k (centroid plus k-1 k-means centroids)")
    gamma: float = Field(1.0, ge=0, description="Weight of the geometry-preservation penalty")


class PerturbConfig(StrictModel):
    """
    Visual perturbation applied to seen features before each likelihood step.
    """
    beta: float = Field(0.2, ge=0, description="Noise magnitude in standardized feature units")
    mode: Literal["gaussian", "uniform_ball"] = Field("gaussian", description="Noise distribution")
    seed: int = Field(0, description="Seed of the perturbation stream")


class TrainConfig(StrictModel):
    """
    Optimisation settings for joint flow + embedder training.
    """
    epochs: int = Field(40, ge=0)
    batch_size: int = Field(64, ge=1)
    learning_rate: float = Field(2e-4, gt=0)
    adam_beta1: float = Field(0.9, ge=0, lt=1)
    adam_beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    gamma: Optional[float] = Field(None, ge=0, description="Geometry-loss weight; falls back to semantics.gamma")
    prototype_weight: float = Field(0.0, ge=0, description="Weight of the zero-latent decode prototype term")
    grad_clip: Optional[float] = Field(5.0, gt=0, description="Max global gradient norm; None disables clipping")
    seed: int = Field(0)
    log_path: Optional[str] = Field(None, description="Per-epoch CSV training log")


class SynthesisConfig(StrictModel):
    """
    Unseen-class feature synthesis settings.
    """
    per_class_count: int = Field(50, ge=1)
    latent_temperature: float = Field(1.0, gt=0)
    seed: int = Field(0)


class ClassifierConfig(StrictModel):
    """
    Softmax classifier trained on real seen + synthetic unseen features.
    """
    epochs: int = Field(30, ge=1)
    learning_rate: float = Field(1e-2, gt=0)
    batch_size: int = Field(256, ge=1)
    seed: int = Field(0)


class RunConfig(StrictModel):
    """
    Complete experiment configuration parsed from a flat key=value file.
    """
    seed: int = Field(0, description="Master seed; propagated to sub-configs that keep their default")
    flow: FlowConfig = Field(default_factory=FlowConfig)
    semantics: SemanticConfig = Field(default_factory=SemanticConfig)
    perturb: PerturbConfig = Field(default_factory=PerturbConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthesisConfig = Field(default_factory=SynthesisConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)

    @model_validator(mode="after")
    def _propagate_seed(self) -> "RunConfig":
        for section in (self.perturb, self.train, self.synth, self.classifier):
            if "seed" not in section.model_fields_set:
                section.seed = self.seed
        return self

    @property
    def gamma(self) -> float:
        return self.train.gamma if self.train.gamma is not None else self.semantics.gamma


class BenchmarkSpec(StrictModel):
    """
    Synthetic GZSL benchmark with known class Gaussians.
    Class means are attr_map · attribute; the map is drawn from the seed.
    """
    n_seen: int = Field(15, ge=1)
    n_unseen: int = Field(5, ge=0)
    d: int = Field(32, ge=2, description="Feature dimension")
    a: int = Field(16, ge=1, description="Attribute dimension")
    samples_per_class: int = Field(300, ge=2)
    map_scale: float = Field(3.0, gt=0, description="Entries of attr_map ~ N(0, map_scale^2 / a)")
    class_cov_scale: Tuple[float, float] = Field((0.25, 1.0), description="Range of per-class per-dimension variances")
    train_fraction: float = Field(0.8, gt=0, lt=1)
    seed: int = Field(0)

    @model_validator(mode="after")
    def _check_cov_range(self) -> "BenchmarkSpec":
        lo, hi = self.class_cov_scale
        if not 0 < lo <= hi:
            raise ValueError("class_cov_scale must satisfy 0 < low <= high")
        return self


class BenchmarkTruth(BaseModel):
    """
    Ground truth of a generated benchmark, in raw (unstandardized) feature space.
    """
    class_ids: List[int] = Field(..., description="Class ids in row order of means/variances")
    means: List[List[float]] = Field(..., description="True class means")
    variances: List[List[float]] = Field(..., description="True diagonal class variances")
    attr_map: List[List[float]] = Field(..., description="d x a map from attributes to class means")


class ShiftMetrics(BaseModel):
    """
    Generation-shift diagnostics of synthetic unseen features.
    """
    semantic_consistency: Optional[float] = Field(None, description="Mean cosine of synthetic vs true class-mean deltas")
    variance_ratio: Optional[float] = Field(None, description="Mean per-class synthetic / true variance")
    structure_spearman: Optional[float] = Field(None, description="Rank correlation of pairwise class-mean distances")


class EvalReport(BaseModel):
    """
    Conventional and generalized zero-shot results plus shift diagnostics.
    """
    czsl_acc: float = Field(..., ge=0, le=1)
    seen_acc: float = Field(..., ge=0, le=1)
    unseen_acc: float = Field(..., ge=0, le=1)
    harmonic_mean: float = Field(..., ge=0, le=1)
    semantic_consistency: Optional[float] = None
    variance_ratio: Optional[float] = None
    structure_spearman: Optional[float] = None
    bayes_seen_acc: Optional[float] = Field(None, description="Bayes-optimal S on the synthetic benchmark")
    bayes_unseen_acc: Optional[float] = Field(None, description="Bayes-optimal U on the synthetic benchmark")
    bayes_harmonic_mean: Optional[float] = Field(None, description="Bayes-optimal H, an upper bound on H")
    flow_untrained: bool = Field(False, description="Synthesis used an identity flow")
    warnings: List[str] = Field(default_factory=list)

    def to_text(self) -> str:
        """Render as metric=value lines in field order."""
        lines = []
        for name, value in self.model_dump().items():
            if name == "warnings":
                for item in value:
                    lines.append(f"warning={item}")
                continue
            lines.append(f"{name}={'' if value is None else repr(value)}")
        return "\n".join(lines) + "\n"


class TrainSummary(BaseModel):
    """
    One row of the training log.
    """
    epoch: int
    nll: float
    geom_loss: float
    total: float
