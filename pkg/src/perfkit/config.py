"""``key = value`` configuration files and the merged pipeline view.

Lines are UTF-8 ``key = value`` pairs; blank lines and ``#`` comments are
ignored. Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .deconv import DeconvParams
from .errors import ValidationError
from .synth import PhantomConfig, TissueSpec, gamma_params_for_peak
from .aifnet.train import TrainConfig


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{n}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ValidationError(f"{source}:{n}: empty key")
        if key in out:
            raise ValidationError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv_file(path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read(), source=str(path))


def format_kv(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def _to_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Merged configuration for the end-to-end pipeline."""

    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    deconv: DeconvParams = field(default_factory=DeconvParams)
    n_train: int = 20
    n_val: int = 5
    n_test: int = 5
    aif_layers: int = 3
    vof_layers: int = 2
    seed: int = 1234
    voxel_volume_ml: float = 0.04

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValidationError("cohort sizes must all be positive")
        if self.aif_layers < 1 or self.vof_layers < 1:
            raise ValidationError("layer counts must be positive")
        if not self.voxel_volume_ml > 0:
            raise ValidationError("voxel volume must be positive")


_INT = int
_FLOAT = float

# key -> (section, attribute, parser); sections are rebuilt after overriding
_KEYS = {
    "seed": ("root", "seed", _INT),
    "voxel_volume_ml": ("root", "voxel_volume_ml", _FLOAT),
    "cohort.n_train": ("root", "n_train", _INT),
    "cohort.n_val": ("root", "n_val", _INT),
    "cohort.n_test": ("root", "n_test", _INT),
    "aif.layers": ("root", "aif_layers", _INT),
    "vof.layers": ("root", "vof_layers", _INT),
    "phantom.shape_z": ("phantom_shape", 0, _INT),
    "phantom.shape_y": ("phantom_shape", 1, _INT),
    "phantom.shape_x": ("phantom_shape", 2, _INT),
    "phantom.frames": ("phantom", "n_frames", _INT),
    "phantom.dt_seconds": ("phantom", "dt_seconds", _FLOAT),
    "phantom.randomize_layout": ("phantom", "randomize_layout", _to_bool),
    "phantom.vein_amp_scale": ("phantom", "vein_amp_scale", _FLOAT),
    "phantom.vein_delay_s": ("phantom", "vein_delay_s", _FLOAT),
    "phantom.aif_pv_scale": ("phantom", "aif_pv_scale", _FLOAT),
    "phantom.vessel_noise_sigma": ("phantom", "vessel_noise_sigma", _FLOAT),
    "phantom.tmax_threshold_s": ("phantom", "tmax_threshold_s", _FLOAT),
    "phantom.rcbf_core_threshold": ("phantom", "rcbf_core_threshold", _FLOAT),
    "phantom.bolus_peak_hu": ("bolus", "peak", _FLOAT),
    "phantom.bolus_t0_s": ("bolus", "t0", _FLOAT),
    "phantom.bolus_alpha": ("bolus", "alpha", _FLOAT),
    "phantom.bolus_beta_s": ("bolus", "beta", _FLOAT),
    "phantom.baseline_hu": ("bolus", "baseline", _FLOAT),
    "phantom.noise_sigma": ("noise", "sigma", _FLOAT),
    "phantom.healthy_flow": ("tissue", ("healthy", "flow"), _FLOAT),
    "phantom.healthy_mtt_s": ("tissue", ("healthy", "mtt"), _FLOAT),
    "phantom.healthy_delay_s": ("tissue", ("healthy", "delay_s"), _FLOAT),
    "phantom.penumbra_flow": ("tissue", ("penumbra", "flow"), _FLOAT),
    "phantom.penumbra_mtt_s": ("tissue", ("penumbra", "mtt"), _FLOAT),
    "phantom.penumbra_delay_s": ("tissue", ("penumbra", "delay_s"), _FLOAT),
    "phantom.core_flow": ("tissue", ("core", "flow"), _FLOAT),
    "phantom.core_mtt_s": ("tissue", ("core", "mtt"), _FLOAT),
    "phantom.core_delay_s": ("tissue", ("core", "delay_s"), _FLOAT),
    "train.learning_rate": ("train", "learning_rate", _FLOAT),
    "train.momentum": ("train", "momentum", _FLOAT),
    "train.max_epochs": ("train", "max_epochs", _INT),
    "train.patience": ("train", "patience", _INT),
    "train.shift_max_frames": ("train", "shift_max_frames", _INT),
    "train.scale_low": ("scale", 0, _FLOAT),
    "train.scale_high": ("scale", 1, _FLOAT),
    "train.baseline_frames": ("train", "baseline_frames", _INT),
    "deconv.lambda_rel": ("deconv", "lambda_rel", _FLOAT),
    "deconv.circulant_factor": ("deconv", "circulant_factor", _INT),
    "deconv.baseline_frames": ("deconv", "baseline_frames", _INT),
    "deconv.tmax_threshold_s": ("deconv", "tmax_threshold_s", _FLOAT),
    "deconv.rcbf_core_threshold": ("deconv", "rcbf_core_threshold", _FLOAT),
}

def pipeline_config_from_pairs(pairs: dict[str, str],
                               source: str = "<config>") -> PipelineConfig:
    unknown = sorted(set(pairs) - set(_KEYS))
    if unknown:
        raise ValidationError(f"{source}: unknown config key(s): {', '.join(unknown)}")

    parsed = {}
    for key, raw in pairs.items():
        section, attr, conv = _KEYS[key]
        try:
            parsed[key] = conv(raw)
        except ValueError as exc:
            raise ValidationError(f"{source}: bad value for {key}: {exc}") from exc

    base = PipelineConfig()
    phantom = base.phantom
    train_cfg = base.train

    shape = list(phantom.shape)
    bolus_kv = {"peak": 150.0, "t0": phantom.bolus.t0, "alpha": phantom.bolus.alpha,
                "beta": phantom.bolus.beta, "baseline": phantom.bolus.baseline}
    scale = list(train_cfg.scale_range)
    tissue_over: dict[str, dict] = {"healthy": {}, "penumbra": {}, "core": {}}
    phantom_over: dict = {}
    train_over: dict = {}
    deconv_over: dict = {}
    root_over: dict = {}
    noise_sigma = None

    for key, value in parsed.items():
        section, attr, _ = _KEYS[key]
        if section == "root":
            root_over[attr] = value
        elif section == "phantom":
            phantom_over[attr] = value
        elif section == "phantom_shape":
            shape[attr] = value
        elif section == "bolus":
            bolus_kv[attr] = value
        elif section == "noise":
            noise_sigma = value
        elif section == "tissue":
            region, field_name = attr
            tissue_over[region][field_name] = value
        elif section == "train":
            train_over[attr] = value
        elif section == "scale":
            scale[attr] = value
        elif section == "deconv":
            deconv_over[attr] = value

    bolus = gamma_params_for_peak(bolus_kv["peak"], t0=bolus_kv["t0"],
                                  alpha=bolus_kv["alpha"], beta=bolus_kv["beta"],
                                  baseline=bolus_kv["baseline"])
    tissues = {}
    for region in ("healthy", "penumbra", "core"):
        spec: TissueSpec = getattr(phantom, region)
        over = dict(tissue_over[region])
        if noise_sigma is not None:
            over.setdefault("noise_sigma", noise_sigma)
        over.setdefault("baseline", bolus_kv["baseline"])
        tissues[region] = replace(spec, **over)
    phantom = replace(phantom, shape=tuple(shape), bolus=bolus, **phantom_over,
                      **tissues)
    train_cfg = replace(train_cfg, scale_range=(scale[0], scale[1]), **train_over)
    deconv = replace(base.deconv, **deconv_over)
    cfg = PipelineConfig(phantom=phantom, train=train_cfg, deconv=deconv, **root_over)
    # the training seed follows the pipeline seed unless set explicitly
    return replace(cfg, train=replace(cfg.train, seed=cfg.seed))


def load_pipeline_config(path) -> PipelineConfig:
    return pipeline_config_from_pairs(read_kv_file(path), source=str(path))


def train_config_from_pairs(pairs: dict[str, str],
                            source: str = "<config>") -> tuple[TrainConfig, int]:
    """TrainConfig plus seed from a config restricted to training keys."""
    allowed = {k for k in _KEYS if k.startswith("train.")} | {"seed"}
    unknown = sorted(set(pairs) - allowed)
    if unknown:
        raise ValidationError(
            f"{source}: unknown training config key(s): {', '.join(unknown)}")
    cfg = pipeline_config_from_pairs(pairs, source=source)
    return cfg.train, cfg.seed
