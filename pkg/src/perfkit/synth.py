"""Synthetic CTP phantoms with analytically known ground truth.

A phantom is a 4D bolus-tracking series on a small grid: one arterial and
one venous voxel carry gamma-variate reference curves, every other voxel
holds that arterial curve convolved with a flow-scaled residue function.
Flows, transit times and delays are known per region, so perfusion maps
and core/penumbra masks are available in closed form.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .types import (CtpVolume4D, MAP_NAMES, PerfusionMaps, Unit,
                    VascularFunction, VFKind, Volume3D)


@dataclass(frozen=True)
class GammaVariateParams:
    """Gamma-variate bolus: b + A*(t-t0)^alpha * exp(-(t-t0)/beta) for t > t0."""

    amplitude: float
    t0: float
    alpha: float
    beta: float
    baseline: float

    def __post_init__(self):
        vals = (self.amplitude, self.t0, self.alpha, self.beta, self.baseline)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite gamma-variate parameter in {vals}")
        if self.amplitude <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValidationError("amplitude, alpha and beta must be positive")
        if self.t0 < 0:
            raise ValidationError(f"onset must be nonnegative, got {self.t0}")

    @property
    def peak_time(self) -> float:
        return self.t0 + self.alpha * self.beta


def gamma_params_for_peak(peak_hu: float, t0: float, alpha: float, beta: float,
                          baseline: float) -> GammaVariateParams:
    """Gamma-variate whose maximum sits peak_hu above baseline."""
    unit_peak = (alpha * beta) ** alpha * math.exp(-alpha)
    return GammaVariateParams(amplitude=peak_hu / unit_peak, t0=t0,
                              alpha=alpha, beta=beta, baseline=baseline)


def gamma_variate(t, p: GammaVariateParams):
    """Evaluate the bolus model; scalar or array t, t >= 0."""
    t = np.asarray(t, dtype=np.float64)
    shifted = t - p.t0
    rising = shifted > 0
    out = np.full(t.shape, float(p.baseline))
    s = shifted[rising]
    out[rising] += p.amplitude * s ** p.alpha * np.exp(-s / p.beta)
    return out if out.ndim else float(out)


class ResidueModel(enum.Enum):
    EXPONENTIAL = "exponential"
    BOXCAR = "boxcar"


@dataclass(frozen=True)
class TissueSpec:
    """One tissue compartment: h(t) = flow * R(t - delay)."""

    flow: float
    mtt: float
    delay_s: float = 0.0
    residue_model: ResidueModel = ResidueModel.EXPONENTIAL
    noise_sigma: float = 0.0
    baseline: float = 40.0

    def __post_init__(self):
        if not (math.isfinite(self.flow) and self.flow >= 0):
            raise ValidationError(f"flow must be >= 0, got {self.flow}")
        if not (math.isfinite(self.mtt) and self.mtt > 0):
            raise ValidationError(f"mtt must be positive, got {self.mtt}")
        if not (math.isfinite(self.delay_s) and self.delay_s >= 0):
            raise ValidationError(f"delay must be >= 0, got {self.delay_s}")
        if self.noise_sigma < 0:
            raise ValidationError(f"noise sigma must be >= 0, got {self.noise_sigma}")


def _delay_frames(delay_s: float, dt: float) -> int:
    k = delay_s / dt
    if abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
        raise ValidationError(
            f"delay {delay_s} s is not an integer multiple of dt={dt} s")
    return int(round(k))


def residue_curve(spec: TissueSpec, dt: float, n: int) -> np.ndarray:
    """Samples h[j] = flow * R(j*dt - delay) on an n-point grid."""
    _delay_frames(spec.delay_s, dt)
    t = np.arange(n) * dt - spec.delay_s
    if spec.residue_model is ResidueModel.EXPONENTIAL:
        r = np.where(t >= 0, np.exp(-np.maximum(t, 0.0) / spec.mtt), 0.0)
    else:
        r = ((t >= 0) & (t < spec.mtt)).astype(np.float64)
    return spec.flow * r


def convolve_residue(aif: VascularFunction, spec: TissueSpec,
                     rng: np.random.Generator | None = None,
                     baseline_frames: int = 3) -> VascularFunction:
    """Forward dilution model: tissue = baseline + dt * (aif - base) (*) h.

    The AIF is baseline-subtracted (mean of the first ``baseline_frames``
    samples) before the discrete convolution. Gaussian noise of the spec's
    sigma is added afterwards when nonzero.
    """
    dt = aif.dt_seconds
    n = len(aif)
    k = _delay_frames(spec.delay_s, dt)
    if k >= n:
        raise ValidationError(
            f"delay of {k} frames does not fit a {n}-frame window")
    tilde = aif.values - aif.values[:baseline_frames].mean()
    h = residue_curve(spec, dt, n)
    c = spec.baseline + dt * np.convolve(tilde, h)[:n]
    if spec.noise_sigma > 0:
        if rng is None:
            raise ValidationError("noise_sigma > 0 requires an RNG")
        c = c + rng.normal(0.0, spec.noise_sigma, size=n)
    return VascularFunction(values=c, dt_seconds=dt, kind=aif.kind)


Box = tuple[int, int, int, int, int, int]   # (z0, z1, y0, y1, x0, x1), half-open


def _box_slices(box: Box):
    z0, z1, y0, y1, x0, x1 = box
    return slice(z0, z1), slice(y0, y1), slice(x0, x1)


def _default_bolus() -> GammaVariateParams:
    # narrow bolus with a soft onset: keeps the AIF spectrum wide enough that
    # Tikhonov filtering at lambda_rel ~ 0.05 barely distorts recovered residues
    return gamma_params_for_peak(150.0, t0=3.7, alpha=6.0, beta=0.25, baseline=40.0)


@dataclass(frozen=True)
class PhantomConfig:
    shape: tuple[int, int, int] = (4, 32, 32)      # (z, y, x)
    n_frames: int = 40
    dt_seconds: float = 1.0
    bolus: GammaVariateParams = field(default_factory=_default_bolus)
    vein_amp_scale: float = 1.3
    vein_delay_s: float = 3.0
    aif_pv_scale: float = 1.0
    aif_voxel: tuple[int, int, int] = (1, 6, 10)
    vof_voxel: tuple[int, int, int] = (2, 6, 22)
    healthy: TissueSpec = field(default_factory=lambda: TissueSpec(
        flow=0.010, mtt=4.0, delay_s=1.0))
    penumbra: TissueSpec = field(default_factory=lambda: TissueSpec(
        flow=0.006, mtt=6.0, delay_s=8.0))
    core: TissueSpec = field(default_factory=lambda: TissueSpec(
        flow=0.0025, mtt=8.0, delay_s=10.0))
    penumbra_box: Box = (0, 4, 18, 28, 4, 14)
    core_box: Box = (0, 4, 18, 28, 18, 28)
    vessel_noise_sigma: float = 0.0
    tmax_threshold_s: float = 6.0
    rcbf_core_threshold: float = 0.38
    randomize_layout: bool = False


@dataclass(frozen=True)
class Phantom:
    ctp: CtpVolume4D
    true_aif: VascularFunction
    true_vof: VascularFunction
    aif_voxel: tuple[int, int, int]
    vof_voxel: tuple[int, int, int]
    truth_maps: PerfusionMaps
    core_mask: Volume3D
    lesion_mask: Volume3D
    seed: int


def _tissue_tmax(spec: TissueSpec, dt: float, n: int) -> float:
    base = residue_curve(replace(spec, delay_s=0.0, flow=max(spec.flow, 1.0)), dt, n)
    return spec.delay_s + dt * int(np.argmax(base))


def _check_box(box: Box, shape, name: str) -> None:
    z0, z1, y0, y1, x0, x1 = box
    if not (0 <= z0 < z1 <= shape[0] and 0 <= y0 < y1 <= shape[1]
            and 0 <= x0 < x1 <= shape[2]):
        raise ValidationError(f"{name} box {box} outside volume of shape {shape}")


def _validate_config(cfg: PhantomConfig) -> None:
    z, y, x = cfg.shape
    if min(z, y, x) < 1 or cfg.n_frames < 2:
        raise ValidationError(f"invalid phantom dims {cfg.shape} x {cfg.n_frames}")
    _check_box(cfg.penumbra_box, cfg.shape, "penumbra")
    _check_box(cfg.core_box, cfg.shape, "core")
    pz, py, px = _box_slices(cfg.penumbra_box)
    cz, cy, cx = _box_slices(cfg.core_box)
    overlap = np.zeros(cfg.shape, dtype=np.int8)
    overlap[pz, py, px] += 1
    overlap[cz, cy, cx] += 1
    if (overlap > 1).any():
        raise ValidationError("core and penumbra regions overlap")
    for name, voxel in (("aif", cfg.aif_voxel), ("vof", cfg.vof_voxel)):
        if not all(0 <= voxel[i] < cfg.shape[i] for i in range(3)):
            raise ValidationError(f"{name} voxel {voxel} outside volume")
        if overlap[voxel] != 0:
            raise ValidationError(f"{name} voxel {voxel} falls inside a lesion region")
    if cfg.aif_voxel == cfg.vof_voxel:
        raise ValidationError("arterial and venous voxels coincide")
    if cfg.vein_amp_scale <= 0 or cfg.aif_pv_scale <= 0:
        raise ValidationError("vein amplitude and partial-volume scales must be positive")
    if cfg.vessel_noise_sigma < 0:
        raise ValidationError("vessel noise sigma must be >= 0")

    dt = float(np.float32(cfg.dt_seconds))
    n = cfg.n_frames
    healthy_tmax = _tissue_tmax(cfg.healthy, dt, n)
    if not healthy_tmax < cfg.tmax_threshold_s:
        raise ValidationError(
            f"healthy tissue Tmax {healthy_tmax} not below {cfg.tmax_threshold_s} s")
    for name, spec in (("penumbra", cfg.penumbra), ("core", cfg.core)):
        tm = _tissue_tmax(spec, dt, n)
        if not tm > cfg.tmax_threshold_s:
            raise ValidationError(
                f"{name} Tmax {tm} s does not exceed {cfg.tmax_threshold_s} s")
    # control tissue is exactly the healthy region, so its mean flow is healthy.flow
    if not cfg.core.flow < cfg.rcbf_core_threshold * cfg.healthy.flow:
        raise ValidationError(
            f"core flow {cfg.core.flow} not below "
            f"{cfg.rcbf_core_threshold:.0%} of healthy flow {cfg.healthy.flow}")
    if cfg.penumbra.flow < cfg.rcbf_core_threshold * cfg.healthy.flow:
        raise ValidationError(
            f"penumbra flow {cfg.penumbra.flow} below the core cutoff; "
            "it would segment as core")


def _randomized(cfg: PhantomConfig, rng: np.random.Generator) -> PhantomConfig:
    """Draw a layout/parameter variant; used to build varied cohorts."""
    z, y, x = cfg.shape
    if y < 24 or x < 24:
        raise ValidationError(f"randomized layout needs y, x >= 24, got {cfg.shape}")
    dt = float(np.float32(cfg.dt_seconds))

    def box(x_lo: int, x_hi: int) -> Box:
        sy = int(rng.integers(6, 11))
        sx = int(rng.integers(6, 11))
        y0 = int(rng.integers(y // 2 + 1, y - sy))
        x0 = int(rng.integers(x_lo, x_hi - sx))
        return (0, z, y0, y0 + sy, x0, x0 + sx)

    penumbra_box = box(1, x // 2 - 1)
    core_box = box(x // 2 + 1, x - 1)
    aif_voxel = (int(rng.integers(0, z)), int(rng.integers(1, y // 2 - 1)),
                 int(rng.integers(1, x // 2 - 1)))
    vof_voxel = (int(rng.integers(0, z)), int(rng.integers(1, y // 2 - 1)),
                 int(rng.integers(x // 2, x - 1)))
    bolus = gamma_params_for_peak(float(rng.uniform(130, 170)),
                                  t0=float(rng.uniform(3.2, 5.8)), alpha=6.0,
                                  beta=float(rng.uniform(0.2, 0.45)),
                                  baseline=cfg.bolus.baseline)
    f_healthy = float(rng.uniform(0.008, 0.012))
    healthy = replace(cfg.healthy, flow=f_healthy, mtt=float(rng.uniform(3.0, 5.0)),
                      delay_s=int(rng.integers(1, 3)) * dt)
    penumbra = replace(cfg.penumbra, flow=f_healthy * float(rng.uniform(0.45, 0.65)),
                       mtt=float(rng.uniform(5.0, 7.0)),
                       delay_s=int(rng.integers(7, 10)) * dt)
    core = replace(cfg.core, flow=f_healthy * float(rng.uniform(0.15, 0.30)),
                   mtt=float(rng.uniform(6.0, 9.0)),
                   delay_s=int(rng.integers(9, 13)) * dt)
    return replace(cfg, bolus=bolus, healthy=healthy, penumbra=penumbra, core=core,
                   penumbra_box=penumbra_box, core_box=core_box,
                   aif_voxel=aif_voxel, vof_voxel=vof_voxel, randomize_layout=False)


def make_phantom(cfg: PhantomConfig, seed: int) -> Phantom:
    """Deterministic phantom for (cfg, seed)."""
    rng = np.random.default_rng(seed)
    if cfg.randomize_layout:
        cfg = _randomized(cfg, rng)
    _validate_config(cfg)

    dt = float(np.float32(cfg.dt_seconds))
    n = cfg.n_frames
    zdim, ydim, xdim = cfg.shape
    t = np.arange(n) * dt

    aif_vals = gamma_variate(t, cfg.bolus)
    b = cfg.bolus.baseline
    vof_vals = b + cfg.vein_amp_scale * (gamma_variate(t - cfg.vein_delay_s, cfg.bolus) - b)
    true_aif = VascularFunction(values=aif_vals, dt_seconds=dt, kind=VFKind.AIF)
    true_vof = VascularFunction(values=vof_vals, dt_seconds=dt, kind=VFKind.VOF)

    quiet = {name: replace(spec, noise_sigma=0.0) for name, spec in
             (("healthy", cfg.healthy), ("penumbra", cfg.penumbra), ("core", cfg.core))}
    curves = {name: convolve_residue(true_aif, spec).values
              for name, spec in quiet.items()}

    data = np.empty((n, zdim, ydim, xdim), dtype=np.float64)
    sigma = np.full(cfg.shape, cfg.healthy.noise_sigma, dtype=np.float64)
    data[:] = curves["healthy"][:, None, None, None]
    for name, box in (("penumbra", cfg.penumbra_box), ("core", cfg.core_box)):
        sz, sy, sx = _box_slices(box)
        data[:, sz, sy, sx] = curves[name][:, None, None, None]
        sigma[sz, sy, sx] = getattr(cfg, name).noise_sigma
    az, ay, ax = cfg.aif_voxel
    vz, vy, vx = cfg.vof_voxel
    data[:, az, ay, ax] = b + cfg.aif_pv_scale * (aif_vals - b)
    data[:, vz, vy, vx] = vof_vals
    sigma[az, ay, ax] = cfg.vessel_noise_sigma
    sigma[vz, vy, vx] = cfg.vessel_noise_sigma

    # the unit noise field is drawn regardless of sigma so that phantoms with
    # equal seeds differ only by scaled noise
    noise = rng.standard_normal(size=data.shape)
    data = data + sigma[None, :, :, :] * noise

    mask = np.ones(cfg.shape, dtype=bool)
    mask[az, ay, ax] = False
    mask[vz, vy, vx] = False
    ctp = CtpVolume4D(data=data, dt_seconds=dt, brain_mask=mask)

    maps = _truth_maps(cfg, dt, n, mask)
    core = np.zeros(cfg.shape, dtype=np.float32)
    core[_box_slices(cfg.core_box)] = 1.0
    lesion = core.copy()
    lesion[_box_slices(cfg.penumbra_box)] = 1.0
    return Phantom(ctp=ctp, true_aif=true_aif, true_vof=true_vof,
                   aif_voxel=cfg.aif_voxel, vof_voxel=cfg.vof_voxel,
                   truth_maps=maps,
                   core_mask=Volume3D(core, Unit.BINARY),
                   lesion_mask=Volume3D(lesion, Unit.BINARY),
                   seed=int(seed))


def _truth_maps(cfg: PhantomConfig, dt: float, n: int, mask: np.ndarray) -> PerfusionMaps:
    values = {name: np.zeros(cfg.shape, dtype=np.float64) for name in MAP_NAMES}
    regions = [("healthy", None), ("penumbra", cfg.penumbra_box), ("core", cfg.core_box)]
    region_vals = {}
    for name, _ in regions:
        spec: TissueSpec = getattr(cfg, name)
        region_vals[name] = {"cbf": spec.flow, "cbv": spec.flow * spec.mtt,
                             "mtt": spec.mtt, "tmax": _tissue_tmax(spec, dt, n)}
    for key in MAP_NAMES:
        values[key][:] = region_vals["healthy"][key]
        for name, box in regions[1:]:
            values[key][_box_slices(box)] = region_vals[name][key]
        values[key][~mask] = 0.0

    control = mask & (values["tmax"] < cfg.tmax_threshold_s)
    if not control.any():
        raise ValidationError("phantom has no control tissue")
    control_mean = {key: float(values[key][control].mean()) for key in MAP_NAMES}
    units = {"cbf": Unit.FLOW, "cbv": Unit.RATIO, "mtt": Unit.SECONDS,
             "tmax": Unit.SECONDS}
    absolute = {key: Volume3D(values[key], units[key]) for key in MAP_NAMES}
    relative = {}
    for key in MAP_NAMES:
        rel = np.where(mask, values[key] / control_mean[key], 0.0)
        relative["r" + key] = Volume3D(rel, Unit.RATIO)
    return PerfusionMaps(**absolute, **{k: v for k, v in relative.items()},
                         control_mean=control_mean)


def cohort_seeds(seed: int, n: int) -> list[int]:
    """n reproducible child seeds derived from one master seed."""
    ss = np.random.SeedSequence(seed)
    return [int(s) for s in ss.generate_state(n, dtype=np.uint64)]


def make_cohort(cfg: PhantomConfig, n: int, seed: int) -> list[Phantom]:
    """n phantoms with varied layouts, deterministic in (cfg, n, seed)."""
    varied = replace(cfg, randomize_layout=True)
    return [make_phantom(varied, s) for s in cohort_seeds(seed, n)]
