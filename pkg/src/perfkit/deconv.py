"""Delay-invariant Tikhonov-regularized SVD deconvolution.

The arterial curve is baseline-subtracted, given trapezoidal end-weights
(first and last nonzero samples halved) and zero-padded into the first
column of an L x L circulant matrix, L = circulant_factor * T. Residue
estimates come from filtering the singular system with factors
s^2 / (s^2 + lambda^2), lambda = lambda_rel * s_max.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import metrics
from .errors import DegenerateSignalError, ValidationError
from .types import (CtpVolume4D, MAP_NAMES, MTT_CBF_FLOOR, PerfusionMaps,
                    Unit, VascularFunction, Volume3D)

_VOXEL_CHUNK = 65536


@dataclass(frozen=True)
class DeconvParams:
    lambda_rel: float = 0.15
    circulant_factor: int = 2
    baseline_frames: int = 3
    tmax_threshold_s: float = 6.0
    rcbf_core_threshold: float = 0.38

    def __post_init__(self):
        if not (0 < self.lambda_rel < 1):
            raise ValidationError(f"lambda_rel must be in (0, 1), got {self.lambda_rel}")
        if self.circulant_factor < 2:
            raise ValidationError(
                f"circulant_factor must be >= 2, got {self.circulant_factor}")
        if self.baseline_frames < 1:
            raise ValidationError(
                f"baseline_frames must be positive, got {self.baseline_frames}")
        if not (math.isfinite(self.tmax_threshold_s) and self.tmax_threshold_s > 0):
            raise ValidationError(
                f"tmax threshold must be positive, got {self.tmax_threshold_s}")
        if not (0 < self.rcbf_core_threshold < 1):
            raise ValidationError(
                f"rCBF core threshold must be in (0, 1), got {self.rcbf_core_threshold}")


@dataclass(frozen=True)
class SingularSystem:
    """Full SVD of the circulant convolution matrix."""

    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    n_frames: int
    dt_seconds: float

    @property
    def size(self) -> int:
        return self.s.size


@dataclass(frozen=True)
class ResidueEstimate:
    """Flow-scaled residue samples recovered for one voxel."""

    h: np.ndarray
    dt_seconds: float

    @property
    def cbf(self) -> float:
        return float(self.h.max())

    @property
    def tmax_s(self) -> float:
        return float(int(np.argmax(self.h)) * self.dt_seconds)

    @property
    def cbv(self) -> float:
        return float(self.h.sum() * self.dt_seconds)


def _end_weighted(column: np.ndarray) -> np.ndarray:
    out = column.copy()
    nz = np.nonzero(out)[0]
    if nz.size == 0:
        raise DegenerateSignalError("AIF is identically zero after baseline subtraction")
    out[nz[0]] *= 0.5
    if nz[-1] != nz[0]:
        out[nz[-1]] *= 0.5
    return out


def build_circulant_system(aif: VascularFunction, params: DeconvParams) -> SingularSystem:
    """Circulant convolution matrix for the AIF, decomposed by full SVD."""
    n = len(aif)
    size = params.circulant_factor * n
    tilde = aif.values - aif.values[:params.baseline_frames].mean()
    column = np.zeros(size, dtype=np.float64)
    column[:n] = _end_weighted(tilde)
    column *= aif.dt_seconds
    idx = (np.arange(size)[:, None] - np.arange(size)[None, :]) % size
    matrix = column[idx]
    u, s, vt = np.linalg.svd(matrix)
    return SingularSystem(u=u, s=s, vt=vt, n_frames=n, dt_seconds=aif.dt_seconds)


def tikhonov_filter(system: SingularSystem, lambda_rel: float) -> np.ndarray:
    """The regularized inverse V diag(f_k / s_k) U^T."""
    s_max = system.s[0]
    if s_max <= 0:
        raise DegenerateSignalError("degenerate system: largest singular value is zero")
    lam = lambda_rel * s_max
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(system.s > 0, system.s / (system.s ** 2 + lam ** 2), 0.0)
    return (system.vt.T * gain) @ system.u.T


def _padded_tissue(values: np.ndarray, system: SingularSystem,
                   params: DeconvParams) -> np.ndarray:
    tilde = values - values[: params.baseline_frames].mean(axis=0)
    pad_shape = (system.size,) + tilde.shape[1:]
    padded = np.zeros(pad_shape, dtype=np.float64)
    padded[: system.n_frames] = tilde
    return padded


def deconvolve_voxel(c_tissue: VascularFunction, system: SingularSystem,
                     params: DeconvParams) -> ResidueEstimate:
    """Recover the flow-scaled residue for one tissue curve."""
    if len(c_tissue) != system.n_frames:
        raise ValidationError(
            f"tissue curve has {len(c_tissue)} frames, system was built for "
            f"{system.n_frames}")
    inverse = tikhonov_filter(system, params.lambda_rel)
    padded = _padded_tissue(c_tissue.values.astype(np.float64), system, params)
    return ResidueEstimate(h=inverse @ padded, dt_seconds=system.dt_seconds)


def recalibrate_aif(aif: VascularFunction, vof: VascularFunction,
                    baseline_frames: int = 3) -> VascularFunction:
    """Scale the AIF about its baseline so its PTB matches the VOF's."""
    ptb_aif, base_aif = metrics.ptb(aif, baseline_frames)
    ptb_vof, _ = metrics.ptb(vof, baseline_frames)
    if ptb_aif <= 0:
        raise DegenerateSignalError("AIF peak-to-baseline is not positive")
    if ptb_vof <= 0:
        raise DegenerateSignalError("VOF peak-to-baseline is not positive")
    scale = ptb_vof / ptb_aif
    values = base_aif + (aif.values - base_aif) * scale
    return VascularFunction(values=values, dt_seconds=aif.dt_seconds, kind=aif.kind)


def compute_maps(ctp: CtpVolume4D, aif: VascularFunction, vof: VascularFunction,
                 params: DeconvParams) -> PerfusionMaps:
    """Deconvolve every in-mask voxel into absolute and relative maps.

    The AIF is first recalibrated against the VOF peak-to-baseline; control
    tissue (Tmax below threshold inside the mask) normalizes the relative
    maps. An empty or non-positive control region is an explicit failure.
    """
    n = ctp.n_frames
    if len(aif) != n or len(vof) != n:
        raise ValidationError(
            f"curve lengths ({len(aif)}, {len(vof)}) do not match {n} frames")
    for curve, name in ((aif, "AIF"), (vof, "VOF")):
        if abs(curve.dt_seconds - ctp.dt_seconds) > 1e-6 * ctp.dt_seconds:
            raise ValidationError(
                f"{name} dt {curve.dt_seconds} != series dt {ctp.dt_seconds}")

    calibrated = recalibrate_aif(aif, vof, params.baseline_frames)
    system = build_circulant_system(calibrated, params)
    inverse = tikhonov_filter(system, params.lambda_rel)

    mask = ctp.brain_mask if ctp.brain_mask is not None else \
        np.ones(ctp.spatial_shape, dtype=bool)
    flat = ctp.data.reshape(n, -1).astype(np.float64)
    idx = np.nonzero(mask.reshape(-1))[0]
    n_vox = idx.size
    if n_vox == 0:
        raise ValidationError("brain mask is empty")

    cbf = np.zeros(n_vox)
    tmax = np.zeros(n_vox)
    cbv = np.zeros(n_vox)
    dt = system.dt_seconds
    for start in range(0, n_vox, _VOXEL_CHUNK):
        sel = idx[start:start + _VOXEL_CHUNK]
        padded = _padded_tissue(flat[:, sel], system, params)
        h = inverse @ padded
        cbf[start:start + sel.size] = h.max(axis=0)
        tmax[start:start + sel.size] = h.argmax(axis=0) * dt
        cbv[start:start + sel.size] = h.sum(axis=0) * dt
    mtt = np.where(cbf > MTT_CBF_FLOOR, cbv / np.where(cbf > MTT_CBF_FLOOR, cbf, 1.0), 0.0)

    control = tmax < params.tmax_threshold_s
    if not control.any():
        raise DegenerateSignalError(
            f"no control tissue: every voxel has Tmax >= {params.tmax_threshold_s} s")
    flat_maps = {"cbf": cbf, "cbv": cbv, "mtt": mtt, "tmax": tmax}
    control_mean = {}
    for key, vals in flat_maps.items():
        m = float(vals[control].mean())
        if not m > 0:
            raise DegenerateSignalError(
                f"control-tissue mean of {key} is {m}; cannot normalize")
        control_mean[key] = m

    shape = ctp.spatial_shape
    units = {"cbf": Unit.FLOW, "cbv": Unit.RATIO, "mtt": Unit.SECONDS,
             "tmax": Unit.SECONDS}
    volumes = {}
    for key, vals in flat_maps.items():
        full = np.zeros(shape[0] * shape[1] * shape[2], dtype=np.float64)
        full[idx] = vals
        volumes[key] = Volume3D(full.reshape(shape), units[key])
        rel = np.zeros_like(full)
        rel[idx] = vals / control_mean[key]
        volumes["r" + key] = Volume3D(rel.reshape(shape), Unit.RATIO)
    return PerfusionMaps(**volumes, control_mean=control_mean)


def segment_core(maps: PerfusionMaps, params: DeconvParams) -> tuple[Volume3D, Volume3D]:
    """Perfusion lesion (Tmax above threshold) and its low-rCBF core."""
    lesion = maps.tmax.data > params.tmax_threshold_s
    core = lesion & (maps.rcbf.data < params.rcbf_core_threshold)
    return (Volume3D(core.astype(np.float32), Unit.BINARY),
            Volume3D(lesion.astype(np.float32), Unit.BINARY))
