"""End-to-end multi-echo simulation from RGB, depth and normal images."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels, photon
from ._core_py import pixel_keys
from .echoes import assemble_frame, dense_echoes, gaussian_kernel
from .errors import ConfigError
from .model import LidarImage, MultiEchoFrame, SimConfig
from .optics import (
    SensorArray,
    assign_cameras,
    depth_to_range,
    project_to_image,
    resample_image,
    sensor_array_from_spec,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PolarInputs:
    """Inputs resampled onto the sensor grid."""

    array: SensorArray
    view: np.ndarray       # [R_V, R_H] camera index, -1 if unseen
    red: np.ndarray        # [R_V, R_H] resampled R channel
    ranges: np.ndarray     # [R_V, R_H] metres along the beam
    cos_inc: np.ndarray    # [R_V, R_H]
    seen: np.ndarray       # beam imaged by some camera
    hit: np.ndarray        # beam imaged and has valid depth


@dataclass(frozen=True, eq=False)
class SimulationResult:
    frame: MultiEchoFrame
    image: LidarImage
    cloud: np.ndarray
    rates: photon.RateField
    tau: float
    inputs: PolarInputs

    @property
    def ambient(self) -> np.ndarray:
        return self.image.ambient

    @property
    def reflectance(self) -> np.ndarray:
        return self.image.reflectance


def _per_view(images, n_views, name):
    img = np.asarray(images)
    if n_views == 1:
        return [img]
    if img.shape[0] != n_views:
        raise ConfigError(f"{name}: expected {n_views} stacked views, got shape {img.shape}")
    return [img[i] for i in range(n_views)]


def to_polar(rgb, depth, normals, config: SimConfig) -> PolarInputs:
    """Resample camera images onto the LiDAR sensor grid."""
    if not config.cameras:
        raise ConfigError("configuration defines no cameras")
    array = sensor_array_from_spec(config.array)
    cams = config.cameras
    rgbs = _per_view(rgb, len(cams), "rgb")
    depths = _per_view(depth, len(cams), "depth")
    norms = _per_view(normals, len(cams), "normals")
    dirs = array.directions()
    view = assign_cameras(array, cams) if len(cams) > 1 else np.where(project_to_image(array, cams[0])[1], 0, -1)

    shape = array.shape
    red = np.zeros(shape)
    ranges = np.zeros(shape)
    cos_inc = np.zeros(shape)
    hit = np.zeros(shape, dtype=bool)
    for v, cam in enumerate(cams):
        sel = view == v
        if not np.any(sel):
            continue
        if rgbs[v].shape[:2] != (cam.height, cam.width):
            raise ConfigError(f"view {v}: image shape {rgbs[v].shape[:2]} != camera {(cam.height, cam.width)}")
        uv, _ = project_to_image(array, cam)
        img = np.asarray(rgbs[v], dtype=np.float64)
        r_chan = img[..., 0] if img.ndim == 3 else img
        red_v, _ = resample_image(r_chan, uv, sel)
        # a beam whose bilinear footprint touches a pixel without depth is a miss
        z = np.asarray(depths[v], dtype=np.float64)
        zfin = np.isfinite(z) & (z > 0)
        zv, _ = resample_image(np.where(zfin, z, 0.0), uv, sel)
        okv, _ = resample_image(zfin.astype(np.float64), uv, sel)
        rng_v, dvalid = depth_to_range(np.where(okv > 1 - 1e-9, zv, 0.0), uv, cam)
        n_v, _ = resample_image(np.asarray(norms[v], dtype=np.float64), uv, sel)
        n_sensor = n_v @ cam.rotation  # camera frame -> sensor frame
        cos_v = photon.incidence_cos(n_sensor, dirs)
        red[sel] = red_v[sel]
        ranges[sel] = rng_v[sel]
        cos_inc[sel] = cos_v[sel]
        hit[sel] = dvalid[sel]
    return PolarInputs(array, view, red, ranges, cos_inc, view >= 0, hit)


def rates_from_inputs(inp: PolarInputs, config: SimConfig) -> photon.RateField:
    lam_s, nstar = photon.signal_rate(inp.red, inp.cos_inc, inp.ranges, inp.hit, config.sbr, config.bin_width, config.bins)
    lam_a = photon.ambient_rate(inp.red, inp.seen)
    return photon.RateField(lam_s, nstar, lam_a, config.bins)


def simulate(rgb, depth, normals, config: SimConfig, threads: int = 1, backend=None, dense: bool = False) -> SimulationResult:
    """Run the full simulator.

    ``dense=True`` replays the identical draws on a materialized histogram;
    it costs ``H*W*N`` memory and is meant for small ``N`` only.
    """
    inp = to_polar(rgb, depth, normals, config)
    rates = rates_from_inputs(inp, config)
    kernel = gaussian_kernel(config.kernel_size, config.kernel_sigma)
    tau = config.tau
    if tau is None:
        tau = photon.ambient_tau_bound(float(rates.ambient_rate.max(initial=0.0)), kernel, config.bins)
    h, w = inp.array.shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    keys = pixel_keys(config.seed, np.maximum(inp.view, 0), rows, cols)
    sig, amb = rates.draw_params()
    log.debug("simulating %dx%d beams, N=%d, tau=%.4g", h, w, config.bins, tau)
    if dense:
        bins, strengths = dense_echoes(rates.signal_bin, keys, sig, amb, kernel, config.k, tau, config.nms_window, config.bins)
    else:
        bins, strengths = kernels.sparse_echoes(
            rates.signal_bin, keys, sig, amb, kernel, config.k, tau, config.nms_window, threads=threads, backend=backend
        )
    frame, image, cloud = assemble_frame(bins, strengths, inp.red, inp.array.directions(), config.bin_width)
    return SimulationResult(frame, image, cloud, rates, float(tau), inp)
