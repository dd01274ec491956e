"""Spectral and spatial augmentation toolbox.

Eight spectral operators (shift, flip, scattering-model re-lighting,
gain/offset compensation, elastic band warp, band erasure, band
permutation, neighbor mixing) and four spatial ones (quarter rotation,
elastic warp, mirror, translate). Every operator preserves the (k, S, S)
shape and the patch label; edge handling is replication throughout.

Two layers:
  * core functions take explicit parameters and raw arrays, so tests can
    pin exact values;
  * `AugmentSpec`/`AugmentPipeline` draw per-sample parameters from an
    rng derived from (master_seed, sample_index, op_position), making
    augmented views reproducible and scheduling-independent.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .hsi import Patch
from .seeding import derive_rng

SPECTRAL_OPS = (
    "spectral_shift",
    "spectral_flip",
    "hapke_scatter",
    "atmospheric_compensation",
    "spectral_elastic",
    "band_erasure",
    "band_permutation",
    "nn_mixing",
)
SPATIAL_OPS = (
    "spatial_rotate",
    "spatial_elastic",
    "spatial_flip",
    "spatial_translate",
)
ALL_OPS = SPECTRAL_OPS + SPATIAL_OPS

HAPKE_R_MIN = 1e-6
HAPKE_R_MAX = 0.999
_HAPKE_BISECTIONS = 52  # halvings of [0, 1): final width ~2e-16 < 1e-10 tolerance


# ---------------------------------------------------------------------------
# spectral operators (core)


def shift_bands(data: np.ndarray, delta: int) -> np.ndarray:
    """Displace the spectrum by `delta` bands; vacated bands replicate the edge."""
    k = data.shape[0]
    if abs(delta) >= k:
        raise ParameterError(f"|delta|={abs(delta)} must be < k={k}")
    src = np.clip(np.arange(k) - delta, 0, k - 1)
    return data[src].copy()


def flip_bands(data: np.ndarray) -> np.ndarray:
    """Reverse band order."""
    return data[::-1].copy()


def hapke_forward(w: np.ndarray, mu0: float, mu: float) -> np.ndarray:
    """Isotropic two-stream reflectance r(w) for single-scattering albedo w."""
    gamma = np.sqrt(1.0 - w)
    h0 = (1.0 + 2.0 * mu0) / (1.0 + 2.0 * mu0 * gamma)
    h = (1.0 + 2.0 * mu) / (1.0 + 2.0 * mu * gamma)
    return w / (4.0 * (mu0 + mu)) * h0 * h


def hapke_invert(r: np.ndarray, mu0: float, mu: float) -> np.ndarray:
    """Recover w from reflectance by bisection on the monotone forward form."""
    r = np.asarray(r, dtype=np.float64)
    r_max = hapke_forward(np.float64(1.0 - 1e-15), mu0, mu)
    bad = r >= r_max
    if np.any(bad):
        loc = np.unravel_index(int(np.argmax(bad)), r.shape)
        raise NumericalError(
            f"reflectance {r[loc]:.6g} at {loc} is not invertible for geometry "
            f"(mu0={mu0}, mu={mu}): ceiling {r_max:.6g}"
        )
    lo = np.zeros_like(r)
    hi = np.full_like(r, 1.0 - 1e-15)
    for _ in range(_HAPKE_BISECTIONS):
        mid = 0.5 * (lo + hi)
        too_low = hapke_forward(mid, mu0, mu) < r
        lo = np.where(too_low, mid, lo)
        hi = np.where(too_low, hi, mid)
    return 0.5 * (lo + hi)


def _check_cosine(value: float, name: str) -> float:
    v = float(value)
    if not (0.0 < v <= 1.0):
        raise ParameterError(f"{name} must lie in (0, 1], got {v}")
    return v


def hapke_scatter(
    data: np.ndarray,
    nominal_mu0: float,
    nominal_mu: float,
    new_mu0: float,
    new_mu: float,
) -> np.ndarray:
    """Re-light each reflectance value under a new illumination/viewing geometry.

    Inverts the two-stream form for w at the nominal geometry, then
    re-evaluates it at the new one. Values are clamped to
    [1e-6, 0.999] before inversion.
    """
    for v, n in (
        (nominal_mu0, "nominal_mu0"),
        (nominal_mu, "nominal_mu"),
        (new_mu0, "new_mu0"),
        (new_mu, "new_mu"),
    ):
        _check_cosine(v, n)
    clamped = np.clip(data, HAPKE_R_MIN, HAPKE_R_MAX)
    w = hapke_invert(clamped, nominal_mu0, nominal_mu)
    return hapke_forward(w, new_mu0, new_mu)


def random_gain_offset(
    k: int,
    gain_amp: float,
    offset_amp: float,
    n_bumps: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth multiplicative gain and additive offset curves over the band axis.

    Gain = 1 + sum of `n_bumps` Gaussian bumps with amplitudes uniform in
    [-gain_amp, gain_amp]; offset likewise bounded by offset_amp.
    """
    if not (0.0 <= gain_amp <= 0.5):
        raise ParameterError(f"gain amplitude must lie in [0, 0.5], got {gain_amp}")
    if not (0.0 <= offset_amp <= 0.1):
        raise ParameterError(f"offset amplitude must lie in [0, 0.1], got {offset_amp}")
    if n_bumps < 1:
        raise ParameterError("n_bumps must be at least 1")
    bands = np.arange(k, dtype=np.float64)

    def curve(amp: float) -> np.ndarray:
        total = np.zeros(k)
        for _ in range(n_bumps):
            a = rng.uniform(-amp, amp)
            center = rng.uniform(0, max(k - 1, 1))
            width = rng.uniform(max(k / 20.0, 1.0), max(k / 5.0, 2.0))
            total += a * np.exp(-0.5 * ((bands - center) / width) ** 2)
        return total

    return 1.0 + curve(gain_amp), curve(offset_amp)


def apply_gain_offset(data: np.ndarray, gain: np.ndarray, offset: np.ndarray) -> np.ndarray:
    """x -> g(b) * x + o(b), the same curves at every pixel."""
    return data * gain[:, None, None] + offset[:, None, None]


def gaussian_smooth_1d(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian filter with replicated edges."""
    if sigma <= 0:
        raise ParameterError("smoothness must be positive")
    radius = max(int(np.ceil(3.0 * sigma)), 1)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    kernel /= kernel.sum()
    padded = np.pad(values, radius, mode="edge")
    return np.convolve(padded, kernel, mode="valid")


def smooth_band_displacement(
    k: int, amplitude: float, smoothness: float, rng: np.random.Generator
) -> np.ndarray:
    """Smoothed white noise rescaled so max|d| equals `amplitude` (bands)."""
    if amplitude < 0:
        raise ParameterError("amplitude must be non-negative")
    noise = rng.standard_normal(k)
    if amplitude == 0:
        return np.zeros(k)
    d = gaussian_smooth_1d(noise, smoothness)
    peak = np.abs(d).max()
    if peak < 1e-300:
        return np.zeros(k)
    return d * (amplitude / peak)


def resample_bands(data: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Resample each spectrum at band + d(band), linear interpolation, edge replication."""
    k = data.shape[0]
    if displacement.shape != (k,):
        raise ParameterError(f"displacement must have shape ({k},)")
    xs = np.clip(np.arange(k) + displacement, 0.0, k - 1.0)
    if k == 1:
        return data.copy()
    i0 = np.clip(np.floor(xs).astype(np.intp), 0, k - 2)
    frac = (xs - i0)[:, None, None]
    return data[i0] * (1.0 - frac) + data[i0 + 1] * frac


def spectral_elastic(
    data: np.ndarray, amplitude: float, smoothness: float, rng: np.random.Generator
) -> np.ndarray:
    """Smooth random wavelength deformation shared across pixels."""
    if amplitude == 0:
        return data.copy()
    d = smooth_band_displacement(data.shape[0], amplitude, smoothness, rng)
    return resample_bands(data, d)


def erase_bands(data: np.ndarray, bands) -> np.ndarray:
    """Zero the given band images across all pixels."""
    out = data.copy()
    out[np.asarray(bands, dtype=np.intp)] = 0.0
    return out


def choose_erased_bands(k: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round(fraction * k) distinct bands, chosen uniformly."""
    if not (0.0 <= fraction <= 1.0):
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    count = int(np.rint(fraction * k))
    return np.sort(rng.choice(k, size=count, replace=False))


def permute_bands(data: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    """Apply one band permutation identically at every pixel."""
    pi = np.asarray(permutation, dtype=np.intp)
    k = data.shape[0]
    if sorted(pi.tolist()) != list(range(k)):
        raise ParameterError("permutation must be a rearrangement of 0..k-1")
    return data[pi].copy()


def nn_mixing(data: np.ndarray, mix: float) -> np.ndarray:
    """Blend each spectrum with the mean of its 4-neighborhood.

    Edge pixels use the neighbors they have; a 1x1 patch has none and is
    returned unchanged with a warning.
    """
    if not (0.0 <= mix <= 1.0):
        raise ParameterError(f"mixing weight must lie in [0, 1], got {mix}")
    _, h, w = data.shape
    if h == 1 and w == 1:
        warnings.warn("nn_mixing on a 1x1 patch has no neighbors; returning input")
        return data.copy()
    neigh = np.zeros_like(data)
    count = np.zeros((h, w))
    if h > 1:
        neigh[:, :-1, :] += data[:, 1:, :]
        neigh[:, 1:, :] += data[:, :-1, :]
        count[:-1, :] += 1
        count[1:, :] += 1
    if w > 1:
        neigh[:, :, :-1] += data[:, :, 1:]
        neigh[:, :, 1:] += data[:, :, :-1]
        count[:, :-1] += 1
        count[:, 1:] += 1
    mean = neigh / count[None, :, :]
    return (1.0 - mix) * data + mix * mean


# ---------------------------------------------------------------------------
# spatial operators (core)


def rotate_quarter(data: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Rotate every band image by 90 degrees * quarter_turns (lossless)."""
    return np.ascontiguousarray(np.rot90(data, k=quarter_turns % 4, axes=(1, 2)))


def smooth_spatial_displacement(
    shape: tuple[int, int], amplitude: float, smoothness: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis smoothed noise fields rescaled so the max vector magnitude is `amplitude`."""
    if amplitude < 0:
        raise ParameterError("amplitude must be non-negative")
    h, w = shape
    noise_u = rng.standard_normal((h, w))
    noise_v = rng.standard_normal((h, w))
    if amplitude == 0:
        return np.zeros((h, w)), np.zeros((h, w))

    def smooth2d(a: np.ndarray) -> np.ndarray:
        out = np.apply_along_axis(gaussian_smooth_1d, 0, a, smoothness)
        return np.apply_along_axis(gaussian_smooth_1d, 1, out, smoothness)

    du, dv = smooth2d(noise_u), smooth2d(noise_v)
    peak = np.sqrt(du**2 + dv**2).max()
    if peak < 1e-300:
        return np.zeros((h, w)), np.zeros((h, w))
    scale = amplitude / peak
    return du * scale, dv * scale


def warp_spatial(data: np.ndarray, du: np.ndarray, dv: np.ndarray) -> np.ndarray:
    """Bilinear resampling at (row + du, col + dv), identical field for all bands."""
    _, h, w = data.shape
    if du.shape != (h, w) or dv.shape != (h, w):
        raise ParameterError(f"displacement fields must have shape ({h}, {w})")
    if h == 1 and w == 1:
        return data.copy()
    us = np.clip(np.arange(h, dtype=np.float64)[:, None] + du, 0.0, h - 1.0)
    vs = np.clip(np.arange(w, dtype=np.float64)[None, :] + dv, 0.0, w - 1.0)
    u0 = np.clip(np.floor(us).astype(np.intp), 0, max(h - 2, 0))
    v0 = np.clip(np.floor(vs).astype(np.intp), 0, max(w - 2, 0))
    fu = (us - u0)[None, :, :]
    fv = (vs - v0)[None, :, :]
    u1 = np.minimum(u0 + 1, h - 1)
    v1 = np.minimum(v0 + 1, w - 1)
    return (
        data[:, u0, v0] * (1 - fu) * (1 - fv)
        + data[:, u0, v1] * (1 - fu) * fv
        + data[:, u1, v0] * fu * (1 - fv)
        + data[:, u1, v1] * fu * fv
    )


def spatial_elastic(
    data: np.ndarray, amplitude: float, smoothness: float, rng: np.random.Generator
) -> np.ndarray:
    """Random smooth warp; spectra stay co-registered across bands."""
    if amplitude == 0:
        return data.copy()
    du, dv = smooth_spatial_displacement(data.shape[1:], amplitude, smoothness, rng)
    return warp_spatial(data, du, dv)


def flip_spatial(data: np.ndarray, axis: str) -> np.ndarray:
    """Mirror band images: 'horizontal' swaps columns, 'vertical' swaps rows."""
    if axis == "horizontal":
        return data[:, :, ::-1].copy()
    if axis == "vertical":
        return data[:, ::-1, :].copy()
    raise ParameterError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")


def translate_spatial(data: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Shift band images by (dx columns, dy rows); vacated pixels replicate edges."""
    _, h, w = data.shape
    if abs(dx) >= w or abs(dy) >= h:
        raise ParameterError(f"offsets ({dx}, {dy}) must be smaller than extents ({w}, {h})")
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return data[:, rows[:, None], cols[None, :]]


# ---------------------------------------------------------------------------
# seeded spec layer


def _apply_spectral_shift(data, rng, params):
    if "delta" in params:
        delta = int(params["delta"])
    else:
        m = int(params.get("max_shift", 3))
        if m < 0 or m >= data.shape[0]:
            raise ParameterError(f"max_shift must lie in [0, k), got {m}")
        delta = int(rng.integers(-m, m + 1))
    return shift_bands(data, delta)


def _apply_spectral_flip(data, rng, params):
    return flip_bands(data)


def _apply_hapke(data, rng, params):
    nominal_mu0 = float(params.get("nominal_mu0", 1.0))
    nominal_mu = float(params.get("nominal_mu", 1.0))
    if "new_mu0" in params or "new_mu" in params:
        new_mu0 = float(params.get("new_mu0", nominal_mu0))
        new_mu = float(params.get("new_mu", nominal_mu))
    else:
        lo, hi = params.get("mu_range", (0.5, 1.0))
        new_mu0 = float(rng.uniform(lo, hi))
        new_mu = float(rng.uniform(lo, hi))
    return hapke_scatter(data, nominal_mu0, nominal_mu, new_mu0, new_mu)


def _apply_atmospheric(data, rng, params):
    gain, offset = random_gain_offset(
        data.shape[0],
        float(params.get("gain_amp", 0.1)),
        float(params.get("offset_amp", 0.02)),
        int(params.get("n_bumps", 3)),
        rng,
    )
    return apply_gain_offset(data, gain, offset)


def _apply_spectral_elastic(data, rng, params):
    return spectral_elastic(
        data,
        float(params.get("amplitude", 2.0)),
        float(params.get("smoothness", 5.0)),
        rng,
    )


def _apply_band_erasure(data, rng, params):
    if "bands" in params:
        bands = np.asarray(params["bands"], dtype=np.intp)
    else:
        bands = choose_erased_bands(data.shape[0], float(params.get("fraction", 0.1)), rng)
    return erase_bands(data, bands)


def _apply_band_permutation(data, rng, params):
    if "permutation" in params:
        pi = np.asarray(params["permutation"], dtype=np.intp)
    else:
        pi = rng.permutation(data.shape[0])
    return permute_bands(data, pi)


def _apply_nn_mixing(data, rng, params):
    if "mix" in params:
        lam = float(params["mix"])
    else:
        lo, hi = params.get("lambda_range", (0.0, 0.5))
        lam = float(rng.uniform(lo, hi))
    return nn_mixing(data, lam)


def _apply_rotate(data, rng, params):
    if "quarter_turns" in params:
        q = int(params["quarter_turns"])
    else:
        q = int(rng.integers(0, 4))
    return rotate_quarter(data, q)


def _apply_spatial_elastic(data, rng, params):
    return spatial_elastic(
        data,
        float(params.get("amplitude", 1.0)),
        float(params.get("smoothness", 2.0)),
        rng,
    )


def _apply_spatial_flip(data, rng, params):
    axis = params.get("axis") or ("horizontal", "vertical")[int(rng.integers(0, 2))]
    return flip_spatial(data, axis)


def _apply_spatial_translate(data, rng, params):
    if "dx" in params or "dy" in params:
        dx, dy = int(params.get("dx", 0)), int(params.get("dy", 0))
    else:
        m = int(params.get("max_offset", 2))
        dx, dy = int(rng.integers(-m, m + 1)), int(rng.integers(-m, m + 1))
    return translate_spatial(data, dx, dy)


_OP_TABLE = {
    "spectral_shift": _apply_spectral_shift,
    "spectral_flip": _apply_spectral_flip,
    "hapke_scatter": _apply_hapke,
    "atmospheric_compensation": _apply_atmospheric,
    "spectral_elastic": _apply_spectral_elastic,
    "band_erasure": _apply_band_erasure,
    "band_permutation": _apply_band_permutation,
    "nn_mixing": _apply_nn_mixing,
    "spatial_rotate": _apply_rotate,
    "spatial_elastic": _apply_spatial_elastic,
    "spatial_flip": _apply_spatial_flip,
    "spatial_translate": _apply_spatial_translate,
}


@dataclass(frozen=True)
class AugmentSpec:
    """One operator plus its parameter map.

    Parameters may be exact values (delta, quarter_turns, ...) or the
    documented draw ranges (max_shift, mu_range, lambda_range, ...);
    missing entries fall back to defaults.
    """

    op: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.op not in _OP_TABLE:
            raise ParameterError(f"unknown operator {self.op!r}; known: {sorted(_OP_TABLE)}")


@dataclass(frozen=True)
class AugmentPipeline:
    """Ordered stages; each stage is a tuple of candidate specs, one chosen per sample."""

    stages: tuple[tuple[AugmentSpec, ...], ...]
    master_seed: int = 0

    def __post_init__(self):
        stages = tuple(
            (stage,) if isinstance(stage, AugmentSpec) else tuple(stage)
            for stage in self.stages
        )
        object.__setattr__(self, "stages", stages)
        for stage in stages:
            if not stage:
                raise ParameterError("pipeline stages must be non-empty")


def apply_spec(data: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Run one operator, drawing any unpinned parameters from `rng`."""
    return _OP_TABLE[spec.op](data, rng, spec.params)


def apply_pipeline(
    patch: Patch,
    pipeline: AugmentPipeline,
    sample_index: int,
    master_seed: int | None = None,
) -> Patch:
    """Apply the pipeline stages in order; the label is carried over verbatim.

    Randomness for stage `pos` comes from the stream keyed by
    (master_seed, sample_index, pos): reproducible, order-independent
    across samples.
    """
    seed = pipeline.master_seed if master_seed is None else master_seed
    data = patch.data
    for pos, stage in enumerate(pipeline.stages):
        rng = derive_rng(seed, sample_index, pos)
        spec = stage[int(rng.integers(len(stage)))] if len(stage) > 1 else stage[0]
        data = apply_spec(data, spec, rng)
    return patch.with_data(data)


def default_specs(ops, overrides: dict | None = None) -> tuple[AugmentSpec, ...]:
    overrides = overrides or {}
    return tuple(AugmentSpec(op=o, params=dict(overrides.get(o, {}))) for o in ops)


def arm_pipeline(arm: str, master_seed: int = 0) -> AugmentPipeline | None:
    """Pipeline for one ablation arm: none | spectral | spatial | spectral+spatial.

    The combined arm applies one spatial operator then one spectral one,
    each drawn uniformly from the enabled set per sample.
    """
    if arm in ("none", "baseline"):
        return None
    if arm == "spectral":
        stages = (default_specs(SPECTRAL_OPS),)
    elif arm == "spatial":
        stages = (default_specs(SPATIAL_OPS),)
    elif arm in ("spectral+spatial", "spatial+spectral"):
        stages = (default_specs(SPATIAL_OPS), default_specs(SPECTRAL_OPS))
    else:
        raise ParameterError(f"unknown arm {arm!r}")
    return AugmentPipeline(stages=stages, master_seed=master_seed)


def write_preview_csv(path, band_axis: np.ndarray, original: np.ndarray, transformed: np.ndarray) -> None:
    """Fig-2-style overlay data: band (or wavelength), original, transformed."""
    if not (len(band_axis) == len(original) == len(transformed)):
        raise ParameterError("preview columns must have equal length")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("band,original,transformed\n")
        for b, o, t in zip(band_axis, original, transformed):
            fh.write(f"{b:.9g},{o:.9g},{t:.9g}\n")
