"""Synthetic hyperspectral scene generation.

Pipeline: Dirichlet abundances -> polynomial post-nonlinear mixing
(x = Ma + Ma .* Ma) -> spatial Gaussian modulation -> SNR-calibrated
additive Gaussian noise. Everything is keyed off a single seed; fixed
stream tags keep the stages independent of each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ParameterError, ParseError, ShapeError
from .hsi import HyperCube
from .seeding import derive_rng

# stream tags under the scene seed
_ENDMEMBER_STREAM = 1
_ABUNDANCE_STREAM = 2
_NOISE_STREAM = 3

DEFAULT_WAVELENGTH_RANGE = (0.4, 2.5)  # micrometers


@dataclass(frozen=True)
class EndmemberMatrix:
    """Columns are endmember reflectance spectra: (k, p), entries in [0, 1]."""

    signatures: np.ndarray
    names: tuple[str, ...] = ()
    wavelengths: np.ndarray | None = None

    def __post_init__(self):
        sig = np.asarray(self.signatures, dtype=np.float64)
        object.__setattr__(self, "signatures", sig)
        if sig.ndim != 2 or sig.shape[0] < 1 or sig.shape[1] < 1:
            raise ShapeError(f"endmember matrix must be (k, p), got {sig.shape}")
        if sig.min() < 0.0 or sig.max() > 1.0:
            raise ShapeError("endmember reflectances must lie in [0, 1]")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"em{i}" for i in range(sig.shape[1])))
        if len(self.names) != sig.shape[1]:
            raise ShapeError("one name per endmember required")
        for i in range(sig.shape[1]):
            for j in range(i + 1, sig.shape[1]):
                if np.array_equal(sig[:, i], sig[:, j]):
                    raise ShapeError(f"endmember columns {i} and {j} are identical")

    @property
    def k(self) -> int:
        return self.signatures.shape[0]

    @property
    def p(self) -> int:
        return self.signatures.shape[1]


@dataclass(frozen=True)
class AbundanceField:
    """Per-pixel abundance vectors stored component-major: (p, H, W)."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 3:
            raise ShapeError(f"abundance field must be (p, H, W), got {arr.shape}")
        if arr.min() < 0.0:
            raise ShapeError("abundances must be non-negative")
        sums = arr.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ShapeError("abundance vectors must sum to 1 within 1e-9")

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    """Scene recipe; snr_db=None means no noise."""

    height: int = 64
    width: int = 64
    k: int = 64
    p: int = 3
    dirichlet_concentration: tuple[float, ...] | None = None
    snr_db: float | None = 20.0
    modulation_sigma: float = 16.0  # pixels
    modulation_floor: float = 0.5
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if min(self.height, self.width, self.k, self.p) < 1:
            raise ParameterError("all scene dimensions must be positive")
        if self.dirichlet_concentration is not None:
            conc = tuple(float(c) for c in self.dirichlet_concentration)
            object.__setattr__(self, "dirichlet_concentration", conc)
            if len(conc) != self.p:
                raise ParameterError("concentration length must equal p")
            if min(conc) <= 0:
                raise ParameterError("Dirichlet concentrations must be positive")
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            object.__setattr__(self, "snr_db", None)
        if self.modulation_sigma <= 0:
            raise ParameterError("modulation sigma must be positive")
        if not (0.0 < self.modulation_floor <= 1.0):
            raise ParameterError("modulation floor must lie in (0, 1]")

    @property
    def concentration(self) -> tuple[float, ...]:
        return self.dirichlet_concentration or (1.0,) * self.p


@dataclass(frozen=True)
class SyntheticScene:
    """Generated scene: noisy cube, pre-noise clean cube, ground-truth abundances."""

    cube: HyperCube
    clean: HyperCube
    abundances: AbundanceField
    endmembers: EndmemberMatrix
    config: SynthConfig


def synth_endmembers(p: int, k: int, seed: int = 0) -> EndmemberMatrix:
    """Random smooth endmembers: 2-5 Gaussian bumps per column, rescaled into [0.05, 0.95]."""
    if p < 1:
        raise ParameterError("p must be at least 1")
    if k < 2:
        raise ParameterError("k must be at least 2")
    rng = derive_rng(seed, _ENDMEMBER_STREAM)
    bands = np.arange(k, dtype=np.float64)
    sig = np.empty((k, p))
    for j in range(p):
        while True:
            n_bumps = int(rng.integers(2, 6))
            col = np.zeros(k)
            for _ in range(n_bumps):
                center = rng.uniform(0, k - 1)
                width = rng.uniform(k / 16.0, k / 4.0)
                amp = rng.uniform(0.3, 1.0)
                col += amp * np.exp(-0.5 * ((bands - center) / width) ** 2)
            span = col.max() - col.min()
            if span > 1e-9:
                break
        sig[:, j] = 0.05 + 0.9 * (col - col.min()) / span
    wavelengths = np.linspace(*DEFAULT_WAVELENGTH_RANGE, k)
    return EndmemberMatrix(signatures=sig, wavelengths=wavelengths)


def save_endmembers(em: EndmemberMatrix, path) -> None:
    """Write the documented text format: header 'k p [+wl]', then k rows."""
    with_wl = em.wavelengths is not None
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{em.k} {em.p}" + (" +wl" if with_wl else "") + "\n")
        for i in range(em.k):
            row = " ".join(f"{v:.17g}" for v in em.signatures[i])
            if with_wl:
                row += f" {em.wavelengths[i]:.17g}"
            fh.write(row + "\n")


def load_endmembers(path) -> EndmemberMatrix:
    """Parse the endmember text format; errors name the offending line (1-based)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty endmember file")
    head = lines[0].split()
    with_wl = False
    if len(head) == 3 and head[2] == "+wl":
        with_wl = True
    elif len(head) != 2:
        raise ParseError(f"{path}:1: header must be 'k p' or 'k p +wl'")
    try:
        k, p = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"{path}:1: header dimensions must be integers") from None
    if k < 1 or p < 1:
        raise ParseError(f"{path}:1: dimensions must be positive")
    if len(lines) - 1 < k:
        raise ParseError(f"{path}: expected {k} data rows, found {len(lines) - 1}")
    expected = p + (1 if with_wl else 0)
    sig = np.empty((k, p))
    wl = np.empty(k) if with_wl else None
    for i in range(k):
        lineno = i + 2
        parts = lines[i + 1].split()
        if len(parts) != expected:
            raise ParseError(f"{path}:{lineno}: expected {expected} columns, found {len(parts)}")
        try:
            vals = [float(v) for v in parts]
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-numeric value") from None
        row = vals[:p]
        if min(row) < 0.0 or max(row) > 1.0:
            raise ParseError(f"{path}:{lineno}: reflectance outside [0, 1]")
        sig[i] = row
        if with_wl:
            wl[i] = vals[p]
    return EndmemberMatrix(signatures=sig, wavelengths=wl)


def sample_abundances(
    height: int, width: int, concentration, seed: int = 0
) -> AbundanceField:
    """I.i.d. per-pixel Dirichlet draws, renormalized onto the simplex."""
    conc = np.asarray(concentration, dtype=np.float64)
    if conc.ndim != 1 or conc.size < 1:
        raise ParameterError("concentration must be a non-empty vector")
    if conc.min() <= 0:
        raise ParameterError("Dirichlet concentrations must be positive")
    rng = derive_rng(seed, _ABUNDANCE_STREAM)
    draws = rng.dirichlet(conc, size=height * width)  # (H*W, p)
    sums = draws.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise NumericalError("degenerate Dirichlet draw (zero-sum vector)")
    draws = draws / sums
    values = draws.T.reshape(conc.size, height, width)
    return AbundanceField(values=values)


def pnmm_mix(em: EndmemberMatrix, abundance: np.ndarray) -> np.ndarray:
    """Polynomial post-nonlinear mixture of one pixel: Ma + (Ma) .* (Ma)."""
    a = np.asarray(abundance, dtype=np.float64)
    if a.ndim != 1 or a.size != em.p:
        raise ShapeError(f"abundance must be a length-{em.p} vector, got shape {a.shape}")
    linear = em.signatures @ a
    return linear + linear * linear


def pnmm_mix_field(em: EndmemberMatrix, field: AbundanceField) -> np.ndarray:
    """Vectorized pnmm_mix over an abundance field; returns (k, H, W)."""
    if field.p != em.p:
        raise ShapeError(f"field has p={field.p}, endmembers have p={em.p}")
    p, h, w = field.values.shape
    linear = (em.signatures @ field.values.reshape(p, h * w)).reshape(em.k, h, w)
    return linear + linear * linear


def add_noise_snr(cube: HyperCube, snr_db: float | None, seed: int = 0) -> HyperCube:
    """Add zero-mean Gaussian noise calibrated to the requested global SNR.

    sigma^2 = mean(x^2) / 10^(snr_db/10). snr_db=None (or +inf) is the
    no-noise sentinel and returns the input unchanged.
    """
    if snr_db is None or np.isinf(snr_db):
        return cube
    signal_power = float(np.mean(cube.data**2))
    if signal_power == 0.0:
        raise NumericalError("cannot calibrate noise for an all-zero cube")
    sigma = np.sqrt(signal_power / 10.0 ** (snr_db / 10.0))
    rng = derive_rng(seed, _NOISE_STREAM)
    noisy = cube.data + rng.normal(0.0, sigma, size=cube.data.shape)
    return HyperCube(data=noisy, wavelengths=cube.wavelengths, name=cube.name)


def modulation_pattern(
    height: int, width: int, sigma: float, floor: float
) -> np.ndarray:
    """2D Gaussian gain centered at the image midpoint, in [floor, 1]."""
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    if not (0.0 < floor <= 1.0):
        raise ParameterError("floor must lie in (0, 1]")
    uc, vc = (height - 1) / 2.0, (width - 1) / 2.0
    u = np.arange(height, dtype=np.float64)[:, None]
    v = np.arange(width, dtype=np.float64)[None, :]
    d2 = (u - uc) ** 2 + (v - vc) ** 2
    return floor + (1.0 - floor) * np.exp(-d2 / (2.0 * sigma**2))


def gaussian_modulation(cube: HyperCube, sigma: float, floor: float) -> HyperCube:
    """Multiply every band image by the centered Gaussian pattern."""
    gain = modulation_pattern(cube.height, cube.width, sigma, floor)
    return HyperCube(
        data=cube.data * gain[None, :, :], wavelengths=cube.wavelengths, name=cube.name
    )


def generate_scene(config: SynthConfig, endmembers: EndmemberMatrix | None = None) -> SyntheticScene:
    """Full protocol: abundances -> PNMM mix -> modulation -> noise."""
    if endmembers is None:
        endmembers = synth_endmembers(config.p, config.k, seed=config.seed)
    if endmembers.k != config.k or endmembers.p != config.p:
        raise ShapeError(
            f"endmembers are {endmembers.k}x{endmembers.p}, config wants {config.k}x{config.p}"
        )
    abundances = sample_abundances(
        config.height, config.width, config.concentration, seed=config.seed
    )
    mixed = pnmm_mix_field(endmembers, abundances)
    wavelengths = endmembers.wavelengths
    if wavelengths is None:
        wavelengths = np.linspace(*DEFAULT_WAVELENGTH_RANGE, config.k)
    clean = gaussian_modulation(
        HyperCube(data=mixed, wavelengths=wavelengths, name=config.name),
        config.modulation_sigma,
        config.modulation_floor,
    )
    noisy = add_noise_snr(clean, config.snr_db, seed=config.seed)
    return SyntheticScene(
        cube=noisy, clean=clean, abundances=abundances, endmembers=endmembers, config=config
    )


def realized_snr_db(noisy: HyperCube, clean: HyperCube) -> float:
    """Empirical 10*log10(P_signal / P_noise) against the stored clean cube."""
    noise = noisy.data - clean.data
    p_noise = float(np.mean(noise**2))
    if p_noise == 0.0:
        return float("inf")
    return 10.0 * np.log10(float(np.mean(clean.data**2)) / p_noise)
