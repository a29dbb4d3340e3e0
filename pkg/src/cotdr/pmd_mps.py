"""Per-core birefringence models, DGD oracles and a modulation-phase-shift emulator.

Sign convention: a delay ``tau`` multiplies a field by ``exp(+1j * omega * tau)``,
so the group-delay operator of a Jones matrix ``J(omega)`` is
``-1j * dJ/domega @ inv(J)``. Stokes vectors of a Jones vector ``(x, y)`` are
``(|x|^2 - |y|^2, 2 Re(conj(x) y), 2 Im(conj(x) y))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize

C_VACUUM = 299792458.0

# Wavelength validity guard for the birefringence model.
BAND_GUARD = (1.49e-6, 1.62e-6)
DEFAULT_BAND = (1495e-9, 1605e-9)
DEFAULT_DELTA_OMEGA = 2 * np.pi * 1e9
DEFAULT_MOD_FREQ = 2e9


class PhaseWrapError(ValueError):
    """The eigenphase split of the Jones matrix eigenanalysis is too close to pi."""


class AmbiguityError(ValueError):
    """The MPS delay spread exceeds half a modulation period."""


@dataclass(frozen=True)
class BirefringenceSpec:
    """Recipe for a random per-core birefringence model.

    ``target_pmd`` is the mean DGD in seconds. ``n_segments == 1`` gives
    uniform birefringence whose DGD equals ``target_pmd`` at every wavelength.
    """

    target_pmd: float
    n_segments: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.target_pmd < 0:
            raise ValueError("target_pmd must be non-negative")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")


@dataclass(frozen=True)
class BirefringentSegment:
    dgd_element: float
    axis_angle: float = 0.0
    phase_offset: float = 0.0

    def __post_init__(self):
        if self.dgd_element < 0:
            raise ValueError("dgd_element must be non-negative")


@dataclass(frozen=True)
class CorePolarizationModel:
    segments: tuple[BirefringentSegment, ...]
    seed: int | None = None

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise ValueError("a polarization model needs at least one segment")
        object.__setattr__(self, "segments", segs)

    def scaled(self, factor: float, omega_ref: float = 0.0) -> "CorePolarizationModel":
        """Multiply every segment DGD by ``factor``.

        The phase offsets are shifted so each segment's retardance at
        ``omega_ref`` is unchanged. Without this, rescaling a fiber whose
        ``omega * tau`` spans tens of radians scrambles every segment phase.
        """
        return CorePolarizationModel(
            tuple(
                BirefringentSegment(
                    s.dgd_element * factor,
                    s.axis_angle,
                    float(np.mod(s.phase_offset + 0.5 * omega_ref * s.dgd_element * (1.0 - factor), 2 * np.pi)),
                )
                for s in self.segments
            ),
            self.seed,
        )

    @property
    def rms_dgd(self) -> float:
        """sqrt(sum tau_i^2): the RMS DGD of the concatenation statistics."""
        return float(np.sqrt(sum(s.dgd_element**2 for s in self.segments)))


@dataclass(frozen=True)
class StokesVector:
    s1: float
    s2: float
    s3: float

    def as_array(self) -> np.ndarray:
        return np.array([self.s1, self.s2, self.s3], dtype=float)

    def normalized(self) -> "StokesVector":
        v = self.as_array()
        n = np.linalg.norm(v)
        if n == 0:
            raise ValueError("zero Stokes vector has no polarization state")
        return StokesVector(*(v / n))

    def jones(self) -> np.ndarray:
        s1, s2, s3 = self.normalized().as_array()
        # Half-angle form; dividing by the larger of 1 +/- s1 keeps it well conditioned at the poles.
        if s1 >= 0:
            x = np.sqrt((1 + s1) / 2)
            return np.array([x, (s2 + 1j * s3) / (2 * x)])
        y = np.sqrt((1 - s1) / 2)
        return np.array([(s2 - 1j * s3) / (2 * y), y])

    @classmethod
    def from_jones(cls, v) -> "StokesVector":
        x, y = np.asarray(v, dtype=complex) / np.linalg.norm(v)
        cross = np.conj(x) * y
        return cls(float(abs(x) ** 2 - abs(y) ** 2), float(2 * cross.real), float(2 * cross.imag))


DEFAULT_SOPS: tuple[StokesVector, ...] = (
    StokesVector(1.0, 0.0, 0.0),
    StokesVector(-1.0, 0.0, 0.0),
    StokesVector(0.0, 1.0, 0.0),
    StokesVector(0.0, 0.0, 1.0),
)


def wavelength_to_omega(wavelength):
    return 2 * np.pi * C_VACUUM / np.asarray(wavelength, dtype=float)


def _check_band(wavelength) -> None:
    w = np.atleast_1d(np.asarray(wavelength, dtype=float))
    if np.any(w < BAND_GUARD[0]) or np.any(w > BAND_GUARD[1]):
        raise ValueError(
            f"wavelength outside the model band [{BAND_GUARD[0]:g}, {BAND_GUARD[1]:g}] m"
        )


def _segment_arrays(model: CorePolarizationModel):
    tau = np.array([s.dgd_element for s in model.segments])
    theta = np.array([s.axis_angle for s in model.segments])
    offset = np.array([s.phase_offset for s in model.segments])
    return tau, theta, offset


def jones_at_omega(model: CorePolarizationModel, omega) -> np.ndarray:
    """Jones matrices for an array of angular frequencies, shape ``omega.shape + (2, 2)``.

    Segment k is ``Rot(theta_k) diag(e^{i phi}, e^{-i phi}) Rot(-theta_k)`` with
    ``phi = omega * tau_k / 2 + phase_offset_k``; light meets segment 0 first.
    """
    omega = np.asarray(omega, dtype=float)
    flat = omega.reshape(-1)
    tau, theta, offset = _segment_arrays(model)
    c, s = np.cos(theta), np.sin(theta)
    phi = flat[:, None] * tau[None, :] / 2.0 + offset[None, :]
    ep, em = np.exp(1j * phi), np.exp(-1j * phi)
    # Rot(t) diag(ep, em) Rot(-t), expanded.
    seg = np.empty(phi.shape + (2, 2), dtype=complex)
    seg[..., 0, 0] = c * c * ep + s * s * em
    seg[..., 0, 1] = c * s * (ep - em)
    seg[..., 1, 0] = c * s * (ep - em)
    seg[..., 1, 1] = s * s * ep + c * c * em
    J = np.broadcast_to(np.eye(2, dtype=complex), (flat.size, 2, 2)).copy()
    for k in range(tau.size):
        J = seg[:, k] @ J
    return J.reshape(omega.shape + (2, 2))


def jones_matrix(model: CorePolarizationModel, wavelength: float) -> np.ndarray:
    """2x2 unitary transfer matrix of the core at ``wavelength`` (metres)."""
    _check_band(wavelength)
    return jones_at_omega(model, wavelength_to_omega(wavelength))


def _jme(model, omega, delta_omega):
    """Centred JME: eigen-decomposition of ``inv(J(w-)) J(w+)`` around ``omega``."""
    J_lo = jones_at_omega(model, omega - delta_omega / 2)
    J_hi = jones_at_omega(model, omega + delta_omega / 2)
    M = np.linalg.solve(J_lo, J_hi)
    rho, vec = np.linalg.eig(M)
    return rho, vec


def _eigen_split(rho: np.ndarray) -> np.ndarray:
    return np.angle(rho[..., 0] / rho[..., 1])


def dgd_jme(model: CorePolarizationModel, wavelength, delta_omega: float = DEFAULT_DELTA_OMEGA):
    """DGD by Jones matrix eigenanalysis: ``|arg(rho1 / rho2)| / delta_omega``.

    The eigenvalues of ``J(w + dw) inv(J(w))`` and of ``inv(J(w)) J(w + dw)``
    coincide; the latter also yields the input principal states.
    """
    _check_band(wavelength)
    omega = wavelength_to_omega(wavelength)
    rho, _ = _jme(model, omega, delta_omega)
    split = _eigen_split(rho)
    if np.any(np.abs(split) > 0.9 * np.pi):
        raise PhaseWrapError("eigenphase split near pi: reduce delta_omega")
    return np.abs(split) / delta_omega


def dgd_derivative_oracle(model: CorePolarizationModel, wavelength, step: float = 2 * np.pi * 1e7):
    """DGD from the eigenvalue spread of the group-delay operator ``-i J' J^-1``.

    ``J'`` is a central finite difference; this route shares nothing with
    :func:`dgd_jme` beyond :func:`jones_at_omega`.
    """
    omega = np.atleast_1d(wavelength_to_omega(wavelength))
    J = jones_at_omega(model, omega)
    dJ = (jones_at_omega(model, omega + step) - jones_at_omega(model, omega - step)) / (2 * step)
    G = -1j * dJ @ np.linalg.inv(J)
    G = 0.5 * (G + np.conj(np.swapaxes(G, -1, -2)))
    ev = np.linalg.eigvalsh(G)
    out = ev[..., 1] - ev[..., 0]
    return out if np.ndim(wavelength) else float(out[0])


@dataclass(frozen=True)
class PrincipalStates:
    dgd: float
    mean_delay: float  # polarization-averaged group delay
    slow_psp: np.ndarray  # input Stokes vector of the slow principal state


def principal_states(model: CorePolarizationModel, wavelength: float, delta_omega: float = DEFAULT_DELTA_OMEGA) -> PrincipalStates:
    _check_band(wavelength)
    omega = float(wavelength_to_omega(wavelength))
    rho, vec = _jme(model, omega, delta_omega)
    phases = np.angle(rho)
    split = phases[0] - phases[1]
    split = (split + np.pi) % (2 * np.pi) - np.pi
    if abs(split) > 0.9 * np.pi:
        raise PhaseWrapError("eigenphase split near pi: reduce delta_omega")
    slow = 0 if split >= 0 else 1
    mean_phase = phases[1] + split / 2.0
    q = StokesVector.from_jones(vec[:, slow]).as_array()
    return PrincipalStates(abs(split) / delta_omega, mean_phase / delta_omega, q)


def mps_group_delay(
    model: CorePolarizationModel,
    input_sop: StokesVector,
    wavelength: float,
    mod_freq: float = DEFAULT_MOD_FREQ,
    base_delay: float = 0.0,
    delta_omega: float = DEFAULT_DELTA_OMEGA,
) -> float:
    """Group delay read from the RF phase of an intensity modulation.

    The true delay is ``base + tau_avg + DGD/2 * (s . q)``; the emulated
    instrument only sees its phase modulo 2 pi at ``mod_freq`` and resolves
    the cycle count against ``base_delay``.
    """
    if mod_freq <= 0:
        raise ValueError("mod_freq must be positive")
    psp = principal_states(model, wavelength, delta_omega)
    s = input_sop.normalized().as_array()
    offset = psp.mean_delay + 0.5 * psp.dgd * float(s @ psp.slow_psp)
    half_period = 0.5 / mod_freq
    if abs(offset) >= half_period:
        raise AmbiguityError(
            f"delay spread {offset:.3g} s exceeds half a modulation period ({half_period:.3g} s)"
        )
    true_delay = base_delay + offset
    phase = np.mod(2 * np.pi * mod_freq * true_delay, 2 * np.pi)
    cycles = np.round(mod_freq * base_delay - phase / (2 * np.pi))
    return float((phase + 2 * np.pi * cycles) / (2 * np.pi * mod_freq))


def dgd_from_sops(delays: np.ndarray, sops: Sequence[StokesVector]):
    """Both 4-SOP estimators for one wavelength: (max - min, linear-fit DGD)."""
    delays = np.asarray(delays, dtype=float)
    S = np.array([s.normalized().as_array() for s in sops])
    A = np.column_stack([np.ones(len(sops)), S])
    coef, *_ = np.linalg.lstsq(A, delays, rcond=None)
    return float(delays.max() - delays.min()), float(2.0 * np.linalg.norm(coef[1:]))


@dataclass
class PmdReport:
    wavelengths: np.ndarray
    sop_delays: np.ndarray  # (n_points, n_sops), relative to base delay
    dgd_mps: np.ndarray  # max - min over SOPs
    dgd_fit: np.ndarray  # linear fit tau(s) = a + b.s, DGD = 2|b|
    dgd_jme: np.ndarray
    sops: tuple[StokesVector, ...] = field(default=DEFAULT_SOPS)

    @property
    def pmd(self) -> float:
        """Mean of the max-min 4-SOP DGD curve."""
        return float(self.dgd_mps.mean())

    @property
    def pmd_fit(self) -> float:
        return float(self.dgd_fit.mean())

    @property
    def pmd_jme(self) -> float:
        return float(self.dgd_jme.mean())

    def summary(self) -> dict:
        return {
            "pmd_mps_ps": self.pmd * 1e12,
            "pmd_fit_ps": self.pmd_fit * 1e12,
            "pmd_jme_ps": self.pmd_jme * 1e12,
            "n_points": int(self.wavelengths.size),
            "band_nm": [float(self.wavelengths[0] * 1e9), float(self.wavelengths[-1] * 1e9)],
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["wavelength_nm", "dgd_mps_ps", "dgd_fit_ps", "dgd_jme_ps"])
            for row in zip(self.wavelengths, self.dgd_mps, self.dgd_fit, self.dgd_jme):
                w.writerow([f"{row[0] * 1e9:.6f}"] + [f"{v * 1e12:.9f}" for v in row[1:]])


def pmd_report(
    model: CorePolarizationModel,
    band: tuple[float, float] = DEFAULT_BAND,
    n_points: int = 64,
    sops: Sequence[StokesVector] = DEFAULT_SOPS,
    *,
    mod_freq: float = DEFAULT_MOD_FREQ,
    base_delay: float = 0.0,
    delta_omega: float = DEFAULT_DELTA_OMEGA,
) -> PmdReport:
    """Wavelength sweep of the emulated MPS measurement; PMD is the mean DGD."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    if len(sops) < 4:
        raise ValueError("at least four input SOPs are needed")
    wavelengths = np.linspace(band[0], band[1], n_points)
    _check_band(wavelengths)
    taus = np.empty((n_points, len(sops)))
    mps = np.empty(n_points)
    fit = np.empty(n_points)
    for i, wl in enumerate(wavelengths):
        for j, sop in enumerate(sops):
            taus[i, j] = (
                mps_group_delay(model, sop, wl, mod_freq, base_delay, delta_omega) - base_delay
            )
        mps[i], fit[i] = dgd_from_sops(taus[i], sops)
    jme = dgd_jme(model, wavelengths, delta_omega)
    return PmdReport(wavelengths, taus, mps, fit, np.asarray(jme), tuple(sops))


def mean_dgd(model: CorePolarizationModel, band=DEFAULT_BAND, n_points: int = 257, delta_omega=DEFAULT_DELTA_OMEGA) -> float:
    wavelengths = np.linspace(band[0], band[1], n_points)
    return float(np.mean(dgd_jme(model, wavelengths, delta_omega)))


def random_core_model(spec: BirefringenceSpec, band=DEFAULT_BAND, calibrate: bool = True) -> CorePolarizationModel:
    """Concatenation of equal random-axis segments with mean DGD ``spec.target_pmd``.

    Segment DGDs follow the Maxwellian relation mean = sqrt(8 / (3 pi)) * rms
    with rms = sqrt(sum tau_i^2). With ``calibrate`` the segment DGDs are then
    rescaled until the mean DGD over ``band`` equals the target, since a single
    realization scatters around the ensemble mean.
    """
    if spec.n_segments == 1 or spec.target_pmd == 0:
        return CorePolarizationModel(
            tuple(BirefringentSegment(spec.target_pmd / spec.n_segments) for _ in range(spec.n_segments)),
            spec.seed,
        )
    rng = np.random.default_rng(spec.seed)
    rms = spec.target_pmd * np.sqrt(3 * np.pi / 8)
    tau = rms / np.sqrt(spec.n_segments)
    model = CorePolarizationModel(
        tuple(
            BirefringentSegment(tau, float(a), float(p))
            for a, p in zip(
                rng.uniform(0, np.pi, spec.n_segments), rng.uniform(0, 2 * np.pi, spec.n_segments)
            )
        ),
        spec.seed,
    )
    if calibrate:
        # Rescale about the band centre so the pattern stretches instead of
        # being redrawn; the mean DGD is then a continuous function of the
        # scale factor and a bracketing root finder pins it to the target.
        omega_c = float(wavelength_to_omega(0.5 * (band[0] + band[1])))
        base = model

        def excess(k):
            return mean_dgd(base.scaled(k, omega_c), band) / spec.target_pmd - 1.0

        lo, hi = 0.5, 2.0
        while excess(lo) > 0:
            lo *= 0.5
        while excess(hi) < 0:
            hi *= 2.0
        k = optimize.brentq(excess, lo, hi, xtol=1e-13, rtol=1e-12)
        model = base.scaled(k, omega_c)
    return model
