"""Curve fitting and scalar metrics for spin-defect experiments.

The fitters wrap damped least squares (scipy's trust-region reflective solver
with numerically differenced Jacobians) behind the three models the rest of
the package needs:

* damped_sin   a * sin(pi*tau/T_pi + b) * exp(-tau/T_dec) + d  (Rabi traces)
* damped_cos   a * cos(2*pi*f*tau + phi) * exp(-tau/T_dec) + c (Ramsey traces)
* exp_decay    a * exp(-tau/T) + c                             (echo, T1)

Frequency starts from the discrete Fourier peak and the decay time from a
log-envelope regression, so no caller-supplied initial guess is needed.

The scalar metrics (polarization, readout efficiency, gate fidelity, dc
magnetometry sensitivity) are direct formula evaluations with domain checks,
and broaden_spectrum turns stick spectra into smooth curves.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import FitError, MetricDomainError

MODEL_DAMPED_SIN = "damped_sin"
MODEL_DAMPED_COS = "damped_cos"
MODEL_EXP_DECAY = "exp_decay"

# First-order optimality must shrink by this factor for converged=True.
GRADIENT_REDUCTION = 1e-8
MAX_ITERATIONS = 200

_PARAM_NAMES = {
    MODEL_DAMPED_SIN: ("amplitude", "t_pi_s", "phase_rad", "t_decay_s", "offset"),
    MODEL_DAMPED_COS: ("amplitude", "frequency_hz", "phase_rad", "t_decay_s", "offset"),
    MODEL_EXP_DECAY: ("amplitude", "t_decay_s", "offset"),
}


@dataclass(frozen=True)
class Trace:
    """One measured or simulated curve: y(x) with optional 1-sigma errors."""

    x: np.ndarray
    y: np.ndarray
    y_err: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 1 or x.shape != y.shape:
            raise FitError(
                f"trace arrays must be equal-length 1-d, got {x.shape} and {y.shape}"
            )
        if x.size >= 2 and np.any(np.diff(x) <= 0.0):
            raise FitError("trace x values must be strictly increasing")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        if self.y_err is not None:
            err = np.asarray(self.y_err, dtype=float)
            if err.shape != x.shape:
                raise FitError("y_err length must match x")
            if np.any(err <= 0.0):
                raise FitError("y_err values must be positive")
            err.setflags(write=False)
            object.__setattr__(self, "y_err", err)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def span(self) -> float:
        return float(self.x[-1] - self.x[0])


@dataclass(frozen=True)
class FitResult:
    """Fitted parameters with uncertainties and convergence diagnostics.

    converged=True means the solver finished and the first-order optimality
    norm |J^T r| fell below 1e-8 of its value at the initial guess (or below
    numerical zero for that Jacobian/residual scale).
    """

    model_name: str
    params: dict
    covariance: np.ndarray
    residual_norm: float
    converged: bool
    r_squared: float
    warnings: tuple = ()

    def param_sigmas(self) -> dict:
        diag = np.clip(np.diag(self.covariance), 0.0, None)
        return dict(zip(self.params.keys(), np.sqrt(diag)))

    def summary(self) -> str:
        lines = [f"model: {self.model_name}"]
        sigmas = self.param_sigmas()
        for name, value in self.params.items():
            lines.append(f"  {name} = {value:.8g} +- {sigmas[name]:.3g}")
        lines.append(f"  residual_norm = {self.residual_norm:.6g}")
        lines.append(f"  r_squared = {self.r_squared:.8g}")
        lines.append(f"  converged = {self.converged}")
        for note in self.warnings:
            lines.append(f"  warning: {note}")
        return "\n".join(lines)


def evaluate_model(model_name: str, params: dict, x) -> np.ndarray:
    """Evaluate a fit model at the given x for the given parameter dict."""
    x = np.asarray(x, dtype=float)
    p = params
    if model_name == MODEL_DAMPED_SIN:
        return (
            p["amplitude"]
            * np.sin(np.pi * x / p["t_pi_s"] + p["phase_rad"])
            * np.exp(-x / p["t_decay_s"])
            + p["offset"]
        )
    if model_name == MODEL_DAMPED_COS:
        return (
            p["amplitude"]
            * np.cos(2.0 * np.pi * p["frequency_hz"] * x + p["phase_rad"])
            * np.exp(-x / p["t_decay_s"])
            + p["offset"]
        )
    if model_name == MODEL_EXP_DECAY:
        return p["amplitude"] * np.exp(-x / p["t_decay_s"]) + p["offset"]
    raise FitError(f"unknown fit model {model_name!r}")


def _fourier_frequency_guess(x: np.ndarray, y: np.ndarray) -> float:
    """Dominant oscillation frequency of y(x), assuming a near-uniform grid.

    Uses a 16x zero-padded transform plus parabolic peak interpolation: the
    raw bin width 1/span can start a many-period fit a few percent off, which
    is enough to land damped least squares in a neighbouring local minimum.
    Bins below 0.75 periods per span are excluded so the slow envelope hump
    cannot outvote the carrier.
    """
    dx = float(np.mean(np.diff(x)))
    span = float(x[-1] - x[0])
    padded = 16 * y.size
    spectrum = np.abs(np.fft.rfft(y - np.mean(y), padded))
    freqs = np.fft.rfftfreq(padded, d=dx)
    lowest = int(np.searchsorted(freqs, 0.75 / span))
    if lowest >= spectrum.size - 1:
        return 1.0 / span
    peak = lowest + int(np.argmax(spectrum[lowest:]))
    shift = 0.0
    if 0 < peak < spectrum.size - 1:
        left, mid, right = spectrum[peak - 1 : peak + 2]
        curvature = left - 2.0 * mid + right
        if curvature != 0.0:
            shift = float(np.clip(0.5 * (left - right) / curvature, -0.5, 0.5))
    guess = float((peak + shift) * freqs[1])
    return guess if guess > 0.0 else 1.0 / span


def _log_envelope_decay_guess(x: np.ndarray, y: np.ndarray, offset: float) -> float:
    """Decay time from a straight-line fit to log of binned envelope maxima."""
    span = float(x[-1] - x[0])
    centered = np.abs(y - offset)
    nbins = min(8, max(2, x.size // 4))
    edges = np.linspace(x[0], x[-1], nbins + 1)
    centers, peaks = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (x >= lo) & (x <= hi)
        if np.any(mask) and np.max(centered[mask]) > 0.0:
            centers.append(0.5 * (lo + hi))
            peaks.append(np.max(centered[mask]))
    if len(peaks) < 2:
        return span
    slope = np.polyfit(centers, np.log(peaks), 1)[0]
    if slope >= -1e-300:
        return 10.0 * span  # envelope essentially flat
    return float(np.clip(-1.0 / slope, 1e-3 * span, 1e9 * span))


def _whiten(residuals: np.ndarray, y_err) -> np.ndarray:
    return residuals / y_err if y_err is not None else residuals


def _gradient_norm(residual_fn, p, lower, upper) -> float:
    """|J^T r| by central differences with bound-aware step sizes."""
    r = residual_fn(p)
    grad = np.zeros(len(p))
    for i in range(len(p)):
        h = max(1e-6 * abs(p[i]), 1e-9 * (upper[i] - lower[i]), 1e-12)
        up, down = np.array(p, dtype=float), np.array(p, dtype=float)
        up[i] = min(p[i] + h, upper[i])
        down[i] = max(p[i] - h, lower[i])
        if up[i] == down[i]:
            continue
        grad[i] = ((residual_fn(up) - residual_fn(down)) / (up[i] - down[i])) @ r
    return float(np.linalg.norm(grad))


def _finish_fit(model_name, residual_fn, p0, bounds, names, trace, warnings):
    """Run the damped least-squares solve and package diagnostics."""
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    grad0_norm = _gradient_norm(residual_fn, p0, lower, upper)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        result = scipy.optimize.least_squares(
            residual_fn,
            p0,
            bounds=bounds,
            method="trf",
            jac="2-point",
            ftol=1e-12,
            xtol=1e-12,
            gtol=1e-12,
            max_nfev=MAX_ITERATIONS * (len(p0) + 1),
        )
    jac = result.jac
    res = result.fun
    grad_final = float(np.linalg.norm(jac.T @ res))
    # Converged means the first-order optimality fell to 1e-8 of its value at
    # the initial guess, or to numerical zero for this Jacobian and residual
    # scale; the solver status alone does not decide.
    numeric_zero = 1e-10 * (np.linalg.norm(jac) * np.linalg.norm(res) + 1e-300)
    converged = bool(
        np.all(np.isfinite(result.x))
        and grad_final <= max(GRADIENT_REDUCTION * grad0_norm, numeric_zero)
    )

    dof = max(1, trace.n - len(p0))
    normal = jac.T @ jac
    sigma_sq = float(res @ res) / dof
    covariance = sigma_sq * np.linalg.pinv(normal)

    params = dict(zip(names, [float(v) for v in result.x]))
    spread = float(np.sum((trace.y - np.mean(trace.y)) ** 2))
    plain = trace.y - evaluate_model(model_name, params, trace.x)
    r_squared = 1.0 - float(plain @ plain) / spread if spread > 0.0 else 1.0
    return FitResult(
        model_name=model_name,
        params=params,
        covariance=covariance,
        residual_norm=float(np.linalg.norm(res)),
        converged=converged,
        r_squared=r_squared,
        warnings=tuple(warnings),
    )


def fit_damped_sinusoid(trace: Trace, model: str = "sin") -> FitResult:
    """Fit a decaying oscillation.

    model="sin" uses a*sin(pi*tau/T_pi + b)*exp(-tau/T_dec) + d so the
    half-period T_pi is a direct fit parameter; model="cos" uses
    a*cos(2*pi*f*tau + phi)*exp(-tau/T_dec) + c with the frequency in Hz.
    Initial guesses come from the Fourier peak and the log envelope; data
    spanning less than one oscillation period is fitted anyway but flagged
    under-determined.
    """
    if model not in ("sin", "cos"):
        raise FitError(f"model must be 'sin' or 'cos', got {model!r}")
    if trace.n < 8:
        raise FitError(f"damped sinusoid fit needs >= 8 samples, got {trace.n}")

    x, y = trace.x, trace.y
    span = trace.span
    offset0 = float(np.mean(y))
    amp0 = 0.5 * float(np.max(y) - np.min(y))
    if amp0 == 0.0:
        amp0 = max(1e-30, abs(offset0))
    freq0 = _fourier_frequency_guess(x, y)
    tdec0 = _log_envelope_decay_guess(x, y, offset0)

    yspread = max(np.max(y) - np.min(y), 1e-30)
    model_name = MODEL_DAMPED_SIN if model == "sin" else MODEL_DAMPED_COS
    names = _PARAM_NAMES[model_name]

    def pack(phase):
        if model == "sin":
            return np.array([amp0, 0.5 / freq0, phase, tdec0, offset0])
        return np.array([amp0, freq0, phase, tdec0, offset0])

    def residual(p):
        params = dict(zip(names, p))
        return _whiten(evaluate_model(model_name, params, x) - y, trace.y_err)

    # Phase is the one guess the Fourier peak does not supply; try a coarse
    # ring of candidates and start from the best.
    candidates = [pack(ph) for ph in np.linspace(0.0, 2.0 * np.pi, 8, endpoint=False)]
    p0 = min(candidates, key=lambda p: float(np.sum(residual(p) ** 2)))

    if model == "sin":
        lower = [-4.0 * yspread, 1e-6 * span, -2.0 * np.pi, 1e-3 * span, np.min(y) - yspread]
        upper = [4.0 * yspread, 1e3 * span, 4.0 * np.pi, 1e12 * span, np.max(y) + yspread]
    else:
        lower = [-4.0 * yspread, 1e-3 / span, -2.0 * np.pi, 1e-3 * span, np.min(y) - yspread]
        upper = [4.0 * yspread, 1e6 / span, 4.0 * np.pi, 1e12 * span, np.max(y) + yspread]
    p0 = np.clip(p0, lower, upper)

    result = _finish_fit(model_name, residual, p0, (lower, upper), names, trace, [])
    period = (
        2.0 * result.params["t_pi_s"]
        if model == "sin"
        else 1.0 / result.params["frequency_hz"]
    )
    if span < period:
        result = dataclasses.replace(
            result,
            warnings=result.warnings
            + ("under-determined: data span less than one oscillation period",),
        )
    return result


def fit_exp_decay(trace: Trace) -> FitResult:
    """Fit a*exp(-tau/T) + c; the workhorse for echo and T1 curves."""
    if trace.n < 5:
        raise FitError(f"exponential fit needs >= 5 samples, got {trace.n}")
    x, y = trace.x, trace.y
    span = trace.span
    yspread = float(np.max(y) - np.min(y))
    names = _PARAM_NAMES[MODEL_EXP_DECAY]

    if yspread < 1e-10 * max(1.0, float(np.max(np.abs(y)))):
        # Constant data carry no decay information; report the trivial fit.
        params = {"amplitude": 0.0, "t_decay_s": span, "offset": float(np.mean(y))}
        resid = y - np.mean(y)
        return FitResult(
            model_name=MODEL_EXP_DECAY,
            params=params,
            covariance=np.zeros((3, 3)),
            residual_norm=float(np.linalg.norm(resid)),
            converged=True,
            r_squared=1.0,
            warnings=("degenerate-decay-time: constant trace",),
        )

    tail = max(1, trace.n // 10)
    offset0 = float(np.mean(y[-tail:]))
    amp0 = float(y[0] - offset0)
    if amp0 == 0.0:
        amp0 = yspread
    positive = y - offset0 if amp0 > 0 else offset0 - y
    mask = positive > 1e-3 * abs(amp0)
    if np.count_nonzero(mask) >= 2:
        slope = np.polyfit(x[mask], np.log(positive[mask]), 1)[0]
        tdec0 = -1.0 / slope if slope < 0 else span
    else:
        tdec0 = span / 3.0
    tdec0 = float(np.clip(tdec0, 1e-3 * span, 1e9 * span))

    def residual(p):
        params = dict(zip(names, p))
        return _whiten(evaluate_model(MODEL_EXP_DECAY, params, x) - y, trace.y_err)

    lower = [-4.0 * yspread, 1e-3 * span, np.min(y) - yspread]
    upper = [4.0 * yspread, 1e12 * span, np.max(y) + yspread]
    p0 = np.clip([amp0, tdec0, offset0], lower, upper)
    result = _finish_fit(MODEL_EXP_DECAY, residual, p0, (lower, upper), names, trace, [])
    if abs(result.params["amplitude"]) < 1e-8 * max(1.0, float(np.max(np.abs(y)))):
        result = dataclasses.replace(
            result,
            warnings=result.warnings
            + ("degenerate-decay-time: amplitude consistent with zero",),
        )
    return result


def polarization(rho_minus: float, rho_plus: float) -> float:
    """(p_plus - p_minus) / (p_plus + p_minus) for two level amplitudes."""
    if rho_minus < 0.0 or rho_plus < 0.0:
        raise MetricDomainError("polarization needs non-negative amplitudes")
    total = rho_minus + rho_plus
    if total == 0.0:
        raise MetricDomainError("polarization is undefined for two zero amplitudes")
    return (rho_plus - rho_minus) / total


def readout_efficiency(alpha0: float, alpha1: float) -> float:
    """Single-shot readout efficiency from mean photon numbers.

    eta = (1 + 2(a0 + a1)/(a0 - a1)^2)^(-1/2); returns 0 at a0 = a1 so sweeps
    over indistinguishable settings stay total rather than erroring.
    """
    if alpha0 < 0.0 or alpha1 < 0.0:
        raise MetricDomainError("mean photon numbers must be >= 0")
    if alpha0 == alpha1:
        return 0.0
    return (1.0 + 2.0 * (alpha0 + alpha1) / (alpha0 - alpha1) ** 2) ** -0.5


def gate_fidelity(t_pi_s: float, t_rabi_s: float) -> float:
    """pi-gate fidelity 0.5*(1 + exp(-1/Q)) with quality factor Q = T_Rabi/T_pi."""
    if t_pi_s <= 0.0 or t_rabi_s <= 0.0:
        raise MetricDomainError("gate fidelity needs positive pi and Rabi times")
    quality = t_rabi_s / t_pi_s
    return 0.5 * (1.0 + math.exp(-1.0 / quality))


def dc_sensitivity(
    linewidth_hz: float,
    contrast: float,
    count_rate_per_s: float,
    gamma_e_hz_per_t: float = 2.8025e10,
) -> float:
    """CW magnetometry shot-noise sensitivity in T/sqrt(Hz).

    (8*pi / (3*sqrt(3))) * (1/gamma_e) * linewidth / (contrast * sqrt(rate)),
    evaluated verbatim.
    """
    if min(linewidth_hz, contrast, count_rate_per_s, gamma_e_hz_per_t) <= 0.0:
        raise MetricDomainError("sensitivity inputs must all be positive")
    prefactor = 8.0 * math.pi / (3.0 * math.sqrt(3.0))
    return (
        prefactor
        / gamma_e_hz_per_t
        * linewidth_hz
        / (contrast * math.sqrt(count_rate_per_s))
    )


@dataclass(frozen=True)
class SpectrumResult:
    """A sampled spectrum: values on a uniform frequency grid.

    ``values`` holds whatever quantity the producer sampled (a broadened
    line shape, an ODMR contrast, ...); ``metadata`` carries producer-side
    context such as baseline rates or sweep settings.
    """

    frequencies_hz: np.ndarray
    values: np.ndarray
    metadata: dict = dataclasses.field(default_factory=dict, compare=False)

    def __post_init__(self):
        f = np.asarray(self.frequencies_hz, dtype=float)
        v = np.asarray(self.values, dtype=float)
        f.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "frequencies_hz", f)
        object.__setattr__(self, "values", v)

    @property
    def contrast(self) -> np.ndarray:
        """Alias for ``values`` when the spectrum is a contrast trace."""
        return self.values

    def integrated_area(self) -> float:
        if self.frequencies_hz.size < 2:
            return 0.0
        return float(np.trapezoid(self.values, self.frequencies_hz))


def _stick_pairs(sticks):
    pairs = []
    for stick in sticks:
        if hasattr(stick, "frequency_hz"):
            pairs.append((float(stick.frequency_hz), float(stick.intensity)))
        else:
            freq, inten = stick
            pairs.append((float(freq), float(inten)))
    return pairs


def broaden_spectrum(
    sticks, fwhm_hz: float, shape: str = "gaussian", grid_hz=None
) -> SpectrumResult:
    """Convolve a stick spectrum with a unit-area lineshape.

    Each stick contributes intensity * (normalized line centred on it). The
    default grid spans the sticks by a margin wide enough to contain at least
    99.95% of every line's area (3 fwhm for a Gaussian; the heavy Lorentzian
    tails need ~640 fwhm), so the integrated area matches the summed stick
    intensity to 0.1%.
    """
    if fwhm_hz <= 0.0:
        raise MetricDomainError("fwhm must be positive")
    if shape not in ("gaussian", "lorentzian"):
        raise MetricDomainError(f"unknown lineshape {shape!r}")
    pairs = _stick_pairs(sticks)
    if not pairs:
        empty = np.array([])
        return SpectrumResult(empty, empty.copy())

    freqs = np.array([p[0] for p in pairs])
    if grid_hz is None:
        margin = 3.0 * fwhm_hz if shape == "gaussian" else 640.0 * fwhm_hz
        lo, hi = freqs.min() - margin, freqs.max() + margin
        count = int(np.ceil((hi - lo) / (fwhm_hz / 40.0))) + 1
        count = min(max(count, 401), 200001)
        if count % 2 == 0:
            count += 1
        grid = np.linspace(lo, hi, count)
    else:
        grid = np.asarray(grid_hz, dtype=float)

    values = np.zeros_like(grid)
    if shape == "gaussian":
        sigma = fwhm_hz / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        norm = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
        for center, inten in pairs:
            values += inten * norm * np.exp(-0.5 * ((grid - center) / sigma) ** 2)
    else:
        half = fwhm_hz / 2.0
        for center, inten in pairs:
            values += inten * (half / math.pi) / ((grid - center) ** 2 + half**2)
    return SpectrumResult(grid, values)


def bath_broadened_fwhm(couplings_hz, spins) -> float:
    """Gaussian ODMR linewidth from a frozen bath of coupled nuclear spins.

    Each bath spin with secular coupling A_i and spin I_i contributes
    A_i^2 * I_i(I_i+1)/3 to the second moment of the detuning distribution;
    the full width is 2*sqrt(2 ln 2) times the standard deviation.
    """
    couplings = np.asarray(couplings_hz, dtype=float)
    spin_values = np.asarray(spins, dtype=float)
    if couplings.shape != spin_values.shape:
        raise MetricDomainError("need one spin quantum number per coupling")
    if couplings.size == 0:
        raise MetricDomainError("bath linewidth needs at least one coupling")
    second_moment = float(
        np.sum(couplings**2 * spin_values * (spin_values + 1.0) / 3.0)
    )
    return 2.0 * math.sqrt(2.0 * math.log(2.0)) * math.sqrt(second_moment)
