"""Per-inverter Volt-VAR control laws: droop curve, reactive-power inertia,
voltage penalty, extremum seeking on the droop reference, and the windowed
steady-state-error adaptation of the droop offset.

Every step function is pure: it takes a frozen state and returns a new one.
A controller only ever sees measurements taken at its own bus and on the
branch feeding that bus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

V_LOW = 0.95
V_HIGH = 1.05
VREF_RANGE = (0.95, 1.05)


class CapacityError(ValueError):
    pass


# --- basic laws ------------------------------------------------------------

def q_capacity(rated_s: float, p_now: float) -> float:
    """Reactive headroom (kvar) left by the current active output; Q_min is its negative."""
    if p_now < 0:
        raise CapacityError(f"active output {p_now} kW is negative")
    if p_now > rated_s * (1 + 1e-12):
        raise CapacityError(f"active output {p_now} kW exceeds rating {rated_s} kVA")
    return math.sqrt(max(rated_s * rated_s - p_now * p_now, 0.0))


@dataclass(frozen=True)
class DroopParams:
    v_min: float = 0.80
    v_max: float = 1.20
    v_ref: float = 1.0
    deadband: float = 0.02
    q0: float = 0.0

    def __post_init__(self):
        if not (self.v_min < self.v_l <= self.v_r < self.v_max):
            raise ValueError(
                f"droop breakpoints out of order: v_min={self.v_min} v_l={self.v_l} "
                f"v_r={self.v_r} v_max={self.v_max}"
            )
        if self.deadband < 0:
            raise ValueError("deadband must be >= 0")

    @property
    def v_l(self) -> float:
        return self.v_ref - self.deadband / 2

    @property
    def v_r(self) -> float:
        return self.v_ref + self.deadband / 2


def droop_eval(params: DroopParams, v_t: float, q_min: float, q_max: float) -> float:
    """Five-piece Volt-VAR curve: full injection below v_min, full absorption above v_max,
    q0 inside the deadband and straight lines in between."""
    p = params
    q0 = p.q0
    if v_t <= p.v_min:
        return q_max
    if v_t < p.v_l:
        return -(q_max - q0) / (p.v_l - p.v_min) * (v_t - p.v_l) + q0
    if v_t <= p.v_r:
        return q0
    if v_t < p.v_max:
        return -(q_min - q0) / (p.v_r - p.v_max) * (v_t - p.v_r) + q0
    return q_min


def hysteresis_update(q_prev: float, q_dp_new: float, mu_h: float) -> float:
    """First-order low-pass between the last command and the new droop output."""
    if not 0 < mu_h <= 1:
        raise ValueError("hysteresis coefficient must lie in (0, 1]")
    return (1.0 - mu_h) * q_prev + mu_h * q_dp_new


def voltage_penalty(v, k_p: float = 10.0):
    """Linear penalty outside the ANSI band [0.95, 1.05]; zero inside. Works elementwise."""
    v = np.asarray(v, dtype=float)
    pen = k_p * (np.maximum(V_LOW - v, 0.0) + np.maximum(v - V_HIGH, 0.0))
    return float(pen) if pen.ndim == 0 else pen


# --- extremum seeking ------------------------------------------------------

@dataclass(frozen=True)
class EsState:
    mu_hat: float = 1.0
    amplitude: float = 0.005
    omega: float = 2 * math.pi / 300.0
    gain: float = 40.0
    omega_h: float = 2 * math.pi / 1500.0
    phase: float = 0.0
    y_prev: float | None = None
    eta: float = 0.0
    step: int = 0
    output: float = 1.0
    max_step: float | None = None    # slew limit on mu_hat per sample, pu; None disables

    def __post_init__(self):
        if self.max_step is not None and not self.max_step > 0:
            raise ValueError("max_step must be > 0 or None")
        if not self.amplitude > 0:
            raise ValueError("perturbation amplitude must be > 0")
        if not 0 < self.omega_h < self.omega:
            raise ValueError("washout cutoff must satisfy 0 < omega_h < omega")


def es_step(state: EsState, y_sample: float, dt: float) -> tuple[EsState, float]:
    """Advance the discrete ES loop by one sample and return the new reference.

    Backward-difference washout, sinusoidal demodulation, forward-Euler
    integration; both the estimate and the perturbed output stay inside the
    reference search range. The estimate moves at most ``max_step`` per sample,
    so a sudden jump in the objective cannot throw it far.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if not math.isfinite(y_sample):
        raise ValueError("objective sample must be finite")
    s = state
    alpha = 1.0 / (1.0 + s.omega_h * dt)
    y_prev = y_sample if s.y_prev is None else s.y_prev
    eta = alpha * (s.eta + y_sample - y_prev)
    dither = s.amplitude * math.sin(s.phase)
    xi = dither * eta
    lo, hi = VREF_RANGE
    delta = -s.gain * xi * dt
    if s.max_step is not None:
        delta = min(max(delta, -s.max_step), s.max_step)
    mu_hat = min(max(s.mu_hat + delta, lo), hi)
    mu = min(max(mu_hat + dither, lo), hi)
    new = replace(
        s, mu_hat=mu_hat, eta=eta, y_prev=y_sample,
        phase=(s.phase + s.omega * dt) % (2 * math.pi), step=s.step + 1, output=mu,
    )
    return new, mu


# --- steady-state error adaptation -----------------------------------------

@dataclass(frozen=True)
class SseState:
    k_q: float
    q0_large: float
    t_nominal: int = 10
    t_small: int = 8
    window: int = 10
    samples: tuple[tuple[float, float], ...] = ()
    k_n: int = 0
    last_sse: float = 0.0

    def __post_init__(self):
        if not 0 < self.t_small < self.t_nominal:
            raise ValueError("need 0 < t_small < t_nominal")
        if not self.k_q > 0:
            raise ValueError("k_q must be > 0")

    @property
    def running_sum(self) -> float:
        return sum(v - r for v, r in self.samples)


def sse_update(
    state: SseState,
    window_samples: Sequence[tuple[float, float]],
    q0_prev: float,
    q_min: float,
    q_max: float,
) -> tuple[SseState, float, int]:
    """Close one outer-loop window: shift q0 against the summed voltage error
    and shorten the next window after a large correction."""
    if len(window_samples) == 0:
        raise ValueError("empty SSE window")
    sse = float(sum(v - r for v, r in window_samples))
    q0_new = min(max(q0_prev - state.k_q * sse, q_min), q_max)
    nxt = state.t_small if abs(q0_new - q0_prev) >= state.q0_large else state.t_nominal
    new = replace(state, samples=(), window=nxt, k_n=state.k_n + 1, last_sse=sse)
    return new, q0_new, nxt


# --- full controller --------------------------------------------------------

@dataclass(frozen=True)
class ControllerParams:
    """Tunable knobs; defaults are the bundled-fixture values."""

    v_min: float = 0.80
    v_max: float = 1.20
    deadband: float = 0.0
    v_ref0: float = 1.0
    q0_init: float = 0.0
    mu_h: float = 0.3
    k_p: float = 10.0
    amplitude: float = 0.005
    period_steps: int = 10
    gain: float = 40.0
    washout_ratio: float = 0.2
    es_max_step: float | None = None
    anti_windup: float = 1.0
    k_q_per_kva: float = 0.5
    q0_large_per_kva: float = 0.2
    t_nominal: int = 10
    t_small: int = 8
    objective: str = "i2"
    objective_scale: float = 0.005
    extremum_seeking: bool = True
    sse_adaptation: bool = True

    def __post_init__(self):
        if self.objective not in ("i2", "sloss"):
            raise ValueError(f"objective must be 'i2' or 'sloss', got {self.objective!r}")


@dataclass(frozen=True)
class Measurements:
    """What an inverter can see: its bus voltage magnitudes, the current on the
    branch feeding it, its own active output and, optionally, that branch's
    impedance matrix (enables the branch-loss objective)."""

    v: np.ndarray          # per present phase, pu
    current: np.ndarray    # per branch phase, complex pu
    p_kw: float
    z_branch: np.ndarray | None = None


@dataclass(frozen=True)
class InverterControllerState:
    rated_kva: float
    droop: DroopParams
    es: EsState | None
    sse: SseState | None
    q_pv: float = 0.0
    mu_h: float = 0.3
    k_p: float = 10.0
    objective: str = "i2"
    objective_scale: float = 1.0
    objective_norm: float = 1.0   # typical loss-term size; ES sees scale * (loss / norm + pen / penalty_norm)
    penalty_norm: float = 1.0
    anti_windup: float = 0.0      # fraction of the setpoint error released at a saturated window
    q_max: float = 0.0
    y: float = 0.0

    @property
    def v_ref(self) -> float:
        return self.droop.v_ref

    @property
    def q0(self) -> float:
        return self.droop.q0


def new_controller(
    rated_kva: float, params: ControllerParams, dt: float, objective_norm: float = 1.0,
    penalty_norm: float | None = None,
) -> InverterControllerState:
    """Fresh controller. ``objective_norm`` sets the ES gain per inverter: the
    demodulator sees ``objective_scale * (loss / objective_norm + penalty / penalty_norm)``.
    ``penalty_norm`` defaults to ``objective_norm``."""
    penalty_norm = objective_norm if penalty_norm is None else penalty_norm
    if not (objective_norm > 0 and penalty_norm > 0):
        raise ValueError("objective_norm and penalty_norm must be > 0")
    omega = 2 * math.pi / (params.period_steps * dt)
    es = None
    if params.extremum_seeking:
        es = EsState(
            mu_hat=params.v_ref0, amplitude=params.amplitude, omega=omega, gain=params.gain,
            omega_h=params.washout_ratio * omega, output=params.v_ref0, max_step=params.es_max_step,
        )
    sse = None
    if params.sse_adaptation:
        sse = SseState(
            k_q=params.k_q_per_kva * rated_kva, q0_large=params.q0_large_per_kva * rated_kva,
            t_nominal=params.t_nominal, t_small=params.t_small, window=params.t_nominal,
        )
    droop = DroopParams(params.v_min, params.v_max, params.v_ref0, params.deadband, params.q0_init)
    return InverterControllerState(
        rated_kva=rated_kva, droop=droop, es=es, sse=sse, q_pv=0.0, mu_h=params.mu_h,
        k_p=params.k_p, objective=params.objective, objective_scale=params.objective_scale,
        objective_norm=objective_norm, penalty_norm=penalty_norm, q_max=rated_kva,
        anti_windup=params.anti_windup,
    )


def objective_parts(state: InverterControllerState, meas: Measurements) -> tuple[float, float]:
    """Loss term (squared branch current, or branch real loss when z is known) and voltage penalty."""
    cur = np.asarray(meas.current)
    if state.objective == "sloss" and meas.z_branch is not None:
        base = float(np.real(np.einsum("mn,n,m->", meas.z_branch, cur, cur.conj())))
    else:
        base = float(np.sum(np.abs(cur) ** 2))
    pen = float(np.sum(voltage_penalty(np.asarray(meas.v), state.k_p)))
    return base, pen


def local_objective(state: InverterControllerState, meas: Measurements) -> float:
    """Squared branch current (or branch real loss when z is known) plus the voltage penalty."""
    base, pen = objective_parts(state, meas)
    return base + pen


def _release_windup(state, es, sse_value, q0_prev, q_min, q_max, v_bar):
    """Pull the ES estimate toward the window-mean voltage when the offset
    integrator pushes past a capacity limit although every phase is already
    inside the ANSI band (the caller checks the band). That setpoint cannot be
    reached, and while the output is saturated the dither carries no gradient
    information."""
    if es is None or state.anti_windup <= 0:
        return es
    wanted = q0_prev - state.sse.k_q * sse_value
    if q_min <= wanted <= q_max:
        return es
    lo, hi = VREF_RANGE
    mu_hat = es.mu_hat + state.anti_windup * (v_bar - es.mu_hat)
    return replace(es, mu_hat=min(max(mu_hat, lo), hi))


def controller_step(
    state: InverterControllerState, meas: Measurements, dt: float
) -> tuple[InverterControllerState, float]:
    """One inner-loop tick; returns the new state and the reactive command in kvar."""
    v_t = float(np.mean(meas.v))
    base, pen = objective_parts(state, meas)
    y = base + pen

    es = state.es
    v_ref = state.droop.v_ref
    if es is not None:
        es_in = state.objective_scale * (base / state.objective_norm + pen / state.penalty_norm)
        es, v_ref = es_step(es, es_in, dt)

    q_max = q_capacity(state.rated_kva, meas.p_kw)
    q_min = -q_max
    q0 = min(max(state.droop.q0, q_min), q_max)

    sse = state.sse
    if sse is not None:
        sse = replace(sse, samples=sse.samples + ((v_t, v_ref),))
        if len(sse.samples) >= sse.window:
            v_bar = float(np.mean([v for v, _ in sse.samples]))
            q0_prev = q0
            sse, q0, _ = sse_update(sse, sse.samples, q0, q_min, q_max)
            inside = bool(np.all((np.asarray(meas.v) >= V_LOW) & (np.asarray(meas.v) <= V_HIGH)))
            if inside:
                es = _release_windup(state, es, sse.last_sse, q0_prev, q_min, q_max, v_bar)

    droop = replace(state.droop, v_ref=v_ref, q0=q0)
    q_dp = droop_eval(droop, v_t, q_min, q_max)
    q_cmd = hysteresis_update(state.q_pv, q_dp, state.mu_h)
    q_cmd = min(max(q_cmd, q_min), q_max)
    new = replace(state, droop=droop, es=es, sse=sse, q_pv=q_cmd, q_max=q_max, y=y)
    return new, q_cmd
