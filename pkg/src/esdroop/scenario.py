"""Quasi-static time-series runs: profiles -> injections -> controllers -> power flow.

Each step evaluates the profiles, moves regulator taps on their own interval,
lets every inverter react to the *previous* step's solved state (one-step
sensing delay), solves the network with the new commands and records the result.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import control
from .control import ControllerParams, Measurements, new_controller, controller_step, q_capacity
from .convexity import ConvexityReport, convexity_report
from .feeder import FeederModel, load_feeder, regulator_step
from .powerflow import NonConvergenceError, PowerFlowError, PowerFlowSolution, build_injections, set_pv_output, solve
from .profiles import TimeSeriesProfile, resolve_profile

CONTROLLERS = ("es-adaptive", "fixed-droop", "none", "oracle")
V_LOW, V_HIGH = control.V_LOW, control.V_HIGH

# controller presets; user overrides are applied on top
FIXED_DROOP = dict(extremum_seeking=False, sse_adaptation=False, deadband=0.02, v_ref0=1.0,
                   q0_init=0.0, mu_h=1.0)


class ScenarioError(RuntimeError):
    """Raised when a run cannot complete (too many failed solves, bad inputs)."""


@dataclass(frozen=True)
class ScenarioConfig:
    feeder: str = "4bus.json"
    hours: float = 24.0
    dt: float = 30.0
    controller: str = "es-adaptive"
    params: dict = field(default_factory=dict)
    profiles: dict = field(default_factory=dict)   # load/pv id -> profile name
    load_profile: str = "load_1"                   # fallback for untagged loads
    solar_profile: str = "solar_smooth"            # fallback for untagged inverters
    profiles_dir: str | None = None
    load_scale: float = 1.0
    pv_scale: float = 1.0
    substation_pu: float | None = None
    regulators: bool = False
    regulator_delay: int = 4                      # steps a phase must stay out of band before a tap
    convexity_report: bool = False
    seed: int = 0
    price_per_kwh: float = 0.08
    oracle_interval: int = 10
    oracle_points: int = 21
    oracle_budget: int = 10_000
    max_divergence: float = 0.01

    def __post_init__(self):
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if not self.dt > 0 or not self.hours > 0:
            raise ValueError("dt and hours must be > 0")
        steps = self.hours * 3600.0 / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("hours must be a whole number of dt steps")
        unknown = set(self.params) - {f.name for f in fields(ControllerParams)}
        if unknown:
            raise ValueError(f"unknown controller parameter(s): {sorted(unknown)}")
        if self.regulator_delay < 1 or self.oracle_interval < 1:
            raise ValueError("intervals must be >= 1 step")

    @property
    def n_steps(self) -> int:
        return int(round(self.hours * 3600.0 / self.dt))

    def controller_params(self) -> ControllerParams:
        base = dict(FIXED_DROOP) if self.controller == "fixed-droop" else {}
        base.update(self.params)
        return ControllerParams(**base)

    def with_(self, **kw) -> "ScenarioConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "ScenarioConfig":
        names = {f.name for f in fields(cls)}
        extra = set(doc) - names
        if extra:
            raise ValueError(f"unknown config key(s): {sorted(extra)}")
        return cls(**doc)


@dataclass
class StepRecord:
    step: int
    time_s: float
    vmag: np.ndarray         # (nbus, 3), zero on absent phases
    v_ref: np.ndarray        # (npv,)
    q0: np.ndarray
    q_pv: np.ndarray         # kvar
    q_max: np.ndarray
    y: np.ndarray            # objective sample seen by each controller
    p_pv: np.ndarray         # kW
    taps: np.ndarray         # (nreg, 3) ints
    loss_kw: float
    penalty: float
    residual: float
    converged: bool = True
    convexity: list = field(default_factory=list)   # ConvexityReport | None per inverter


@dataclass
class ScenarioSummary:
    controller: str
    feeder: str
    steps: int
    dt: float
    kwh: float
    cost: float
    v_min: float
    v_max: float
    violations: int            # (step, bus) pairs with any phase outside [0.95, 1.05]
    violation_steps: int       # steps with at least one such bus
    oscillation_index: dict
    diverged_steps: int
    loss_gap_pct: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


# --- helpers -----------------------------------------------------------------

def _profile_names(model: FeederModel, cfg: ScenarioConfig) -> tuple[list[str], list[str]]:
    loads = [cfg.profiles.get(ld.id, ld.profile or cfg.load_profile) for ld in model.loads]
    pvs = [cfg.profiles.get(pv.id, pv.profile or cfg.solar_profile) for pv in model.pvs]
    return loads, pvs


def _resample(name: str, cfg: ScenarioConfig, cache: dict) -> np.ndarray:
    if name not in cache:
        prof = resolve_profile(name, cfg.seed, cfg.profiles_dir)
        cache[name] = prof.resample(cfg.dt, cfg.n_steps * cfg.dt)
    return cache[name]


def profile_matrix(model: FeederModel, cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """(steps, nload) load multipliers and (steps, npv) inverter kW."""
    load_names, pv_names = _profile_names(model, cfg)
    cache: dict[str, np.ndarray] = {}
    lm = np.stack([_resample(n, cfg, cache) for n in load_names], axis=1) if load_names else \
        np.zeros((cfg.n_steps, 0))
    pm = np.stack([_resample(n, cfg, cache) for n in pv_names], axis=1) if pv_names else \
        np.zeros((cfg.n_steps, 0))
    rated = np.array([pv.rated_kw for pv in model.pvs])
    kva = np.array([pv.rated_kva for pv in model.pvs])
    pv_kw = np.minimum(pm * cfg.pv_scale * rated, kva)
    return lm * cfg.load_scale, pv_kw


def penalty_sum(model: FeederModel, vmag: np.ndarray, k_p: float = 10.0) -> np.ndarray:
    """Sum of the voltage penalty over all present bus phases (batched)."""
    mask = np.array([b.phases.mask for b in model.buses])
    pen = control.voltage_penalty(vmag, k_p)
    return np.sum(np.where(mask, pen, 0.0), axis=(-1, -2))


def objective_norm(model: FeederModel, k: int, objective: str = "i2",
                   nominal: PowerFlowSolution | None = None) -> float:
    """Objective size at rated inverter current: sum over its phases of I_rated^2.

    For the branch-loss objective this is scaled by the branch's effective
    resistance, real loss per unit of summed |I|^2 at a nominal no-PV operating
    point, so both objectives give the ES loop the same gain.
    """
    pv = model.pvs[k]
    nph = len(pv.phases)
    i_rated = pv.rated_kva / (nph * model.s_base_kva)
    norm = nph * i_rated ** 2
    if objective == "sloss":
        if nominal is None:
            nominal = solve(model, build_injections(model))
        br = model.branches[model.branch_index[pv.monitored_branch]]
        i2 = float(np.sum(np.abs(nominal.branch_current(br.id)[br.phases.mask]) ** 2))
        if i2 > 0:
            norm *= float(np.real(nominal.branch_loss(br.id))) / i2
        else:
            z = model.branch_z_pu(br.id)
            norm *= float(np.mean(np.real(np.diag(z))[br.phases.mask]))
    return norm


def _measure(model: FeederModel, sol: PowerFlowSolution, k: int, p_kw: float, with_z: bool) -> Measurements:
    pv = model.pvs[k]
    br = model.branches[model.branch_index[pv.monitored_branch]]
    ph = br.phases.mask
    v = np.abs(sol.voltages[model.bus_index[pv.bus]])[pv.phases.mask]
    cur = sol.branch_current(br.id)[ph]
    z = model.branch_z_pu(br.id)[np.ix_(ph, ph)] if with_z else None
    return Measurements(v=v, current=cur, p_kw=p_kw, z_branch=z)


# --- dispatch oracle ----------------------------------------------------------

@dataclass(frozen=True)
class DispatchResult:
    q_kvar: np.ndarray
    objective: float      # pu: real loss + penalty
    loss_kw: float
    mode: str
    evaluations: int


def _grid(qmax: float, points: int, resolution: float | None) -> np.ndarray:
    if qmax <= 0:
        return np.zeros(1)
    if resolution is not None:
        n = int(math.floor(qmax / resolution + 1e-9))
        half = np.arange(1, n + 1) * resolution
        return np.concatenate([-half[::-1], [0.0], half])
    return np.linspace(-qmax, qmax, points)


def _evaluate(model, injections, pv_kw, qmat, taps, k_p, chunk=2048):
    obj = np.empty(len(qmat))
    loss = np.empty(len(qmat))
    for s in range(0, len(qmat), chunk):
        part = qmat[s:s + chunk]
        sol = solve(model, set_pv_output(model, injections, pv_kw, part), taps)
        loss[s:s + chunk] = np.real(sol.total_loss)
        obj[s:s + chunk] = loss[s:s + chunk] + penalty_sum(model, sol.vmag, k_p)
    return obj, loss


def _pick(obj: np.ndarray, qmat: np.ndarray, rtol: float = 1e-12) -> int:
    """Lowest objective; ties go to the smallest |q| total, then smallest |q| by inverter order."""
    best = obj.min()
    cand = np.flatnonzero(obj <= best + rtol * (1.0 + abs(best)))
    if len(cand) == 1:
        return int(cand[0])
    a = np.abs(qmat[cand])
    keys = [a[:, j] for j in range(a.shape[1] - 1, -1, -1)] + [a.sum(axis=1)]
    return int(cand[np.lexsort(keys)[0]])


def brute_force_dispatch(
    model: FeederModel,
    injections,
    pv_kw: Sequence[float] | None = None,
    taps=None,
    points: int = 21,
    resolution: float | None = None,
    k_p: float = 10.0,
    budget: int = 10_000,
    mode: str = "auto",
    max_sweeps: int = 50,
) -> DispatchResult:
    """Grid search for the reactive dispatch minimising real loss plus voltage penalty.

    ``injections`` carries loads (its generation part is replaced). Exhaustive
    search is used while the grid product fits ``budget``; otherwise cyclic
    coordinate descent from q = 0 runs until no single-inverter move helps.
    """
    n = len(model.pvs)
    if pv_kw is None:
        from .convexity import _pv_outputs
        pv_kw = _pv_outputs(model, injections)[0]
    pv_kw = np.asarray(pv_kw, dtype=float)
    if n == 0:
        obj, loss = _evaluate(model, injections, pv_kw, np.zeros((1, 0)), taps, k_p)
        return DispatchResult(np.zeros(0), float(obj[0]), float(loss[0] * model.s_base_kva), "exhaustive", 1)
    qmax = [q_capacity(pv.rated_kva, float(pv_kw[k])) for k, pv in enumerate(model.pvs)]
    grids = [_grid(qm, points, resolution) for qm in qmax]
    size = int(np.prod([len(g) for g in grids]))
    if mode == "auto":
        mode = "exhaustive" if size <= budget else "coordinate"
    if mode == "exhaustive":
        if size > budget:
            raise ValueError(f"exhaustive grid needs {size} solves, budget is {budget}")
        qmat = np.array(list(itertools.product(*grids)), dtype=float)
        obj, loss = _evaluate(model, injections, pv_kw, qmat, taps, k_p)
        i = _pick(obj, qmat)
        return DispatchResult(qmat[i].copy(), float(obj[i]), float(loss[i] * model.s_base_kva), mode, len(qmat))
    if mode != "coordinate":
        raise ValueError(f"unknown mode {mode!r}")

    idx = [int(np.argmin(np.abs(g))) for g in grids]
    q = np.array([g[i] for g, i in zip(grids, idx)])
    evals = 0
    cur_obj, cur_loss = _evaluate(model, injections, pv_kw, q[None, :], taps, k_p)
    cur_obj, cur_loss = float(cur_obj[0]), float(cur_loss[0])
    for _ in range(max_sweeps):
        moved = False
        for k in range(n):
            qmat = np.tile(q, (len(grids[k]), 1))
            qmat[:, k] = grids[k]
            obj, loss = _evaluate(model, injections, pv_kw, qmat, taps, k_p)
            evals += len(qmat)
            i = _pick(obj, qmat)
            if obj[i] < cur_obj - 1e-12 * (1.0 + abs(cur_obj)) and i != idx[k]:
                idx[k] = i
                q[k] = grids[k][i]
                cur_obj, cur_loss = float(obj[i]), float(loss[i])
                moved = True
        if not moved:
            break
    return DispatchResult(q.copy(), cur_obj, cur_loss * model.s_base_kva, mode, evals)


# --- main loop -----------------------------------------------------------------

def run_qsts(config: ScenarioConfig, model: FeederModel | None = None) -> tuple[list[StepRecord], ScenarioSummary]:
    """Simulate ``config.hours`` of operation and return per-step records plus a summary."""
    cfg = config
    if model is None:
        model = load_feeder(cfg.feeder)
    if cfg.substation_pu is not None:
        model = model.with_source_voltage(cfg.substation_pu)
    load_mult, pv_kw_all = profile_matrix(model, cfg)
    npv = len(model.pvs)
    params = cfg.controller_params()
    kind = cfg.controller
    with_z = params.objective == "sloss"

    nominal = solve(model, build_injections(model)) if with_z else None
    states = [new_controller(pv.rated_kva, params, cfg.dt, objective_norm(model, k, params.objective, nominal),
                             objective_norm(model, k))
              for k, pv in enumerate(model.pvs)] if kind in ("es-adaptive", "fixed-droop") else []
    regs = list(model.regulators)
    out_of_band = np.zeros((len(regs), 3), dtype=int)
    q_cmd = np.zeros(npv)
    prev: PowerFlowSolution | None = None
    records: list[StepRecord] = []
    diverged = 0
    allowed = max(0, int(math.floor(cfg.max_divergence * cfg.n_steps)))

    for step in range(cfg.n_steps):
        p_now = pv_kw_all[step]
        inj = build_injections(model, load_mult[step])

        # (2) regulators act on the last solved voltages once a phase has stayed out of band for the delay
        if cfg.regulators and prev is not None:
            for r, reg in enumerate(regs):
                to_bus = model.branches[model.branch_index[reg.branch]].to_bus
                v = np.abs(prev.voltages[model.bus_index[to_bus]])
                out = (v > 0) & (np.abs(v - reg.setpoint_pu) > reg.bandwidth_pu / 2)
                out_of_band[r] = np.where(out, out_of_band[r] + 1, 0)
                fire = out_of_band[r] >= cfg.regulator_delay
                if fire.any():
                    regs[r] = regulator_step(reg, np.where(fire, v, reg.setpoint_pu))
                    out_of_band[r][fire] = 0
        taps = {reg.branch: reg.taps for reg in regs}

        # (3) controllers
        qmax_now = np.array([q_capacity(pv.rated_kva, float(p_now[k])) for k, pv in enumerate(model.pvs)])
        if kind in ("es-adaptive", "fixed-droop"):
            if prev is not None:
                for k in range(npv):
                    meas = _measure(model, prev, k, float(p_now[k]), with_z)
                    states[k], q_cmd[k] = controller_step(states[k], meas, cfg.dt)
            q_cmd = np.clip(q_cmd, -qmax_now, qmax_now)
        elif kind == "oracle":
            if step % cfg.oracle_interval == 0:
                res = brute_force_dispatch(model, inj, p_now, taps, points=cfg.oracle_points,
                                           k_p=params.k_p, budget=cfg.oracle_budget)
                q_cmd = res.q_kvar.copy()
            q_cmd = np.clip(q_cmd, -qmax_now, qmax_now)
        else:
            q_cmd = np.zeros(npv)

        # (4) solve
        inj_step = set_pv_output(model, inj, p_now, q_cmd)
        try:
            sol = solve(model, inj_step, taps, v0=None if prev is None else prev.voltages)
            converged = True
        except (NonConvergenceError, PowerFlowError):
            diverged += 1
            if diverged > allowed or prev is None:
                raise ScenarioError(f"power flow failed at step {step} ({diverged} failures so far)")
            sol, converged = prev, False

        # (5) record
        conv: list[ConvexityReport | None] = []
        if cfg.convexity_report and converged:
            conv = [convexity_report(model, inj_step, k, taps=taps, pv_kw=p_now, pv_kvar=q_cmd)
                    for k in range(npv)]
        vm = np.abs(sol.voltages)
        records.append(StepRecord(
            step=step, time_s=step * cfg.dt, vmag=vm,
            v_ref=np.array([s.v_ref for s in states]) if states else np.full(npv, np.nan),
            q0=np.array([s.q0 for s in states]) if states else np.full(npv, np.nan),
            q_pv=q_cmd.copy(), q_max=qmax_now,
            y=np.array([s.y for s in states]) if states else np.full(npv, np.nan),
            p_pv=np.asarray(p_now, dtype=float).copy(),
            taps=np.array([reg.taps for reg in regs], dtype=int).reshape(len(regs), 3),
            loss_kw=float(np.real(sol.total_loss)) * model.s_base_kva,
            penalty=float(penalty_sum(model, vm, params.k_p)),
            residual=float(sol.balance_residual()),
            converged=converged, convexity=conv,
        ))
        if converged:
            prev = sol

    summary = summarize(records, cfg.dt, cfg.price_per_kwh, model=model, controller=kind,
                        feeder=model.name or str(cfg.feeder))
    return records, summary


def run_fixed_droop(config: ScenarioConfig, band: tuple[float, float] | None = None,
                    hysteresis: float | None = None, model: FeederModel | None = None):
    """Static droop baseline (V_ref = 1.0, Q0 = 0, no ES, no SSE)."""
    params = dict(config.params)
    if band is not None:
        params.update(v_min=band[0], v_max=band[1])
    if hysteresis is not None:
        params["mu_h"] = hysteresis
    return run_qsts(replace(config, controller="fixed-droop", params=params), model)


# --- metrics -------------------------------------------------------------------

def oscillation_index(q_trace: np.ndarray, window: int = 20) -> float:
    """Largest standard deviation of step-to-step changes over sliding windows."""
    dq = np.diff(np.asarray(q_trace, dtype=float))
    if len(dq) == 0:
        return 0.0
    if len(dq) < window:
        return float(np.std(dq))
    win = np.lib.stride_tricks.sliding_window_view(dq, window)
    return float(np.max(np.std(win, axis=1)))


def violation_mask(model: FeederModel, vmag: np.ndarray) -> np.ndarray:
    """Boolean (..., nbus): any present phase outside the ANSI band."""
    mask = np.array([b.phases.mask for b in model.buses])
    bad = ((vmag < V_LOW) | (vmag > V_HIGH)) & mask
    return bad.any(axis=-1)


def summarize(records: Sequence[StepRecord], dt: float, price_per_kwh: float = 0.08, *,
              model: FeederModel | None = None, controller: str = "", feeder: str = "",
              oracle_kwh: float | None = None, pv_ids: Sequence[str] | None = None) -> ScenarioSummary:
    if len(records) == 0:
        raise ValueError("no records to summarise")
    loss = np.array([r.loss_kw for r in records])
    kwh = float(np.sum(loss) * dt / 3600.0)
    vm = np.stack([r.vmag for r in records])
    if model is not None:
        present = np.array([b.phases.mask for b in model.buses])
        bad = violation_mask(model, vm)
        pv_ids = [pv.id for pv in model.pvs]
    else:
        present = vm[0] > 0
        bad = (((vm < V_LOW) | (vm > V_HIGH)) & present).any(axis=-1)
    vals = vm[:, present]
    q = np.stack([r.q_pv for r in records])
    if pv_ids is None:
        pv_ids = [f"pv{k}" for k in range(q.shape[1])]
    gap = None if oracle_kwh is None or oracle_kwh <= 0 else 100.0 * (kwh - oracle_kwh) / oracle_kwh
    return ScenarioSummary(
        controller=controller, feeder=feeder, steps=len(records), dt=dt, kwh=kwh,
        cost=kwh * price_per_kwh, v_min=float(vals.min()), v_max=float(vals.max()),
        violations=int(bad.sum()), violation_steps=int(bad.any(axis=1).sum()),
        oscillation_index={pid: oscillation_index(q[:, k]) for k, pid in enumerate(pv_ids)},
        diverged_steps=sum(not r.converged for r in records), loss_gap_pct=gap,
    )


def violations_between(model: FeederModel, records: Sequence[StepRecord], t0: float, t1: float) -> int:
    """(step, bus) violation count for records with t0 <= time < t1 (seconds)."""
    sel = [r.vmag for r in records if t0 <= r.time_s < t1]
    if not sel:
        return 0
    return int(violation_mask(model, np.stack(sel)).sum())


@dataclass(frozen=True)
class PhaseAnalysis:
    theta_a: float       # degrees
    theta_b: float
    delta_deg: float     # wrapped to (-180, 180]
    amp_a: float
    amp_b: float

    @property
    def ratio(self) -> float:
        return self.amp_a / self.amp_b if self.amp_b > 0 else math.inf


def _demodulate(x: np.ndarray, t: np.ndarray, omega: float) -> tuple[float, float]:
    # remove offset and slow drift before projecting onto sin/cos
    a = np.vstack([np.ones_like(t), t - t.mean()]).T
    x = x - a @ np.linalg.lstsq(a, x, rcond=None)[0]
    i_sum = np.sum(x * np.sin(omega * t))
    q_sum = np.sum(x * np.cos(omega * t))
    n = len(x)
    return 2.0 * math.hypot(i_sum, q_sum) / n, math.degrees(math.atan2(q_sum, i_sum))


def perturbation_phase_analysis(records, pv_a: int, pv_b: int, omega: float, dt: float | None = None,
                                start: int = 0, stop: int | None = None) -> PhaseAnalysis:
    """Amplitude and phase of each inverter's reactive trace at the dither frequency.

    ``records`` is a list of StepRecord (or an array of shape (steps, npv) of
    kvar values together with ``dt``). The window is trimmed to a whole number
    of dither periods and must hold at least four.
    """
    if isinstance(records, np.ndarray):
        q = records[start:stop]
        if dt is None:
            raise ValueError("dt is required with a raw array")
        t = (np.arange(len(q)) + start) * dt
    else:
        recs = list(records)[start:stop]
        q = np.stack([r.q_pv for r in recs]) if recs else np.zeros((0, 1))
        t = np.array([r.time_s for r in recs])
        if dt is None and len(t) > 1:
            dt = t[1] - t[0]
    if dt is None or len(q) < 2:
        raise ValueError("insufficient samples for phase analysis")
    period = 2 * math.pi / (omega * dt)
    periods = int(math.floor(len(q) / period + 1e-9))
    if periods < 4:
        raise ValueError(f"need at least 4 dither periods, got {len(q) / period:.2f}")
    n = int(round(periods * period))
    q, t = q[:n], t[:n]
    amp_a, th_a = _demodulate(q[:, pv_a].astype(float), t, omega)
    amp_b, th_b = _demodulate(q[:, pv_b].astype(float), t, omega)
    delta = (th_a - th_b + 180.0) % 360.0 - 180.0
    return PhaseAnalysis(th_a, th_b, delta, amp_a, amp_b)


def steadiest_window(records: Sequence[StepRecord], start: int, stop: int, length: int,
                     period: int = 10) -> int:
    """Start index of the ``length``-step window inside [start, stop) whose
    reference estimates drift least: summed |mean of last period - mean of
    first period| over all inverters. Windows are tried at multiples of
    ``length`` from ``start``."""
    v = np.stack([r.v_ref for r in records])
    best, best_drift = None, math.inf
    for s0 in range(start, stop - length + 1, length):
        seg = v[s0:s0 + length]
        drift = float(np.sum(np.abs(seg[-period:].mean(0) - seg[:period].mean(0))))
        if drift < best_drift:
            best, best_drift = s0, drift
    if best is None:
        raise ValueError("no complete window inside the range")
    return best


# --- output --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def csv_columns(model: FeederModel, convexity: bool = False) -> list[str]:
    cols = ["step", "time_s"]
    for b in model.buses:
        cols += [f"v_{b.id}_{p}" for p in "abc" if getattr(b.phases, p)]
    for pv in model.pvs:
        cols += [f"{pv.id}_{k}" for k in ("p_kw", "v_ref", "q0", "q_kvar", "q_max", "y")]
    for reg in model.regulators:
        cols += [f"tap_{reg.branch}_{p}" for p in "abc"]
    cols += ["loss_kw", "penalty", "residual", "converged"]
    if convexity:
        for pv in model.pvs:
            cols += [f"{pv.id}_D", f"{pv.id}_K", f"{pv.id}_d2i2", f"{pv.id}_convex"]
    return cols


def records_to_csv(model: FeederModel, records: Sequence[StepRecord], convexity: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(model, convexity))
    for r in records:
        row = [_fmt(r.step), _fmt(r.time_s)]
        for i, b in enumerate(model.buses):
            row += [_fmt(r.vmag[i, j]) for j in b.phases.indices]
        for k in range(len(model.pvs)):
            row += [_fmt(x) for x in (r.p_pv[k], r.v_ref[k], r.q0[k], r.q_pv[k], r.q_max[k], r.y[k])]
        for t in r.taps:
            row += [_fmt(int(x)) for x in t]
        row += [_fmt(r.loss_kw), _fmt(r.penalty), _fmt(r.residual), _fmt(r.converged)]
        if convexity:
            for k in range(len(model.pvs)):
                rep = r.convexity[k] if k < len(r.convexity) else None
                if rep is None:
                    row += ["nan", "nan", "nan", ""]
                else:
                    row += [_fmt(rep.denominator), _fmt(rep.k_value), _fmt(rep.second_derivative),
                            _fmt(rep.satisfied)]
        w.writerow(row)
    return buf.getvalue()


def summary_to_json(summary: ScenarioSummary) -> str:
    return json.dumps(summary.to_dict(), indent=2, sort_keys=True)


def write_outputs(model: FeederModel, records, summary, out_dir: str | Path, stem: str,
                  convexity: bool = False, force: bool = False) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    for p in (csv_path, json_path):
        if p.exists() and not force:
            raise FileExistsError(f"{p} exists (use --force to overwrite)")
    csv_path.write_text(records_to_csv(model, records, convexity))
    json_path.write_text(summary_to_json(summary) + "\n")
    return csv_path, json_path
