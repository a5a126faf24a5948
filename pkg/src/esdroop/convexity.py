"""Convexity diagnostics for the per-inverter loss objective.

The single-phase condition D = 1 - 2rP/y - 2x(Q+q)/y (y = V^2) decides the
sign of d2|I|^2/dq2 given the usual curvature assumptions on y, P and Q.
Here the condition is evaluated from solved flows, and the curvature itself is
measured by central differences over full power-flow solves.

Sign convention: ``q`` in this module is the inverter's reactive *injection*
in kvar, as everywhere else in the package. The flow terms P and Q+q are the
actual sending-end flows on the monitored branch, so D does not depend on
that choice, and neither do second derivatives or the squared first-derivative
terms inside K.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .feeder import FeederModel
from .powerflow import InjectionSet, set_pv_output, solve

SQRT3 = np.sqrt(3.0)
DEFAULT_TOL = 1e-6


def single_phase_condition(r: float, x: float, p: float, q: float, q_pv: float, v: float) -> float:
    """Denominator D = 1 - 2 r P / V^2 - 2 x (Q + q) / V^2."""
    if v == 0:
        raise ZeroDivisionError("voltage magnitude is zero")
    y = v * v
    return 1.0 - 2.0 * r * p / y - 2.0 * x * (q + q_pv) / y


def k_numerator(p, f, y, dp, df, dy, d2y) -> float:
    """K = -(P^2 + F^2) y''/y^2 + 2M/y + 2N/y with F = Q+q the reactive flow.

    M = (P' - P y'/y)^2 and N = (F' - F y'/y)^2; all derivatives are with
    respect to the inverter's reactive power.
    """
    m = (dp - p * dy / y) ** 2
    n = (df - f * dy / y) ** 2
    return float(-(p * p + f * f) / (y * y) * d2y + 2.0 * m / y + 2.0 * n / y)


# --- three-phase expansion ----------------------------------------------------

def three_phase_loss_expansion(z, p, dp1, dp2, f, dq1, dq2, y) -> complex:
    """Five-term loss expansion for a three-phase line.

    Phase a carries P + jF (F = Q + q); phases b and c carry (P + dP1) + j(F + dQ1)
    and (P + dP2) + j(F + dQ2). Terms are evaluated as written. The expression
    is first order in the deltas. It matches the phasor loss when phase b
    leads phase a by 120 degrees (see ``phasor_loss_at_120``).
    """
    if y == 0:
        raise ZeroDivisionError("y = V^2 is zero")
    z = np.asarray(z)
    zaa, zbb, zcc = z[0, 0], z[1, 1], z[2, 2]
    zab, zac, zbc = z[0, 1], z[0, 2], z[1, 2]
    total = (
        (p * p + f * f) * (zaa + zbb + zcc - zab - zac - zbc)
        + (p * dp1 + f * dq1) * (2 * zbb - zab - zbc)
        + (p * dp2 + f * dq2) * (2 * zcc - zac - zbc)
        + SQRT3 * (p * dq1 - f * dp1) * (zab - zbc)
        + SQRT3 * (p * dq2 - f * dp2) * (zbc - zac)
    )
    return complex(total / y)


def phasor_loss_at_120(z, p, dp1, dp2, f, dq1, dq2, v, b_angle_deg: float = 120.0) -> complex:
    """Exact sum z_mn I_n conj(I_m) for the same per-phase flows, with equal
    voltage magnitudes ``v`` spaced 120 degrees apart (b at ``b_angle_deg``)."""
    s = np.array([p + 1j * f, p + dp1 + 1j * (f + dq1), p + dp2 + 1j * (f + dq2)])
    rot = np.exp(1j * np.deg2rad(b_angle_deg))
    vph = v * np.array([1.0, rot, rot * rot])
    cur = np.conj(s / vph)
    return complex(np.einsum("mn,n,m->", np.asarray(z), cur, cur.conj()))


# --- numerical checks over the solver ---------------------------------------

@dataclass(frozen=True)
class BranchSample:
    """Monitored-branch quantities at a batch of reactive settings (per phase, pu)."""

    q_kvar: np.ndarray
    i2: np.ndarray       # sum over branch phases of |I|^2
    y: np.ndarray        # mean |V|^2 over the inverter's phases
    p: np.ndarray        # mean sending-end real power per phase
    f: np.ndarray        # mean sending-end reactive power per phase (Q + q)
    r_eff: np.ndarray
    x_eff: np.ndarray


def _pv_lookup(model: FeederModel, inverter) -> int:
    if isinstance(inverter, (int, np.integer)):
        return int(inverter)
    return model.pv_index[inverter]


def _pv_outputs(model: FeederModel, injections: InjectionSet) -> tuple[np.ndarray, np.ndarray]:
    """Recover per-inverter kW/kvar from an injection set (one inverter per bus)."""
    sb = model.s_base_kva
    seen = {}
    kw, kvar = np.zeros(len(model.pvs)), np.zeros(len(model.pvs))
    for k, pv in enumerate(model.pvs):
        if pv.bus in seen:
            raise ValueError(f"buses with several inverters need explicit outputs ({pv.bus!r})")
        seen[pv.bus] = k
        i = model.bus_index[pv.bus]
        s = injections.generation[i, pv.phases.mask].sum() * sb
        kw[k], kvar[k] = s.real, s.imag
    return kw, kvar


def sample_branch(model, injections, inverter, q_values, taps=None, pv_kw=None, pv_kvar=None) -> BranchSample:
    """Solve at each reactive setting of one inverter with the others held fixed."""
    k = _pv_lookup(model, inverter)
    if pv_kw is None or pv_kvar is None:
        kw0, kvar0 = _pv_outputs(model, injections)
        pv_kw = kw0 if pv_kw is None else pv_kw
        pv_kvar = kvar0 if pv_kvar is None else pv_kvar
    q_values = np.asarray(q_values, dtype=float)
    qmat = np.tile(np.asarray(pv_kvar, dtype=float), (q_values.size, 1))
    qmat[:, k] = q_values
    sol = solve(model, set_pv_output(model, injections, pv_kw, qmat), taps)
    pv = model.pvs[k]
    br = model.branches[model.branch_index[pv.monitored_branch]]
    ph = br.phases.mask
    cur = sol.branch_current(br.id)[:, ph]
    i2 = np.sum(np.abs(cur) ** 2, axis=-1)
    vm = np.abs(sol.voltages[:, model.bus_index[pv.bus], :])[:, pv.phases.mask]
    s_send = sol.sending_power(br.id)[:, ph]
    loss = sol.branch_loss(br.id)
    nph = ph.sum()
    safe = np.where(i2 > 0, i2, 1.0)
    z = model.branch_z_pu(br.id)
    r0 = np.mean(np.real(np.diag(z))[ph])
    x0 = np.mean(np.imag(np.diag(z))[ph])
    return BranchSample(
        q_kvar=q_values, i2=i2, y=np.mean(vm ** 2, axis=-1),
        p=np.real(s_send).sum(-1) / nph, f=np.imag(s_send).sum(-1) / nph,
        r_eff=np.where(i2 > 0, np.real(loss) / safe, r0),
        x_eff=np.where(i2 > 0, np.imag(loss) / safe, x0),
    )


def _check_capacity(model, k, q, h, pv_kw):
    pv = model.pvs[k]
    qmax = np.sqrt(max(pv.rated_kva ** 2 - pv_kw[k] ** 2, 0.0))
    if not h > 0:
        raise ValueError("h must be > 0")
    if q - h < -qmax - 1e-9 or q + h > qmax + 1e-9:
        raise ValueError(f"q +/- h = [{q - h:.3f}, {q + h:.3f}] kvar leaves the capacity +/-{qmax:.3f}")


def numeric_second_derivative(model, injections, inverter, h=None, taps=None, q=None) -> float:
    """Central difference of the monitored-branch |I|^2 in the inverter's kvar (pu per kvar^2)."""
    k = _pv_lookup(model, inverter)
    kw, kvar = _pv_outputs(model, injections)
    h = 1e-3 * model.pvs[k].rated_kva if h is None else float(h)
    q0 = kvar[k] if q is None else float(q)
    _check_capacity(model, k, q0, h, kw)
    s = sample_branch(model, injections, k, [q0 - h, q0, q0 + h], taps, kw, kvar)
    return float((s.i2[2] - 2 * s.i2[1] + s.i2[0]) / (h * h))


@dataclass(frozen=True)
class AssumptionReport:
    d2y: float
    d2p: float
    d2q: float
    tol: float

    @property
    def y_concave(self) -> bool:
        return self.d2y <= self.tol

    @property
    def p_convex(self) -> bool:
        return self.d2p >= -self.tol

    @property
    def q_convex(self) -> bool:
        return self.d2q >= -self.tol

    @property
    def all_hold(self) -> bool:
        return self.y_concave and self.p_convex and self.q_convex


def assumption_check(model, injections, inverter, h=None, taps=None, q=None, tol=DEFAULT_TOL) -> AssumptionReport:
    """Curvature of y = V^2 and of the per-phase sending-end P and Q in the inverter's kvar."""
    k = _pv_lookup(model, inverter)
    kw, kvar = _pv_outputs(model, injections)
    h = 1e-3 * model.pvs[k].rated_kva if h is None else float(h)
    q0 = kvar[k] if q is None else float(q)
    _check_capacity(model, k, q0, h, kw)
    s = sample_branch(model, injections, k, [q0 - h, q0, q0 + h], taps, kw, kvar)

    def d2(a):
        return float((a[2] - 2 * a[1] + a[0]) / (h * h))

    return AssumptionReport(d2(s.y), d2(s.p), d2(s.f), tol)


@dataclass(frozen=True)
class ConvexityReport:
    """One inverter at one operating point."""

    inverter: str
    denominator: float          # D
    k_value: float              # K from finite-difference derivatives
    second_derivative: float    # d2|I|^2/dq2, pu per kvar^2
    tol: float = DEFAULT_TOL

    @property
    def k_nonnegative(self) -> bool:
        return self.k_value >= -self.tol

    @property
    def satisfied(self) -> bool:
        return self.denominator >= 0 and self.second_derivative >= -self.tol


def convexity_report(model, injections, inverter, h=None, taps=None, pv_kw=None, pv_kvar=None,
                     tol=DEFAULT_TOL) -> ConvexityReport | None:
    """Evaluate D, K and the measured curvature at the inverter's present setting.

    The stencil centre is pulled inside the capacity when the command sits at a
    limit; returns None when the capacity is narrower than the stencil.
    """
    k = _pv_lookup(model, inverter)
    if pv_kw is None or pv_kvar is None:
        kw0, kvar0 = _pv_outputs(model, injections)
        pv_kw = kw0 if pv_kw is None else np.asarray(pv_kw, dtype=float)
        pv_kvar = kvar0 if pv_kvar is None else np.asarray(pv_kvar, dtype=float)
    pv = model.pvs[k]
    h = 1e-3 * pv.rated_kva if h is None else float(h)
    qmax = np.sqrt(max(pv.rated_kva ** 2 - float(pv_kw[k]) ** 2, 0.0))
    if qmax < 2 * h:
        return None
    qc = float(np.clip(pv_kvar[k], -qmax + h, qmax - h))
    s = sample_branch(model, injections, k, [qc - h, qc, qc + h], taps, pv_kw, pv_kvar)

    def d1(a):
        return (a[2] - a[0]) / (2 * h)

    def d2(a):
        return (a[2] - 2 * a[1] + a[0]) / (h * h)

    # per-kvar derivatives of per-phase pu flows
    dmat = single_phase_condition(s.r_eff[1], s.x_eff[1], s.p[1], s.f[1], 0.0, np.sqrt(s.y[1]))
    kval = k_numerator(s.p[1], s.f[1], s.y[1], d1(s.p), d1(s.f), d1(s.y), d2(s.y))
    return ConvexityReport(pv.id, float(dmat), kval, float(d2(s.i2)), tol)
