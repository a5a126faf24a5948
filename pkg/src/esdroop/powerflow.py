"""Backward/forward sweep power flow for radial unbalanced feeders.

All quantities are per-unit on the feeder's per-phase base. Arrays carry a
trailing ``(bus, phase)`` or ``(branch, phase)`` shape and may have any number
of leading batch dimensions, which is what the dispatch oracle uses to
evaluate many candidate reactive dispatches in one sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .feeder import FeederModel

A120 = np.exp(-2j * np.pi / 3)
FLAT = np.array([1.0, A120, A120.conjugate()])

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 50


class PowerFlowError(RuntimeError):
    pass


class NonConvergenceError(PowerFlowError):
    def __init__(self, iterations: int, mismatch: float):
        super().__init__(f"sweep did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass(frozen=True)
class Topology:
    """Index arrays derived from a feeder, in sweep order."""

    order: np.ndarray          # bus indices, source first
    parent: np.ndarray         # parent bus index per bus (-1 for source)
    feeder_branch: np.ndarray  # branch index feeding each bus (-1 for source)
    z: np.ndarray              # (nbranch, 3, 3) per-unit impedance
    bus_mask: np.ndarray       # (nbus, 3) bool
    source: int


_topo_by_id: dict[int, tuple[FeederModel, Topology]] = {}


def topology(model: FeederModel) -> Topology:
    hit = _topo_by_id.get(id(model))
    if hit is not None and hit[0] is model:
        return hit[1]
    nb = len(model.buses)
    bi = model.bus_index
    order = np.array([bi[b] for b in model.topological_order])
    parent = -np.ones(nb, dtype=int)
    feeder_branch = -np.ones(nb, dtype=int)
    z = np.zeros((len(model.branches), 3, 3), dtype=complex)
    for k, br in enumerate(model.branches):
        parent[bi[br.to_bus]] = bi[br.from_bus]
        feeder_branch[bi[br.to_bus]] = k
        z[k] = model.branch_z_pu(br.id)
        if np.any(np.abs(np.diag(z[k]))[br.phases.mask] == 0):
            raise PowerFlowError(f"branch {br.id!r} has zero self impedance on a present phase")
    mask = np.array([b.phases.mask for b in model.buses])
    topo = Topology(order, parent, feeder_branch, z, mask, bi[model.source_bus])
    if len(_topo_by_id) > 64:
        _topo_by_id.clear()
    _topo_by_id[id(model)] = (model, topo)
    return topo


@dataclass
class InjectionSet:
    """Per-bus, per-phase complex power at 1.0 pu voltage (per-unit).

    Load parts are consumption (positive = drawn from the network), split by
    ZIP behaviour; ``generation`` is constant-power inverter output P + jQ.
    Net injection at voltage V is ``generation - (s_power + s_current*|V| + s_impedance*|V|**2)``.
    """

    s_power: np.ndarray
    s_current: np.ndarray
    s_impedance: np.ndarray
    generation: np.ndarray

    @classmethod
    def zeros(cls, model: FeederModel, batch: tuple[int, ...] = ()) -> "InjectionSet":
        shape = batch + (len(model.buses), 3)
        return cls(*(np.zeros(shape, dtype=complex) for _ in range(4)))

    def consumption(self, vmag: np.ndarray) -> np.ndarray:
        return self.s_power + self.s_current * vmag + self.s_impedance * vmag**2

    def nominal_load(self) -> np.ndarray:
        return self.s_power + self.s_current + self.s_impedance

    def broadcast(self, batch: tuple[int, ...]) -> "InjectionSet":
        def b(a):
            return np.broadcast_to(a, batch + a.shape[-2:]).copy()
        return InjectionSet(b(self.s_power), b(self.s_current), b(self.s_impedance), b(self.generation))

    def copy(self) -> "InjectionSet":
        return InjectionSet(self.s_power.copy(), self.s_current.copy(), self.s_impedance.copy(),
                            self.generation.copy())


def build_injections(
    model: FeederModel,
    load_scale=1.0,
    pv_kw=None,
    pv_kvar=None,
) -> InjectionSet:
    """Assemble injections from feeder ratings.

    ``load_scale`` is a scalar or one multiplier per load (applied to P and Q);
    ``pv_kw``/``pv_kvar`` give each inverter's total output, split evenly over
    its phases. Reactive output is positive when the inverter injects vars.
    """
    inj = InjectionSet.zeros(model)
    scale = np.broadcast_to(np.asarray(load_scale, dtype=float), (len(model.loads),))
    sb = model.s_base_kva
    for k, ld in enumerate(model.loads):
        i = model.bus_index[ld.bus]
        s = scale[k] * (np.asarray(ld.kw) + 1j * np.asarray(ld.kvar)) / sb
        zp, zi, zz = ld.zip_fractions
        inj.s_power[i] += zp * s
        inj.s_current[i] += zi * s
        inj.s_impedance[i] += zz * s
    n = len(model.pvs)
    p = np.zeros(n) if pv_kw is None else np.broadcast_to(np.asarray(pv_kw, dtype=float), (n,))
    q = np.zeros(n) if pv_kvar is None else np.broadcast_to(np.asarray(pv_kvar, dtype=float), (n,))
    for k, pv in enumerate(model.pvs):
        i = model.bus_index[pv.bus]
        mask = pv.phases.mask
        inj.generation[i, mask] += (p[k] + 1j * q[k]) / (len(pv.phases) * sb)
    return inj


def set_pv_output(model: FeederModel, inj: InjectionSet, pv_kw, pv_kvar) -> InjectionSet:
    """Return a copy of ``inj`` with inverter output replaced; supports batched kvar.

    ``pv_kvar`` may have shape ``batch + (npv,)``; the result then carries that batch.
    """
    pv_kw = np.asarray(pv_kw, dtype=float)
    pv_kvar = np.asarray(pv_kvar, dtype=float)
    batch = pv_kvar.shape[:-1]
    out = inj.broadcast(batch) if batch else inj.copy()
    out.generation[...] = 0
    sb = model.s_base_kva
    for k, pv in enumerate(model.pvs):
        i = model.bus_index[pv.bus]
        share = (pv_kw[..., k] + 1j * pv_kvar[..., k]) / (len(pv.phases) * sb)
        for ph in pv.phases.indices:
            out.generation[..., i, ph] += share
    return out


@dataclass
class PowerFlowSolution:
    model: FeederModel
    voltages: np.ndarray          # (..., nbus, 3) complex pu, zero on absent phases
    currents: np.ndarray          # (..., nbranch, 3) complex pu at the receiving end
    branch_losses: np.ndarray     # (..., nbranch) complex pu
    source_power: np.ndarray      # (...,) complex pu, summed over phases
    load_power: np.ndarray        # (..., nbus, 3) consumed by loads
    generation: np.ndarray        # (..., nbus, 3) delivered by inverters
    taps: np.ndarray              # (nbranch, 3) ratios used
    iterations: int
    mismatch: float
    mismatch_history: list[float] = field(default_factory=list)

    @property
    def total_loss(self) -> np.ndarray:
        return self.branch_losses.sum(axis=-1)

    @property
    def vmag(self) -> np.ndarray:
        return np.abs(self.voltages)

    def bus_vmag(self, bus: str) -> np.ndarray:
        """Magnitudes on the bus's present phases only."""
        i = self.model.bus_index[bus]
        mask = self.model.buses[i].phases.mask
        return np.abs(self.voltages[..., i, :])[..., mask]

    def branch_current(self, branch_id: str) -> np.ndarray:
        return self.currents[..., self.model.branch_index[branch_id], :]

    def branch_loss(self, branch_id: str):
        if branch_id not in self.model.branch_index:
            raise KeyError(f"unknown branch {branch_id!r}")
        return self.branch_losses[..., self.model.branch_index[branch_id]]

    def balance_residual(self) -> np.ndarray:
        """|S_source - sum(S_load) + sum(S_gen) - S_loss| per batch element."""
        net = self.load_power.sum(axis=(-1, -2)) - self.generation.sum(axis=(-1, -2))
        return np.abs(self.source_power - net - self.total_loss)

    def sending_power(self, branch_id: str) -> np.ndarray:
        """Per-phase complex power entering the branch at its sending end."""
        k = self.model.branch_index[branch_id]
        br = self.model.branches[k]
        v_to = self.voltages[..., self.model.bus_index[br.to_bus], :]
        i = self.currents[..., k, :]
        drop = np.einsum("mn,...n->...m", topology(self.model).z[k], i)
        return (v_to + drop) * i.conj()

    def phase_angle_spread(self) -> float:
        """Largest deviation (degrees) of inter-phase voltage angles from 120 at three-phase buses."""
        worst = 0.0
        v = self.voltages.reshape((-1,) + self.voltages.shape[-2:])
        for k, bus in enumerate(self.model.buses):
            if len(bus.phases) != 3:
                continue
            ang = np.angle(v[:, k, :], deg=True)
            for a, b in ((0, 1), (1, 2), (2, 0)):
                d = (ang[:, a] - ang[:, b]) % 360.0
                worst = max(worst, float(np.max(np.abs(d - 120.0))))
        return worst


def branch_loss(solution: PowerFlowSolution, branch_id: str):
    """Complex loss sum_{m,n} z_mn I_m conj(I_n) on one branch."""
    return solution.branch_loss(branch_id)


def total_loss(solution: PowerFlowSolution):
    return solution.total_loss


def _loss(z: np.ndarray, cur: np.ndarray) -> np.ndarray:
    return np.einsum("kmn,...kn,...km->...k", z, cur, cur.conj())


def tap_ratios(model: FeederModel, taps=None) -> np.ndarray:
    """(nbranch, 3) ideal ratios; ``taps`` maps branch id -> per-phase taps, or is a list of Regulators."""
    ratio = np.ones((len(model.branches), 3))
    regs = {r.branch: r for r in model.regulators}
    if taps is None:
        taps = {r.branch: r.taps for r in model.regulators}
    elif not isinstance(taps, dict):
        taps = {r.branch: r.taps for r in taps}
    for bid, t in taps.items():
        reg = regs[bid]
        ratio[model.branch_index[bid]] = 1.0 + np.asarray(t, dtype=float) * reg.step
    return ratio


def solve(
    model: FeederModel,
    injections: InjectionSet,
    taps=None,
    v0: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """Solve one (or a batch of) operating points by current-summation sweep.

    Loads draw current ``conj(S(|V|)/V)`` at the present voltage estimate; the
    backward pass accumulates these into branch currents and the forward pass
    recomputes voltages from the source. Iteration stops when the largest
    per-phase voltage change drops below ``tol``.
    """
    topo = topology(model)
    ratio = tap_ratios(model, taps)
    batch = injections.s_power.shape[:-2]
    nbr = len(model.branches)
    mask = topo.bus_mask
    for arr in (injections.s_power, injections.s_current, injections.s_impedance, injections.generation):
        if not np.all(np.isfinite(arr)):
            raise ValueError("injections must be finite")

    vsrc = model.source_voltage_pu * FLAT * mask[topo.source]
    if v0 is None:
        v = np.broadcast_to(FLAT * mask, batch + mask.shape).astype(complex) * model.source_voltage_pu
        v = _flat_with_taps(topo, ratio, v, vsrc)
    else:
        v = np.broadcast_to(v0, batch + mask.shape).astype(complex)

    order = topo.order[1:]
    rev = order[::-1]
    cur = np.zeros(batch + (nbr, 3), dtype=complex)
    history: list[float] = []
    mismatch = np.inf
    for it in range(1, max_iter + 1):
        vmag = np.abs(v)
        safe_v = np.where(mask, v, 1.0)
        if np.any(vmag[..., mask] == 0):
            raise PowerFlowError("voltage collapsed to zero")
        i_load = np.where(mask, np.conj(injections.consumption(vmag) / safe_v), 0)
        i_gen = np.where(mask, np.conj(injections.generation / safe_v), 0)
        acc = i_load - i_gen
        for b in rev:
            k = topo.feeder_branch[b]
            cur[..., k, :] = acc[..., b, :]
            acc[..., topo.parent[b], :] += ratio[k] * acc[..., b, :]
        v_new = np.empty_like(v)
        v_new[..., topo.source, :] = vsrc
        for b in order:
            k = topo.feeder_branch[b]
            drop = np.einsum("mn,...n->...m", topo.z[k], cur[..., k, :])
            v_new[..., b, :] = (ratio[k] * v_new[..., topo.parent[b], :] - drop) * mask[b]
        mismatch = float(np.max(np.abs(v_new - v))) if v.size else 0.0
        history.append(mismatch)
        v = v_new
        if not np.all(np.isfinite(v)):
            raise NonConvergenceError(it, float("inf"))
        if mismatch < tol:
            break
    else:
        raise NonConvergenceError(max_iter, mismatch)

    # account powers with the currents that produced the final voltages so the
    # balance identity holds to rounding, independent of the sweep tolerance
    load_power = v * i_load.conj()
    gen_power = v * i_gen.conj()
    source_power = (vsrc * acc[..., topo.source, :].conj()).sum(axis=-1)
    return PowerFlowSolution(
        model=model, voltages=v, currents=cur.copy(), branch_losses=_loss(topo.z, cur),
        source_power=source_power, load_power=load_power, generation=gen_power,
        taps=ratio, iterations=it, mismatch=mismatch, mismatch_history=history,
    )


def _flat_with_taps(topo: Topology, ratio: np.ndarray, v: np.ndarray, vsrc: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[..., topo.source, :] = vsrc
    for b in topo.order[1:]:
        k = topo.feeder_branch[b]
        v[..., b, :] = ratio[k] * v[..., topo.parent[b], :] * topo.bus_mask[b]
    return v
