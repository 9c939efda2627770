"""Transient, operating-point and DC-sweep analyses without Newton iterations.

Every nonlinear device is replaced, one step at a time, by a constant
equivalent conductance (predicted by a half-step Taylor extrapolation of the
chord conductance), so each step costs exactly one linear solve. The step
size follows the adaptive rule

    h = eps * min( C_j / sum_k G_jk  over capacitive nodes j,
                   2|Vgs - Vth| / |dVgs/dt|  over conducting MOSFETs,
                   2|v| / |dv/dt|  over RTD / nanowire branches )

clamped to [h_min, h_max], and a relative local-error estimate compares the
step the predicted conductance produced against the step the re-evaluated
conductance would have produced; offending steps are rejected and halved.

Operating points are found pseudo-transiently: sources ramp linearly from
zero and the integration runs until the node voltages stop moving. DC sweeps
chain operating points with previous-point continuation, so sweep direction
matters for multistable circuits (hysteresis is expected, not hidden).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .devices import (DeviceState, G_FLOOR, V_EPS, device_step_bound, geq_predict,
                      mos_geq, nanowire_current, nanowire_dgeq_dv, nanowire_geq,
                      rtd_current, rtd_dgeq_dv, rtd_geq)
from .mna import FlopCounter, assemble, node_order, solve
from .netlist import (Dc, Element, ElementKind, Netlist, Pwl, TranAnalysis,
                      eval_waveform, waveform_breakpoints)

# Nodes whose computed voltage change is below this are skipped by the local
# error test (the relative measure is meaningless at quiescent nodes).
_DV_FLOOR = 1e-9


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    """Engine knobs. ``h_max`` defaults to t_stop/50 when left unset."""

    eps: float = 0.01
    h_min: float = 1e-15
    h_max: Optional[float] = None
    t_stop: Optional[float] = None
    op_ramp: float = 1e-9
    op_settle_tol: Optional[float] = None
    max_steps: int = 200_000
    start_from_op: bool = False

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise ValueError("eps must lie in (0, 1)")
        if self.h_min <= 0.0:
            raise ValueError("h_min must be positive")
        if self.h_max is not None and self.h_max <= self.h_min:
            raise ValueError("h_max must exceed h_min")


@dataclass
class WaveformSeries:
    """Adaptive-grid simulation output plus run counters."""

    times: np.ndarray
    voltages: np.ndarray           # len(times) x n_nodes
    nodes: List[str]
    steps_taken: int = 0
    steps_rejected: int = 0
    n_solves: int = 0
    hmin_warnings: int = 0
    flops: FlopCounter = field(default_factory=FlopCounter)

    def v(self, node: str) -> np.ndarray:
        return self.voltages[:, self.nodes.index(node)]


@dataclass
class OperatingPoint:
    voltages: np.ndarray
    nodes: List[str]
    settled: bool
    series: WaveformSeries

    def v(self, node: str) -> float:
        return float(self.voltages[self.nodes.index(node)])


@dataclass
class DcSweep:
    biases: np.ndarray
    voltages: np.ndarray           # points x n_nodes
    currents: Dict[str, np.ndarray]
    settled: np.ndarray
    nodes: List[str]
    flops: FlopCounter
    n_solves: int = 0


def next_step_size(node_caps: Sequence[float], node_gsums: Sequence[float],
                   device_bounds: Sequence[float], eps: float,
                   h_min: float, h_max: float) -> float:
    """Adaptive step: eps times the minimum of the node RC terms and the
    device slew terms, clamped to [h_min, h_max]. Nodes without grounded
    capacitance contribute no term."""
    best = math.inf
    for c, g in zip(node_caps, node_gsums):
        if c > 0.0 and g > 0.0:
            best = min(best, c / g)
    for b in device_bounds:
        best = min(best, b)
    if not math.isfinite(best):
        return h_max
    return min(max(eps * best, h_min), h_max)


# --- engine internals ---------------------------------------------------------

class _Engine:
    def __init__(self, net: Netlist, cfg: SimConfig, fc: Optional[FlopCounter] = None):
        if net.elements_of(ElementKind.NOISE):
            raise SimulationError("deck contains noise sources; use the stochastic engine")
        self.net = net
        self.cfg = cfg
        self.fc = fc if fc is not None else FlopCounter()
        self.node_index = node_order(net)
        self.n = len(self.node_index)
        self.nodes = list(net.nodes)
        self.nonlinear = net.elements_of(*dev_kinds())
        self.models = {el.name: net.model_of(el) for el in self.nonlinear}
        self.states: Dict[str, DeviceState] = {el.name: DeviceState()
                                               for el in self.nonlinear}
        self.grounded_cap = np.zeros(self.n)
        self.gsum_static = np.zeros(self.n)
        for el in net.elements:
            if el.kind is ElementKind.CAPACITOR and "0" in el.nodes:
                other = el.nodes[0] if el.nodes[1] == "0" else el.nodes[1]
                if other != "0":
                    self.grounded_cap[self.node_index[other]] += el.value
            elif el.kind is ElementKind.RESISTOR:
                g = 1.0 / el.value
                for nd in el.nodes:
                    if nd != "0":
                        self.gsum_static[self.node_index[nd]] += g
        # nodes held by a source cannot respond to a conductance change, so
        # the local error test is meaningless there
        self.source_nodes = {nd for el in net.elements_of(ElementKind.VSOURCE)
                             for nd in el.nodes if nd != "0"}
        self.n_solves = 0

    def _vn(self, x: np.ndarray, node: str) -> float:
        return 0.0 if node == "0" else float(x[self.node_index[node]])

    def _branch(self, x: np.ndarray, el: Element) -> float:
        return self._vn(x, el.nodes[0]) - self._vn(x, el.nodes[1])

    def _mos_bias(self, x: np.ndarray, el: Element) -> Tuple[float, float]:
        """(vgs, vds) with drain/source roles normalized so vds >= 0."""
        vd = self._vn(x, el.nodes[0])
        vg = self._vn(x, el.nodes[1])
        vs = self._vn(x, el.nodes[2])
        if vd >= vs:
            return vg - vs, vd - vs
        return vg - vd, vs - vd

    def direct_geq(self, el: Element, x: np.ndarray) -> float:
        m = self.models[el.name]
        if el.kind is ElementKind.RTD:
            return float(rtd_geq(m, self._branch(x, el), self.fc))
        if el.kind is ElementKind.NANOWIRE:
            return float(nanowire_geq(m, self._branch(x, el), self.fc))
        vgs, vds = self._mos_bias(x, el)
        return float(mos_geq(m, vgs, vds, self.fc))

    def predicted_geq(self, el: Element, x: np.ndarray, h: float) -> float:
        st = self.states[el.name]
        m = self.models[el.name]
        if st.h_prev <= 0.0:
            return self.direct_geq(el, x)
        if el.kind is ElementKind.MOSFET:
            # stepwise-constant prediction at half-step extrapolated bias
            vgs = st.ctrl_now + 0.5 * h * st.ctrl_slew()
            vds = max(st.v_now + 0.5 * h * st.slew(), 0.0)
            return float(mos_geq(m, vgs, vds, self.fc))
        if abs(st.v_now) < V_EPS:
            return self.direct_geq(el, x)
        if el.kind is ElementKind.RTD:
            dg = float(rtd_dgeq_dv(m, st.v_now, self.fc))
        else:
            dg = float(nanowire_dgeq_dv(m, st.v_now, self.fc))
        return geq_predict(st, dg, h, self.fc)

    def gsum_now(self) -> np.ndarray:
        g = self.gsum_static.copy()
        for el in self.nonlinear:
            geq = self.states[el.name].geq_now
            if el.kind is ElementKind.MOSFET:
                touch = (el.nodes[0], el.nodes[2])
            else:
                touch = el.nodes[:2]
            for nd in touch:
                if nd != "0":
                    g[self.node_index[nd]] += geq
        return g

    def step_size(self, h_max: float, with_device_bounds: bool = True) -> float:
        bounds = [device_step_bound(el.kind, self.states[el.name], self.cfg.eps)
                  for el in self.nonlinear] if with_device_bounds else []
        return next_step_size(self.grounded_cap, self.gsum_now(), bounds,
                              self.cfg.eps, self.cfg.h_min, h_max)

    def local_error(self, el: Element, g_pred: float, g_act: float,
                    x_old: np.ndarray, x_new: np.ndarray, h: float) -> float:
        """Worst relative mismatch, over the device's terminals, between the
        solved voltage change and the change the re-evaluated conductance
        implies with the rest of the circuit frozen."""
        if el.kind is ElementKind.MOSFET:
            a_name, b_name = el.nodes[0], el.nodes[2]
        else:
            a_name, b_name = el.nodes[:2]
        err = 0.0
        for me, other in ((a_name, b_name), (b_name, a_name)):
            if me == "0" or me in self.source_nodes:
                continue
            j = self.node_index[me]
            vj_old, vj_new = float(x_old[j]), float(x_new[j])
            vo_new = self._vn(x_new, other)
            cjh = self.grounded_cap[j] / h
            i_other = cjh * (vj_new - vj_old) + g_pred * (vj_new - vo_new)
            v_act = (i_other + cjh * vj_old + g_act * vo_new) / (cjh + g_act)
            dv_act = v_act - vj_old
            if abs(dv_act) < _DV_FLOOR:
                continue
            err = max(err, abs(dv_act - (vj_new - vj_old)) / abs(dv_act))
        return err

    def commit_states(self, x_new: np.ndarray, g_act: Dict[str, float], h: float):
        for el in self.nonlinear:
            st = self.states[el.name]
            if el.kind is ElementKind.MOSFET:
                vgs, vds = self._mos_bias(x_new, el)
                st.v_prev, st.v_now = st.v_now, vds
                st.ctrl_prev, st.ctrl_now = st.ctrl_now, vgs
                st.overdrive = vgs - self.models[el.name].vth
            else:
                vb = self._branch(x_new, el)
                st.v_prev, st.v_now = st.v_now, vb
                st.ctrl_prev, st.ctrl_now = st.ctrl_now, vb
            st.h_prev = h
            st.geq_now = max(g_act[el.name], G_FLOOR)

    def seed_states(self, x: np.ndarray):
        """Initialize device histories at the starting solution (no slew)."""
        for el in self.nonlinear:
            st = self.states[el.name]
            if el.kind is ElementKind.MOSFET:
                vgs, vds = self._mos_bias(x, el)
                st.v_now = st.v_prev = vds
                st.ctrl_now = st.ctrl_prev = vgs
                st.overdrive = vgs - self.models[el.name].vth
            else:
                vb = self._branch(x, el)
                st.v_now = st.v_prev = vb
                st.ctrl_now = st.ctrl_prev = vb
            st.h_prev = 0.0
            st.geq_now = max(self.direct_geq(el, x), G_FLOOR)

    def run(self, t_stop: float, h_max: float, x0: Optional[np.ndarray] = None,
            settle_after: Optional[float] = None, settle_tol: float = 0.0,
            error_control: bool = True) -> Tuple[WaveformSeries, np.ndarray, bool]:
        # Settle-mode runs (error_control=False) look for a stationary point:
        # the artificial time axis carries no accuracy meaning there, so the
        # conductance is evaluated directly each step and the slew-based
        # device bounds (which would choke on a bouncing iterate) are skipped.
        predictive = error_control
        net = self.net
        n_unknowns = self.n + len(net.elements_of(ElementKind.VSOURCE))
        x = np.zeros(n_unknowns) if x0 is None else x0.copy()
        breakpoints = sorted({bp for el in net.elements_of(ElementKind.VSOURCE)
                              for bp in waveform_breakpoints(el.waveform, t_stop)})
        times = [0.0]
        trace = [x[:self.n].copy()]
        steps = rejected = warnings = 0
        settled = False
        t = 0.0
        h_last = math.inf
        while t < t_stop * (1.0 - 1e-12):
            if steps + rejected >= self.cfg.max_steps:
                raise SimulationError(f"step budget exceeded ({self.cfg.max_steps})")
            # growth limiter: after an error-forced reduction, recover
            # geometrically instead of re-probing the full step every step
            h = min(self.step_size(h_max, with_device_bounds=predictive),
                    2.0 * h_last)
            h = min(h, t_stop - t)
            for bp in breakpoints:
                if t < bp * (1.0 - 1e-12) and t + h > bp:
                    h = bp - t
                    break
            while True:
                if predictive:
                    g_pred = {el.name: max(self.predicted_geq(el, x, h), G_FLOOR)
                              for el in self.nonlinear}
                else:
                    # committed geq_now is the direct evaluation at the
                    # current state, so no fresh device call is needed
                    g_pred = {el.name: (self.states[el.name].geq_now
                                        if self.states[el.name].h_prev > 0.0
                                        else max(self.direct_geq(el, x), G_FLOOR))
                              for el in self.nonlinear}
                sys = assemble(net, g_pred, vstate=x[:self.n], h=h, t=t + h)
                x_new = solve(sys, self.fc)
                self.n_solves += 1
                g_act = {el.name: max(self.direct_geq(el, x_new), G_FLOOR)
                         for el in self.nonlinear}
                if not error_control:
                    break
                err = 0.0
                for el in self.nonlinear:
                    err = max(err, self.local_error(el, g_pred[el.name],
                                                    g_act[el.name], x, x_new, h))
                if err <= self.cfg.eps:
                    break
                if h <= self.cfg.h_min * (1.0 + 1e-12):
                    warnings += 1
                    break
                rejected += 1
                h = max(0.5 * h, self.cfg.h_min)
            self.commit_states(x_new, g_act, h)
            dx = np.max(np.abs(x_new[:self.n] - x[:self.n])) if self.n else 0.0
            x = x_new
            t += h
            h_last = h
            steps += 1
            times.append(t)
            trace.append(x[:self.n].copy())
            if settle_after is not None and t >= settle_after and dx / h < settle_tol:
                settled = True
                break
        series = WaveformSeries(times=np.array(times), voltages=np.array(trace),
                                nodes=self.nodes, steps_taken=steps,
                                steps_rejected=rejected, n_solves=self.n_solves,
                                hmin_warnings=warnings, flops=self.fc)
        return series, x, settled


def dev_kinds():
    return (ElementKind.RTD, ElementKind.MOSFET, ElementKind.NANOWIRE)


def _resolved_h_max(cfg: SimConfig, t_stop: float) -> float:
    return cfg.h_max if cfg.h_max is not None else t_stop / 50.0


def transient(net: Netlist, cfg: SimConfig,
              fc: Optional[FlopCounter] = None) -> WaveformSeries:
    """Adaptive conductance-stepping transient from t = 0 to cfg.t_stop.

    Initial node voltages are zero unless ``cfg.start_from_op`` asks for the
    operating point as the starting state.
    """
    t_stop = cfg.t_stop
    if t_stop is None:
        tran = [a for a in net.analyses if isinstance(a, TranAnalysis)]
        if not tran:
            raise SimulationError("no t_stop configured and no .tran card in deck")
        t_stop = tran[0].t_stop
        if tran[0].eps is not None:
            cfg = replace(cfg, eps=tran[0].eps)
    x0 = None
    eng = _Engine(net, cfg, fc)
    if cfg.start_from_op:
        op = operating_point(net, cfg, fc=eng.fc)
        x0 = np.zeros(eng.n + len(net.elements_of(ElementKind.VSOURCE)))
        x0[:eng.n] = op.voltages
        eng.seed_states(x0)
    series, _, _ = eng.run(t_stop, _resolved_h_max(cfg, t_stop), x0=x0)
    return series


def _ramped(net: Netlist, ramp: float) -> Netlist:
    """Copy of the deck with every source ramped 0 -> value(t=0) over ``ramp``."""
    elements = []
    for el in net.elements:
        if el.kind is ElementKind.VSOURCE:
            w0 = eval_waveform(el.waveform, 0.0)
            wave = Pwl(((0.0, 0.0), (ramp, w0)))
            elements.append(replace(el, waveform=wave))
        else:
            elements.append(el)
    return replace(net, elements=tuple(elements))


def pin_source(net: Netlist, source: str, level: float) -> Netlist:
    elements = []
    for el in net.elements:
        if el.kind is ElementKind.VSOURCE and el.name.lower() == source.lower():
            elements.append(replace(el, waveform=Dc(level)))
        else:
            elements.append(el)
    return replace(net, elements=tuple(elements))


def _settle_tol(net: Netlist, cfg: SimConfig) -> float:
    if cfg.op_settle_tol is not None:
        return cfg.op_settle_tol
    scale = 1.0
    for el in net.elements_of(ElementKind.VSOURCE):
        scale = max(scale, abs(eval_waveform(el.waveform, 0.0)))
    return 1.0 * scale


def _linear_op(net: Netlist, fc: FlopCounter) -> OperatingPoint:
    """A circuit without nonlinear devices needs exactly one DC solve."""
    sys = assemble(net, {}, h=math.inf, t=0.0)
    x = solve(sys, fc)
    n = len(net.nodes)
    series = WaveformSeries(times=np.array([0.0]), voltages=x[:n].reshape(1, -1),
                            nodes=list(net.nodes), steps_taken=1, n_solves=1,
                            flops=fc)
    return OperatingPoint(voltages=x[:n].copy(), nodes=list(net.nodes),
                          settled=True, series=series)


def operating_point(net: Netlist, cfg: SimConfig,
                    fc: Optional[FlopCounter] = None) -> OperatingPoint:
    """Pseudo-transient DC solution: ramp sources over ``cfg.op_ramp``,
    integrate until node voltages stop moving (or 100 ramps elapse).
    Linear decks short-circuit to a single resistive solve."""
    fc = fc if fc is not None else FlopCounter()
    if not net.elements_of(*dev_kinds()):
        if net.elements_of(ElementKind.NOISE):
            raise SimulationError("deck contains noise sources; "
                                  "use the stochastic engine")
        return _linear_op(net, fc)
    ramped = _ramped(net, cfg.op_ramp)
    eng = _Engine(ramped, cfg, fc)
    series, x, settled = eng.run(
        t_stop=100.0 * cfg.op_ramp, h_max=cfg.op_ramp / 10.0,
        settle_after=cfg.op_ramp, settle_tol=_settle_tol(net, cfg),
        error_control=False)
    return OperatingPoint(voltages=x[:eng.n].copy(), nodes=eng.nodes,
                          settled=settled, series=series)


def dc_sweep(net: Netlist, source: str, start: float, stop: float, points: int,
             cfg: SimConfig, fc: Optional[FlopCounter] = None) -> DcSweep:
    """Swept operating points with previous-point continuation.

    The first bias is solved by a full source ramp; each later bias starts
    from the previous solution and settles in place. RTD and nanowire
    terminal currents are recorded per point.
    """
    if points < 2:
        raise ValueError("dc_sweep requires at least 2 points")
    try:
        src = net.element(source)
    except KeyError:
        raise ValueError(f"no element named '{source}' in the deck")
    if src.kind is not ElementKind.VSOURCE:
        raise ValueError(f"'{source}' is not a voltage source")
    fc = fc if fc is not None else FlopCounter()
    biases = np.linspace(start, stop, points)
    if not net.elements_of(*dev_kinds()):
        volts = np.zeros((points, len(net.nodes)))
        n_solves = 0
        for k, b in enumerate(biases):
            op = _linear_op(pin_source(net, source, b), fc)
            volts[k] = op.voltages
            n_solves += 1
        return DcSweep(biases=biases, voltages=volts, currents={},
                       settled=np.ones(points, dtype=bool),
                       nodes=list(net.nodes), flops=fc, n_solves=n_solves)
    first = operating_point(pin_source(net, source, biases[0]), cfg, fc=fc)
    nodes = first.nodes
    n = len(nodes)
    volts = np.zeros((points, n))
    settled = np.zeros(points, dtype=bool)
    volts[0] = first.voltages
    settled[0] = first.settled
    n_solves = first.series.n_solves

    # carry the full unknown vector and device states across points
    eng = None
    x = None
    tol = _settle_tol(net, cfg)
    prev_states = None
    for k in range(1, points):
        pinned = pin_source(net, source, biases[k])
        eng = _Engine(pinned, cfg, fc)
        nv = len(pinned.elements_of(ElementKind.VSOURCE))
        x0 = np.zeros(eng.n + nv)
        x0[:n] = volts[k - 1]
        if prev_states is None:
            eng.seed_states(x0)
        else:
            eng.states = prev_states
        series, x, ok = eng.run(t_stop=100.0 * cfg.op_ramp,
                                h_max=cfg.op_ramp / 10.0, x0=x0,
                                settle_after=0.0, settle_tol=tol,
                                error_control=False)
        volts[k] = x[:n]
        settled[k] = ok
        prev_states = eng.states
        n_solves += series.n_solves

    currents: Dict[str, np.ndarray] = {}
    idx = {name: i for i, name in enumerate(nodes)}
    for el in net.elements_of(ElementKind.RTD, ElementKind.NANOWIRE):
        m = net.model_of(el)
        va = volts[:, idx[el.nodes[0]]] if el.nodes[0] != "0" else np.zeros(points)
        vb = volts[:, idx[el.nodes[1]]] if el.nodes[1] != "0" else np.zeros(points)
        vbr = va - vb
        if el.kind is ElementKind.RTD:
            currents[el.name] = np.asarray(rtd_current(m, vbr))
        else:
            currents[el.name] = np.asarray(nanowire_current(m, vbr))
    return DcSweep(biases=biases, voltages=volts, currents=currents,
                   settled=settled, nodes=nodes, flops=fc, n_solves=n_solves)
