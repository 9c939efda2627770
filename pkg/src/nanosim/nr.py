"""Newton-Raphson baseline solver and brute-force DC oracles.

The Newton solver here is deliberately naive: each nonlinear device is
linearized by its differential conductance dI/dV (the slope that goes
negative inside an NDR region) with full steps and no source stepping,
Gmin stepping or damping. On non-monotonic devices it reproduces the
classic failure mode where iterates bounce between two points without
converging; a 2-cycle detector flags that explicitly. It exists to
validate the conductance-stepping engine and to compare operation counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .devices import (RtdModel, mos_current, mos_didv, mos_gm,
                      nanowire_current, nanowire_didv, rtd_current, rtd_didv)
from .mna import FlopCounter, MnaSystem, SingularSystemError, node_order, solve
from .netlist import DcAnalysis, Element, ElementKind, Netlist, eval_waveform
from .swec import SimConfig, dc_sweep, operating_point, pin_source

# Iterates closer than this are "the same point" for 2-cycle detection, while
# still moving by more than the voltage tolerance below between iterations.
_OSC_ATOL = 1e-9
_OSC_VTOL = 1e-6
_OSC_RUNS = 5
# Source branch equations are satisfied exactly after any solve; this only
# guards against declaring an unsolved initial guess converged.
_SRC_VTOL = 1e-9


@dataclass
class NrReport:
    converged: bool
    iterations: int
    trajectory: List[np.ndarray]
    oscillation_detected: bool
    flops: FlopCounter
    residual: float
    x: np.ndarray
    nodes: List[str]


@dataclass
class FlopCompare:
    swec_flops: int
    nr_flops: int
    speedup: float


def _device_iv(el: Element, model, vbr: float, fc: FlopCounter) -> Tuple[float, float]:
    if el.kind is ElementKind.RTD:
        return (float(rtd_current(model, vbr, fc)), float(rtd_didv(model, vbr, fc)))
    return (float(nanowire_current(model, vbr, fc)), float(nanowire_didv(model, vbr)))


def nr_dc(net: Netlist, initial_guess: Optional[np.ndarray] = None,
          max_iter: int = 100, tol: float = 1e-9) -> NrReport:
    """Plain Newton-Raphson DC solve on the nonlinear nodal equations.

    Capacitors are open circuits; noise sources are rejected. Converged
    means the largest nodal KCL residual is at most ``tol`` amps. A
    detected 2-cycle sets ``oscillation_detected`` (iteration continues to
    ``max_iter`` so failed runs carry their full cost).
    """
    if net.elements_of(ElementKind.NOISE):
        raise ValueError("nr_dc does not handle noise sources")
    node_index = node_order(net)
    n = len(node_index)
    sources = net.elements_of(ElementKind.VSOURCE)
    m = len(sources)
    size = n + m
    fc = FlopCounter()

    def nid(name: str) -> int:
        return -1 if name == "0" else node_index[name]

    x = np.zeros(size)
    if initial_guess is not None:
        x[:len(initial_guess)] = initial_guess

    nonlinear = net.elements_of(ElementKind.RTD, ElementKind.NANOWIRE,
                                ElementKind.MOSFET)
    models = {el.name: net.model_of(el) for el in nonlinear}

    def vn(xv: np.ndarray, name: str) -> float:
        i = nid(name)
        return 0.0 if i < 0 else float(xv[i])

    def kcl_residual(xv: np.ndarray) -> float:
        """Largest net nodal current imbalance with true device currents."""
        r = np.zeros(n)
        for el in net.elements:
            if el.kind is ElementKind.RESISTOR:
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                i = (vn(xv, el.nodes[0]) - vn(xv, el.nodes[1])) / el.value
                fc.count(adds=1, divs=1)
                if a >= 0:
                    r[a] -= i
                if b >= 0:
                    r[b] += i
            elif el.kind is ElementKind.VSOURCE:
                cur = float(xv[n + sources.index(el)])
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                if a >= 0:
                    r[a] -= cur
                if b >= 0:
                    r[b] += cur
            elif el.kind is ElementKind.MOSFET:
                vgs, vds, d_node, s_node = _mos_bias(xv, el)
                i = float(mos_current(models[el.name], vgs, vds, fc))
                if d_node >= 0:
                    r[d_node] -= i
                if s_node >= 0:
                    r[s_node] += i
            elif el.kind in (ElementKind.RTD, ElementKind.NANOWIRE):
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                vbr = vn(xv, el.nodes[0]) - vn(xv, el.nodes[1])
                mdl = models[el.name]
                if el.kind is ElementKind.RTD:
                    i = float(rtd_current(mdl, vbr, fc))
                else:
                    i = float(nanowire_current(mdl, vbr, fc))
                if a >= 0:
                    r[a] -= i
                if b >= 0:
                    r[b] += i
        return float(np.max(np.abs(r))) if n else 0.0

    def source_violation(xv: np.ndarray) -> float:
        worst = 0.0
        for el in sources:
            dv = (vn(xv, el.nodes[0]) - vn(xv, el.nodes[1])
                  - eval_waveform(el.waveform, 0.0))
            worst = max(worst, abs(dv))
        return worst

    def _mos_bias(xv: np.ndarray, el: Element):
        vd, vg, vs = (vn(xv, el.nodes[i]) for i in (0, 1, 2))
        if vd >= vs:
            return vg - vs, vd - vs, nid(el.nodes[0]), nid(el.nodes[2])
        return vg - vd, vs - vd, nid(el.nodes[2]), nid(el.nodes[0])

    trajectory = [x.copy()]
    oscillation = False
    osc_run = 0
    converged = False
    residual = kcl_residual(x)
    iters = 0

    for k in range(1, max_iter + 1):
        if residual <= tol and source_violation(x) <= _SRC_VTOL:
            converged = True
            break
        iters = k
        G = np.zeros((size, size))
        rhs = np.zeros(size)
        for el in net.elements:
            if el.kind is ElementKind.RESISTOR:
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                g = 1.0 / el.value
                _stamp(G, a, b, g)
            elif el.kind is ElementKind.VSOURCE:
                row = n + sources.index(el)
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                if a >= 0:
                    G[row, a] = G[a, row] = 1.0
                if b >= 0:
                    G[row, b] = G[b, row] = -1.0
                rhs[row] = eval_waveform(el.waveform, 0.0)
            elif el.kind in (ElementKind.RTD, ElementKind.NANOWIRE):
                a, b = nid(el.nodes[0]), nid(el.nodes[1])
                vbr = vn(x, el.nodes[0]) - vn(x, el.nodes[1])
                i0, gd = _device_iv(el, models[el.name], vbr, fc)
                _stamp(G, a, b, gd)
                ieq = i0 - gd * vbr
                fc.count(adds=1, muls=1)
                if a >= 0:
                    rhs[a] -= ieq
                if b >= 0:
                    rhs[b] += ieq
            elif el.kind is ElementKind.MOSFET:
                mdl = models[el.name]
                vgs, vds, d_node, s_node = _mos_bias(x, el)
                g_node = nid(el.nodes[1])
                i0 = float(mos_current(mdl, vgs, vds, fc))
                gds = mos_didv(mdl, vgs, vds)
                gm = mos_gm(mdl, vgs, vds)
                fc.count(adds=4, muls=4)
                # linearized drain current: i0 + gds*dvds + gm*dvgs
                ieq = i0 - gds * vds - gm * vgs
                if d_node >= 0:
                    G[d_node, d_node] += gds
                    if s_node >= 0:
                        G[d_node, s_node] -= gds + gm
                    if g_node >= 0:
                        G[d_node, g_node] += gm
                    rhs[d_node] -= ieq
                if s_node >= 0:
                    G[s_node, s_node] += gds + gm
                    if d_node >= 0:
                        G[s_node, d_node] -= gds
                    if g_node >= 0:
                        G[s_node, g_node] -= gm
                    rhs[s_node] += ieq
        sys = MnaSystem(n=n, m=m, G=G, rhs=rhs, node_index=node_index,
                        source_index={el.name: n + i for i, el in enumerate(sources)})
        try:
            x = solve(sys, fc)
        except SingularSystemError:
            break
        trajectory.append(x.copy())
        residual = kcl_residual(x)
        if len(trajectory) >= 3:
            two_cycle = float(np.max(np.abs(trajectory[-1] - trajectory[-3])))
            moved = float(np.max(np.abs(trajectory[-1] - trajectory[-2])))
            if two_cycle <= _OSC_ATOL and moved > _OSC_VTOL:
                osc_run += 1
                if osc_run >= _OSC_RUNS:
                    oscillation = True
            else:
                osc_run = 0
    if not converged and residual <= tol and source_violation(x) <= _SRC_VTOL:
        converged = True
    return NrReport(converged=converged, iterations=iters, trajectory=trajectory,
                    oscillation_detected=oscillation and not converged, flops=fc,
                    residual=residual, x=x, nodes=list(net.nodes))


def _stamp(G: np.ndarray, a: int, b: int, g: float) -> None:
    if a >= 0:
        G[a, a] += g
    if b >= 0:
        G[b, b] += g
    if a >= 0 and b >= 0:
        G[a, b] -= g
        G[b, a] -= g


def brute_force_dc(rtd: RtdModel, r: float, vbias: float,
                   grid: int = 100_000) -> List[Tuple[float, bool]]:
    """All load-line intersections of a series resistor + RTD divider.

    Scans f(v) = (vbias - v)/r - J(v) on a uniform grid over [0, vbias] for
    sign changes, bisects each bracket to 1e-9 V, and classifies stability
    by the sign of the total small-signal conductance dJ/dV + 1/r.
    """
    if grid < 10_000:
        raise ValueError("brute_force_dc requires grid >= 10^4")
    if vbias == 0.0:
        return [(0.0, rtd_didv(rtd, 0.0) + 1.0 / r > 0.0)]

    def f(v):
        return (vbias - v) / r - rtd_current(rtd, v)

    vs = np.linspace(0.0, vbias, grid)
    fs = f(vs)
    roots: List[Tuple[float, bool]] = []
    sign = np.sign(fs)
    flip = np.nonzero((sign[:-1] * sign[1:]) < 0)[0]
    exact = np.nonzero(fs == 0.0)[0]
    candidates = [(float(vs[i]), float(vs[i + 1])) for i in flip]
    for i in exact:
        roots.append((float(vs[i]), bool(rtd_didv(rtd, float(vs[i])) + 1.0 / r > 0.0)))
    for lo, hi in candidates:
        flo = f(lo)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fm = f(mid)
            if (fm < 0.0) == (flo < 0.0):
                lo, flo = mid, fm
            else:
                hi = mid
            if hi - lo <= 1e-9:
                break
        v = 0.5 * (lo + hi)
        roots.append((v, bool(rtd_didv(rtd, v) + 1.0 / r > 0.0)))
    roots.sort(key=lambda t: t[0])
    return roots


def flop_compare(net: Netlist, analysis: str = "dc",
                 cfg: Optional[SimConfig] = None, source: Optional[str] = None,
                 start: Optional[float] = None, stop: Optional[float] = None,
                 points: Optional[int] = None, max_iter: int = 100,
                 tol: float = 1e-9) -> FlopCompare:
    """Operation-count comparison: conductance-stepping engine vs naive NR.

    For sweeps the NR side follows the classic continuation strategy (each
    point starts from the previous point's final iterate); non-converged
    points run to max_iter and are billed at that full cost.
    """
    cfg = cfg if cfg is not None else SimConfig()
    if analysis == "op":
        op = operating_point(net, cfg)
        swec_total = op.series.flops.total()
        rep = nr_dc(net, max_iter=max_iter, tol=tol)
        nr_total = rep.flops.total()
    elif analysis == "dc":
        if source is None:
            dc_cards = [a for a in net.analyses if isinstance(a, DcAnalysis)]
            if not dc_cards:
                raise ValueError("no .dc card and no sweep parameters given")
            card = dc_cards[0]
            source, start, stop, points = card.source, card.start, card.stop, card.points
        sweep = dc_sweep(net, source, start, stop, points, cfg)
        swec_total = sweep.flops.total()
        nr_total = 0
        guess = None
        for bias in np.linspace(start, stop, points):
            rep = nr_dc(pin_source(net, source, bias), initial_guess=guess,
                        max_iter=max_iter, tol=tol)
            nr_total += rep.flops.total()
            guess = rep.x
    else:
        raise ValueError(f"unknown analysis '{analysis}'")
    speedup = nr_total / swec_total if swec_total else math.inf
    return FlopCompare(swec_flops=swec_total, nr_flops=nr_total, speedup=speedup)
