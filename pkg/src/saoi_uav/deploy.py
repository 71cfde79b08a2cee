"""Per-slot UAV deployment subproblem.

Given the slot's association and extraction depths, move each UAV inside
its speed ball to minimize the queue-weighted airtime (upload + forward),
subject to pairwise separation, slot budgets, and area bounds. Rates are
concave in position only through the squared distance, so each outer pass
linearizes them into affine underestimators (tangents in squared distance)
and the resulting convex subproblem is solved by projected gradient descent
with Armijo backtracking; the feasible set is handled by cyclic
Dykstra-style projection. Successive convexification repeats until the true
objective stalls; the tangent construction guarantees monotone descent.

Internals run on plain floats: instances are tiny (a handful of UAVs) and
this sits inside the per-slot alternating loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import LOG2E, SystemParams, WorldState, los_fading_mix

_PEN_WEIGHT = 1e3      # soft budget penalty weight
_EPS_RATE = 1e-3       # rate-surrogate floor (bits/s)


@dataclass
class DeployProblem:
    """One slot's deployment instance.

    center is the physical position (speed-ball center); anchor is where the
    current outer pass linearizes. Per-UAV link coefficients c give the SNR
    as c / squared-3D-distance with the slot's fading frozen.
    """

    center: np.ndarray        # (M,2) physical positions at slot start
    anchor: np.ndarray        # (M,2) linearization/warm-start point
    serving: np.ndarray       # (M,) served GU index or -1
    weight: np.ndarray        # (M,) Q_k + V*w1 of the served GU (0 when idle)
    phi3: np.ndarray          # (M,) uplink payload bits
    phi4: np.ndarray          # (M,) forward payload bits
    chi3: np.ndarray          # (M,) compute + recovery time of the served GU
    gu_xy: np.ndarray         # (M,2) served GU position (ignored when idle)
    c_gu: np.ndarray          # (M,) SNR coefficient of the serving uplink
    c_bs: np.ndarray          # (M,) SNR coefficient of the forward link
    params: SystemParams


@dataclass
class DeploySolution:
    positions: np.ndarray     # (M,2)
    objective: float          # true weighted airtime at the solution
    trace: list               # true objective per outer pass (nonincreasing)
    sca_iters: int
    feasible: bool            # budgets verified with exact rates


def snr_coefficient(fading: complex, tx_power: float, params: SystemParams) -> float:
    """Fading-fixed coefficient c with SNR = c / (||l-q||^2 + H^2)."""
    mix = los_fading_mix(params.rician_k, fading)
    return tx_power * params.ref_gain * (abs(mix) ** 2) / params.noise_power


def build_deploy_problem(state: WorldState, q: np.ndarray, assoc: np.ndarray,
                         rho_l: np.ndarray, rho_u: np.ndarray,
                         relay: np.ndarray, anchor: np.ndarray,
                         params: SystemParams) -> DeployProblem:
    nm = params.num_uavs
    serving = np.asarray(assoc, dtype=int).copy()
    weight = np.zeros(nm)
    phi3 = np.zeros(nm)
    phi4 = np.zeros(nm)
    chi3 = np.zeros(nm)
    gu_xy = np.zeros((nm, 2))
    c_gu = np.zeros(nm)
    c_bs = np.zeros(nm)
    for m in range(nm):
        c_bs[m] = snr_coefficient(state.fading_bs[m], params.tx_power_uav, params)
        k = serving[m]
        if k < 0:
            continue
        d = float(state.packet_bits[k])
        weight[m] = q[k] + params.lyap_v * params.w_aoi
        gu_xy[m] = state.gu_pos[k]
        c_gu[m] = snr_coefficient(state.fading_gu[m, k], params.tx_power_gu, params)
        if relay is not None and relay[k]:
            phi3[m] = d
            phi4[m] = d
            chi3[m] = 0.0
        else:
            rl = float(rho_l[k])
            ru = float(rho_u[k])
            up = d if (params.physical_upload and ru > 0.0) else rl * d
            phi3[m] = up
            phi4[m] = (rl + ru) * d
            rho_eff = max(rl + ru, params.rho_min)
            chi3[m] = ((params.local_knowledge_coef * d
                        + params.local_extract_coef * (1.0 - rl) ** params.local_extract_exp)
                       / params.f_local
                       + (params.edge_knowledge_coef * d
                          + params.edge_extract_coef * (1.0 - ru) ** params.edge_extract_exp)
                       / params.f_edge
                       + params.recover_coef * rho_eff ** (-params.recover_exp) / params.f_bs)
    return DeployProblem(np.asarray(state.uav_pos, dtype=float).copy(),
                         np.asarray(anchor, dtype=float).copy(), serving, weight,
                         phi3, phi4, chi3, gu_xy, c_gu, c_bs, params)


# ---------------------------------------------------------------------------
# linearizations
# ---------------------------------------------------------------------------

def linearize_rate(c: float, x_anchor: float, bandwidth: float):
    """Tangent underestimator of W*log2(1 + c/x) in the squared distance x.

    Returns (r_anchor, slope) with E(x) = r_anchor + slope*(x - x_anchor).
    The rate is convex and decreasing in x, so its tangent at the anchor
    touches there and lower-bounds it everywhere.
    """
    if x_anchor <= 0 or c <= 0:
        raise ValueError("need positive squared distance and SNR coefficient")
    gamma = c / x_anchor
    r = bandwidth * math.log2(1.0 + gamma)
    slope = -bandwidth * LOG2E * gamma / ((1.0 + gamma) * x_anchor)
    return r, slope


def linearize_collision(anchor_m: np.ndarray, anchor_m2: np.ndarray):
    """Affine lower bound of the squared pair distance around the anchors:
    l~ = -||delta||^2 + 2*delta.(l_m - l_m'), delta = anchor_m - anchor_m2.
    Separation requires d_min^2 <= l~ (a halfspace in the pair)."""
    dx = anchor_m[0] - anchor_m2[0]
    dy = anchor_m[1] - anchor_m2[1]
    return (2.0 * dx, 2.0 * dy), dx * dx + dy * dy


# ---------------------------------------------------------------------------
# scalar core
# ---------------------------------------------------------------------------

class _Sub:
    """Linearized subproblem at a fixed anchor, plain-float layout."""

    def __init__(self, prob: DeployProblem):
        p = prob.params
        self.nm = len(prob.center)
        self.h2 = p.altitude * p.altitude
        self.radius = p.speed_radius
        self.d_min2 = p.d_min * p.d_min
        self.box = (p.area_width, p.area_height)
        self.t_max = p.t_max
        self.center = [(float(c[0]), float(c[1])) for c in prob.center]
        self.weight = [float(w) for w in prob.weight]
        self.phi3 = [float(v) for v in prob.phi3]
        self.phi4 = [float(v) for v in prob.phi4]
        self.chi3 = [float(v) for v in prob.chi3]
        self.active = [prob.serving[m] >= 0 and prob.weight[m] > 0.0
                       and (prob.phi3[m] > 0.0 or prob.phi4[m] > 0.0)
                       for m in range(self.nm)]
        self.gu = [(float(g[0]), float(g[1])) for g in prob.gu_xy]
        self.bs = (float(p.bs_pos[0]), float(p.bs_pos[1]))
        self.lin_gu = [None] * self.nm   # (r_anchor, slope, x_anchor)
        self.lin_bs = [None] * self.nm
        self.cap_gu = [None] * self.nm   # squared planar radius of E >= eps ball
        self.cap_bs = [None] * self.nm
        for m in range(self.nm):
            if not self.active[m]:
                continue
            ax, ay = float(prob.anchor[m][0]), float(prob.anchor[m][1])
            xg = (ax - self.gu[m][0]) ** 2 + (ay - self.gu[m][1]) ** 2 + self.h2
            r, s = linearize_rate(float(prob.c_gu[m]), xg, p.bandwidth)
            self.lin_gu[m] = (r, s, xg)
            self.cap_gu[m] = xg + (r - _EPS_RATE) / (-s) - self.h2
            xb = (ax - self.bs[0]) ** 2 + (ay - self.bs[1]) ** 2 + self.h2
            rb, sb = linearize_rate(float(prob.c_bs[m]), xb, p.bandwidth)
            self.lin_bs[m] = (rb, sb, xb)
            self.cap_bs[m] = xb + (rb - _EPS_RATE) / (-sb) - self.h2
        self.pairs = []
        anch = prob.anchor
        for m in range(self.nm):
            for m2 in range(m + 1, self.nm):
                (gx, gy), b = linearize_collision(anch[m], anch[m2])
                self.pairs.append((m, m2, gx, gy, b + self.d_min2))

    # -- subproblem objective: weighted airtime on surrogate rates + budget hinge

    def _rate_terms(self, m: int, x: float, y: float):
        r, s, xa = self.lin_gu[m]
        e_gu = r + s * ((x - self.gu[m][0]) ** 2 + (y - self.gu[m][1]) ** 2 + self.h2 - xa)
        rb, sb, xb = self.lin_bs[m]
        e_bs = rb + sb * ((x - self.bs[0]) ** 2 + (y - self.bs[1]) ** 2 + self.h2 - xb)
        return e_gu, e_bs

    def value(self, pos) -> float:
        total = 0.0
        for m in range(self.nm):
            if not self.active[m]:
                continue
            e_gu, e_bs = self._rate_terms(m, pos[m][0], pos[m][1])
            if e_gu <= 0.0 or e_bs <= 0.0:
                return math.inf
            t_air = self.phi3[m] / e_gu + self.phi4[m] / e_bs
            total += self.weight[m] * t_air
            over = t_air + self.chi3[m] - self.t_max
            if over > 0.0:
                total += _PEN_WEIGHT * over * over
        return total

    def grad(self, pos):
        g = [(0.0, 0.0)] * self.nm
        for m in range(self.nm):
            if not self.active[m]:
                continue
            x, y = pos[m]
            r, s, xa = self.lin_gu[m]
            e_gu = r + s * ((x - self.gu[m][0]) ** 2 + (y - self.gu[m][1]) ** 2 + self.h2 - xa)
            rb, sb, xb = self.lin_bs[m]
            e_bs = rb + sb * ((x - self.bs[0]) ** 2 + (y - self.bs[1]) ** 2 + self.h2 - xb)
            t_air = self.phi3[m] / e_gu + self.phi4[m] / e_bs
            coef = self.weight[m]
            over = t_air + self.chi3[m] - self.t_max
            if over > 0.0:
                coef += 2.0 * _PEN_WEIGHT * over
            # d(phi/E)/dl = -phi/E^2 * dE/dl, dE/dl = 2*s*(l - q)
            cg = -coef * self.phi3[m] / (e_gu * e_gu) * 2.0 * s
            cb = -coef * self.phi4[m] / (e_bs * e_bs) * 2.0 * sb
            g[m] = (cg * (x - self.gu[m][0]) + cb * (x - self.bs[0]),
                    cg * (y - self.gu[m][1]) + cb * (y - self.bs[1]))
        return g

    # -- feasible-set projections

    def _project_single(self, m: int, x: float, y: float):
        """Project one UAV onto speed ball, area box, and rate-floor balls
        via a short cyclic Dykstra pass in the plane."""
        balls = [(self.center[m][0], self.center[m][1], self.radius)]
        if self.active[m]:
            if self.cap_gu[m] is not None and self.cap_gu[m] > 0.0:
                balls.append((self.gu[m][0], self.gu[m][1], math.sqrt(self.cap_gu[m])))
            if self.cap_bs[m] is not None and self.cap_bs[m] > 0.0:
                balls.append((self.bs[0], self.bs[1], math.sqrt(self.cap_bs[m])))
        n_sets = len(balls) + 1
        corr = [(0.0, 0.0)] * n_sets
        for _ in range(40):
            x0, y0 = x, y
            for i in range(n_sets):
                px, py = x + corr[i][0], y + corr[i][1]
                if i < len(balls):
                    cx, cy, rad = balls[i]
                    dx, dy = px - cx, py - cy
                    d = math.hypot(dx, dy)
                    if d > rad:
                        f = rad / d
                        nx, ny = cx + dx * f, cy + dy * f
                    else:
                        nx, ny = px, py
                else:
                    nx = min(max(px, 0.0), self.box[0])
                    ny = min(max(py, 0.0), self.box[1])
                corr[i] = (px - nx, py - ny)
                x, y = nx, ny
            if abs(x - x0) + abs(y - y0) < 1e-7:
                break
        return x, y

    def project(self, pos):
        """Project all UAVs; pairwise separation handled jointly only when
        some pair actually violates it after the per-UAV pass."""
        out = [self._project_single(m, pos[m][0], pos[m][1]) for m in range(self.nm)]
        if self._pairs_ok(out):
            return out
        return self._project_joint(out)

    def _pairs_ok(self, pos) -> bool:
        for m, m2, gx, gy, need in self.pairs:
            if gx * (pos[m][0] - pos[m2][0]) + gy * (pos[m][1] - pos[m2][1]) < need - 1e-9:
                return False
        return True

    def _project_joint(self, pos):
        """Full cyclic Dykstra over every constraint set in the joint space."""
        nm = self.nm
        pts = [list(p) for p in pos]
        sets = []
        for m in range(nm):
            sets.append(("ball", m, self.center[m][0], self.center[m][1], self.radius))
            if self.active[m]:
                if self.cap_gu[m] is not None and self.cap_gu[m] > 0.0:
                    sets.append(("ball", m, self.gu[m][0], self.gu[m][1],
                                 math.sqrt(self.cap_gu[m])))
                if self.cap_bs[m] is not None and self.cap_bs[m] > 0.0:
                    sets.append(("ball", m, self.bs[0], self.bs[1],
                                 math.sqrt(self.cap_bs[m])))
            sets.append(("box", m, 0.0, 0.0, 0.0))
        for m, m2, gx, gy, need in self.pairs:
            sets.append(("half", (m, m2, gx, gy, need), 0.0, 0.0, 0.0))
        corr = [[0.0] * 4 for _ in sets]
        for _ in range(30):
            delta = 0.0
            for i, (kind, info, ax, ay, rad) in enumerate(sets):
                if kind == "half":
                    m, m2, gx, gy, need = info
                    px = pts[m][0] + corr[i][0]
                    py = pts[m][1] + corr[i][1]
                    qx = pts[m2][0] + corr[i][2]
                    qy = pts[m2][1] + corr[i][3]
                    viol = need - (gx * (px - qx) + gy * (py - qy))
                    if viol > 0.0:
                        nn = 2.0 * (gx * gx + gy * gy)
                        f = viol / nn
                        nxp, nyp = px + gx * f, py + gy * f
                        nxq, nyq = qx - gx * f, qy - gy * f
                    else:
                        nxp, nyp, nxq, nyq = px, py, qx, qy
                    corr[i] = [px - nxp, py - nyp, qx - nxq, qy - nyq]
                    delta += (abs(pts[m][0] - nxp) + abs(pts[m][1] - nyp)
                              + abs(pts[m2][0] - nxq) + abs(pts[m2][1] - nyq))
                    pts[m][0], pts[m][1] = nxp, nyp
                    pts[m2][0], pts[m2][1] = nxq, nyq
                else:
                    m = info
                    px = pts[m][0] + corr[i][0]
                    py = pts[m][1] + corr[i][1]
                    if kind == "ball":
                        dx, dy = px - ax, py - ay
                        d = math.hypot(dx, dy)
                        if d > rad:
                            f = rad / d
                            nx, ny = ax + dx * f, ay + dy * f
                        else:
                            nx, ny = px, py
                    else:
                        nx = min(max(px, 0.0), self.box[0])
                        ny = min(max(py, 0.0), self.box[1])
                    corr[i] = [px - nx, py - ny, 0.0, 0.0]
                    delta += abs(pts[m][0] - nx) + abs(pts[m][1] - ny)
                    pts[m][0], pts[m][1] = nx, ny
            if delta < 1e-6:
                break
        return [(p[0], p[1]) for p in pts]


def solve_sca_subproblem(prob: DeployProblem, max_iter: int = 40,
                         step_scale: float = 1.0) -> np.ndarray:
    """Minimize the linearized subproblem at prob.anchor by projected
    gradient descent with Armijo backtracking (halving, c=1e-4)."""
    sub = _Sub(prob)
    pos = sub.project([(float(a[0]), float(a[1])) for a in prob.anchor])
    f = sub.value(pos)
    alpha = step_scale * max(sub.radius, 1.0)
    for _ in range(max_iter):
        g = sub.grad(pos)
        gnorm2 = sum(gx * gx + gy * gy for gx, gy in g)
        if gnorm2 < 1e-18:
            break
        scale = alpha / math.sqrt(gnorm2)
        accepted = False
        for _bt in range(40):
            cand = sub.project([(pos[m][0] - scale * g[m][0], pos[m][1] - scale * g[m][1])
                                for m in range(sub.nm)])
            fc = sub.value(cand)
            move2 = sum((cand[m][0] - pos[m][0]) ** 2 + (cand[m][1] - pos[m][1]) ** 2
                        for m in range(sub.nm))
            if fc <= f - 1e-4 * move2 / max(scale, 1e-12):
                accepted = True
                break
            scale *= 0.5
        # millimeter-scale moves are beyond any caller's tolerance
        if not accepted or move2 < 1e-6:
            break
        alpha = min(scale * math.sqrt(gnorm2) * 2.0, 10.0 * max(sub.radius, 1.0))
        pos = cand
        f = fc
    return np.array(pos)


def true_airtime(prob: DeployProblem, positions: np.ndarray):
    """Exact weighted airtime and per-UAV budget slacks at given positions."""
    p = prob.params
    h2 = p.altitude * p.altitude
    total = 0.0
    slack = np.zeros(len(positions))
    for m in range(len(positions)):
        if prob.serving[m] < 0 or (prob.phi3[m] == 0.0 and prob.phi4[m] == 0.0):
            continue
        xg = ((positions[m][0] - prob.gu_xy[m][0]) ** 2
              + (positions[m][1] - prob.gu_xy[m][1]) ** 2 + h2)
        xb = ((positions[m][0] - p.bs_pos[0]) ** 2
              + (positions[m][1] - p.bs_pos[1]) ** 2 + h2)
        r_gu = p.bandwidth * math.log2(1.0 + prob.c_gu[m] / xg)
        r_bs = p.bandwidth * math.log2(1.0 + prob.c_bs[m] / xb)
        t_air = prob.phi3[m] / r_gu + prob.phi4[m] / r_bs
        total += prob.weight[m] * t_air
        slack[m] = t_air + prob.chi3[m] - p.t_max
    return total, slack


def solve_deployment(prob: DeployProblem, max_sca: int = 8, tol: float = 1e-5,
                     retries: int = 2) -> DeploySolution:
    """Outer successive-convexification loop around the projected-gradient
    subproblem solver. Re-anchors each pass; the true objective is verified
    to descend (the surrogate upper-bounds it and touches at the anchor).
    Budgets are checked with exact rates; on violation the step scale is
    shrunk and the solve repeated, finally falling back to the anchor."""
    start = prob.anchor.copy()
    step_scale = 1.0
    for attempt in range(retries + 1):
        anchor = start.copy()
        obj0, _ = true_airtime(prob, anchor)
        trace = [obj0]
        it = 0
        for it in range(1, max_sca + 1):
            prob.anchor = anchor
            cand = solve_sca_subproblem(prob, step_scale=step_scale)
            obj, _ = true_airtime(prob, cand)
            if obj > trace[-1] + 1e-9 * max(1.0, abs(trace[-1])):
                break
            move = float(np.max(np.abs(cand - anchor))) if len(cand) else 0.0
            anchor = cand
            trace.append(obj)
            if move < 1e-4 or (len(trace) > 1
                               and trace[-2] - trace[-1] < tol * max(1.0, abs(trace[-2]))):
                break
        _, slack = true_airtime(prob, anchor)
        if float(np.max(slack, initial=0.0)) <= 1e-9:
            prob.anchor = start
            return DeploySolution(np.asarray(anchor), trace[-1], trace, it, True)
        step_scale *= 0.25
    prob.anchor = start
    obj0, slack0 = true_airtime(prob, start)
    return DeploySolution(start.copy(), obj0, [obj0], 0,
                          bool(float(np.max(slack0, initial=0.0)) <= 1e-9))
