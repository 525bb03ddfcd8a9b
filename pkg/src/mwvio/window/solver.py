"""Factor graph of one window and its Levenberg-Marquardt solver.

The cost is the sum over terms of ``||W r||^2``, with the Huber norm applied
to point and line reprojection terms. Every term kind is evaluated as one
batch; each batch carries whitened, robust-scaled residuals and Jacobians so
the normal equations are a plain scatter of ``J^T J`` and ``J^T r``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.transform import Rotation

from ..errors import BehindCamera, InsufficientConstraints, ProjectionDegenerate, SolverDiverged
from ..factors import (
    huber,
    huber_weight,
    direction_prior_batch,
    line_reproj_batch,
    mf_rotation_batch,
    odometry_batch,
    point_reproj_batch,
    prior_residual,
    struct_line_batch,
)
from ..geom import OrthonormalLine, RigidTransform, quat_from_rot
from .state import WindowConfig, WindowState

log = logging.getLogger(__name__)

DIMS = {"pose": 6, "line": 4, "point": 1}
TERM_KINDS = ("odometry", "point", "line", "mf", "struct", "direction", "prior")
MAX_DAMPING = 1e8
MAX_REJECTS_AT_MAX = 5


@dataclass
class Term:
    kind: str
    r: np.ndarray  # (N, k)
    J: np.ndarray  # (N, k, c)
    bids: np.ndarray  # (N, b) block ids; J columns follow them in order
    cost: np.ndarray  # (N,)


@dataclass
class Params:
    R: np.ndarray  # (F, 3, 3)
    t: np.ndarray  # (F, 3)
    psi: np.ndarray  # (L, 3, 3)
    phi: np.ndarray  # (L,)
    lam: np.ndarray  # (P,)


@dataclass
class SolverReport:
    initial_cost: float = 0.0
    final_cost: float = 0.0
    iterations: int = 0
    accepted: int = 0
    converged: bool = False
    term_counts: dict = field(default_factory=dict)

    def as_dict(self):
        return {"initial_cost": self.initial_cost, "final_cost": self.final_cost,
                "iterations": self.iterations, "accepted": self.accepted,
                "converged": self.converged, "term_counts": dict(self.term_counts)}


def _robust(r, J):
    s = np.einsum("nk,nk->n", r, r)
    w = np.sqrt(huber_weight(s))
    return r * w[:, None], J * w[:, None, None], huber(s)


def _plain(r, J):
    return r, J, np.einsum("nk,nk->n", r, r)


class Problem:
    """Block layout, static observation arrays and batched term evaluation for one window."""

    def __init__(self, w: WindowState, cfg: WindowConfig):
        self.cfg = cfg
        self.w = w
        self.T_cb = cfg.T_cb
        frames = w.frame_ids()
        self.fpos = {fi: k for k, fi in enumerate(frames)}
        self.lines = [i for i in sorted(w.lines) if w.lines[i].active]
        self.points = [i for i in sorted(w.points) if w.points[i].active]
        self.lpos = {i: k for k, i in enumerate(self.lines)}
        self.ppos = {i: k for k, i in enumerate(self.points)}
        self.keys = ([("pose", f) for f in frames] + [("line", i) for i in self.lines]
                     + [("point", i) for i in self.points])
        self.bid = {k: b for b, k in enumerate(self.keys)}
        fix = cfg.fix_first if cfg.fix_first is not None else w.prior is None
        self.fixed = {("pose", frames[0])} if fix and frames else set()
        self.dims = np.array([DIMS[k[0]] for k in self.keys])
        self.col0 = np.full(len(self.keys), -1)
        n = 0
        for b, k in enumerate(self.keys):
            if k not in self.fixed:
                self.col0[b] = n
                n += self.dims[b]
        self.n = n
        self._build_obs()

    # -- static structure --

    def _build_obs(self):
        w, cfg = self.w, self.cfg
        frames = w.frames
        odo = [(k - 1, k) for k in range(1, len(frames))
               if frames[k].odom is not None and frames[k].frame_idx == frames[k - 1].frame_idx + 1]
        self.odo = (np.array([i for i, _ in odo], dtype=int), np.array([j for _, j in odo], dtype=int),
                    np.array([frames[j].odom.R for _, j in odo]).reshape(-1, 3, 3),
                    np.array([frames[j].odom.t for _, j in odo]).reshape(-1, 3))

        ph, pt, pp, oh, ot = [], [], [], [], []
        for pid in self.points:
            P = w.points[pid]
            for fi, ob in sorted(P.observations.items()):
                if fi == P.host_frame:
                    continue
                ph.append(self.fpos[P.host_frame])
                pt.append(self.fpos[fi])
                pp.append(self.ppos[pid])
                oh.append(P.observations[P.host_frame])
                ot.append(ob)
        self.pts = (np.array(ph, dtype=int), np.array(pt, dtype=int), np.array(pp, dtype=int),
                    np.array(oh).reshape(-1, 2), np.array(ot).reshape(-1, 2))

        lf, ll, ls, le = [], [], [], []
        sf, sl, sv = [], [], []
        for lid in self.lines:
            L = w.lines[lid]
            for fi, ob in sorted(L.observations.items()):
                lf.append(self.fpos[fi])
                ll.append(self.lpos[lid])
                ls.append(ob[0])
                le.append(ob[1])
                if cfg.use_struct_lines and L.axis is not None and fi in w.mfs:
                    sf.append(self.fpos[fi])
                    sl.append(self.lpos[lid])
                    sv.append(w.mfs[fi][:, L.axis])
        self.lns = (np.array(lf, dtype=int), np.array(ll, dtype=int),
                    np.array(ls).reshape(-1, 2), np.array(le).reshape(-1, 2))
        self.st = (np.array(sf, dtype=int), np.array(sl, dtype=int), np.array(sv).reshape(-1, 3))

        mf_f, mf_q = [], []
        if cfg.use_manhattan and w.in_manhattan:
            for fi in sorted(w.mfs):
                if fi in self.fpos:
                    mf_f.append(self.fpos[fi])
                    mf_q.append(quat_from_rot(w.mfs[fi].T @ self.T_cb.R))
        self.mf = (np.array(mf_f, dtype=int), np.array(mf_q).reshape(-1, 4))

        dl, da = [], []
        if cfg.use_struct_lines and w.in_manhattan:
            for lid in self.lines:
                a = w.lines[lid].axis
                if a is not None:
                    dl.append(self.lpos[lid])
                    da.append(np.eye(3)[a])
        self.dirp = (np.array(dl, dtype=int), np.array(da).reshape(-1, 3))
        self.linear = ([w.prior] if w.prior is not None else []) + list(w.linear_factors)
        for P in self.linear:
            missing = [k for k in P.keys if k not in self.bid]
            if missing:
                raise KeyError(f"prior refers to blocks outside the window: {missing}")

    def term_counts(self):
        return {"odometry": len(self.odo[0]), "point": len(self.pts[0]), "line": len(self.lns[0]),
                "mf": len(self.mf[0]), "struct": len(self.st[0]), "direction": len(self.dirp[0]),
                "prior": len(self.linear)}

    # -- parameters --

    def params(self) -> Params:
        w = self.w
        return Params(np.array([f.pose.R for f in w.frames]).reshape(-1, 3, 3),
                      np.array([f.pose.t for f in w.frames]).reshape(-1, 3),
                      np.array([w.lines[i].line.psi for i in self.lines]).reshape(-1, 3, 3),
                      np.array([w.lines[i].line.phi for i in self.lines]),
                      np.array([w.points[i].inv_depth for i in self.points], dtype=float))

    def retract(self, p: Params, dx) -> Params:
        F, L = len(p.t), len(p.phi)
        R, t = p.R.copy(), p.t.copy()
        c = self.col0[:F]
        free = c >= 0
        if free.any():
            d = dx[c[free, None] + np.arange(6)]
            R[free] = R[free] @ Rotation.from_rotvec(d[:, :3]).as_matrix()
            t[free] += d[:, 3:]
        psi, phi = p.psi.copy(), p.phi.copy()
        if L:
            d = dx[self.col0[F:F + L, None] + np.arange(4)]
            psi = psi @ Rotation.from_rotvec(d[:, :3]).as_matrix()
            phi = phi * np.exp(d[:, 3])
        lam = p.lam + dx[self.col0[F + L:]] if len(p.lam) else p.lam.copy()
        return Params(R, t, psi, phi, lam)

    def write_back(self, p: Params, w: WindowState):
        for k, f in enumerate(w.frames):
            f.pose = RigidTransform(p.R[k], p.t[k])
        for k, i in enumerate(self.lines):
            w.lines[i].line = OrthonormalLine(p.psi[k], p.phi[k])
        for k, i in enumerate(self.points):
            w.points[i].inv_depth = float(p.lam[k])

    def value(self, p: Params, key):
        kind, i = key
        if kind == "pose":
            k = self.fpos[i]
            return RigidTransform(p.R[k], p.t[k])
        if kind == "line":
            k = self.lpos[i]
            return OrthonormalLine(p.psi[k], p.phi[k])
        return float(p.lam[self.ppos[i]])

    # -- terms --

    def terms(self, p: Params):
        cfg = self.cfg
        F, L = len(p.t), len(p.phi)
        out = []
        T_cb = self.T_cb
        i, j, Rm, tm = self.odo
        if len(i):
            r, Ji, Jj = odometry_batch(p.R[i], p.t[i], p.R[j], p.t[j], Rm, tm)
            W = np.concatenate([np.full(3, 1 / np.deg2rad(cfg.sigma_odom_rot_deg)),
                                np.full(3, 1 / cfg.sigma_odom_trans)])
            r, J, c = _plain(r * W, np.concatenate([Ji, Jj], 2) * W[None, :, None])
            out.append(Term("odometry", r, J, np.stack([i, j], 1), c))
        s_obs = self.cfg.sigma_px / self.cfg.focal
        h, tg, pp, oh, ot = self.pts
        if len(h):
            r, Jh, Jt, Jd = point_reproj_batch(p.R[h], p.t[h], p.R[tg], p.t[tg], p.lam[pp], oh, ot, T_cb)
            r, J, c = _robust(r / s_obs, np.concatenate([Jh, Jt, Jd[:, :, None]], 2) / s_obs)
            out.append(Term("point", r, J, np.stack([h, tg, F + L + pp], 1), c))
        f, ln, ps, pe = self.lns
        if len(f):
            r, Jp, Jl = line_reproj_batch(p.R[f], p.t[f], p.psi[ln], p.phi[ln], ps, pe, T_cb)
            r, J, c = _robust(r / s_obs, np.concatenate([Jp, Jl], 2) / s_obs)
            out.append(Term("line", r, J, np.stack([f, F + ln], 1), c))
        f, q = self.mf
        if len(f):
            q_vio = np.array([quat_from_rot(R) for R in p.R[f]])
            r, J = mf_rotation_batch(q, q_vio)
            s = np.deg2rad(cfg.sigma_mf_deg)
            r, J, c = _plain(r / s, J / s)
            out.append(Term("mf", r, J, f[:, None], c))
        f, ln, vp = self.st
        if len(f):
            r, Jp, Jl = struct_line_batch(p.R[f], p.t[f], p.psi[ln], p.phi[ln], vp, T_cb)
            s = cfg.sigma_struct_px / cfg.focal
            r, J, c = _plain(r[:, None] / s, np.concatenate([Jp, Jl], 1)[:, None, :] / s)
            out.append(Term("struct", r, J, np.stack([f, F + ln], 1), c))
        ln, axis = self.dirp
        if len(ln):
            r, J = direction_prior_batch(p.psi[ln], axis)
            s = np.deg2rad(cfg.sigma_dir_deg)
            r, J, c = _plain(r / s, J / s)
            out.append(Term("direction", r, J, (F + ln)[:, None], c))
        for P in self.linear:
            ev = prior_residual(P, [self.value(p, k) for k in P.keys])
            J = np.concatenate([Jk for _, Jk in ev.jacobians], 1)
            r, J, c = _plain(ev.residual[None], J[None])
            kind = "prior" if P is self.w.prior else "linear"
            out.append(Term(kind, r, J, np.array([[self.bid[k] for k in P.keys]]), c))
        return out

    def cols(self, bids):
        """Column indices (N, c) of stacked blocks; fixed blocks map to column ``n``."""
        parts = []
        for b in bids.T:
            d = self.dims[b[0]] if len(b) else 0
            c0 = self.col0[b]
            cols = c0[:, None] + np.arange(d)
            parts.append(np.where(c0[:, None] >= 0, cols, self.n))
        return np.concatenate(parts, 1)

    def normal_equations(self, terms):
        n1 = self.n + 1
        H = np.zeros(n1 * n1)
        g = np.zeros(n1)
        for T in terms:
            if not len(T.r):
                continue
            cols = self.cols(T.bids)
            Jt = T.J.transpose(0, 2, 1)
            Hf = Jt @ T.J
            gf = (Jt @ T.r[..., None])[..., 0]
            idx = cols[:, :, None] * n1 + cols[:, None, :]
            H += np.bincount(idx.ravel(), Hf.ravel(), minlength=n1 * n1)
            g += np.bincount(cols.ravel(), gf.ravel(), minlength=n1)
        return H.reshape(n1, n1)[:-1, :-1], g[:-1]


def total_cost(terms) -> float:
    return float(sum(T.cost.sum() for T in terms))


def _try_terms(prob, p):
    try:
        terms = prob.terms(p)
    except (BehindCamera, ProjectionDegenerate):
        return None, np.inf
    c = total_cost(terms)
    return (terms, c) if np.isfinite(c) else (None, np.inf)


def _solve(H, g, lam):
    d = np.diag(H)
    D = d + 1e-12 * max(d.max(initial=0.0), 1.0)
    A = H + lam * np.diag(D)
    try:
        return cho_solve(cho_factor(A), -g)
    except (LinAlgError, ValueError):
        return np.linalg.lstsq(A, -g, rcond=None)[0]


def optimize(w: WindowState, cfg: WindowConfig | None = None):
    """Levenberg-Marquardt over every free tangent block of the window.

    Returns ``(new WindowState, SolverReport)``. The input is not modified.
    """
    cfg = cfg or WindowConfig()
    n_active = sum(L.active for L in w.lines.values()) + sum(P.active for P in w.points.values())
    if len(w.frames) < 2 or n_active < cfg.min_landmarks:
        raise InsufficientConstraints(f"{len(w.frames)} frames, {n_active} active landmarks")
    prob = Problem(w, cfg)
    rep = SolverReport(term_counts=prob.term_counts())
    p = prob.params()
    terms, cost = _try_terms(prob, p)
    if terms is None:
        raise SolverDiverged("cost is not finite at the initial estimate")
    rep.initial_cost = cost
    lam = cfg.lm_lambda0
    rejects_at_max = 0
    for _ in range(cfg.lm_max_iters):
        if prob.n == 0:
            rep.converged = True
            break
        H, g = prob.normal_equations(terms)
        if np.abs(g).max() < 1e-14 or cost < 1e-24:
            rep.converged = True
            break
        dx = _solve(H, g, lam)
        rep.iterations += 1
        if np.abs(dx).max() < 1e-12 * max(np.abs(p.t).max(initial=0.0), 1.0):
            rep.converged = True
            break
        p_new = prob.retract(p, dx)
        terms_new, cost_new = _try_terms(prob, p_new)
        if cost_new < cost:
            rel = (cost - cost_new) / cost
            p, terms, cost = p_new, terms_new, cost_new
            rep.accepted += 1
            lam = max(lam / 10, 1e-12)
            rejects_at_max = 0
            if rel < cfg.lm_rel_tol:
                rep.converged = True
                break
        else:
            lam = min(lam * 10, MAX_DAMPING)
            if lam >= MAX_DAMPING:
                rejects_at_max += 1
                if rejects_at_max >= MAX_REJECTS_AT_MAX:
                    raise SolverDiverged(f"no decrease after {rejects_at_max} steps at damping {lam:g}")
    rep.final_cost = cost
    out = w.copy()
    prob.write_back(p, out)
    return out, rep
