"""Schur-complement marginalization of the oldest frame into a square-root prior."""
from __future__ import annotations

import numpy as np

from ..errors import WindowTooSmall
from ..factors import PriorBlock
from .solver import Problem, Term
from .state import WindowConfig, WindowState

EIG_FLOOR = 1e-12  # relative; smaller eigenvalues are treated as unconstrained directions


def _pinv_psd(A):
    ev, V = np.linalg.eigh(A)
    keep = ev > EIG_FLOOR * max(ev.max(initial=0.0), 1e-300)
    return (V[:, keep] / ev[keep]) @ V[:, keep].T


def schur_prior(H, g, keep, drop):
    """Eliminate columns ``drop`` from the system (H, g); return square-root form (r, J) on ``keep``.

    ``J^T J`` is the Schur complement and ``J^T r`` the matching gradient, so
    ``||r + J dx||^2`` equals the eliminated quadratic up to a constant.
    """
    Hkk = H[np.ix_(keep, keep)]
    if len(drop):
        Hkd = H[np.ix_(keep, drop)]
        inv = _pinv_psd(H[np.ix_(drop, drop)])
        S = Hkk - Hkd @ inv @ Hkd.T
        b = g[keep] - Hkd @ inv @ g[drop]
    else:
        S, b = Hkk, g[keep]
    S = 0.5 * (S + S.T)
    ev, V = np.linalg.eigh(S)
    ok = ev > EIG_FLOOR * max(ev.max(initial=0.0), 1e-300)
    sq = np.sqrt(ev[ok])
    J = sq[:, None] * V[:, ok].T
    r = (V[:, ok].T @ b) / sq
    return r, J


def _departing(w: WindowState, prob: Problem, old):
    """Blocks leaving with the oldest frame: its pose, points it hosts and landmarks seen too rarely without it."""
    drop = {("pose", old)}
    for i in prob.points:
        P = w.points[i]
        if P.host_frame == old or sum(f != old for f in P.observations) < 2:
            drop.add(("point", i))
    for i in prob.lines:
        if sum(f != old for f in w.lines[i].observations) < 2:
            drop.add(("line", i))
    return drop


def marginalize_oldest(w: WindowState, cfg: WindowConfig | None = None) -> WindowState:
    """Fold the oldest frame into the prior and drop it from the window."""
    cfg = cfg or WindowConfig()
    if len(w.frames) < cfg.window_size:
        raise WindowTooSmall(f"window holds {len(w.frames)} of {cfg.window_size} frames")
    out = w.copy()
    old = out.frames[0].frame_idx
    prob = Problem(out, cfg)
    drop = _departing(out, prob, old)
    drop_b = np.array(sorted(prob.bid[k] for k in drop))

    terms = prob.terms(prob.params())
    chosen, used_linear = [], []
    prior_term = None
    lin = [P for P in prob.linear if P is not out.prior]
    lin_k = 0
    for T in terms:
        hit = np.isin(T.bids, drop_b).any(1)
        if T.kind == "prior":
            prior_term = T
            continue
        if T.kind == "linear":
            if hit[0]:
                chosen.append(T)
                used_linear.append(lin[lin_k])
            lin_k += 1
            continue
        if hit.any():
            chosen.append(Term(T.kind, T.r[hit], T.J[hit], T.bids[hit], T.cost[hit]))

    if prior_term is not None and (chosen or np.isin(prior_term.bids, drop_b).any()):
        chosen.append(prior_term)
        out.prior = None
    if chosen:
        involved = np.unique(np.concatenate([T.bids.ravel() for T in chosen]))
        keep_b = [b for b in involved if b not in set(drop_b) and prob.col0[b] >= 0]
        H, g = prob.normal_equations(chosen)
        cols = lambda bs: np.concatenate([prob.col0[b] + np.arange(prob.dims[b]) for b in bs]
                                         + [np.zeros(0, dtype=int)]).astype(int)
        drop_c = cols([b for b in drop_b if prob.col0[b] >= 0])
        if keep_b:
            r, J = schur_prior(H, g, cols(keep_b), drop_c)
            keys = [prob.keys[b] for b in keep_b]
            out.prior = PriorBlock(keys, [out.block_value(k) for k in keys], r, J)
    out.linear_factors = [P for P in out.linear_factors if not any(P is u for u in used_linear)]
    _drop_frame(out, old, drop)
    return out


def _drop_frame(w: WindowState, old, drop):
    w.frames = [f for f in w.frames if f.frame_idx != old]
    w.mfs.pop(old, None)
    for kind, store in (("point", w.points), ("line", w.lines)):
        for i in list(store):
            if (kind, i) in drop:
                del store[i]
                continue
            L = store[i]
            L.observations.pop(old, None)
            if kind == "line":
                L.labels.pop(old, None)
            if not L.observations:
                del store[i]
            elif kind == "point" and L.host_frame == old:
                # only inactive points get here; re-host at their next view
                L.host_frame = min(L.observations)
