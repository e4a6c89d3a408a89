"""Brute-force reference implementations used only for verification.

Everything here is written as plain scalar loops over numpy storage, sharing
no computation with the production modules: convolution is six nested loops,
resampling looks up its four neighbors one output pixel at a time, the gate
updates transcribe the mean-field equations literally, and the rank probe is
a self-contained one-sided Jacobi SVD. Slow on purpose; a budget guard keeps
instances small enough that brute force stays honest.

Functions accept either Tensors or ndarrays and return ndarrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SizeCapError


@dataclass(frozen=True)
class OracleBudget:
    """Hard cap on instance size for the brute-force paths."""

    max_elements: int = 65536


DEFAULT_BUDGET = OracleBudget()


def _arr(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.asarray(data, dtype=np.float64)


def _check_budget(budget: OracleBudget | None, *arrays):
    budget = budget or DEFAULT_BUDGET
    for a in arrays:
        if a.size > budget.max_elements:
            raise SizeCapError(
                f"oracle instance with {a.size} elements exceeds budget {budget.max_elements}"
            )


def _sigmoid_scalar(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def naive_conv2d(x, kernels, stride: int = 1, zero_pad: int | None = None, budget=None):
    """Cross-correlation, one output scalar at a time. Out-of-range taps are zero."""
    x = _arr(x)
    k = _arr(kernels)
    _check_budget(budget, x, k)
    cin, h, w = x.shape
    cout, kcin, kh, kw = k.shape
    if kcin != cin:
        raise ShapeError("channel mismatch", x.shape, k.shape)
    pad = kh // 2 if zero_pad is None else int(zero_pad)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((cout, ho, wo))
    for o in range(cout):
        for oy in range(ho):
            for ox in range(wo):
                acc = 0.0
                for i in range(cin):
                    for y in range(kh):
                        for xx in range(kw):
                            sy = oy * stride + y - pad
                            sx = ox * stride + xx - pad
                            if 0 <= sy < h and 0 <= sx < w:
                                acc += x[i, sy, sx] * k[o, i, y, xx]
                out[o, oy, ox] = acc
    return out


def naive_resize_bilinear(x, out_h: int, out_w: int, budget=None):
    """Half-pixel-center bilinear resample, one output pixel at a time."""
    x = _arr(x)
    _check_budget(budget, x)
    c, h, w = x.shape
    out = np.zeros((c, out_h, out_w))
    for ch in range(c):
        for oy in range(out_h):
            for ox in range(out_w):
                sy = (oy + 0.5) * (h / out_h) - 0.5
                sx = (ox + 0.5) * (w / out_w) - 0.5
                y0 = math.floor(sy)
                x0 = math.floor(sx)
                fy = sy - y0
                fx = sx - x0
                y0c = min(max(y0, 0), h - 1)
                y1c = min(max(y0 + 1, 0), h - 1)
                x0c = min(max(x0, 0), w - 1)
                x1c = min(max(x0 + 1, 0), w - 1)
                out[ch, oy, ox] = (
                    (1.0 - fy) * (1.0 - fx) * x[ch, y0c, x0c]
                    + (1.0 - fy) * fx * x[ch, y0c, x1c]
                    + fy * (1.0 - fx) * x[ch, y1c, x0c]
                    + fy * fx * x[ch, y1c, x1c]
                )
    return out


def _gates_as_lists(att):
    """Accept a StructuredAttention-like object or a (maps, vectors) pair."""
    if isinstance(att, tuple):
        maps, vectors = att
    else:
        maps = [m.values if hasattr(m, "values") else m for m in att.maps]
        vectors = [v.values if hasattr(v, "values") else v for v in att.vectors]
    return [_arr(m) for m in maps], [_arr(v) for v in vectors]


def _gate_value(maps, vectors, c, hh, ww):
    acc = 0.0
    for t in range(len(maps)):
        acc += maps[t][hh, ww] * vectors[t][c]
    return acc


def naive_update_hidden(f_r, messages, atts, b=None, budget=None):
    """Hidden-feature posterior mean: (b*f + sum_e gated message_e) / b."""
    f = _arr(f_r)
    msgs = [_arr(m) for m in messages]
    _check_budget(budget, f, *msgs)
    gates = [_gates_as_lists(a) for a in atts]
    c, h, w = f.shape
    bb = np.ones_like(f) if b is None else _arr(b)
    out = np.zeros_like(f)
    for ch in range(c):
        for hh in range(h):
            for ww in range(w):
                acc = bb[ch, hh, ww] * f[ch, hh, ww]
                for e in range(len(msgs)):
                    maps, vectors = gates[e]
                    acc += msgs[e][ch, hh, ww] * _gate_value(maps, vectors, ch, hh, ww)
                out[ch, hh, ww] = acc / bb[ch, hh, ww]
    return out


def naive_update_spatial_gate(z_r, message_e, channel_gate, budget=None):
    """Spatial gate update: sigmoid over the channel-weighted evidence map."""
    z = _arr(z_r)
    msg = _arr(message_e)
    v = _arr(channel_gate)
    _check_budget(budget, z, msg)
    c, h, w = z.shape
    out = np.zeros((h, w))
    for hh in range(h):
        for ww in range(w):
            acc = 0.0
            for ch in range(c):
                acc += v[ch] * z[ch, hh, ww] * msg[ch, hh, ww]
            out[hh, ww] = _sigmoid_scalar(acc)
    return out


def naive_update_channel_gate(z_r, message_e, spatial_gate, budget=None):
    """Channel gate update: softmax over the map-weighted evidence vector."""
    z = _arr(z_r)
    msg = _arr(message_e)
    m = _arr(spatial_gate)
    _check_budget(budget, z, msg)
    c, h, w = z.shape
    arg = np.zeros(c)
    for ch in range(c):
        acc = 0.0
        for hh in range(h):
            for ww in range(w):
                acc += m[hh, ww] * z[ch, hh, ww] * msg[ch, hh, ww]
        arg[ch] = acc
    mx = arg.max() if c else 0.0
    exps = [math.exp(a - mx) for a in arg]
    tot = sum(exps)
    return np.array([e / tot for e in exps])


def naive_kernel_table(f_r, f_e, z_r, z_e, att, budget=None):
    """Closed-form pairwise kernel means, indexed [p, c, p', c'] with p = h*W + w."""
    fr = _arr(f_r)
    fe = _arr(f_e)
    zr = _arr(z_r)
    ze = _arr(z_e)
    maps, vectors = _gates_as_lists(att)
    cr, hr, wr = fr.shape
    ce, he, we = fe.shape
    pr = hr * wr
    pe = he * we
    budget = budget or DEFAULT_BUDGET
    if pr * cr * pe * ce > budget.max_elements:
        raise SizeCapError(
            f"pairwise kernel table needs {pr * cr * pe * ce} entries, over the "
            f"{budget.max_elements} cap; use the convolutional kernel_field estimate instead"
        )
    out = np.zeros((pr, cr, pe, ce))
    for p in range(pr):
        hh, ww = divmod(p, wr)
        for c in range(cr):
            g = _gate_value(maps, vectors, c, hh, ww)
            for q in range(pe):
                h2, w2 = divmod(q, we)
                for c2 in range(ce):
                    out[p, c, q, c2] = (
                        fr[c, hh, ww] * fe[c2, h2, w2] + g * zr[c, hh, ww] * ze[c2, h2, w2]
                    )
    return out


def _naive_message(f_e, bank, e, out_h, out_w, field, budget):
    a1 = naive_conv2d(f_e, bank.self_kernels[e], budget=budget)
    a2 = naive_resize_bilinear(a1, out_h, out_w, budget=budget)
    a3 = naive_conv2d(a2, bank.projections[e], budget=budget)
    msg = naive_conv2d(a3, bank.cross_kernels[e], budget=budget)
    if field is not None:
        msg = msg * field
    return msg, a2


def naive_refine_scale(features, receiving_index, bank, cfg, seed, budget=None):
    """Straight-line transcription of the refinement pass.

    Returns (refined ndarray, gates) where gates is a list over emitting
    scales of (maps, vectors) lists. Must stay numerically interchangeable
    with the production refine_scale for identical inputs and seed.
    """
    feats = [_arr(f) for f in features]
    _check_budget(budget, *feats)
    r = receiving_index
    f_r = feats[r]
    cr, hr, wr = f_r.shape
    n = len(feats)
    rank = cfg.rank
    variant = cfg.variant
    if variant != "none" and rank == 0:
        variant = "none"

    if variant == "none":
        out = f_r.copy()
        for e in range(n):
            msg, _ = _naive_message(feats[e], bank, e, hr, wr, None, budget)
            out = out + msg
        return out, [([], []) for _ in range(n)]

    # initial gates; draw order must match the production path exactly:
    # scale-major, then t, one uniform map per (e, t)
    maps = [[None] * rank for _ in range(n)]
    vectors = [[None] * rank for _ in range(n)]
    map_seeds = getattr(bank, "gate_map_logits", None)
    vec_seeds = getattr(bank, "gate_vec_logits", None)
    rng = np.random.default_rng(seed)
    for e in range(n):
        for t in range(rank):
            if variant == "channel-only":
                maps[e][t] = np.ones((hr, wr))
            elif map_seeds is not None:
                logit = _arr(map_seeds[e][t])
                m0 = np.zeros((hr, wr))
                for hh in range(hr):
                    for ww in range(wr):
                        m0[hh, ww] = _sigmoid_scalar(logit[hh, ww])
                maps[e][t] = m0
            else:
                maps[e][t] = rng.uniform(size=(hr, wr))
            if variant == "spatial-only":
                vectors[e][t] = np.full(cr, 1.0 / cr)
            elif vec_seeds is not None:
                logit = _arr(vec_seeds[e][t])
                mx = logit.max()
                exps = [math.exp(a - mx) for a in logit]
                tot = sum(exps)
                vectors[e][t] = np.array([x / tot for x in exps])
            else:
                vectors[e][t] = np.full(cr, 1.0 / cr)

    b_map = np.full((cr, hr, wr), cfg.b_value)
    fields = [None] * n
    z = f_r
    for _ in range(cfg.iterations):
        msgs = []
        selfs = []
        for e in range(n):
            msg, a2 = _naive_message(feats[e], bank, e, hr, wr, fields[e], budget)
            msgs.append(msg)
            selfs.append(a2)
        z = naive_update_hidden(f_r, msgs, list(zip(maps, vectors)), b_map, budget=budget)
        for e in range(n):
            for t in range(rank):
                if variant in ("structured", "spatial-only"):
                    maps[e][t] = naive_update_spatial_gate(z, msgs[e], vectors[e][t], budget)
                if variant in ("structured", "channel-only"):
                    vectors[e][t] = naive_update_channel_gate(z, msgs[e], maps[e][t], budget)
        for e in range(n):
            gate = np.zeros((cr, hr, wr))
            for c in range(cr):
                for hh in range(hr):
                    for ww in range(wr):
                        gate[c, hh, ww] = _gate_value(maps[e], vectors[e], c, hh, ww)
            ce = selfs[e].shape[0]
            mean_ch = np.zeros((1, hr, wr))
            for hh in range(hr):
                for ww in range(wr):
                    acc = 0.0
                    for c in range(ce):
                        acc += selfs[e][c, hh, ww]
                    mean_ch[0, hh, ww] = acc / ce
            cat = np.concatenate([f_r + z * gate, mean_ch], axis=0)
            fields[e] = naive_conv2d(cat, bank.field_kernels[e], budget=budget)

    refined = f_r + naive_conv2d(z, bank.out_kernel, budget=budget)
    return refined, list(zip(maps, vectors))


# ---------------------------------------------------------------------------
# rank probe
# ---------------------------------------------------------------------------


def _jacobi_singular_values(a: np.ndarray) -> np.ndarray:
    """Singular values by one-sided Jacobi rotations; self-contained."""
    a = np.array(a, dtype=np.float64)
    m, n = a.shape
    if m < n:
        a = a.T.copy()
        m, n = a.shape
    for _ in range(64):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                ai = a[:, i].copy()
                aj = a[:, j].copy()
                app = float(ai @ ai)
                aqq = float(aj @ aj)
                apq = float(ai @ aj)
                if app == 0.0 or aqq == 0.0 or apq == 0.0:
                    continue
                if abs(apq) <= 1e-15 * math.sqrt(app * aqq):
                    continue
                tau = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                a[:, i] = c * ai - s * aj
                a[:, j] = s * ai + c * aj
                rotated = True
        if not rotated:
            break
    sv = np.sqrt(np.sum(a * a, axis=0))
    sv.sort()
    return sv[::-1]


def matricization_rank(gate, tol: float = 1e-9) -> int:
    """Numerical rank of a [C, H, W] gate tensor flattened to [P, C], p = h*W + w.

    Counts singular values above tol times the largest; an all-zero tensor has
    rank 0.
    """
    g = _arr(gate)
    if g.ndim != 3:
        raise ShapeError("rank probe expects a [C, H, W] tensor", g.shape)
    c, h, w = g.shape
    mat = np.transpose(g, (1, 2, 0)).reshape(h * w, c)
    sv = _jacobi_singular_values(mat)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))
