"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def central_diff(f, x0, h=1e-4):
    """Central finite differences of scalar f at every coordinate of x0."""
    x0 = np.array(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        gf[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
    return g


def rel_err(g, ref):
    """Norm-wise relative error of a gradient block."""
    g, ref = np.asarray(g, float), np.asarray(ref, float)
    return float(np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-12))


def _act(v, kind, w0):
    if kind == "sine":
        return math.sin(w0 * v)
    if kind == "softplus":
        return max(v, 0.0) + math.log1p(math.exp(-abs(v)))
    if kind == "tanh":
        return math.tanh(v)
    if kind == "sigmoid":
        return 1.0 / (1.0 + math.exp(-v))
    return v


def straight_mlp(w, spec, x):
    """Scalar-loop forward pass of one input vector."""
    h = [float(v) for v in x]
    pos = 0
    layers = list(zip(spec.sizes[:-1], spec.sizes[1:]))
    for k, (i, o) in enumerate(layers):
        W = [[float(w[pos + r * o + c]) for c in range(o)] for r in range(i)]
        pos += i * o
        b = [float(w[pos + c]) for c in range(o)]
        pos += o
        kind = spec.hidden if k < len(layers) - 1 else spec.output
        h = [_act(sum(h[r] * W[r][c] for r in range(i)) + b[c], kind, spec.w0) for c in range(o)]
    return np.array(h)


def cube_sdf_scalar(p, half):
    d = [abs(v) - half for v in p]
    out = math.sqrt(sum(max(v, 0.0) ** 2 for v in d))
    return out + min(max(d), 0.0)


def brute_uni(a, b):
    tot = 0.0
    for x in a:
        tot += min(float(((x - y) ** 2).sum()) for y in b)
    return tot / len(a)


def bce_scalar(p, y, clamp=1e-7):
    p = min(max(p, clamp), 1 - clamp)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def numeric_grad3(f, q, h=1e-6):
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[k] = (f(q + e) - f(q - e)) / (2 * h)
    return g


def train_terms_scalar(model, inter, phi):
    """Every training term recomputed row by row from straight-line passes."""
    cfg = model.config
    ls = cfg.length_scale
    P = model.params
    w = np.asarray(inter.wrench, float) * np.array([1, 1, 1, 1 / ls, 1 / ls, 1 / ls]) / cfg.force_unit
    psi = straight_mlp(P["E"], cfg.e_spec, w)
    z = np.concatenate([phi, psi])
    wD = straight_mlp(P["H_D"], cfg.hyper_spec("D"), z)
    wT = straight_mlp(P["H_T"], cfg.hyper_spec("T"), z)

    def deformed(q):
        return q + straight_mlp(wD, cfg.d_spec, q)

    def s_of(q):
        return straight_mlp(P["O"], cfg.o_spec, deformed(q))[0]

    s = inter.samples
    surf = s.sdf == 0
    pts = s.points / ls
    order = np.concatenate([np.flatnonzero(surf), np.flatnonzero(~surf)])
    sdf_err, dsq = [], []
    for i in order:
        q = pts[i]
        sdf_err.append(abs(s_of(q) - s.sdf[i] / ls))
        d = deformed(q) - q
        dsq.append(float(d @ d))
    normal, bce_t, mapped = [], [], []
    for i in np.flatnonzero(surf):
        q = pts[i]
        normal.append(1.0 - float(numeric_grad3(s_of, q) @ s.normals[i]))
        bce_t.append(bce_scalar(straight_mlp(wT, cfg.t_spec, q)[0], s.contact[i]))
        mapped.append(deformed(q))
    mapped = np.array(mapped)
    nom = inter.nominal_cloud / ls
    return {
        "sdf": float(np.mean(sdf_err)),
        "normal": float(np.mean(normal)),
        "embedding": float(phi @ phi),
        "deform": float(np.mean(dsq)),
        "chamfer": brute_uni(mapped, nom) + brute_uni(nom, mapped),
        "contact": float(np.mean(bce_t)),
        "hyper": float(np.mean(wD ** 2) + np.mean(wT ** 2)),
    }


def pretrain_loss_scalar(model, samples, xi):
    cfg = model.config
    ls = cfg.length_scale

    def s_of(q):
        return straight_mlp(model.params["O"], cfg.o_spec, q)[0]

    err = [abs(s_of(p / ls) - v / ls) for p, v in zip(samples.points, samples.sdf)]
    surf = np.flatnonzero(samples.sdf == 0)
    nrm = [1.0 - float(numeric_grad3(s_of, samples.points[i] / ls) @ samples.normals[i]) for i in surf]
    return float(np.mean(err) + xi * np.mean(nrm))


def pairwise_uni(a, b):
    """Vectorised O(N*M) unidirectional chamfer (full distance matrix)."""
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(d.min(axis=1).mean())


def normal_dot_sign(mesh, pts, tie=1e-9):
    """Inside/outside from the nearest triangles' normals (no ray casting).

    Sums (p - c) . n over every triangle tied for the minimum distance, which
    settles points whose nearest feature is an edge or a vertex.
    """
    from ndcf.geometry import closest_point_on_triangles

    tri = mesh.triangles
    n = mesh.face_normals()
    M = len(tri)
    out = np.empty(len(pts))
    for lo in range(0, len(pts), 128):
        p = pts[lo:lo + 128]
        k = len(p)
        P = np.repeat(p, M, axis=0)
        cp = closest_point_on_triangles(P, np.tile(tri[:, 0], (k, 1)), np.tile(tri[:, 1], (k, 1)),
                                        np.tile(tri[:, 2], (k, 1)))
        diff = (P - cp).reshape(k, M, 3)
        d = np.linalg.norm(diff, axis=2)
        near = d <= d.min(axis=1, keepdims=True) + tie
        dots = np.einsum("kmj,mj->km", diff, n)
        out[lo:lo + k] = np.sign(np.where(near, dots, 0.0).sum(axis=1))
    return out


def _act_np(v, kind, w0):
    """Activation and its derivative, plain numpy."""
    if kind == "sine":
        return np.sin(w0 * v), w0 * np.cos(w0 * v)
    if kind == "softplus":
        s = 1.0 / (1.0 + np.exp(-v))
        return np.logaddexp(0.0, v), s
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-v))
        return s, s * (1.0 - s)
    if kind == "tanh":
        t = np.tanh(v)
        return t, 1.0 - t * t
    return v, np.ones_like(v)


def mlp_np(w, spec, x, jacobian=False):
    """Batched forward pass; with ``jacobian`` also d out / d x of shape (N, out, in)."""
    h = np.atleast_2d(np.asarray(x, float))
    J = np.broadcast_to(np.eye(h.shape[1]), (len(h), h.shape[1], h.shape[1])) if jacobian else None
    n = len(spec.layer_shapes)
    for k, ((i, o), (w_lo, b_lo, b_hi)) in enumerate(zip(spec.layer_shapes, spec.offsets())):
        W = np.asarray(w[w_lo:b_lo]).reshape(i, o)
        h, dh = _act_np(h @ W + w[b_lo:b_hi], spec.hidden if k < n - 1 else spec.output, spec.w0)
        if jacobian:
            J = dh[:, :, None] * np.einsum("io,nij->noj", W, J)
    return (h, J) if jacobian else h


def pretrain_loss_np(cfg, O, batch, xi):
    """Pretraining objective on a prepared batch, recomputed without the tape."""
    ns = batch.n_surface
    s, J = mlp_np(O, cfg.o_spec, batch.points, jacobian=True)
    err = np.abs(s[:, 0] - batch.sdf).mean()
    normal = (1.0 - (J[:ns, 0, :] * batch.normals).sum(axis=1)).mean()
    return err + xi * normal


def train_loss_np(cfg, P, phi, batch, weights, bce_clamp):
    """Weighted end-to-end objective on a prepared batch, recomputed without the tape."""
    ns = batch.n_surface
    psi = mlp_np(P["E"], cfg.e_spec, batch.wrench)[0]
    z = np.concatenate([phi, psi])
    wD = mlp_np(P["H_D"], cfg.hyper_spec("D"), z)[0]
    wT = mlp_np(P["H_T"], cfg.hyper_spec("T"), z)[0]
    q = batch.points
    dq, JD = mlp_np(wD, cfg.d_spec, q, jacobian=True)
    x = q + dq
    s, JO = mlp_np(P["O"], cfg.o_spec, x, jacobian=True)
    grad = np.einsum("nj,nji->ni", JO[:, 0, :], np.eye(3) + JD)
    c = np.clip(mlp_np(wT, cfg.t_spec, q[:ns])[:, 0], bce_clamp, 1 - bce_clamp)
    y = batch.contact
    mapped = x[:ns]
    terms = {
        "sdf": np.abs(s[:, 0] - batch.sdf).mean(),
        "normal": (1.0 - (grad[:ns] * batch.normals).sum(axis=1)).mean(),
        "embedding": float(phi @ phi),
        "deform": (dq ** 2).sum(axis=1).mean(),
        "chamfer": pairwise_uni(mapped, batch.nominal_cloud) + pairwise_uni(batch.nominal_cloud, mapped),
        "contact": -(y * np.log(c) + (1 - y) * np.log(1 - c)).mean(),
        "hyper": (wD ** 2).mean() + (wT ** 2).mean(),
    }
    coef = {"sdf": 1.0, "normal": weights.xi, "embedding": weights.alpha, "deform": weights.beta,
            "chamfer": weights.omega, "contact": weights.gamma, "hyper": weights.zeta}
    return sum(coef[k] * terms[k] for k in coef)
