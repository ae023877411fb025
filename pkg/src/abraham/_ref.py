"""Pure-numpy reference backend.

Implements the numerical kernels behind the soliton, memory-kernel and grid
code paths. The compiled backend (``abraham._fast``) mirrors the same entry
points; this module is the fallback selected at import time and the oracle
the compiled code is tested against.

Math carried by this module
---------------------------

The comoving potential kernel is

    k(x; v) = 1 / (4 pi sqrt(Q)),   Q = (1 - |v|^2)|x|^2 + (v.x)^2,

and every field the package needs is a derivative of a radial mollification
Phi = w * k (w is the charge density rho or its self-convolution chi).
Derivatives are evaluated under the integral; near the support the quadrature
recenters on the kernel singularity and shifts excess x-derivatives onto the
weight so the integrand stays integrable (at most one x-derivative on k).
"""

from __future__ import annotations

import numpy as np

from .quadrature import SphereRule, ball_rule, gauss_panels

name = "python"

# ---------------------------------------------------------------------------
# weight descriptors
# ---------------------------------------------------------------------------


class WeightDesc:
    """Radial weight for mollifying quadratures.

    kind 0: bump profile (params Z, R), 1: poly4 profile (Z, R),
    2: spline table (PPoly breakpoints/coefficients), support = radius of
    the support ball.
    """

    __slots__ = ("kind", "Z", "R", "support", "ppx", "ppc")

    def __init__(self, kind, Z, R, support, ppx=None, ppc=None):
        self.kind = int(kind)
        self.Z = float(Z)
        self.R = float(R)
        self.support = float(support)
        self.ppx = ppx
        self.ppc = ppc

    # value / first / second radial derivative, vectorized
    def val(self, r):
        return self._eval(r, 0)

    def d1(self, r):
        return self._eval(r, 1)

    def d2(self, r):
        return self._eval(r, 2)

    def _eval(self, r, order):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        if self.kind == 2:
            inside = r < self.support
            if np.any(inside):
                idx = np.clip(np.searchsorted(self.ppx, r[inside]) - 1,
                              0, len(self.ppx) - 2)
                t = r[inside] - self.ppx[idx]
                c = self.ppc[:, idx]
                if order == 0:
                    out[inside] = ((c[0] * t + c[1]) * t + c[2]) * t + c[3]
                elif order == 1:
                    out[inside] = (3.0 * c[0] * t + 2.0 * c[1]) * t + c[2]
                else:
                    out[inside] = 6.0 * c[0] * t + 2.0 * c[1]
            return out
        u = r / self.R
        m = u < (1.0 - 1e-14)
        um = u[m]
        if self.kind == 0:
            with np.errstate(divide="ignore", over="ignore"):
                val = self.Z * np.exp(-1.0 / (1.0 - um**2))
            g = -2.0 * um / (1.0 - um**2) ** 2
            if order == 0:
                out[m] = val
            elif order == 1:
                out[m] = val * g / self.R
            else:
                gp = (-2.0 / (1.0 - um**2) ** 2
                      - 8.0 * um**2 / (1.0 - um**2) ** 3)
                out[m] = val * (g * g + gp) / self.R**2
        else:
            one = 1.0 - um**2
            if order == 0:
                out[m] = self.Z * one**4
            elif order == 1:
                out[m] = self.Z * (-8.0 * um * one**3) / self.R
            else:
                out[m] = self.Z * (-8.0 * one**3 + 48.0 * um**2 * one**2) / self.R**2
        return out


# ---------------------------------------------------------------------------
# anisotropic kernel derivative stacks
# ---------------------------------------------------------------------------

_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k, _s in ((0, 1, 2, 1), (1, 2, 0, 1), (2, 0, 1, 1),
                       (0, 2, 1, -1), (2, 1, 0, -1), (1, 0, 2, -1)):
    _EPS3[_i, _j, _k] = _s
_ID3 = np.eye(3)


def aniso_stack(x, v, need):
    """Derivative stacks of k(x; v) = Q^{-1/2}/(4 pi) at points x (M, 3).

    ``need`` is an iterable of keys among
    f, fx, fv, fxx, fxv, fxxv, fxxx, fxxxv.
    Mixed derivatives follow the chain rule for Q^{-1/2} with Q quadratic in
    both arguments (third x-derivatives of Q vanish).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.asarray(v, dtype=float).reshape(3)
    need = set(need)
    a = 1.0 - v @ v
    s = x @ v
    r2 = np.sum(x * x, axis=1)
    Q = a * r2 + s * s
    c = 1.0 / (4.0 * np.pi)
    f1 = -0.5 * Q**-1.5
    f2 = 0.75 * Q**-2.5
    Qx = 2.0 * a * x + 2.0 * s[:, None] * v[None, :]
    Qv = -2.0 * r2[:, None] * v[None, :] + 2.0 * s[:, None] * x
    Qxx = 2.0 * a * _ID3[None] + 2.0 * np.einsum("i,j->ij", v, v)[None]
    # Qxv[m, i, l] = -4 v_l x_i + 2 x_l v_i + 2 s delta_il
    Qxv = (-4.0 * x[:, :, None] * v[None, None, :]
           + 2.0 * v[None, :, None] * x[:, None, :]
           + 2.0 * s[:, None, None] * _ID3[None])
    out = {}
    if "f" in need:
        out["f"] = c * Q**-0.5
    if "fv" in need:
        out["fv"] = c * f1[:, None] * Qv
    if "fx" in need:
        out["fx"] = c * f1[:, None] * Qx
    if "fxx" in need:
        out["fxx"] = c * (f2[:, None, None] * np.einsum("mi,mj->mij", Qx, Qx)
                          + f1[:, None, None] * Qxx)
    if "fxv" in need:
        out["fxv"] = c * (f2[:, None, None] * np.einsum("mi,ml->mil", Qx, Qv)
                          + f1[:, None, None] * Qxv)
    if need & {"fxxv", "fxxx", "fxxxv"}:
        f3 = -1.875 * Q**-3.5
        # Qxxv[i, j, l] = -4 v_l d_ij + 2 d_il v_j + 2 v_i d_jl  (x-independent)
        Qxxv = (-4.0 * np.einsum("ij,l->ijl", _ID3, v)
                + 2.0 * np.einsum("il,j->ijl", _ID3, v)
                + 2.0 * np.einsum("i,jl->ijl", v, _ID3))
    if "fxxv" in need:
        out["fxxv"] = c * (
            f3[:, None, None, None] * np.einsum("mi,mj,ml->mijl", Qx, Qx, Qv)
            + f2[:, None, None, None] * (
                np.einsum("mij,ml->mijl", Qxx * np.ones((len(x), 1, 1)), Qv)
                + np.einsum("mil,mj->mijl", Qxv, Qx)
                + np.einsum("mjl,mi->mijl", Qxv, Qx))
            + f1[:, None, None, None] * Qxxv[None])
    if "fxxx" in need:
        out["fxxx"] = c * (
            f3[:, None, None, None] * np.einsum("mi,mj,mk->mijk", Qx, Qx, Qx)
            + f2[:, None, None, None] * (
                np.einsum("ij,mk->mijk", Qxx[0], Qx)
                + np.einsum("ik,mj->mijk", Qxx[0], Qx)
                + np.einsum("jk,mi->mijk", Qxx[0], Qx)))
    if "fxxxv" in need:
        f4 = 6.5625 * Q**-4.5
        Qxx0 = Qxx[0]
        out["fxxxv"] = c * (
            f4[:, None, None, None, None]
            * np.einsum("mi,mj,mk,ml->mijkl", Qx, Qx, Qx, Qv)
            + f3[:, None, None, None, None] * (
                np.einsum("ij,mk,ml->mijkl", Qxx0, Qx, Qv)
                + np.einsum("ik,mj,ml->mijkl", Qxx0, Qx, Qv)
                + np.einsum("jk,mi,ml->mijkl", Qxx0, Qx, Qv)
                + np.einsum("mil,mj,mk->mijkl", Qxv, Qx, Qx)
                + np.einsum("mjl,mi,mk->mijkl", Qxv, Qx, Qx)
                + np.einsum("mkl,mi,mj->mijkl", Qxv, Qx, Qx))
            + f2[:, None, None, None, None] * (
                np.einsum("ij,mkl->mijkl", Qxx0, Qxv)
                + np.einsum("ik,mjl->mijkl", Qxx0, Qxv)
                + np.einsum("jk,mil->mijkl", Qxx0, Qxv)
                + np.einsum("ijl,mk->mijkl", Qxxv, Qx)
                + np.einsum("ikl,mj->mijkl", Qxxv, Qx)
                + np.einsum("jkl,mi->mijkl", Qxxv, Qx)))
    return out


# ---------------------------------------------------------------------------
# mollified potential stacks  Phi = w * k
# ---------------------------------------------------------------------------

# derivative keys of Phi -> (weight derivative order, kernel keys) used by the
# recentered near-field path; all remaining indices stay on the kernel.
_NEAR_SPLIT = {
    "f": (0, "f"),
    "fv": (0, "fv"),
    "fx": (0, "fx"),
    "fxv": (0, "fxv"),
    "fxx": (1, "fx"),
    "fxxv": (1, "fxv"),
    "fxxx": (2, "fx"),
    "fxxxv": (2, "fxv"),
}


def _weight_grad_tensors(w: WeightDesc, z):
    """w(z), grad w(z), Hessian of w(z) for points z (M, 3)."""
    r = np.sqrt(np.sum(z * z, axis=1))
    rr = np.where(r > 0.0, r, 1.0)
    zh = z / rr[:, None]
    w0 = w.val(r)
    w1 = w.d1(r)
    w2 = w.d2(r)
    over_r = np.where(r > 1e-12, w1 / rr, w2)
    grad = w1[:, None] * zh
    hess = (w2 - over_r)[:, None, None] * np.einsum("mi,mj->mij", zh, zh) \
        + over_r[:, None, None] * _ID3[None]
    small = r <= 1e-12
    if np.any(small):
        grad[small] = 0.0
        hess[small] = w2[small, None, None] * _ID3[None]
    return w0, grad, hess


def potential_stack(targets, v, w: WeightDesc, need, quad):
    """Derivative stacks of Phi = w * k at the targets.

    quad = (far_nrad, far_np, far_na, near_n, near_np, near_na, margin):
    targets with |y| >= support * (1 + margin) use a fixed ball rule with all
    derivatives on the kernel; the rest use the recentered rule with
    derivative shifting.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    v = np.asarray(v, dtype=float).reshape(3)
    need = list(need)
    M = len(targets)
    far_nrad, far_np, far_na, near_n, near_np, near_na, margin = quad
    shapes = {"f": (), "fv": (3,), "fx": (3,), "fxv": (3, 3), "fxx": (3, 3),
              "fxxv": (3, 3, 3), "fxxx": (3, 3, 3), "fxxxv": (3, 3, 3, 3)}
    out = {k: np.zeros((M,) + shapes[k]) for k in need}
    d = np.sqrt(np.sum(targets * targets, axis=1))
    far = d >= w.support * (1.0 + margin)

    if np.any(far):
        sph = SphereRule(far_np, far_na)
        pts, wq = ball_rule(far_nrad, w.support, sph, radial_weight=w.val)
        idx = np.nonzero(far)[0]
        # kernel arguments y - z for all (target, node) pairs, chunked to
        # keep the intermediate stacks bounded in memory
        chunk = max(1, 50000 // len(wq))
        for lo in range(0, len(idx), chunk):
            sel = idx[lo:lo + chunk]
            args = targets[sel][:, None, :] - pts[None, :, :]
            st = aniso_stack(args.reshape(-1, 3), v, need)
            for k in need:
                arr = st[k].reshape((len(sel), len(wq)) + shapes[k])
                out[k][sel] = np.tensordot(arr, wq, axes=(1, 0))

    near_idx = np.nonzero(~far)[0]
    if len(near_idx):
        kernel_keys = sorted({_NEAR_SPLIT[k][1] for k in need})
        for m in near_idx:
            nodes, wq = _near_nodes(targets[m], d[m], w.support,
                                    near_n, near_np, near_na)
            zf = targets[m][None, :] + nodes
            w0, w1t, w2t = _weight_grad_tensors(w, zf)
            st = aniso_stack(-nodes, v, kernel_keys)
            for k in need:
                worder, kk = _NEAR_SPLIT[k]
                base = st[kk]
                if worder == 0:
                    out[k][m] = np.tensordot(wq * w0, base, axes=(0, 0))
                elif worder == 1:
                    # Phi_{i...} = int (d_i w)(z) (D k)(y - z) dz
                    out[k][m] = np.einsum("q,qi,q...->i...", wq, w1t, base)
                else:
                    out[k][m] = np.einsum("q,qij,q...->ij...", wq, w2t, base)
    return out


def _near_nodes(y, dy, S, n_rad, n_pol, n_az):
    """Singularity-centered nodes for a target inside / close to the support.

    Returns displacement vectors r*omega (Q, 3) and weights including the
    r^2 Jacobian. The polar axis points from the target toward the origin and
    the polar integral runs over the exact angular section |y + r omega| <= S
    per radius, so the support boundary never cuts the quadrature domain.
    """
    start = max(0.0, dy - S)
    end = dy + S
    inner = abs(S - dy)
    edges = sorted({start, end} | ({inner} if start < inner < end else set()))
    r, wr = gauss_panels(n_rad, edges)
    xg, wg = np.polynomial.legendre.leggauss(n_pol)
    phi = 2.0 * np.pi * (np.arange(n_az) + 0.5) / n_az
    if dy < 1e-12 * S:
        e3 = np.array([0.0, 0.0, 1.0])
    else:
        e3 = -y / dy
    t = np.array([1.0, 0.0, 0.0])
    if abs(e3[0]) > 0.9:
        t = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(e3, t)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    # mu measured along +e3 (toward the origin): |y + r w|^2 = dy^2 + r^2
    # - 2 r dy mu, inside support iff mu >= mu*(r)
    if dy < 1e-12 * S:
        mu_lo = -np.ones_like(r)
    else:
        mu_lo = np.clip((dy * dy + r * r - S * S) / (2.0 * dy * r), -1.0, 1.0)
    half = 0.5 * (1.0 - mu_lo)                      # map [-1,1] -> [mu_lo, 1]
    mu = mu_lo[:, None] + half[:, None] * (xg[None, :] + 1.0)
    wmu = half[:, None] * wg[None, :]
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - mu * mu))
    base = (mu[:, :, None, None] * e3[None, None, None, :]
            + sin_t[:, :, None, None]
            * (np.cos(phi)[None, None, :, None] * e1[None, None, None, :]
               + np.sin(phi)[None, None, :, None] * e2[None, None, None, :]))
    nodes = r[:, None, None, None] * base
    wq = np.repeat(((wr * r * r)[:, None] * wmu).reshape(-1), n_az) \
        * (2.0 * np.pi / n_az)
    return nodes.reshape(-1, 3), wq


# ---------------------------------------------------------------------------
# comoving field assembly from potential stacks
# ---------------------------------------------------------------------------


def fields_from_stack(v, st):
    """Assemble comoving fields and derivatives from potential stacks.

    E = -grad Phi + v (v . grad Phi), B = -v x grad Phi, with space and
    velocity derivatives obtained by differentiating those expressions
    (stacks carry the mixed Phi derivatives).
    Returns a dict with whatever the stacks support: E, B, dE, dB (space
    Jacobians d[i,j] = d_j F_i), dvE, dvB (velocity Jacobians), and
    dxdvE/dxdvB with axes (i, j, l) = d_j d_{v_l} F_i.
    """
    v = np.asarray(v, dtype=float).reshape(3)
    out = {}
    P1 = st.get("fx")
    if P1 is not None:
        vdot = P1 @ v
        out["E"] = -P1 + vdot[:, None] * v[None, :]
        out["B"] = -np.cross(np.broadcast_to(v, P1.shape), P1)
    P2 = st.get("fxx")
    if P2 is not None:
        vP2 = np.einsum("k,mkj->mj", v, P2)
        out["dE"] = -P2 + np.einsum("i,mj->mij", v, vP2)
        out["dB"] = -np.einsum("iab,a,mbj->mij", _EPS3, v, P2)
    P1v = st.get("fxv")
    if P1v is not None and P1 is not None:
        vdot = P1 @ v
        vP1v = np.einsum("k,mkj->mj", v, P1v)
        out["dvE"] = (-P1v + vdot[:, None, None] * _ID3[None]
                      + np.einsum("i,mj->mij", v, P1 + vP1v))
        out["dvB"] = (-np.einsum("ijk,mk->mij", _EPS3, P1)
                      - np.einsum("iab,a,mbj->mij", _EPS3, v, P1v))
    P2v = st.get("fxxv")
    if P2v is not None and P2 is not None:
        vP2 = np.einsum("k,mkj->mj", v, P2)
        vP2v = np.einsum("a,makl->mkl", v, P2v)
        # dxdv[i, k, l] = d_k d_{v_l} E_i
        out["dxdvE"] = (-P2v
                        + np.einsum("il,mk->mikl", _ID3, vP2)
                        + np.einsum("i,mlk->mikl", v, P2)
                        + np.einsum("i,mkl->mikl", v, vP2v))
        out["dxdvB"] = (-np.einsum("ila,mak->mikl", _EPS3, P2)
                        - np.einsum("iab,a,mbkl->mikl", _EPS3, v, P2v))
    P3 = st.get("fxxx")
    P3v = st.get("fxxxv")
    if P3 is not None and P3v is not None:
        vP3 = np.einsum("a,makl->mkl", v, P3)
        vP3v = np.einsum("a,maklj->mklj", v, P3v)
        # dxdxdv[i, k, l, j] = d_k d_l d_{v_j} E_i
        out["dxdxdvE"] = (-P3v
                          + np.einsum("ij,mkl->miklj", _ID3, vP3)
                          + np.einsum("i,mjkl->miklj", v, P3)
                          + np.einsum("i,mklj->miklj", v, vP3v))
        out["dxdxdvB"] = (-np.einsum("ijb,mbkl->miklj", _EPS3, P3)
                          - np.einsum("iab,a,mbklj->miklj", _EPS3, v, P3v))
    return out


# ---------------------------------------------------------------------------
# propagated soliton-derivative source (memory kernel building block)
# ---------------------------------------------------------------------------


def _sphere_orders(tau, R, accurate):
    base = 8 if tau <= 2.0 * R else (12 if tau <= 6.0 * R else 16)
    if accurate:
        base += 6
    return base, 2 * base


def propagated_source_pair(x0, tau, v, w: WeightDesc, quad, accurate=False):
    """Free-field evolution of the velocity-gradient source, at one point.

    Initial data are the columns of (d_{v_j} E_v^w, d_{v_j} B_v^w); the
    return values ME, MB are 3x3 matrices whose columns are the propagated
    electric/magnetic fields at time tau evaluated at x0, computed from the
    spherical means of the initial data and their first derivatives over the
    sphere |y - x0| = tau.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    if tau <= 1e-9:
        st = potential_stack(x0[None, :], v, w, ("fx", "fxv"), quad)
        f = fields_from_stack(v, st)
        return f["dvE"][0], f["dvB"][0]
    npol, naz = _sphere_orders(tau, w.R, accurate)
    sph = SphereRule(npol, naz)
    y = x0[None, :] + tau * sph.dirs
    st = potential_stack(y, v, w, ("fx", "fxv", "fxx", "fxxv"), quad)
    f = fields_from_stack(v, st)
    SE, SB = f["dvE"], f["dvB"]          # (M, 3, 3): [i, j]
    dSE, dSB = f["dxdvE"], f["dxdvB"]    # (M, 3, k, j)
    n = sph.dirs
    wgt = sph.weights / (4.0 * np.pi)
    mean = lambda arr: np.tensordot(wgt, arr, axes=(0, 0))
    ndSE = np.einsum("mk,mikj->mij", n, dSE)
    ndSB = np.einsum("mk,mikj->mij", n, dSB)
    curlSE = np.einsum("iab,mbaj->mij", _EPS3, dSE)
    curlSB = np.einsum("iab,mbaj->mij", _EPS3, dSB)
    ME = mean(SE) + tau * (mean(ndSE) + mean(curlSB))
    MB = mean(SB) + tau * (mean(ndSB) - mean(curlSE))
    return ME, MB


def propagated_gradient_source(x0, tau, v, w: WeightDesc, quad, accurate=False):
    """Like propagated_source_pair but for the space-gradient source.

    Initial data are the columns of (d_{x_l} d_{v_j} E_v^w, same for B);
    returns (GE, GB) with axes [i, l, j].  Used by kernel decay diagnostics.
    """
    x0 = np.asarray(x0, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    keys = ("fx", "fxx", "fxv", "fxxv", "fxxx", "fxxxv")
    if tau <= 1e-9:
        st = potential_stack(x0[None, :], v, w, ("fx", "fxx", "fxv", "fxxv"), quad)
        f = fields_from_stack(v, st)
        return f["dxdvE"][0], f["dxdvB"][0]
    npol, naz = _sphere_orders(tau, w.R, accurate)
    sph = SphereRule(npol, naz)
    y = x0[None, :] + tau * sph.dirs
    st = potential_stack(y, v, w, keys, quad)
    f = fields_from_stack(v, st)
    SE, SB = f["dxdvE"], f["dxdvB"]          # (M, i, l, j)
    dSE, dSB = f["dxdxdvE"], f["dxdxdvB"]    # (M, i, k, l, j)
    n = sph.dirs
    wgt = sph.weights / (4.0 * np.pi)
    mean = lambda arr: np.tensordot(wgt, arr, axes=(0, 0))
    ndSE = np.einsum("mk,miklj->milj", n, dSE)
    ndSB = np.einsum("mk,miklj->milj", n, dSB)
    curlSE = np.einsum("iab,mbalj->milj", _EPS3, dSE)
    curlSB = np.einsum("iab,mbalj->milj", _EPS3, dSB)
    GE = mean(SE) + tau * (mean(ndSE) + mean(curlSB))
    GB = mean(SB) + tau * (mean(ndSB) - mean(curlSE))
    return GE, GB


def kernel_row(x0s, taus, vs, Fps, qdot_t, w: WeightDesc, quad, accurate=False):
    """Memory-kernel matrices a(t, s) for one row of history entries.

    a(t,s) = -[ME + qdot(t) x MB] F'(p(s)), with (ME, MB) the propagated
    velocity-gradient source evaluated at x0 = q(t) - q(s), tau = t - s.
    Sign: substituting E = Ebar + e E_v(x - q) into the Ampere law and using
    the comoving soliton identities leaves a source -e qddot . grad_v on the
    modified pair, so the memory kernel enters with a minus.
    """
    K = len(taus)
    out = np.empty((K, 3, 3))
    for k in range(K):
        ME, MB = propagated_source_pair(x0s[k], taus[k], vs[k], w, quad, accurate)
        cross = np.einsum("iab,a,bj->ij", _EPS3, qdot_t, MB)
        out[k] = -(ME + cross) @ Fps[k]
    return out


# ---------------------------------------------------------------------------
# spectral grid operations
# ---------------------------------------------------------------------------


def mode_rotate(Eh, Bh, c, s, khat):
    """Free-group rotation: E' = cE + i s khat x B, B' = cB - i s khat x E."""
    kxB = np.cross(khat, Bh, axisa=0, axisb=0, axisc=0)
    kxE = np.cross(khat, Eh, axisa=0, axisb=0, axisc=0)
    return c * Eh + 1j * s * kxB, c * Bh - 1j * s * kxE


def coupled_field_step(Eh, Bh, c, s, s1, s2, khat, jamp, jvec):
    """Rotation plus the variation-of-constants source term.

    jamp is the scalar mode profile of the current (-e rhohat e^{-ik q*}),
    jvec the frozen velocity; s1 = sin(dt w)/w, s2 = (1-cos(dt w))/w.
    """
    Eh2, Bh2 = mode_rotate(Eh, Bh, c, s, khat)
    J = jamp[None] * jvec[:, None, None, None]
    Eh2 += s1 * J
    Bh2 += -1j * s2 * np.cross(khat, J, axisa=0, axisb=0, axisc=0)
    return Eh2, Bh2


def gauss_project(Eh, kvec, k2, target_long):
    """Replace the longitudinal electric part by the constraint value.

    target_long is the scalar array i k . E required by the charge
    (e rhohat e^{-ik q}); modes with k = 0 are left untouched.
    """
    kdotE = np.einsum("c...,c...->...", kvec, Eh)
    corr = np.where(k2 > 0.0, (-1j * target_long - kdotE) / np.where(k2 > 0.0, k2, 1.0), 0.0)
    return Eh + kvec * corr[None]


def point_eval(Eh, Bh, weight, px, py, pz, vol):
    """Weighted field values at a point from spectral data.

    weight is a real mode profile (e.g. rhohat for mollified evaluation),
    px/py/pz are per-axis phases exp(+i k_x q_x) etc.; vol = L^3.
    """
    phase = (px[:, None, None] * py[None, :, None]) * pz[None, None, :]
    wphase = weight * phase
    E = np.real(np.tensordot(Eh, wphase, axes=([1, 2, 3], [0, 1, 2]))) / vol
    B = np.real(np.tensordot(Bh, wphase, axes=([1, 2, 3], [0, 1, 2]))) / vol
    return E, B


def candidate_add(accE, accB, SEu, SBu, cs, ss, khat, coef):
    """acc += coef * U(-s) (SEu, SBu) accumulated in place."""
    Er, Br = mode_rotate(SEu, SBu, cs, -ss, khat)
    accE += coef * Er
    accB += coef * Br
    return accE, accB
