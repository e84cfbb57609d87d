"""Hot inner loops, each with a numba and a pure-numpy implementation.

The public names (``triplet_terms``, ``pairwise_distances``,
``nearest_same_label``, ``prelu_forward``, ``prelu_backward``) dispatch to numba unless ``NPLB_DISABLE_NUMBA`` is set.
Both implementations stay importable as ``numba_impl`` / ``numpy_impl`` so the
test-suite and the benchmark can compare them directly.
"""
from types import SimpleNamespace

import numpy as np

from ._accel import USE_NUMBA, njit

# loss codes understood by triplet_terms
TRADITIONAL = 0
SWAP = 1
REGULARIZED = 2


# --------------------------------------------------------------------------
# numba
# --------------------------------------------------------------------------

@njit
def _triplet_terms_nb(ea, ep, en, code, margin, power):
    n, d = ea.shape
    losses = np.zeros(n)
    ga = np.zeros((n, d))
    gp = np.zeros((n, d))
    gn = np.zeros((n, d))
    for i in range(n):
        s_ap = 0.0
        s_an = 0.0
        s_pn = 0.0
        for k in range(d):
            x = ea[i, k] - ep[i, k]
            y = ea[i, k] - en[i, k]
            z = ep[i, k] - en[i, k]
            s_ap += x * x
            s_an += y * y
            s_pn += z * z
        dp = np.sqrt(s_ap)
        dn = np.sqrt(s_an)
        rho = np.sqrt(s_pn)
        inv_ap = 1.0 / dp if dp > 0.0 else 0.0
        inv_an = 1.0 / dn if dn > 0.0 else 0.0
        inv_pn = 1.0 / rho if rho > 0.0 else 0.0

        swapped = code == SWAP and rho < dn
        neg = rho if swapped else dn
        h = dp - neg + margin
        loss = 0.0
        c_ap = 0.0  # coefficient on (a - p) / dp
        c_an = 0.0  # coefficient on (a - n) / dn
        c_pn = 0.0  # coefficient on (p - n) / rho
        if h > 0.0:
            loss = h
            c_ap = 1.0
            if swapped:
                c_pn = -1.0
            else:
                c_an = -1.0
        if code == REGULARIZED:
            r = rho - dn
            loss += r ** power
            dr = power * r ** (power - 1)
            c_pn += dr
            c_an -= dr
        losses[i] = loss
        c_ap *= inv_ap
        c_an *= inv_an
        c_pn *= inv_pn
        for k in range(d):
            u_ap = (ea[i, k] - ep[i, k]) * c_ap
            u_an = (ea[i, k] - en[i, k]) * c_an
            u_pn = (ep[i, k] - en[i, k]) * c_pn
            ga[i, k] = u_ap + u_an
            gp[i, k] = -u_ap + u_pn
            gn[i, k] = -u_an - u_pn
    return losses, ga, gp, gn


@njit
def _pairwise_distances_nb(a, b):
    na, d = a.shape
    nb_ = b.shape[0]
    out = np.empty((na, nb_))
    for i in range(na):
        for j in range(nb_):
            s = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                s += t * t
            out[i, j] = np.sqrt(s)
    return out


@njit
def _nearest_same_label_nb(x, labels):
    n, d = x.shape
    out = np.full(n, np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            if labels[i] != labels[j]:
                continue
            s = 0.0
            for k in range(d):
                t = x[i, k] - x[j, k]
                s += t * t
            dist = np.sqrt(s)
            if dist < out[i]:
                out[i] = dist
            if dist < out[j]:
                out[j] = dist
    return out


@njit
def _prelu_forward_nb(z, a):
    out = np.empty_like(z)
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            v = z[i, j]
            out[i, j] = v if v >= 0.0 else a * v
    return out


@njit
def _prelu_backward_nb(g, u, a, mask, has_mask):
    out = np.empty_like(g)
    n, m = g.shape
    dslope = 0.0
    for i in range(n):
        for j in range(m):
            v = u[i, j]
            gij = g[i, j]
            if v < 0.0:
                dslope += gij * v
                gij *= a
            if has_mask:
                gij *= mask[i, j]
            out[i, j] = gij
    return out, dslope


# --------------------------------------------------------------------------
# numpy
# --------------------------------------------------------------------------

def _safe_inverse(v):
    out = np.zeros_like(v)
    nz = v > 0.0
    out[nz] = 1.0 / v[nz]
    return out


def _triplet_terms_np(ea, ep, en, code, margin, power):
    d_ap = ea - ep
    d_an = ea - en
    d_pn = ep - en
    dp = np.sqrt(np.einsum("ij,ij->i", d_ap, d_ap))
    dn = np.sqrt(np.einsum("ij,ij->i", d_an, d_an))
    rho = np.sqrt(np.einsum("ij,ij->i", d_pn, d_pn))

    swapped = (rho < dn) if code == SWAP else np.zeros(dp.shape, dtype=bool)
    neg = np.where(swapped, rho, dn)
    h = dp - neg + margin
    active = h > 0.0
    losses = np.where(active, h, 0.0)
    c_ap = active.astype(float)
    c_an = np.where(active & ~swapped, -1.0, 0.0)
    c_pn = np.where(active & swapped, -1.0, 0.0)
    if code == REGULARIZED:
        r = rho - dn
        losses = losses + r ** power
        dr = power * r ** (power - 1)
        c_pn = c_pn + dr
        c_an = c_an - dr
    u_ap = d_ap * (c_ap * _safe_inverse(dp))[:, None]
    u_an = d_an * (c_an * _safe_inverse(dn))[:, None]
    u_pn = d_pn * (c_pn * _safe_inverse(rho))[:, None]
    return losses, u_ap + u_an, -u_ap + u_pn, -u_an - u_pn


def _pairwise_distances_np(a, b, chunk=256):
    out = np.empty((a.shape[0], b.shape[0]))
    for start in range(0, a.shape[0], chunk):
        diff = a[start:start + chunk, None, :] - b[None, :, :]
        out[start:start + chunk] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


def _nearest_same_label_np(x, labels):
    out = np.full(x.shape[0], np.inf)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if idx.size < 2:
            continue
        dist = _pairwise_distances_np(x[idx], x[idx])
        np.fill_diagonal(dist, np.inf)
        out[idx] = dist.min(axis=1)
    return out


def _prelu_forward_np(z, a):
    return np.where(z >= 0.0, z, a * z)


def _prelu_backward_np(g, u, a, mask, has_mask):
    neg = u < 0.0
    dslope = float(np.sum(np.where(neg, g * u, 0.0)))
    out = np.where(neg, a * g, g)
    if has_mask:
        out = out * mask
    return out, dslope


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def _prep(*arrays):
    return tuple(np.ascontiguousarray(a, dtype=np.float64) for a in arrays)


_NO_MASK = np.ones((1, 1))


def _make(nb_triplet, nb_pairwise, nb_nearest, nb_prelu_fwd, nb_prelu_bwd):
    def triplet_terms(ea, ep, en, code, margin, power=2):
        """Per-triplet loss values and gradients wrt anchor/positive/negative.

        Returns ``(losses, grad_a, grad_p, grad_n)``; gradients are of each
        triplet's own term (no 1/N batch factor).
        """
        ea, ep, en = _prep(ea, ep, en)
        return nb_triplet(ea, ep, en, int(code), float(margin), int(power))

    def pairwise_distances(a, b):
        a, b = _prep(a, b)
        return nb_pairwise(a, b)

    def nearest_same_label(x, labels):
        """Distance from each row to its nearest other row with the same label
        (``inf`` for singletons)."""
        (x,) = _prep(x)
        return nb_nearest(x, np.ascontiguousarray(labels, dtype=np.int64))

    def prelu_forward(z, a):
        return nb_prelu_fwd(np.ascontiguousarray(z, dtype=np.float64), float(a))

    def prelu_backward(g, u, a, mask=None):
        """Gradient through ``PReLU(u)`` followed by an optional (dropout)
        mask multiply; returns ``(grad_wrt_pre_mask_input, d_slope)``."""
        g, u = _prep(g, u)
        if mask is None:
            return nb_prelu_bwd(g, u, float(a), _NO_MASK, False)
        return nb_prelu_bwd(g, u, float(a), np.ascontiguousarray(mask, dtype=np.float64), True)

    return SimpleNamespace(
        triplet_terms=triplet_terms,
        pairwise_distances=pairwise_distances,
        nearest_same_label=nearest_same_label,
        prelu_forward=prelu_forward,
        prelu_backward=prelu_backward,
    )


numba_impl = _make(_triplet_terms_nb, _pairwise_distances_nb, _nearest_same_label_nb,
                   _prelu_forward_nb, _prelu_backward_nb)
numpy_impl = _make(_triplet_terms_np, _pairwise_distances_np, _nearest_same_label_np,
                   _prelu_forward_np, _prelu_backward_np)

_active = numba_impl if USE_NUMBA else numpy_impl
triplet_terms = _active.triplet_terms
pairwise_distances = _active.pairwise_distances
nearest_same_label = _active.nearest_same_label
prelu_forward = _active.prelu_forward
prelu_backward = _active.prelu_backward
