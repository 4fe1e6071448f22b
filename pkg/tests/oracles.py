"""Independent brute-force reference implementations used by the tests.

Everything here is written as plain per-pixel loops, deliberately sharing no
code with the package's vectorized paths.
"""

import numpy as np


def ref_gradient(ux, uy):
    """du_i/dx_j with central differences inside, one-sided at the edges."""
    h, w = ux.shape
    out = np.zeros((h, w, 2, 2))
    for comp, plane in ((0, ux), (1, uy)):
        for y in range(h):
            for x in range(w):
                if x == 0:
                    ddx = plane[y, 1] - plane[y, 0]
                elif x == w - 1:
                    ddx = plane[y, w - 1] - plane[y, w - 2]
                else:
                    ddx = (plane[y, x + 1] - plane[y, x - 1]) / 2.0
                if y == 0:
                    ddy = plane[1, x] - plane[0, x]
                elif y == h - 1:
                    ddy = plane[h - 1, x] - plane[h - 2, x]
                else:
                    ddy = (plane[y + 1, x] - plane[y - 1, x]) / 2.0
                out[y, x, comp, 0] = ddx
                out[y, x, comp, 1] = ddy
    return out


def ref_total_loss(ux, uy, a, labels, mu_tissue=1.0, mu_csf=0.01,
                   bulk_ratio=100.0, alpha=1.0, beta=2.0,
                   lambda1=0.1, lambda2=100.0, convention="jacobian"):
    """Direct per-pixel summation of the objective."""
    h, w = ux.shape
    grad = ref_gradient(ux, uy)
    energy = 0.0
    for y in range(h):
        for x in range(w):
            lab = labels[y, x]
            if lab in (2, 3, 4):
                mu = mu_tissue
            elif lab == 1:
                mu = mu_csf
            else:
                continue
            exp = 0.5 if convention == "jacobian" else -0.5
            g = a[y, x] ** exp
            fk = (grad[y, x] + np.eye(2)) / g
            jac = fk[0, 0] * fk[1, 1] - fk[0, 1] * fk[1, 0]
            tr = (fk ** 2).sum()
            energy += 0.5 * mu * (tr * jac ** (-alpha) - beta) \
                + 0.5 * bulk_ratio * mu * (jac - 1.0) ** 2

    bg_pen = 0.0
    for y in range(h):
        for x in range(w):
            if labels[y, x] == 0:
                bg_pen += ux[y, x] ** 2 + uy[y, x] ** 2

    xs, ys = [], []
    for y in range(h):
        for x in range(w):
            if labels[y, x] in (2, 3, 4):
                xs.append(x)
                ys.append(y)
    cx = int(np.ceil(np.mean(xs) - 0.5))
    cy = int(np.ceil(np.mean(ys) - 0.5))
    c_pen = ux[cy, cx] ** 2 + uy[cy, cx] ** 2
    return energy + lambda1 * bg_pen + lambda2 * c_pen
