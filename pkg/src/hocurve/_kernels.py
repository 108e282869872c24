"""Compiled inner loops for element Hessian assembly."""
from __future__ import annotations

import numba as nb
import numpy as np

# upper-triangular dimension blocks (i, k) of an element Hessian, in kernel order
BLOCKS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@nb.njit(cache=True)
def hessian_right_operands(Jh, Ch, J, wa, wb, wd, wg, we, jinv, JI, dN, out):
    """Right factors of the element Hessian blocks.

    Block (i, k) of element e equals ``dNl @ out[:, cols(e, blk)]`` where
    ``dNl[a, 3 g + p] = dN[g, a, p]``.  Each column group holds
    ``D~ dN_g^T`` with ``D~ = jinv D_ik jinv^T`` the pulled-back 3x3 second
    derivative of the weighted energy density with respect to rows i and k
    of the Jacobian.

    Jh, Ch: J jinv^T and C jinv^T, (E, g, 3, 3); J: Jacobians (E, g, 3, 3);
    wa, wb, wd, wg, we: weighted coefficients of the rank, isotropic and
    cofactor terms, (E, g); jinv, JI: inverse and initial Jacobians (E, 3, 3);
    dN: reference gradients (g, a, 3); out: (3 g, E * 6 * a).
    """
    E, ng = wa.shape
    na = dN.shape[1]
    D = np.empty((3, 3))
    K = np.empty(3)
    M = np.empty((3, 3))
    for e in range(E):
        for p in range(3):
            for q in range(3):
                M[p, q] = jinv[e, p, 0] * jinv[e, q, 0] + jinv[e, p, 1] * jinv[e, q, 1] \
                    + jinv[e, p, 2] * jinv[e, q, 2]
        detj = (jinv[e, 0, 0] * (jinv[e, 1, 1] * jinv[e, 2, 2] - jinv[e, 1, 2] * jinv[e, 2, 1])
                - jinv[e, 0, 1] * (jinv[e, 1, 0] * jinv[e, 2, 2] - jinv[e, 1, 2] * jinv[e, 2, 0])
                + jinv[e, 0, 2] * (jinv[e, 1, 0] * jinv[e, 2, 1] - jinv[e, 1, 1] * jinv[e, 2, 0]))
        for g in range(ng):
            a = wa[e, g]
            b = wb[e, g]
            d = wd[e, g]
            for blk in range(6):
                if blk < 3:
                    i, k = 0, blk
                elif blk < 5:
                    i, k = 1, blk - 2
                else:
                    i, k = 2, 2
                for p in range(3):
                    jp = Jh[e, g, i, p]
                    cp = Ch[e, g, i, p]
                    for q in range(3):
                        jq = Jh[e, g, k, q]
                        cq = Ch[e, g, k, q]
                        D[p, q] = a * jp * jq + b * (jp * cq + cp * jq) + d * cp * cq
                if i == k:
                    gm = wg[e, g]
                    for p in range(3):
                        for q in range(3):
                            D[p, q] += gm * M[p, q]
                else:
                    # cofactor curvature: sign eps_ikm times det(jinv) S(JI^T J_m)
                    m = 3 - i - k
                    c = we[e, g] * detj
                    if i == 0 and k == 2:
                        c = -c
                    for r in range(3):
                        K[r] = JI[e, 0, r] * J[e, g, m, 0] + JI[e, 1, r] * J[e, g, m, 1] \
                            + JI[e, 2, r] * J[e, g, m, 2]
                    D[0, 1] += c * K[2]
                    D[1, 0] -= c * K[2]
                    D[1, 2] += c * K[0]
                    D[2, 1] -= c * K[0]
                    D[2, 0] += c * K[1]
                    D[0, 2] -= c * K[1]
                col = (e * 6 + blk) * na
                for p in range(3):
                    row = g * 3 + p
                    d0 = D[p, 0]
                    d1 = D[p, 1]
                    d2 = D[p, 2]
                    for n in range(na):
                        out[row, col + n] = d0 * dN[g, n, 0] + d1 * dN[g, n, 1] \
                            + d2 * dN[g, n, 2]
