"""Pure-Python coordinate-descent kernel (fallback for ``_kernels.pyx``)."""

from .penalty import coordinate_step


def cd_sweep(Lam, B, A, psi, rho, gamma, code, mode, tol, max_sweeps):
    """Coordinate descent on every row of ``Lam`` (modified in place).

    Row i minimizes ``(l^T A l - 2 l^T b_i) / (2 psi_i) + rho * sum_j P(|l_j|)``.
    Rows are independent, so each is swept over j = 1..m until the largest
    coordinate change falls below ``tol`` or ``max_sweeps`` is reached.
    ``mode`` selects the coordinate rule (see ``penalty.coordinate_step``).
    Returns the largest sweep count used by any row.
    """
    p, m = Lam.shape
    a = A.tolist()
    diag = [a[j][j] for j in range(m)]
    worst = 0
    for i in range(p):
        row = Lam[i].tolist()
        b = B[i].tolist()
        ps = float(psi[i])
        sweeps = 0
        while sweeps < max_sweeps:
            sweeps += 1
            delta = 0.0
            for j in range(m):
                ajj = diag[j]
                acc = b[j]
                aj = a[j]
                for k in range(m):
                    if k != j:
                        acc -= aj[k] * row[k]
                z = acc / ajj
                new = coordinate_step(z, row[j], ps / ajj, rho, gamma, code, mode)
                d = abs(new - row[j])
                if d > delta:
                    delta = d
                row[j] = new
            if delta < tol:
                break
        for j in range(m):
            Lam[i, j] = row[j]
        if sweeps > worst:
            worst = sweeps
    return worst
