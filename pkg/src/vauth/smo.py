"""Soft-margin linear SVM trained with Platt's Sequential Minimal Optimization."""

from __future__ import annotations

import numpy as np


def smo_dual(K: np.ndarray, y: np.ndarray, C: float = 1.0, tol: float = 1e-3,
             max_passes: int = 10, max_sweeps: int = 2000, seed: int = 0):
    """Solve the SVM dual for a precomputed kernel matrix.

    Parameters
    ----------
    K : (n, n) array
        Kernel (Gram) matrix.
    y : (n,) array of +1/-1
    C : float
        Box constraint.
    tol : float
        KKT violation tolerance.
    max_passes : int
        Stop after this many consecutive sweeps over the data change nothing.
    max_sweeps : int
        Hard cap on the total number of sweeps.

    Returns
    -------
    alpha : (n,) array
    b : float
        Bias of the decision function ``f(x) = sum(alpha * y * K[:, x]) + b``.
    """
    n = y.shape[0]
    y = y.astype(np.float64)
    alpha = np.zeros(n)
    b = 0.0
    E = -y.copy()
    diag = np.diag(K).copy()
    rng = np.random.default_rng(seed)

    def step(i, j):
        nonlocal b
        if i == j:
            return False
        ai, aj = alpha[i], alpha[j]
        yi, yj = y[i], y[j]
        if yi != yj:
            L, H = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            L, H = max(0.0, ai + aj - C), min(C, ai + aj)
        if H - L < 1e-12:
            return False
        eta = diag[i] + diag[j] - 2.0 * K[i, j]
        if eta <= 1e-12:
            return False
        aj_new = min(H, max(L, aj + yj * (E[i] - E[j]) / eta))
        if abs(aj_new - aj) < 1e-8 * (aj_new + aj + 1e-8):
            return False
        ai_new = ai + yi * yj * (aj - aj_new)
        di, dj = yi * (ai_new - ai), yj * (aj_new - aj)
        b1 = b - E[i] - di * diag[i] - dj * K[i, j]
        b2 = b - E[j] - di * K[i, j] - dj * diag[j]
        if 0.0 < ai_new < C:
            b_new = b1
        elif 0.0 < aj_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        E[:] += di * K[i] + dj * K[j] + (b_new - b)
        alpha[i], alpha[j] = ai_new, aj_new
        b = b_new
        return True

    passes = 0
    sweeps = 0
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            r = y[i] * E[i]
            if not ((r < -tol and alpha[i] < C) or (r > tol and alpha[i] > 0)):
                continue
            # second choice: largest step |E_i - E_j|, then random fallbacks
            j = int(np.argmax(np.abs(E - E[i])))
            if step(i, j):
                changed += 1
                continue
            for j in rng.permutation(n)[:8]:
                if step(i, int(j)):
                    changed += 1
                    break
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, b


def platt_calibration(scores: np.ndarray, labels: np.ndarray, max_iter: int = 100):
    """Fit ``p = 1 / (1 + exp(-(slope * score + intercept)))`` by Newton's method.

    Uses Platt's smoothed targets and the numerically stable update of
    Lin, Lin and Weng.
    """
    f = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels) > 0
    n_pos, n_neg = int(lab.sum()), int((~lab).sum())
    t = np.where(lab, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    # Platt's parameterization: p = 1 / (1 + exp(A f + B))
    A, B = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    sigma, min_step, eps = 1e-12, 1e-10, 1e-5

    def objective(A, B):
        z = f * A + B
        return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-z)),
                                     (t - 1) * z + np.log1p(np.exp(z)))))

    fval = objective(A, B)
    for _ in range(max_iter):
        z = f * A + B
        p = np.where(z >= 0, np.exp(-z) / (1 + np.exp(-z)), 1 / (1 + np.exp(z)))
        q = 1 - p
        d2 = p * q
        h11 = sigma + np.sum(f * f * d2)
        h22 = sigma + np.sum(d2)
        h21 = np.sum(f * d2)
        d1 = t - p
        g1, g2 = np.sum(f * d1), np.sum(d1)
        if abs(g1) < eps and abs(g2) < eps:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= min_step:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2
        else:
            break
    return -A, -B
