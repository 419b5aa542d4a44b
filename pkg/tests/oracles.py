"""Independent reference computations used to freeze and cross-check values.

None of these call into the package's gradient, Fisher, or selection code;
they re-derive everything from parameters and plain dense linear algebra.
"""

import math

import numpy as np


def naive_logits(spec, theta, x):
    """Forward pass written directly from the architecture definition."""
    theta = np.asarray(theta, dtype=np.float64)
    d, n = spec.d, spec.n_classes
    if spec.kind == "softmax_linear":
        W = theta[: n * d].reshape(n, d)
        b = theta[n * d : n * d + n]
        return np.array([sum(W[c, j] * x[j] for j in range(d)) + b[c] for c in range(n)])
    h = spec.hidden
    o = 0
    W1 = theta[o : o + h * d].reshape(h, d); o += h * d
    b1 = theta[o : o + h]; o += h
    W2 = theta[o : o + n * h].reshape(n, h); o += n * h
    b2 = theta[o : o + n]
    hid = [max(0.0, sum(W1[i, j] * x[j] for j in range(d)) + b1[i]) for i in range(h)]
    return np.array([sum(W2[c, i] * hid[i] for i in range(h)) + b2[c] for c in range(n)])


def naive_log_probs(spec, theta, x):
    z = naive_logits(spec, theta, x)
    top = max(z)
    lse = top + math.log(sum(math.exp(v - top) for v in z))
    return z - lse


def naive_mean_ce(spec, theta, X, y):
    return float(np.mean([-naive_log_probs(spec, theta, X[i])[y[i]] for i in range(len(y))]))


def central_diff(f, theta, step=1e-5):
    theta = np.array(theta, dtype=np.float64)
    out = np.zeros_like(theta)
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        out[j] = (f(up) - f(down)) / (2 * step)
    return out


def central_diff_vec(f, theta, step=1e-5):
    """Jacobian (len(theta), len(f(theta))) of a vector-valued f."""
    theta = np.array(theta, dtype=np.float64)
    cols = []
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        cols.append((np.asarray(f(up)) - np.asarray(f(down))) / (2 * step))
    return np.array(cols)


def rel_err(a, b):
    """Infinity-norm relative error of ``a`` against reference ``b``."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


def fd_scores(spec, theta, x, step=1e-5):
    """Finite-difference d log p(y|x) / d theta for every y: (|theta|, n)."""
    return central_diff_vec(lambda t: naive_log_probs(spec, t, x), theta, step)


def brute_fisher_matrix(spec, theta, X, step=1e-6):
    """(1/T) sum_x sum_y p_y g_y g_y^T with g from finite differences."""
    P = theta.size
    F = np.zeros((P, P))
    for x in X:
        G = fd_scores(spec, theta, x, step)
        p = np.exp(naive_log_probs(spec, theta, x))
        for y in range(spec.n_classes):
            F += p[y] * np.outer(G[:, y], G[:, y])
    return F / len(X)


def trace_objective(M, F, V):
    """tr((M + V V^T)^{-1} F) by direct dense inversion."""
    return float(np.trace(np.linalg.inv(M + V @ V.T) @ F))


def greedy_oracle(M, F, Vs, ids, N):
    """Greedy argmin of the trace objective, re-inverting from scratch each time."""
    M = np.array(M, dtype=np.float64)
    taken, order = set(), []
    for _ in range(N):
        best, best_id, best_pos = math.inf, None, None
        for pos, (V, i) in enumerate(zip(Vs, ids)):
            if pos in taken:
                continue
            val = trace_objective(M, F, V)
            if val < best or (val == best and i < best_id):
                best, best_id, best_pos = val, i, pos
        taken.add(best_pos)
        order.append(best_id)
        M = M + Vs[best_pos] @ Vs[best_pos].T
    return order


def exhaustive_kcenter(points, centers, N):
    """Max-min greedy by explicit double loops over Python floats."""
    points = [np.atleast_1d(np.asarray(p, dtype=float)) for p in points]
    centers = [np.atleast_1d(np.asarray(c, dtype=float)) for c in centers]
    chosen = []
    for _ in range(N):
        best, best_pos = -1.0, None
        for pos, p in enumerate(points):
            if pos in chosen:
                continue
            dmin = min((math.dist(p, c) for c in centers), default=math.inf)
            if dmin > best:
                best, best_pos = dmin, pos
        chosen.append(best_pos)
        centers.append(points[best_pos])
    return chosen


def entropy_bits(p):
    return -sum(v * math.log2(v) for v in p if v > 0)


def random_spd(rng, k, floor=0.5):
    A = rng.standard_normal((k, k))
    return A @ A.T / k + floor * np.eye(k)


def random_psd(rng, k, rank=None):
    B = rng.standard_normal((k, rank or k))
    return B @ B.T / k
