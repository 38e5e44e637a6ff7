"""Independent reference implementations used only as test oracles.

These deliberately avoid the library's vectorized code paths: the Newton
solver loops over observations and converges on the step size, the gradient
check uses central finite differences, and the utility oracle is a direct
per-record sum. They must stay independent of the implementations they
check.
"""
import math

import numpy as np


def newton_logistic(X, y, w, tol=1e-12, max_iter=200):
    """Full Newton-Raphson maximizer of the weighted Bernoulli likelihood."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    n, p = X.shape
    beta = np.zeros(p)
    for _ in range(max_iter):
        grad = np.zeros(p)
        hess = np.zeros((p, p))
        for i in range(n):
            eta = float(X[i] @ beta)
            if eta >= 0:
                prob = 1.0 / (1.0 + math.exp(-eta))
            else:
                expo = math.exp(eta)
                prob = expo / (1.0 + expo)
            grad += w[i] * (y[i] - prob) * X[i]
            hess -= w[i] * prob * (1.0 - prob) * np.outer(X[i], X[i])
        step = np.linalg.solve(hess, -grad)
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def central_difference_gradient(func, beta, h=1e-5):
    beta = np.asarray(beta, dtype=float)
    grad = np.zeros_like(beta)
    for j in range(len(beta)):
        up = beta.copy()
        down = beta.copy()
        up[j] += h
        down[j] -= h
        grad[j] = (func(up) - func(down)) / (2.0 * h)
    return grad


def direct_utility_gain(risk_a, risk_b, outcomes, weights, reward, threshold):
    """Per-capita gain of policy A over policy B by exhaustive summation."""
    total = 0.0
    weight_sum = 0.0
    for ra, rb, y, w in zip(risk_a, risk_b, outcomes, weights):
        decide_a = 1.0 if ra > threshold else 0.0
        decide_b = 1.0 if rb > threshold else 0.0
        total += w * (reward * float(y) - 1.0) * (decide_a - decide_b)
        weight_sum += w
    return total / weight_sum
