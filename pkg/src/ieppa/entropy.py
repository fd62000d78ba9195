"""Boltzmann-Shannon entropy, its Bregman distance, and the KL divergence."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

# Y entries below this count as zero; clamping them would hide dual underflow.
TINY = 1e-300


def _xlogx(X):
    out = np.zeros_like(X)
    pos = X > 0
    out[pos] = X[pos] * np.log(X[pos])
    return out


def _validate(X, Y=None):
    X = np.asarray(X, dtype=np.float64)
    if np.any(X < 0) or np.any(~np.isfinite(X)):
        raise DomainError("entropy arguments must be finite and nonnegative")
    if Y is None:
        return X
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape:
        raise DimensionError(f"dimension mismatch: {X.shape} vs {Y.shape}")
    if np.any(~(Y >= TINY)) or np.any(~np.isfinite(Y)):
        raise DomainError("second argument must be strictly positive (>= 1e-300)")
    return X, Y


def phi(X) -> float:
    """``sum X log X - X`` with ``0 log 0 = 0``."""
    X = _validate(X)
    return float(np.sum((_xlogx(X) - X).ravel()))


def bregman(X, Y) -> float:
    """``phi(X) - phi(Y) - <log Y, X - Y>``."""
    X, Y = _validate(X, Y)
    logY = np.log(Y)
    terms = (_xlogx(X) - X) - (Y * logY - Y) - logY * (X - Y)
    return float(np.sum(terms.ravel()))


def kl(X, Y) -> float:
    """``sum x log(x/y) - x + y``, evaluated termwise."""
    X, Y = _validate(X, Y)
    terms = Y - X
    pos = X > 0
    terms[pos] += X[pos] * (np.log(X[pos]) - np.log(Y[pos]))
    return float(np.sum(terms.ravel()))


def bregman_log(X, log_Y, validate: bool = True) -> float:
    """``bregman(X, exp(log_Y))`` for centers too small to store as floats.

    ``validate=False`` skips the domain checks for callers whose inputs are
    valid by construction.
    """
    if validate:
        X = _validate(X)
        log_Y = np.asarray(log_Y, dtype=np.float64)
        if X.shape != log_Y.shape:
            raise DimensionError(f"dimension mismatch: {X.shape} vs {log_Y.shape}")
        if np.any(np.isnan(log_Y)) or np.any(log_Y == np.inf):
            raise DomainError("log of the second argument must be finite or -inf")
    pos = X > 0
    if pos.all():
        if np.isneginf(log_Y).any():
            return float("inf")
        return float(np.sum((np.exp(log_Y) - X + X * (np.log(X) - log_Y)).ravel()))
    if np.any(log_Y[pos] == -np.inf):
        return float("inf")
    terms = np.exp(log_Y) - X
    terms[pos] += X[pos] * (np.log(X[pos]) - log_Y[pos])
    return float(np.sum(terms.ravel()))
