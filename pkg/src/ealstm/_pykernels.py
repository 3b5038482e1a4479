"""Pure numpy implementation of the recurrent kernels.

Layout shared with the compiled backend:

* ``zx``: (T, B, G*H) input projections including biases, time-major.
* ``U``: (G*H, H) stacked recurrent weights.
* gate blocks along the last axis are ``[i, f, g, o]`` for the standard
  cell (G=4) and ``[f, g, o]`` for the entity-aware cell (G=3), whose
  input gate ``istat`` (B, H) is supplied once and held fixed.
"""
import numpy as np


def sigmoid(x):
    # tanh form avoids exp overflow; identical formula in the compiled kernel
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def recurrent_forward(zx, U, istat=None):
    T, B, GH = zx.shape
    H = U.shape[1]
    static = istat is not None
    gates = np.empty((T, B, GH))
    c = np.zeros((T + 1, B, H))
    h = np.zeros((T + 1, B, H))
    for t in range(T):
        z = zx[t] + h[t] @ U.T
        if static:
            f = sigmoid(z[:, :H])
            g = np.tanh(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:])
            i = istat
            gates[t, :, :H] = f
            gates[t, :, H:2 * H] = g
            gates[t, :, 2 * H:] = o
        else:
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            gates[t, :, :H] = i
            gates[t, :, H:2 * H] = f
            gates[t, :, 2 * H:3 * H] = g
            gates[t, :, 3 * H:] = o
        c[t + 1] = f * c[t] + i * g
        h[t + 1] = o * np.tanh(c[t + 1])
    return gates, c, h


def recurrent_backward(gates, c, h, U, dh_last, istat=None):
    """Backpropagate ``dh_last`` (B, H) from h[T] to the pre-activations.

    Returns ``dz`` (T, B, G*H) and, for the entity-aware cell, the gradient
    with respect to the fixed input gate (B, H); otherwise ``None``.
    """
    T, B, GH = gates.shape
    H = U.shape[1]
    static = istat is not None
    dz = np.empty((T, B, GH))
    dh = np.array(dh_last, dtype=np.float64, copy=True)
    dc = np.zeros((B, H))
    d_istat = np.zeros((B, H)) if static else None
    for t in range(T - 1, -1, -1):
        gt = gates[t]
        if static:
            i = istat
            f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:]
        else:
            i, f, g, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        tc = np.tanh(c[t + 1])
        dc = dc + dh * o * (1.0 - tc * tc)
        dzt = dz[t]
        if static:
            d_istat += dc * g
            dzt[:, :H] = dc * c[t] * f * (1.0 - f)
            dzt[:, H:2 * H] = dc * i * (1.0 - g * g)
            dzt[:, 2 * H:] = dh * tc * o * (1.0 - o)
        else:
            dzt[:, :H] = dc * g * i * (1.0 - i)
            dzt[:, H:2 * H] = dc * c[t] * f * (1.0 - f)
            dzt[:, 2 * H:3 * H] = dc * i * (1.0 - g * g)
            dzt[:, 3 * H:] = dh * tc * o * (1.0 - o)
        dh = dzt @ U
        dc = dc * f
    return dz, d_istat
