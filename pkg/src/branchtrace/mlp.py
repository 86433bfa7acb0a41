"""Small fully connected networks ``R^p -> R`` with exact derivatives.

The network is ``u(x) = m(x) * (sigma(... sigma(x W1 + b1) ...) W_out + b_out)``
where ``m`` is an optional boundary mask. Alongside the value we propagate
first and (unmixed) second input-derivatives through the layers, and, in
forward mode, their sensitivities with respect to every scalar weight. That
is all a collocation residual and its Jacobian need.

Weights are one flat vector in layer order: ``W1`` (row-major, ``p x q``),
``b1``, ``W2``, ``b2``, ..., ``W_out`` (``q x 1``), ``b_out``.
"""

import json
from dataclasses import dataclass

import numpy as np

ACTIVATIONS = ("tanh", "sigmoid", "gaussian")
MASKS = ("none", "sin_pi_x", "sin_pi_x_sin_pi_y")

# points per chunk when building weight sensitivities; bounds peak memory
_CHUNK = 256


def activation_derivs(kind, z, order=3):
    """Value and derivatives of an activation up to ``order`` (list of arrays)."""
    if kind == "tanh":
        t = np.tanh(z)
        s = 1.0 - t * t
        out = [t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)]
    elif kind == "sigmoid":
        # logistic written through tanh so it never overflows
        s = 0.5 * (1.0 + np.tanh(0.5 * z))
        d = s * (1.0 - s)
        out = [s, d, d * (1.0 - 2.0 * s), d * (1.0 - 6.0 * d)]
    elif kind == "gaussian":
        e = np.exp(-z * z)
        out = [e, -2.0 * z * e, (4.0 * z * z - 2.0) * e, (12.0 * z - 8.0 * z ** 3) * e]
    else:
        raise ValueError(f"unknown activation {kind!r}")
    return out[: order + 1]


def weight_count(p, l, q):
    """Scalar weights of a net with ``p`` inputs and ``l`` hidden layers of ``q``."""
    if min(p, l, q) < 1:
        raise ValueError("p, l and q must all be at least 1")
    return (p + 1) * q + (l - 1) * (q + 1) * q + (q + 1)


@dataclass(frozen=True, eq=False)
class Mlp:
    p: int
    l: int
    q: int
    activation: str
    mask: str
    weights: np.ndarray

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask {self.mask!r}")
        if self.mask == "sin_pi_x" and self.p != 1:
            raise ValueError("sin_pi_x mask needs a 1-D input")
        if self.mask == "sin_pi_x_sin_pi_y" and self.p != 2:
            raise ValueError("sin_pi_x_sin_pi_y mask needs a 2-D input")
        w = np.array(self.weights, dtype=float).ravel()
        if w.size != weight_count(self.p, self.l, self.q):
            raise ValueError(
                f"expected {weight_count(self.p, self.l, self.q)} weights, got {w.size}"
            )
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def size(self):
        return self.weights.size

    def with_weights(self, weights):
        return Mlp(self.p, self.l, self.q, self.activation, self.mask, weights)

    def layer_shapes(self):
        dims = [self.p] + [self.q] * self.l + [1]
        return list(zip(dims[:-1], dims[1:]))

    def layers(self):
        """``[(W, b, offset_of_W, offset_of_b), ...]`` as views into the weights."""
        out = []
        off = 0
        for k_in, k_out in self.layer_shapes():
            W = self.weights[off: off + k_in * k_out].reshape(k_in, k_out)
            b = self.weights[off + k_in * k_out: off + k_in * k_out + k_out]
            out.append((W, b, off, off + k_in * k_out))
            off += k_in * k_out + k_out
        return out

    def to_dict(self):
        return {
            "p": self.p,
            "l": self.l,
            "q": self.q,
            "activation": self.activation,
            "mask": self.mask,
            "weights": [float(w) for w in self.weights],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["p"]), int(d["l"]), int(d["q"]), d["activation"], d["mask"],
                   np.asarray(d["weights"], dtype=float))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            # json writes floats with repr(), which round-trips exactly
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init_random(p, l, q, activation="tanh", mask="none", seed=0, range=0.01, output_bias=0.0):
    """Uniform(-range, range) weights from a PCG64 stream seeded by ``seed``.

    The output bias is overwritten with ``output_bias`` afterwards.
    """
    if range <= 0:
        raise ValueError("range must be positive")
    rng = np.random.default_rng(seed)
    w = rng.uniform(-range, range, size=weight_count(p, l, q))
    w[-1] = output_bias
    return Mlp(p, l, q, activation, mask, w)


def _points(net, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 0 or (x.ndim == 1 and net.p > 1 and x.shape[0] == net.p)
    X = x.reshape(-1, net.p) if x.ndim <= 1 else x
    if X.shape[1] != net.p:
        raise ValueError(f"points must have {net.p} coordinates")
    return X, single


def _sin_pi(x):
    # sin(pi x) == sin(pi (1 - x)) for every x; this form is exactly 0 at x = 1
    return np.sin(np.pi * np.minimum(x, 1.0 - x))


def mask_derivs(mask, X):
    """Mask value ``(N,)``, first derivatives ``(N, p)`` and second ``(N, p)``."""
    N, p = X.shape
    if mask == "none":
        return np.ones(N), np.zeros((N, p)), np.zeros((N, p))
    s = _sin_pi(X)
    c = np.cos(np.pi * X)
    m = np.prod(s, axis=1)
    dm = np.empty((N, p))
    for i in range(p):
        others = np.prod(np.delete(s, i, axis=1), axis=1) if p > 1 else 1.0
        dm[:, i] = np.pi * c[:, i] * others
    ddm = -np.pi ** 2 * np.repeat(m[:, None], p, axis=1)
    return m, dm, ddm


def forward(net, x):
    """Network output at one point or a batch of points ``(N, p)``."""
    X, single = _points(net, x)
    a = X
    layers = net.layers()
    for W, b, _, _ in layers[:-1]:
        a = activation_derivs(net.activation, a @ W + b, order=0)[0]
    W, b, _, _ = layers[-1]
    u = (a @ W + b)[:, 0]
    if net.mask != "none":
        u = u * mask_derivs(net.mask, X)[0]
    return float(u[0]) if single else u


def _input_chain(net, X):
    """Raw (unmasked) value, gradient and second-diagonal through all layers."""
    N, p = X.shape
    a = X
    da = np.broadcast_to(np.eye(p), (N, p, p)).copy()
    dda = np.zeros((N, p, p))
    layers = net.layers()
    for W, b, _, _ in layers[:-1]:
        z, dz, ddz = a @ W + b, da @ W, dda @ W
        s0, s1, s2 = activation_derivs(net.activation, z, order=2)
        a = s0
        da = s1[:, None, :] * dz
        dda = s2[:, None, :] * dz * dz + s1[:, None, :] * ddz
    W, b, _, _ = layers[-1]
    return (a @ W + b)[:, 0], (da @ W)[:, :, 0], (dda @ W)[:, :, 0]


def _apply_mask(net, X, u, du, ddu):
    if net.mask == "none":
        return u, du, ddu
    m, dm, ddm = mask_derivs(net.mask, X)
    return (
        m * u,
        dm * u[:, None] + m[:, None] * du,
        ddm * u[:, None] + 2.0 * dm * du + m[:, None] * ddu,
    )


def forward_with_input_derivs(net, x):
    """``(u, grad, second_diag)`` with ``grad[i] = du/dx_i``, ``second_diag[i] = d2u/dx_i2``.

    Batched input gives arrays of shape ``(N,)``, ``(N, p)``, ``(N, p)``.
    """
    X, single = _points(net, x)
    u, du, ddu = _apply_mask(net, X, *_input_chain(net, X))
    if single:
        return float(u[0]), du[0], ddu[0]
    return u, du, ddu


def _sensitivity_chunk(net, X):
    """Unmasked outputs and their weight sensitivities by a reverse sweep.

    Each point has ``1 + 2p`` outputs (value, gradient, second diagonal), far
    fewer than the weights, so one adjoint per output is cheaper than pushing
    every weight direction forward.
    """
    N, p = X.shape
    layers = net.layers()
    # forward pass, keeping what the reverse sweep needs
    a = X
    da = np.broadcast_to(np.eye(p), (N, p, p)).copy()
    dda = np.zeros((N, p, p))
    tape = []
    for W, b, _, _ in layers[:-1]:
        z, dz, ddz = a @ W + b, da @ W, dda @ W
        s0, s1, s2, s3 = activation_derivs(net.activation, z, order=3)
        tape.append((a, da, dda, dz, ddz, s1, s2, s3))
        a = s0
        da = s1[:, None, :] * dz
        dda = s2[:, None, :] * dz * dz + s1[:, None, :] * ddz
    W, b, oW, ob = layers[-1]
    u, du, ddu = (a @ W + b)[:, 0], (da @ W)[:, :, 0], (dda @ W)[:, :, 0]

    # adjoint seeds: output 0 is u, outputs 1..p the gradient, p+1..2p the second diagonal
    m = 1 + 2 * p
    eye = np.eye(p)
    zbar = np.zeros((N, m, 1))
    zbar[:, 0, 0] = 1.0
    dzbar = np.zeros((N, m, p, 1))
    dzbar[:, 1:p + 1, :, 0] = eye
    ddzbar = np.zeros((N, m, p, 1))
    ddzbar[:, p + 1:, :, 0] = eye

    S = np.zeros((N, m, net.size))
    for k in range(len(layers) - 1, -1, -1):
        W, b, oW, ob = layers[k]
        if k == len(layers) - 1:
            a_in, da_in, dda_in = a, da, dda
        else:
            a_in, da_in, dda_in = tape[k][:3]
        gW = (a_in[:, None, :, None] * zbar[:, :, None, :]
              + np.einsum("npj,nmpk->nmjk", da_in, dzbar)
              + np.einsum("npj,nmpk->nmjk", dda_in, ddzbar))
        S[:, :, oW: oW + W.size] = gW.reshape(N, m, -1)
        S[:, :, ob: ob + b.size] = zbar
        if k == 0:
            break
        abar, dabar, ddabar = zbar @ W.T, dzbar @ W.T, ddzbar @ W.T
        _, _, _, dz, ddz, s1, s2, s3 = tape[k - 1]
        s1_, s2_, s3_ = s1[:, None, None, :], s2[:, None, None, :], s3[:, None, None, :]
        dz_, ddz_ = dz[:, None], ddz[:, None]
        zbar = (abar * s1[:, None, :]
                + np.sum(dabar * s2_ * dz_, axis=2)
                + np.sum(ddabar * (s3_ * dz_ * dz_ + s2_ * ddz_), axis=2))
        dzbar = dabar * s1_ + 2.0 * ddabar * s2_ * dz_
        ddzbar = ddabar * s1_
    return u, du, ddu, S[:, 0], S[:, 1:p + 1], S[:, p + 1:]


def evaluate_all(net, x):
    """Values, input-derivatives and their weight-sensitivities in one pass.

    Returns ``(u, grad, second, du, dgrad, dsecond)`` with shapes
    ``(N,), (N, p), (N, p), (N, P), (N, p, P), (N, p, P)``.
    """
    X, _ = _points(net, x)
    N, p = X.shape
    P = net.size
    u, du, ddu = np.empty(N), np.empty((N, p)), np.empty((N, p))
    Su, Sdu, Sddu = np.empty((N, P)), np.empty((N, p, P)), np.empty((N, p, P))
    for lo in range(0, N, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        u[sl], du[sl], ddu[sl], Su[sl], Sdu[sl], Sddu[sl] = _sensitivity_chunk(net, X[sl])
    if net.mask != "none":
        m, dm, ddm = mask_derivs(net.mask, X)
        Sddu = (ddm[:, :, None] * Su[:, None, :] + 2.0 * dm[:, :, None] * Sdu
                + m[:, None, None] * Sddu)
        Sdu = dm[:, :, None] * Su[:, None, :] + m[:, None, None] * Sdu
        Su = m[:, None] * Su
        u, du, ddu = _apply_mask(net, X, u, du, ddu)
    return u, du, ddu, Su, Sdu, Sddu


def weight_sensitivities(net, x):
    """Derivatives of ``u``, of each ``du/dx_i`` and of each ``d2u/dx_i2`` w.r.t. the weights.

    For one point: ``(du_dtheta (P,), dgrad_dtheta (p, P), dsecond_dtheta (p, P))``;
    batched input adds a leading point axis.
    """
    X, single = _points(net, x)
    _, _, _, Su, Sdu, Sddu = evaluate_all(net, X)
    if single:
        return Su[0], Sdu[0], Sddu[0]
    return Su, Sdu, Sddu
