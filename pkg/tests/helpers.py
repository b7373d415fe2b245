"""Analytic field stubs implementing the residual adapters with
closed-form derivatives, for exactness tests against the physics ops."""

import numpy as np


class AnalyticDensityField:
    """sigma(x, t), grad sigma (B,3), dsigma/dt (B,) given as callables;
    x in world units, t in frames."""

    def __init__(self, sigma, grad, ddt):
        self._sigma = sigma
        self._grad = grad
        self._ddt = ddt

    def sigma_with_derivs(self, tape, pts, t):
        pts = np.atleast_2d(pts)
        t = np.broadcast_to(np.atleast_1d(t), (len(pts),))
        g = np.asarray(self._grad(pts, t), dtype=np.float64)
        return (tape.const(self._sigma(pts, t)),
                tape.const(g[:, 0]), tape.const(g[:, 1]), tape.const(g[:, 2]),
                tape.const(self._ddt(pts, t)))


class AnalyticVelocityField:
    """u(x, t) -> (B,3) plus closed-form jacobian columns and time
    derivative; ``jac`` maps (pts, t, axis) -> (B,3) = du/d(axis)."""

    def __init__(self, u, jac, ddt=None):
        self._u = u
        self._jac = jac
        self._ddt = ddt or (lambda pts, t: np.zeros((len(np.atleast_2d(pts)), 3)))

    def velocity(self, tape, pts, t):
        pts = np.atleast_2d(pts)
        t = np.broadcast_to(np.atleast_1d(t), (len(pts),))
        return tape.const(self._u(pts, t))

    def velocity_with_derivs(self, tape, pts, t):
        pts = np.atleast_2d(pts)
        t = np.broadcast_to(np.atleast_1d(t), (len(pts),))
        return (tape.const(self._u(pts, t)),
                tape.const(self._jac(pts, t, 0)),
                tape.const(self._jac(pts, t, 1)),
                tape.const(self._jac(pts, t, 2)),
                tape.const(self._ddt(pts, t)))


def rotating_gaussian(omega=1.3, center=(0.35, 0.1, 0.0), radius=0.4):
    """Exactly-transported pair: a Gaussian blob carried by rigid rotation
    u = (omega y, -omega x, 0).  sigma(x,t) = G(rotate(x, +omega t))."""

    c = np.asarray(center)

    def back(pts, t):
        ct, st = np.cos(omega * t), np.sin(omega * t)
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([x * ct - y * st, x * st + y * ct, pts[:, 2]], axis=1)

    def sigma(pts, t):
        q = back(pts, t)
        return np.exp(-0.5 * np.sum((q - c) ** 2, axis=1) / radius ** 2)

    def grad(pts, t):
        q = back(pts, t)
        s = sigma(pts, t)
        dq = -(q - c) / radius ** 2 * s[:, None]   # dG/dq
        ct, st = np.cos(omega * t), np.sin(omega * t)
        # chain rule through the backtrace rotation
        gx = dq[:, 0] * ct + dq[:, 1] * st
        gy = -dq[:, 0] * st + dq[:, 1] * ct
        return np.stack([gx, gy, dq[:, 2]], axis=1)

    def ddt(pts, t):
        q = back(pts, t)
        s = sigma(pts, t)
        dq = -(q - c) / radius ** 2 * s[:, None]
        x, y = pts[:, 0], pts[:, 1]
        ct, st = np.cos(omega * t), np.sin(omega * t)
        dqx_dt = omega * (-x * st - y * ct)
        dqy_dt = omega * (x * ct - y * st)
        return dq[:, 0] * dqx_dt + dq[:, 1] * dqy_dt

    def u(pts, t):
        return np.stack([omega * pts[:, 1], -omega * pts[:, 0],
                         np.zeros(len(pts))], axis=1)

    dens = AnalyticDensityField(sigma, grad, ddt)

    def jac(pts, t, axis):
        n = len(pts)
        z = np.zeros(n)
        if axis == 0:
            return np.stack([z, -omega * np.ones(n), z], axis=1)
        if axis == 1:
            return np.stack([omega * np.ones(n), z, z], axis=1)
        return np.zeros((n, 3))

    vel = AnalyticVelocityField(u, jac)
    return dens, vel


def translating_ramp(v=(1.0, 0.0, 0.0)):
    """sigma = x - t with u = (1,0,0): exactly transported."""
    v = np.asarray(v)

    def sigma(pts, t):
        return pts[:, 0] - t

    dens = AnalyticDensityField(
        sigma,
        lambda pts, t: np.tile([1.0, 0.0, 0.0], (len(pts), 1)),
        lambda pts, t: -np.ones(len(pts)))
    vel = AnalyticVelocityField(
        lambda pts, t: np.broadcast_to(v, (len(pts), 3)).copy(),
        lambda pts, t, axis: np.zeros((len(pts), 3)))
    return dens, vel


def rigid_rotation_velocity(omega=1.0):
    def u(pts, t):
        return np.stack([omega * pts[:, 1], -omega * pts[:, 0],
                         np.zeros(len(pts))], axis=1)

    def jac(pts, t, axis):
        n = len(pts)
        z = np.zeros(n)
        if axis == 0:
            return np.stack([z, -omega * np.ones(n), z], axis=1)
        if axis == 1:
            return np.stack([omega * np.ones(n), z, z], axis=1)
        return np.zeros((n, 3))

    return AnalyticVelocityField(u, jac)


def linear_expansion_velocity():
    """u = (x, y, z): divergence 3 everywhere."""

    def jac(pts, t, axis):
        n = len(pts)
        out = np.zeros((n, 3))
        out[:, axis] = 1.0
        return out

    return AnalyticVelocityField(lambda pts, t: np.array(pts, dtype=np.float64), jac)


def taylor_green_velocity(a=1.0, k=1.0):
    def u(pts, t):
        x, y = pts[:, 0], pts[:, 1]
        return np.stack([a * np.sin(k * x) * np.cos(k * y),
                         -a * np.cos(k * x) * np.sin(k * y),
                         np.zeros(len(pts))], axis=1)

    def jac(pts, t, axis):
        x, y = pts[:, 0], pts[:, 1]
        n = len(pts)
        z = np.zeros(n)
        if axis == 0:
            return np.stack([a * k * np.cos(k * x) * np.cos(k * y),
                             a * k * np.sin(k * x) * np.sin(k * y), z], axis=1)
        if axis == 1:
            return np.stack([-a * k * np.sin(k * x) * np.sin(k * y),
                             -a * k * np.cos(k * x) * np.cos(k * y), z], axis=1)
        return np.zeros((n, 3))

    return AnalyticVelocityField(u, jac)
