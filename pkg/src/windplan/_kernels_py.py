"""Pure numpy implementation of the dynamics kernels.

State layout is ``[px, py, pz, vx, vy, vz, phi, theta, psi]`` and input layout
``[phi_rate, theta_rate, psi_rate, thrust]``. Every function accepts a batch of
``n`` rows; the compiled extension in ``_kernels.pyx`` mirrors this API.
"""
import numpy as np

BACKEND = "python"


def _thrust_axis(ang):
    """Body z-axis in the world frame for ZYX Euler angles, shape (n, 3)."""
    cphi, sphi = np.cos(ang[:, 0]), np.sin(ang[:, 0])
    cth, sth = np.cos(ang[:, 1]), np.sin(ang[:, 1])
    cpsi, spsi = np.cos(ang[:, 2]), np.sin(ang[:, 2])
    return np.stack(
        [
            cpsi * sth * cphi + spsi * sphi,
            spsi * sth * cphi - cpsi * sphi,
            cth * cphi,
        ],
        axis=1,
    )


def _thrust_axis_partials(ang):
    """d(z_B)/d(phi, theta, psi) stacked as columns, shape (n, 3, 3)."""
    cphi, sphi = np.cos(ang[:, 0]), np.sin(ang[:, 0])
    cth, sth = np.cos(ang[:, 1]), np.sin(ang[:, 1])
    cpsi, spsi = np.cos(ang[:, 2]), np.sin(ang[:, 2])
    n = ang.shape[0]
    dz = np.empty((n, 3, 3))
    dz[:, 0, 0] = -cpsi * sth * sphi + spsi * cphi
    dz[:, 1, 0] = -spsi * sth * sphi - cpsi * cphi
    dz[:, 2, 0] = -cth * sphi
    dz[:, 0, 1] = cpsi * cth * cphi
    dz[:, 1, 1] = spsi * cth * cphi
    dz[:, 2, 1] = -sth * cphi
    dz[:, 0, 2] = -spsi * sth * cphi + cpsi * sphi
    dz[:, 1, 2] = cpsi * sth * cphi + spsi * sphi
    dz[:, 2, 2] = 0.0
    return dz


def deriv(X, U, F, m, g, kd):
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    F = np.atleast_2d(F)
    v = X[:, 3:6]
    z = _thrust_axis(X[:, 6:9])
    zv = np.einsum("ij,ij->i", z, v)
    # R diag(kd, kd, 0) R^T v == kd (v - z (z.v))
    drag = kd * (v - z * zv[:, None])
    out = np.empty_like(X, dtype=float)
    out[:, 0:3] = v
    out[:, 3:6] = (U[:, 3:4] * z - drag + F) / m
    out[:, 5] -= g
    out[:, 6:9] = U[:, 0:3]
    return out


def jac(X, U, m, g, kd):
    X = np.atleast_2d(X)
    U = np.atleast_2d(U)
    n = X.shape[0]
    v = X[:, 3:6]
    z = _thrust_axis(X[:, 6:9])
    dz = _thrust_axis_partials(X[:, 6:9])
    zv = np.einsum("ij,ij->i", z, v)
    eye = np.eye(3)
    A = np.zeros((n, 9, 9))
    B = np.zeros((n, 9, 4))
    A[:, 0:3, 3:6] = eye
    A[:, 3:6, 3:6] = -(kd / m) * (eye - z[:, :, None] * z[:, None, :])
    # d(vdot)/d(z) = (T/m) I + (kd/m) ((z.v) I + z v^T)
    dvdz = (U[:, 3] / m)[:, None, None] * eye + (kd / m) * (
        zv[:, None, None] * eye + z[:, :, None] * v[:, None, :]
    )
    A[:, 3:6, 6:9] = dvdz @ dz
    B[:, 3:6, 3] = z / m
    B[:, 6:9, 0:3] = eye
    return A, B


def rk4(X, U, F, dt, m, g, kd):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    k1 = deriv(X, U, F, m, g, kd)
    k2 = deriv(X + 0.5 * dt * k1, U, F, m, g, kd)
    k3 = deriv(X + 0.5 * dt * k2, U, F, m, g, kd)
    k4 = deriv(X + dt * k3, U, F, m, g, kd)
    return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_sens(X, U, F, dt, m, g, kd):
    """One RK4 step per row plus its state/input sensitivities.

    Returns ``(X_next, Ad, Bd)`` with shapes (n, 9), (n, 9, 9), (n, 9, 4).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    h = dt
    eye = np.eye(9)
    k1 = deriv(X, U, F, m, g, kd)
    A1, B1 = jac(X, U, m, g, kd)
    X2 = X + 0.5 * h * k1
    k2 = deriv(X2, U, F, m, g, kd)
    A2, B2 = jac(X2, U, m, g, kd)
    X3 = X + 0.5 * h * k2
    k3 = deriv(X3, U, F, m, g, kd)
    A3, B3 = jac(X3, U, m, g, kd)
    X4 = X + h * k3
    k4 = deriv(X4, U, F, m, g, kd)
    A4, B4 = jac(X4, U, m, g, kd)

    S1x, S1u = A1, B1
    S2x = A2 @ (eye + 0.5 * h * S1x)
    S2u = A2 @ (0.5 * h * S1u) + B2
    S3x = A3 @ (eye + 0.5 * h * S2x)
    S3u = A3 @ (0.5 * h * S2u) + B3
    S4x = A4 @ (eye + h * S3x)
    S4u = A4 @ (h * S3u) + B4

    Xn = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Ad = eye + (h / 6.0) * (S1x + 2.0 * S2x + 2.0 * S3x + S4x)
    Bd = (h / 6.0) * (S1u + 2.0 * S2u + 2.0 * S3u + S4u)
    return Xn, Ad, Bd
