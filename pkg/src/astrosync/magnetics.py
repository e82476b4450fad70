"""Macrospin field composition and stochastic LLGS integration.

All quantities are SI: fields in A/m, spin currents in A, time in s. The
free-layer easy axis is x. The scalar ``_*`` kernels are shared by the
single-step Python API below and by the compiled trajectory loops, so the
tests exercise the same arithmetic the long simulations run.
"""

from dataclasses import dataclass, field
import math

import numba as nb
import numpy as np
from scipy.special import elliprd

from .constants import GAMMA, K_B, MU0, MU_B, Q_E
from .rng import normal3

# status codes returned by the compiled loops
OK = 0
DIVERGED = 1


class SimulationDiverged(RuntimeError):
    """Raised when a trajectory produces a non-finite magnetization."""

    def __init__(self, step, device=None, detail=""):
        self.step = int(step)
        self.device = device
        where = f" (device {device})" if device is not None else ""
        super().__init__(f"non-finite magnetization at step {self.step}{where}{detail}")


def ellipsoid_demag_factors(a, b, c):
    """Demagnetizing factors of an ellipsoid with full axes ``a, b, c``.

    Uses the Carlson form of Osborn's integrals, ``N_x = abc/3 R_D(b², c², a²)``
    (semi-axes), which is exact for any aspect ratio.
    """
    a, b, c = 0.5 * a, 0.5 * b, 0.5 * c
    abc3 = a * b * c / 3.0
    nx = abc3 * elliprd(b * b, c * c, a * a)
    ny = abc3 * elliprd(a * a, c * c, b * b)
    nz = abc3 * elliprd(a * a, b * b, c * c)
    return (float(nx), float(ny), float(nz))


def calibrate_anisotropy(eb_kt, ms, volume, demag, temperature=300.0, include_shape=True):
    """Uniaxial field ``Hk`` (A/m) giving an easy-axis barrier of ``eb_kt`` kT.

    The barrier of an easy-x macrospin is ``mu0 Ms V (Hk + (Ny - Nx) Ms) / 2``.
    With ``include_shape=False`` the shape term is dropped and
    ``Eb = mu0 Ms Hk V / 2``.
    """
    h_total = 2.0 * eb_kt * K_B * temperature / (MU0 * ms * volume)
    if include_shape:
        h_total -= (demag[1] - demag[0]) * ms
    if h_total < 0:
        raise ValueError(
            "shape anisotropy alone exceeds the requested barrier; "
            "reduce the free-layer thickness or raise eb_kt"
        )
    return h_total


@dataclass(frozen=True)
class MaterialParams:
    """Free-layer material and volume.

    ``ns`` (spin count) is derived from ``ms`` and ``volume`` on every access.
    """

    ms: float
    alpha: float
    volume: float
    eb_kt: float = 62.76
    temperature: float = 300.0
    demag: tuple = (0.0, 0.0, 1.0)
    hk: float = 0.0
    gamma: float = GAMMA

    def __post_init__(self):
        if not self.ms > 0:
            raise ValueError("ms must be positive")
        if not self.volume > 0:
            raise ValueError("volume must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        d = tuple(float(v) for v in self.demag)
        if len(d) != 3 or any(v < 0 or v > 1 for v in d):
            raise ValueError("demag factors must be three numbers in [0, 1]")
        if abs(sum(d) - 1.0) > 1e-9:
            raise ValueError(f"demag factors must sum to 1, got {sum(d)!r}")
        object.__setattr__(self, "demag", d)

    @property
    def ns(self):
        return self.ms * self.volume / MU_B

    @property
    def gamma_prime(self):
        """Gyromagnetic ratio for fields in A/m [m A^-1 s^-1]."""
        return self.gamma * MU0

    @property
    def spin_torque_rate(self):
        """``1/(q Ns)``: torque rate per ampere of spin current [A^-1 s^-1]."""
        return 1.0 / (Q_E * self.ns)

    def with_temperature(self, temperature):
        return MaterialParams(self.ms, self.alpha, self.volume, self.eb_kt, temperature,
                              self.demag, self.hk, self.gamma)


@dataclass(frozen=True)
class FieldSample:
    h_ext: np.ndarray
    h_demag: np.ndarray
    h_anis: np.ndarray
    h_thermal: np.ndarray
    h_eff: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "h_eff", self.h_ext + self.h_demag + self.h_anis + self.h_thermal)


# --- compiled scalar kernels -------------------------------------------------

@nb.njit(cache=True, inline="always")
def _heff(mx, my, mz, ms, nx, ny, nz, hk, hx, hy, hz, tx, ty, tz):
    return (hx - ms * nx * mx + hk * mx + tx,
            hy - ms * ny * my + ty,
            hz - ms * nz * mz + tz)


@nb.njit(cache=True, inline="always")
def _rhs(mx, my, mz, hx, hy, hz, sx, sy, sz, gp, alpha, beta):
    # torque without the Gilbert term: -gp m x H + beta m x (s x m)
    md = mx * sx + my * sy + mz * sz
    t0 = -gp * (my * hz - mz * hy) + beta * (sx - md * mx)
    t1 = -gp * (mz * hx - mx * hz) + beta * (sy - md * my)
    t2 = -gp * (mx * hy - my * hx) + beta * (sz - md * mz)
    # dm/dt = (T + alpha m x T) / (1 + alpha^2) solves dm/dt = T + alpha m x dm/dt
    k = 1.0 / (1.0 + alpha * alpha)
    return (k * (t0 + alpha * (my * t2 - mz * t1)),
            k * (t1 + alpha * (mz * t0 - mx * t2)),
            k * (t2 + alpha * (mx * t1 - my * t0)))


@nb.njit(cache=True, inline="always")
def _heun(mx, my, mz, dt, is0, is1, px, py, pz, tx, ty, tz,
          ms, nx, ny, nz, hk, hx, hy, hz, gp, alpha, beta):
    """One Heun step with the thermal field held across both stages."""
    fx, fy, fz = _heff(mx, my, mz, ms, nx, ny, nz, hk, hx, hy, hz, tx, ty, tz)
    k1x, k1y, k1z = _rhs(mx, my, mz, fx, fy, fz, is0 * px, is0 * py, is0 * pz, gp, alpha, beta)
    qx = mx + dt * k1x
    qy = my + dt * k1y
    qz = mz + dt * k1z
    fx, fy, fz = _heff(qx, qy, qz, ms, nx, ny, nz, hk, hx, hy, hz, tx, ty, tz)
    k2x, k2y, k2z = _rhs(qx, qy, qz, fx, fy, fz, is1 * px, is1 * py, is1 * pz, gp, alpha, beta)
    ox = mx + 0.5 * dt * (k1x + k2x)
    oy = my + 0.5 * dt * (k1y + k2y)
    oz = mz + 0.5 * dt * (k1z + k2z)
    inv = 1.0 / math.sqrt(ox * ox + oy * oy + oz * oz)
    return ox * inv, oy * inv, oz * inv


@nb.njit(cache=True)
def _drive(t, i_dc, ac):
    i = i_dc
    for k in range(ac.shape[0]):
        i += ac[k, 0] * math.sin(2.0 * math.pi * ac[k, 1] * t + ac[k, 2])
    return i


@nb.njit(cache=True)
def _integrate_shared(m, n_steps, dt, step0, keys, sigma, gain, beta, demag, hk,
                      ms, gp, alpha, hext, pol, i_dc, ac, addend, pin, r_p, r_ap,
                      record_every, out_mr, out_m, out_i):
    """Advance devices that share one heavy-metal current waveform.

    ``m`` (n, 3) is updated in place. Per-device arrays: ``keys``, ``sigma``
    (thermal std, A/m), ``gain`` (spin/charge current), ``beta``, ``demag``
    (n, 3), ``hk``. ``addend`` is either empty or one current sample per step.
    Returns ``(status, step, device)``.
    """
    n_dev = m.shape[0]
    has_add = addend.shape[0] > 0
    rec = 0
    half = 0.5 * (r_ap - r_p)
    for i in range(n_steps):
        t = (step0 + i) * dt
        ic0 = _drive(t, i_dc, ac)
        ic1 = _drive(t + dt, i_dc, ac)
        if has_add:
            ic0 += addend[i]
            ic1 += addend[i + 1] if i + 1 < addend.shape[0] else addend[i]
        for d in range(n_dev):
            if sigma[d] > 0.0:
                g0, g1, g2 = normal3(keys[d], step0 + i)
                tx = sigma[d] * g0
                ty = sigma[d] * g1
                tz = sigma[d] * g2
            else:
                tx = 0.0
                ty = 0.0
                tz = 0.0
            mx, my, mz = _heun(m[d, 0], m[d, 1], m[d, 2], dt, gain[d] * ic0, gain[d] * ic1,
                               pol[0], pol[1], pol[2], tx, ty, tz, ms,
                               demag[d, 0], demag[d, 1], demag[d, 2], hk[d],
                               hext[0], hext[1], hext[2], gp, alpha, beta[d])
            if not (math.isfinite(mx) and math.isfinite(my) and math.isfinite(mz)):
                return DIVERGED, step0 + i, d
            m[d, 0] = mx
            m[d, 1] = my
            m[d, 2] = mz
        if (i + 1) % record_every == 0 and rec < out_i.shape[0]:
            for d in range(n_dev):
                c = m[d, 0] * pin[0] + m[d, 1] * pin[1] + m[d, 2] * pin[2]
                out_mr[d, rec] = r_p + half * (1.0 - c)
                out_m[d, rec, 0] = m[d, 0]
                out_m[d, rec, 1] = m[d, 1]
                out_m[d, rec, 2] = m[d, 2]
            out_i[rec] = ic1
            rec += 1
    return OK, -1, -1


# --- Python API ----------------------------------------------------------------

def _vec(v):
    return np.asarray(v, dtype=float).reshape(3)


def effective_field(m, p, h_ext, h_thermal=(0.0, 0.0, 0.0)):
    """Decompose the effective field at magnetization ``m``.

    Demagnetization is ``-Ms (Nx mx, Ny my, Nz mz)``, anisotropy is
    ``(Hk mx, 0, 0)``.
    """
    m = _vec(m)
    assert abs(np.dot(m, m) - 1.0) < 1e-6, "m must be a unit vector"
    nx, ny, nz = p.demag
    h_demag = -p.ms * np.array([nx * m[0], ny * m[1], nz * m[2]])
    h_anis = np.array([p.hk * m[0], 0.0, 0.0])
    return FieldSample(_vec(h_ext), h_demag, h_anis, _vec(h_thermal))


def thermal_sigma(p, dt):
    """Per-component std of Brown's fluctuation field (A/m) for step ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if p.temperature == 0:
        return 0.0
    return math.sqrt(2.0 * p.alpha * K_B * p.temperature
                     / (p.gamma * MU0 ** 2 * p.ms * p.volume * dt))


def thermal_field_sample(p, dt, rng):
    """Draw one thermal field vector; ``rng`` is a :class:`~astrosync.rng.GaussianStream`."""
    s = thermal_sigma(p, dt)
    if s == 0.0:
        return np.zeros(3)
    return s * rng.next()


def llgs_rhs(m, h_eff, i_s, p):
    """Explicit ``dm/dt`` of the LLGS equation.

    ``i_s`` is the spin-current vector (A), i.e. magnitude times polarization.
    """
    m = _vec(m)
    h = _vec(h_eff)
    s = _vec(i_s)
    assert abs(np.dot(m, m) - 1.0) < 1e-6, "m must be a unit vector"
    return np.array(_rhs(m[0], m[1], m[2], h[0], h[1], h[2], s[0], s[1], s[2],
                         p.gamma_prime, p.alpha, p.spin_torque_rate))


def implicit_residual(m, dmdt, h_eff, i_s, p):
    """Residual of the implicit (Gilbert-form) equation for a candidate ``dm/dt``."""
    m, d, h, s = _vec(m), _vec(dmdt), _vec(h_eff), _vec(i_s)
    rhs = (-p.gamma_prime * np.cross(m, h) + p.alpha * np.cross(m, d)
           + p.spin_torque_rate * np.cross(m, np.cross(s, m)))
    return d - rhs


def heun_step(m, dt, p, h_ext=(0.0, 0.0, 0.0), polarization=(-1.0, 0.0, 0.0),
              i_s_start=0.0, i_s_end=None, h_thermal=(0.0, 0.0, 0.0)):
    """Advance ``m`` by one Heun predictor-corrector step and renormalize.

    ``i_s_start``/``i_s_end`` are the scalar spin currents at ``t`` and
    ``t + dt``; ``h_thermal`` is held fixed for both stages.
    """
    m = _vec(m)
    he = _vec(h_ext)
    pol = _vec(polarization)
    th = _vec(h_thermal)
    if i_s_end is None:
        i_s_end = i_s_start
    nx, ny, nz = p.demag
    out = np.array(_heun(m[0], m[1], m[2], dt, i_s_start, i_s_end, pol[0], pol[1], pol[2],
                         th[0], th[1], th[2], p.ms, nx, ny, nz, p.hk, he[0], he[1], he[2],
                         p.gamma_prime, p.alpha, p.spin_torque_rate))
    if not np.all(np.isfinite(out)):
        raise SimulationDiverged(0)
    return out
