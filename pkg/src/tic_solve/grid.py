"""Explicit finite-difference solver for the extended HJB system on a 1-D state.

The unknowns are the equilibrium value ``V(t, x)``, the anchored expected
reward ``f(t, x, y) = E_{t,x}[ int H(y, s, X_s, u_s) ds + F(y, X_T) ]`` (one
column per anchor y) and ``g(t, x) = E_{t,x}[k(X_T)]``. At each time level the
equilibrium control maximises

    L^u V - L^u h + L^u f^{x} - L^u (G o g) + G_y(x, g) L^u g + H(x, t, x, u)

where ``L^u`` is the spatial part of the generator, ``h(x) = f(t, x, x)`` and
``(G o g)(x) = G(x, g(t, x))``. The columns of f and g are then stepped with
the chosen control, and V is updated so that ``V = h + G o g`` holds level by
level.

Differencing is hybrid: central first differences where the cell Peclet
condition ``sigma^2 >= |mu| dx`` holds and upwind first differences
elsewhere, so every stencil is monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .reward import RewardSpec
from .sde import ControlModel

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
CFL_SAFETY = 0.9


class CflError(ValueError):
    """The requested time step violates the explicit-scheme stability bound."""


class SchemeError(RuntimeError):
    """A field became non-finite or an internal identity broke."""


@dataclass(frozen=True)
class GridSpec:
    """Space, time, control and anchor grids.

    ``nt=None`` picks the smallest admissible number of time nodes.
    ``u_lo``/``u_hi`` default to the model's control bounds, which must then
    be finite.
    """

    x_lo: float
    x_hi: float
    nx: int
    nu: int
    nt: Optional[int] = None
    ny: Optional[int] = None
    u_lo: Optional[float] = None
    u_hi: Optional[float] = None
    refine: bool = True
    max_f_floats: int = 20_000_000

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("x_lo must be below x_hi")
        if self.nx < 3 or self.nu < 2:
            raise ValueError("need nx >= 3 and nu >= 2")
        if self.nt is not None and self.nt < 2:
            raise ValueError("nt must be >= 2")
        if self.ny is not None and self.ny < 2:
            raise ValueError("ny must be >= 2")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.nx)

    @property
    def dx(self) -> float:
        return (self.x_hi - self.x_lo) / (self.nx - 1)

    @property
    def y(self) -> np.ndarray:
        return np.linspace(self.x_lo, self.x_hi, self.ny or self.nx)


@dataclass(frozen=True)
class ExtendedProblem:
    """Anchored reward on a scalar controlled diffusion.

    ``F(x_anchor, y)``, ``G(x_anchor, m)``, ``k(y)`` and
    ``H(x_anchor, s, y, u)``; G, k and H may be absent. Pieces depend on the
    anchor state only, not on the anchor time.
    """

    model: ControlModel
    F: Callable
    G: Optional[Callable] = None
    k: Optional[Callable] = None
    H: Optional[Callable] = None
    sense: str = "maximize"

    def __post_init__(self):
        if self.model.control_dim != 1:
            raise ValueError("the grid solver handles scalar controls only")
        if self.sense not in ("maximize", "minimize"):
            raise ValueError(f"unknown sense {self.sense!r}")

    @classmethod
    def from_reward(cls, model: ControlModel, spec: RewardSpec) -> "ExtendedProblem":
        """Build from a :class:`RewardSpec` whose pieces ignore the anchor time."""
        F = spec.F
        return cls(
            model=model,
            F=(lambda xa, y: F(0.0, xa, y)) if F is not None else (lambda xa, y: 0.0 * y),
            G=(lambda xa, m: spec.G(0.0, xa, m)) if spec.G is not None else None,
            k=spec.k,
            H=(lambda xa, s, y, u: spec.H(0.0, xa, s, y, u)) if spec.H is not None else None,
            sense=spec.sense)

    def to_reward(self) -> RewardSpec:
        return RewardSpec(
            F=lambda ta, xa, y: self.F(xa, y),
            G=None if self.G is None else (lambda ta, xa, m: self.G(xa, m)),
            H=None if self.H is None else (lambda ta, xa, s, y, u: self.H(xa, s, y, u)),
            k=self.k, sense=self.sense)

    def transform(self, y):
        return y if self.k is None else self.k(y)

    def weighted(self, weight: Callable) -> "ExtendedProblem":
        """The problem with every piece multiplied by ``weight(x_anchor)``."""
        F, G, H = self.F, self.G, self.H
        return ExtendedProblem(
            model=self.model,
            F=lambda xa, y: weight(xa) * F(xa, y),
            G=None if G is None else (lambda xa, m: weight(xa) * G(xa, m)),
            k=self.k,
            H=None if H is None else (lambda xa, s, y, u: weight(xa) * H(xa, s, y, u)),
            sense=self.sense)


@dataclass
class GridSolution:
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    V: np.ndarray
    g: np.ndarray
    u_hat: np.ndarray
    f: Optional[np.ndarray]
    f_levels: np.ndarray
    diagnostics: dict
    controls: np.ndarray
    problem: object = None
    grid: Optional[GridSpec] = None
    _kernel_parts: Optional[dict] = field(default=None, repr=False)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def scheme_tolerance(self) -> float:
        return self.diagnostics["scheme_tolerance"]

    def level(self, t: float) -> int:
        """Index of the time node nearest to t."""
        return int(np.clip(np.rint((t - self.times[0]) / self.dt), 0, len(self.times) - 1))

    def value(self, t: float, x):
        return np.interp(x, self.x, self.V[self.level(t)])

    def expected(self, t: float, x):
        """Grid g at (t, x) by linear interpolation in x."""
        return np.interp(x, self.x, self.g[self.level(t)])

    def anchored(self, t: float, x: float, y: float) -> float:
        """Grid f at (t, x, y), bilinear in (x, y), at the nearest stored level."""
        if self.f is None:
            raise ValueError("this solution carries no f field")
        n = self.level(t)
        k = int(np.argmin(np.abs(self.f_levels - n)))
        plane = self.f[k]
        col = np.array([np.interp(x, self.x, plane[:, j]) for j in range(plane.shape[1])])
        return float(np.interp(y, self.y, col))

    def law(self) -> Callable:
        """Feedback law: linear in x within a level, piecewise constant in t."""
        def law(t, x):
            row = self.u_hat[self.level(t)]
            return np.interp(x, self.x, row)
        return law

    def interior(self) -> np.ndarray:
        """Mask of the middle half of the state grid."""
        lo, hi = self.x[0], self.x[-1]
        q = 0.25 * (hi - lo)
        return (self.x >= lo + q) & (self.x <= hi - q)


# ---------------------------------------------------------------------------
# finite differences along axis 0


def _first_diffs(a: np.ndarray, dx: float):
    """Forward, backward and central first differences with one-sided ends."""
    fwd = np.empty_like(a)
    bwd = np.empty_like(a)
    fwd[:-1] = (a[1:] - a[:-1]) / dx
    fwd[-1] = (a[-1] - a[-2]) / dx
    bwd[1:] = fwd[:-1]
    bwd[0] = fwd[0]
    cen = np.empty_like(a)
    cen[1:-1] = (a[2:] - a[:-2]) / (2 * dx)
    cen[0] = fwd[0]
    cen[-1] = bwd[-1]
    return fwd, bwd, cen


def _second_diff(a: np.ndarray, dx: float) -> np.ndarray:
    """Central second difference; zero curvature at the two end nodes."""
    d2 = np.zeros_like(a)
    d2[1:-1] = (a[2:] - 2 * a[1:-1] + a[:-2]) / dx**2
    return d2


class _Diffs:
    """First/second differences of a field, selectable per node."""

    def __init__(self, a: np.ndarray, dx: float):
        self.fwd, self.bwd, self.cen = _first_diffs(a, dx)
        self.d2 = _second_diff(a, dx)

    def diag(self) -> "_Diffs":
        out = _Diffs.__new__(_Diffs)
        for name in ("fwd", "bwd", "cen", "d2"):
            setattr(out, name, np.diagonal(getattr(self, name)).copy())
        return out


def _combine(*terms):
    """Linear combination of (_Diffs, coefficient) pairs as a new _Diffs."""
    out = _Diffs.__new__(_Diffs)
    for name in ("fwd", "bwd", "cen", "d2"):
        setattr(out, name, sum(c * getattr(d, name) for d, c in terms))
    return out


def _select(mode: np.ndarray, d: _Diffs) -> np.ndarray:
    """First difference per node; mode 0 central, 1 forward, 2 backward, 3 none.

    ``mode`` may carry trailing control axes, broadcast against d's nodes.
    """
    extra = mode.ndim - 1
    shape = d.cen.shape + (1,) * extra
    c, f, b = (getattr(d, n).reshape(shape) for n in ("cen", "fwd", "bwd"))
    return np.where(mode == 0, c, np.where(mode == 1, f, np.where(mode == 2, b, 0.0)))


def _mode(mu, s2, dx):
    """Per-node differencing: central when diffusion dominates, else upwind.

    Axis 0 runs over the state grid. At an end node the drift either points
    inward (one-sided upwind difference) or outward, in which case the
    outward motion is stopped (mode 3). For the backward equation an outward
    drift makes the end an inflow boundary; extrapolating from the interior
    there is a downwind stencil whose boundary mode grows without bound.
    """
    mode = np.where(s2 >= np.abs(mu) * dx, 0, np.where(mu > 0, 1, 2))
    mode[0] = np.where(mu[0] > 0, 1, 3)
    mode[-1] = np.where(mu[-1] < 0, 2, 3)
    return mode


def _coeffs(model: ControlModel, t, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    xb, ub = np.broadcast_arrays(x, u)
    mu = np.broadcast_to(model.drift(t, xb, ub), xb.shape).astype(float)
    sig = np.broadcast_to(model.diffusion(t, xb, ub), xb.shape).astype(float)
    return mu, sig * sig


# ---------------------------------------------------------------------------
# grid set-up


def _control_grid(model: ControlModel, grid: GridSpec) -> np.ndarray:
    lo = grid.u_lo if grid.u_lo is not None else float(np.asarray(model.control_lo))
    hi = grid.u_hi if grid.u_hi is not None else float(np.asarray(model.control_hi))
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise ValueError("the control grid needs finite bounds (set u_lo/u_hi)")
    if not lo < hi:
        raise ValueError("u_lo must be below u_hi")
    return np.linspace(lo, hi, grid.nu)


def _rate_scan(model, grid, controls, times):
    """Worst-case explicit rates over a sample of times, nodes and controls."""
    x = grid.x[:, None]
    dx = grid.dx
    worst = {"diff": (0.0, None), "drift": (0.0, None), "total": 0.0}
    for t in times:
        mu, s2 = _coeffs(model, t, x, controls[None, :])
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(s2))):
            raise SchemeError(f"non-finite coefficients at t={t}")
        total = float(np.max(s2 / dx**2 + np.abs(mu) / dx))
        worst["total"] = max(worst["total"], total)
        i, j = np.unravel_index(np.argmax(s2), s2.shape)
        if s2[i, j] > worst["diff"][0]:
            worst["diff"] = (float(s2[i, j]), (t, grid.x[i], controls[j]))
        i, j = np.unravel_index(np.argmax(np.abs(mu)), mu.shape)
        if abs(mu[i, j]) > worst["drift"][0]:
            worst["drift"] = (float(abs(mu[i, j])), (t, grid.x[i], controls[j]))
    return worst


def _time_grid(model: ControlModel, grid: GridSpec, controls: np.ndarray):
    T = model.T
    sample = np.linspace(0.0, T, 11)
    worst = _rate_scan(model, grid, controls, sample)
    dx = grid.dx
    if grid.nt is None:
        rate = max(worst["total"], 1e-12)
        nt = int(math.ceil(T * rate / CFL_SAFETY)) + 1
        nt = max(nt, 2)
    else:
        nt = grid.nt
    dt = T / (nt - 1)
    s2max, where_d = worst["diff"]
    if s2max > 0 and dt > CFL_SAFETY * dx**2 / s2max:
        t, x, u = where_d
        raise CflError(f"dt={dt:.3g} exceeds 0.9 dx^2/sigma^2 = {CFL_SAFETY * dx**2 / s2max:.3g} "
                       f"at t={t:.4g}, x={x:.4g}, u={u:.4g}")
    mumax, where_m = worst["drift"]
    if mumax > 0 and dt > CFL_SAFETY * dx / mumax:
        t, x, u = where_m
        raise CflError(f"dt={dt:.3g} exceeds 0.9 dx/|mu| = {CFL_SAFETY * dx / mumax:.3g} "
                       f"at t={t:.4g}, x={x:.4g}, u={u:.4g}")
    if dt * worst["total"] > 1.0 + 1e-12:
        raise CflError(f"dt={dt:.3g} makes the combined stencil non-monotone "
                       f"(dt * max(sigma^2/dx^2 + |mu|/dx) = {dt * worst['total']:.3g})")
    sqrt_spread = math.sqrt(T) * math.sqrt(s2max)
    reach = T * mumax + 3.0 * sqrt_spread
    diagnostics = {
        "dt": dt, "dx": dx, "nt": nt,
        "cfl_margin": 1.0 - dt * worst["total"],
        "boundary_width": int(min(grid.nx, math.ceil(reach / dx))),
        "scheme_tolerance": None,
    }
    return np.linspace(0.0, T, nt), diagnostics


def _g_slope(G, x, m):
    step = 1e-6 * np.maximum(1.0, np.abs(m))
    return (G(x, m + step) - G(x, m - step)) / (2 * step)


def _g_curvature(G, x, m):
    step = 1e-4 * np.maximum(1.0, np.abs(m))
    return (G(x, m + step) - 2 * G(x, m) + G(x, m - step)) / step**2


def _check_finite(name, arr, t, x):
    bad = ~np.isfinite(arr)
    if bad.any():
        i = int(np.flatnonzero(bad.reshape(arr.shape[0], -1).any(axis=1))[0])
        raise SchemeError(f"non-finite {name} at t={t:.6g}, x={x[i]:.6g}")


# ---------------------------------------------------------------------------
# control search


def _search(objective, controls: np.ndarray, maximize: bool, refine: bool):
    """Exhaustive search then a golden-section pass on the bracketing interval.

    ``objective(u)`` takes an (nx, m) array of controls and returns (nx, m).
    Ties go to the lowest control index; the refined control is kept only
    when it strictly improves on the grid optimum.
    """
    sgn = 1.0 if maximize else -1.0
    nx = objective.nx
    vals = sgn * objective(np.broadcast_to(controls, (nx, controls.size)))
    k = np.argmax(vals, axis=1)
    best_u = controls[k]
    best_v = vals[np.arange(nx), k]
    if not refine:
        return best_u
    lo = controls[np.maximum(k - 1, 0)]
    hi = controls[np.minimum(k + 1, controls.size - 1)]
    a, b = lo.copy(), hi.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc = sgn * objective(c[:, None])[:, 0]
    fd = sgn * objective(d[:, None])[:, 0]
    for _ in range(40):
        left = fc >= fd
        # keep [a, d] when the left probe wins, [c, b] otherwise
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        keep_c, keep_f = np.where(left, c, d), np.where(left, fc, fd)
        probe = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
        fp = sgn * objective(probe[:, None])[:, 0]
        c = np.where(left, probe, keep_c)
        d = np.where(left, keep_c, probe)
        fc = np.where(left, fp, keep_f)
        fd = np.where(left, keep_f, fp)
    u_star = 0.5 * (a + b)
    f_star = sgn * objective(u_star[:, None])[:, 0]
    better = f_star > best_v
    return np.where(better, u_star, best_u)


class _Objective:
    """``mu P1 + 0.5 sigma^2 P2 + extra(u)`` at every node for candidate controls."""

    def __init__(self, model, t, x, dx, P: _Diffs, extra=None, curvature=None):
        self.model, self.t, self.x, self.dx = model, t, x, dx
        self.P, self.extra, self.curvature = P, extra, curvature
        self.nx = x.size

    def parts(self, u):
        mu, s2 = _coeffs(self.model, self.t, self.x[:, None], u)
        return mu, s2, _mode(mu, s2, self.dx)

    def __call__(self, u):
        mu, s2, mode = self.parts(u)
        val = mu * _select(mode, self.P) + 0.5 * s2 * self.P.d2[:, None]
        if self.curvature is not None:
            val = val - 0.5 * s2 * self.curvature(mode)
        if self.extra is not None:
            val = val + self.extra(u)
        return val


def _step(field: np.ndarray, d: _Diffs, mu, s2, mode, dt, source=0.0):
    """Explicit backward step ``field + dt (mu D1 + 0.5 sigma^2 D2) field + dt source``."""
    if field.ndim == 2:
        mu, s2, mode = mu[:, None], s2[:, None], mode[:, None]
        d1 = np.where(mode == 0, d.cen, np.where(mode == 1, d.fwd,
                                                 np.where(mode == 2, d.bwd, 0.0)))
    else:
        d1 = _select(mode, d)
    return field + dt * (mu * d1 + 0.5 * s2 * d.d2 + source)


# ---------------------------------------------------------------------------
# the extended system


def _anchor_blend(x: np.ndarray, y: np.ndarray):
    """Column indices and weights interpolating anchor y at each x."""
    j = np.clip(np.searchsorted(y, x, side="right") - 1, 0, y.size - 2)
    w = (x - y[j]) / (y[j + 1] - y[j])
    return j, np.clip(w, 0.0, 1.0)


def solve_extended(problem: ExtendedProblem, grid: GridSpec) -> GridSolution:
    """One explicit backward sweep for (V, f, g) with a discrete control search.

    Terminal rows are ``V = F(x, x) + G(x, k(x))``, ``f[:, j] = F(y_j, x)``
    and ``g = k(x)``. Raises :class:`CflError` when the time step is not
    admissible and :class:`SchemeError` on non-finite fields.
    """
    model = problem.model
    controls = _control_grid(model, grid)
    times, diag = _time_grid(model, grid, controls)
    nt, dt, dx = len(times), diag["dt"], grid.dx
    x, y = grid.x, grid.y
    nx, ny = x.size, y.size
    shared = ny == nx
    if not shared:
        jcol, wcol = _anchor_blend(x, y)
    maximize = problem.sense == "maximize"
    G, H = problem.G, problem.H

    def diag_of(plane):
        if shared:
            return plane
        return plane[:, jcol] * (1 - wcol) + plane[:, jcol + 1] * wcol

    def anchored_H(t, u):
        """H(x_i anchor, t, x_i, u) for node-wise candidate controls u (nx, m)."""
        xs = x[:, None]
        if shared:
            return np.broadcast_to(H(xs, t, xs, u), u.shape)
        lo = H(y[jcol][:, None], t, xs, u)
        hi = H(y[jcol + 1][:, None], t, xs, u)
        return np.broadcast_to((1 - wcol[:, None]) * lo + wcol[:, None] * hi, u.shape)

    kx = np.broadcast_to(problem.transform(x), x.shape).astype(float)
    g = kx.copy()
    f = np.asarray(problem.F(y[None, :], x[:, None]), dtype=float)
    f = np.broadcast_to(f, (nx, ny)).copy()
    h = np.diagonal(diag_of(f)).copy()
    Gg = np.zeros(nx) if G is None else np.asarray(G(x, g), dtype=float)
    V_T = np.broadcast_to(np.asarray(problem.F(x, x), dtype=float), x.shape) + (
        0.0 if G is None else np.asarray(G(x, kx), dtype=float))
    V = V_T.copy()

    stride = max(1, math.ceil(nt * nx * ny / grid.max_f_floats))
    f_levels = sorted(set(range(0, nt, stride)) | {nt - 1})
    f_store = np.empty((len(f_levels), nx, ny))
    f_slot = {n: i for i, n in enumerate(f_levels)}
    V_all = np.empty((nt, nx))
    g_all = np.empty((nt, nx))
    u_all = np.empty((nt, nx))
    Q = {name: np.zeros((nt, nx)) for name in ("cen", "fwd", "bwd", "d2")}
    V_all[-1], g_all[-1] = V, g
    f_store[f_slot[nt - 1]] = f
    scale = max(1.0, float(np.max(np.abs(V_T))))
    # round-off follows the largest field in play; with a separate anchor grid
    # the interpolated diagonal also starts slightly off
    identity_tol = (1e-8 * max(scale, float(np.max(np.abs(f))))
                    + float(np.max(np.abs(V_T - h - Gg))))

    def level_objective(t, V, f, g):
        df = _Diffs(diag_of(f), dx).diag()
        dV = _Diffs(V, dx)
        dh = _Diffs(np.diagonal(diag_of(f)).copy(), dx)
        dg = _Diffs(g, dx)
        if G is None:
            gy = np.zeros(nx)
            dGg = _Diffs(np.zeros(nx), dx)
        else:
            gy = _g_slope(G, x, g)
            dGg = _Diffs(np.asarray(G(x, g), dtype=float), dx)
        # correction part: everything except L^u V
        Qd = _combine((dh, -1.0), (df, 1.0), (dGg, -1.0), (dg, gy))
        P = _combine((dV, 1.0), (Qd, 1.0))
        extra = None if H is None else (lambda u: anchored_H(t, u))
        return _Objective(model, t, x, dx, P, extra), Qd, dg, gy

    obj, Qd, dg, gy = level_objective(times[-1], V, f, g)
    u_all[-1] = _search(obj, controls, maximize, grid.refine)
    for name in Q:
        Q[name][-1] = getattr(Qd, name)

    for n in range(nt - 2, -1, -1):
        t = times[n]
        obj, Qd, dg, gy = level_objective(t, V, f, g)
        u = _search(obj, controls, maximize, grid.refine)
        for name in Q:
            Q[name][n] = getattr(Qd, name)
        mu, s2, mode = obj.parts(u[:, None])
        mu, s2, mode = mu[:, 0], s2[:, 0], mode[:, 0]
        S = obj(u[:, None])[:, 0]

        g_new = _step(g, dg, mu, s2, mode, dt)
        src = 0.0 if H is None else np.asarray(H(y[None, :], t, x[:, None], u[:, None]), dtype=float)
        f = _step(f, _Diffs(f, dx), mu, s2, mode, dt, src)
        if G is None:
            V = V + dt * S
        else:
            V = V + dt * S - (G(x, g) - G(x, g_new)) + gy * (g - g_new)
        g = g_new

        _check_finite("V", V, t, x)
        _check_finite("g", g, t, x)
        _check_finite("f", f, t, x)
        h = np.diagonal(diag_of(f))
        gap = V - h - (0.0 if G is None else G(x, g))
        if np.max(np.abs(gap)) > identity_tol:
            i = int(np.argmax(np.abs(gap)))
            raise SchemeError(f"diagonal identity broken by {gap[i]:.3g} at t={t:.6g}, x={x[i]:.6g}")
        V_all[n], g_all[n], u_all[n] = V, g, u
        if n in f_slot:
            f_store[f_slot[n]] = f

    diag["scheme_tolerance"] = (dt + dx**2) * scale
    diag["identity_tol"] = identity_tol
    diag["f_stride"] = stride
    return GridSolution(times, x, y, V_all, g_all, u_all, f_store, np.asarray(f_levels),
                        diag, controls, problem, grid, {"Q": Q})


# ---------------------------------------------------------------------------
# the simplified form (no anchor dependence)


def _anchor_free(fn, x, args):
    a = np.asarray(fn(np.full_like(x, x[0]), *args), dtype=float)
    b = np.asarray(fn(np.full_like(x, x[-1]), *args), dtype=float)
    return np.allclose(a, b, rtol=1e-12, atol=1e-12)


def solve_simplified(problem: ExtendedProblem, grid: GridSpec) -> GridSolution:
    """Solve ``sup_u { A^u V - 1/2 sigma^2 G''(g) g_x^2 } = 0`` with g alongside.

    Valid when F and G do not depend on the anchor state; no f field is
    carried. An anchor-free running term H is added to the objective.
    """
    model = problem.model
    x = grid.x
    if not _anchor_free(problem.F, x, (x,)):
        raise ValueError("F depends on the anchor state; use solve_extended")
    if problem.G is not None and not _anchor_free(problem.G, x, (x,)):
        raise ValueError("G depends on the anchor state; use solve_extended")
    controls = _control_grid(model, grid)
    times, diag = _time_grid(model, grid, controls)
    nt, dt, dx, nx = len(times), diag["dt"], grid.dx, x.size
    G, H = problem.G, problem.H
    maximize = problem.sense == "maximize"

    kx = np.broadcast_to(problem.transform(x), x.shape).astype(float)
    g = kx.copy()
    V = np.broadcast_to(np.asarray(problem.F(x, x), dtype=float), x.shape) + (
        0.0 if G is None else np.asarray(G(x, kx), dtype=float))
    V = np.array(V, dtype=float)
    scale = max(1.0, float(np.max(np.abs(V))))
    V_all, g_all, u_all = np.empty((nt, nx)), np.empty((nt, nx)), np.empty((nt, nx))
    V_all[-1], g_all[-1] = V, g

    def objective(t, V, g):
        dV, dg = _Diffs(V, dx), _Diffs(g, dx)
        if G is None:
            curvature = None
        else:
            g2 = _g_curvature(G, x, g)

            def curvature(mode):
                return g2[:, None] * _select(mode, dg) ** 2
        extra = None if H is None else (lambda u: np.broadcast_to(H(x[:, None], t, x[:, None], u), u.shape))
        return _Objective(model, t, x, dx, dV, extra, curvature), dg

    obj, _ = objective(times[-1], V, g)
    u_all[-1] = _search(obj, controls, maximize, grid.refine)
    for n in range(nt - 2, -1, -1):
        t = times[n]
        obj, dg = objective(t, V, g)
        u = _search(obj, controls, maximize, grid.refine)
        mu, s2, mode = (a[:, 0] for a in obj.parts(u[:, None]))
        V = V + dt * obj(u[:, None])[:, 0]
        g = _step(g, dg, mu, s2, mode, dt)
        _check_finite("V", V, t, x)
        _check_finite("g", g, t, x)
        V_all[n], g_all[n], u_all[n] = V, g, u

    diag["scheme_tolerance"] = (dt + dx**2) * scale
    return GridSolution(times, x, x, V_all, g_all, u_all, None, np.array([], dtype=int),
                        diag, controls, problem, grid)


# ---------------------------------------------------------------------------
# standard (time-consistent) dynamic programming


@dataclass
class StandardSolution:
    times: np.ndarray
    x: np.ndarray
    V: np.ndarray
    u_hat: np.ndarray
    diagnostics: dict


def solve_standard(model: ControlModel, running: Optional[Callable], terminal, grid: GridSpec,
                   sense: str = "maximize", times: Optional[np.ndarray] = None) -> StandardSolution:
    """Backward dynamic programming ``W_t + opt_u { L^u W + running(n, t, x, u) } = 0``.

    ``running(n, t, x, u)`` receives the level index, the time, the node
    column ``x`` of shape (nx, 1) and candidate controls of shape (nx, m).
    ``terminal`` is an array over the x grid.
    """
    controls = _control_grid(model, grid)
    if times is None:
        times, diag = _time_grid(model, grid, controls)
    else:
        diag = {"dt": float(times[1] - times[0]), "dx": grid.dx, "nt": len(times)}
    nt, dt, dx, x = len(times), diag["dt"], grid.dx, grid.x
    W = np.array(np.broadcast_to(terminal, x.shape), dtype=float)
    W_all, u_all = np.empty((nt, x.size)), np.empty((nt, x.size))
    W_all[-1] = W

    def objective(n, t, W):
        extra = None
        if running is not None:
            extra = lambda u: np.broadcast_to(running(n, t, x[:, None], u), u.shape)  # noqa: E731
        return _Objective(model, t, x, dx, _Diffs(W, dx), extra)

    maximize = sense == "maximize"
    u_all[-1] = _search(objective(nt - 1, times[-1], W), controls, maximize, grid.refine)
    for n in range(nt - 2, -1, -1):
        obj = objective(n, times[n], W)
        u = _search(obj, controls, maximize, grid.refine)
        W = W + dt * obj(u[:, None])[:, 0]
        _check_finite("W", W, times[n], x)
        W_all[n], u_all[n] = W, u
    return StandardSolution(times, x, W_all, u_all, diag)


@dataclass
class EquivalentStandard:
    """Running cost K of the time-consistent problem sharing the equilibrium.

    ``K(t, x, u) = H(x, t, x, u) - L^u h + L^u f^x - L^u (G o g) + G_y L^u g``
    (the time-derivative parts cancel identically), sampled on the solver's
    levels, plus the terminal reward ``F(x, x) + G(x, k(x))``.
    """

    solution: GridSolution
    terminal: np.ndarray

    def kernel(self, n: int, t: float, x_col, u) -> np.ndarray:
        sol = self.solution
        problem, grid = sol.problem, sol.grid
        Q = sol._kernel_parts["Q"]
        parts = _Diffs.__new__(_Diffs)
        for name in ("cen", "fwd", "bwd", "d2"):
            setattr(parts, name, Q[name][n])
        mu, s2 = _coeffs(problem.model, t, sol.x[:, None], u)
        mode = _mode(mu, s2, grid.dx)
        val = mu * _select(mode, parts) + 0.5 * s2 * parts.d2[:, None]
        if problem.H is not None:
            xs = sol.x[:, None]
            val = val + problem.H(xs, t, xs, u)
        return val

    def sample(self) -> np.ndarray:
        """K on the (t, x, u) grid, shape (nt, nx, nu)."""
        sol = self.solution
        u = np.broadcast_to(sol.controls, (sol.x.size, sol.controls.size))
        return np.stack([self.kernel(n, t, None, u) for n, t in enumerate(sol.times)])

    def solve(self) -> StandardSolution:
        sol = self.solution
        return solve_standard(sol.problem.model, self.kernel, self.terminal, sol.grid,
                              sol.problem.sense, times=sol.times)


def build_equivalent_standard(problem: ExtendedProblem, solution: GridSolution) -> EquivalentStandard:
    """Assemble the equivalent running cost from a solved extended system."""
    if solution._kernel_parts is None or solution.problem is not problem:
        raise ValueError("the solution must come from solve_extended on this problem")
    x = solution.x
    kx = np.broadcast_to(problem.transform(x), x.shape)
    terminal = np.broadcast_to(np.asarray(problem.F(x, x), dtype=float), x.shape) + (
        0.0 if problem.G is None else np.asarray(problem.G(x, kx), dtype=float))
    return EquivalentStandard(solution, np.array(terminal, dtype=float))


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    argmax_agreement: float
    max_value_deviation: float
    base: GridSolution
    weighted: GridSolution


def scaling_check(problem: ExtendedProblem, weight: Callable, grid: GridSpec,
                  base: Optional[GridSolution] = None) -> ScalingReport:
    """Solve the problem scaled by ``weight(x_anchor)`` and compare with the original.

    Reports the fraction of interior (t, x) nodes whose controls agree within
    one control-grid step, and ``max |V_w / (weight V) - 1|`` over interior
    nodes where V is not negligible.
    """
    x = grid.x
    w = np.broadcast_to(np.asarray(weight(x), dtype=float), x.shape)
    if np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ValueError("weight must be strictly positive on the grid")
    if base is None:
        base = solve_extended(problem, grid)
    scaled = solve_extended(problem.weighted(weight), grid)
    mask = base.interior()
    du = base.controls[1] - base.controls[0]
    agree = np.abs(scaled.u_hat[:, mask] - base.u_hat[:, mask]) <= du * (1 + 1e-9)
    Vb = base.V[:, mask] * w[mask]
    Vs = scaled.V[:, mask]
    big = np.abs(Vb) > 1e-8 * max(1.0, float(np.max(np.abs(Vb))))
    dev = float(np.max(np.abs(Vs[big] / Vb[big] - 1.0))) if big.any() else 0.0
    return ScalingReport(float(np.mean(agree)), dev, base, scaled)
