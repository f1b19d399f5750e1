"""Self-consistent flow integration and trajectory reconstruction.

``evolve`` integrates the characteristic system  x' = v,  v' = E(t, x)
with velocity Verlet (kick-drift-kick), storing snapshots of all particle
states on a time grid that is uniform on [0, 1] and geometric afterwards.
The step size grows proportionally to t after t = 1: the forces decay
like a power of t, so the error per unit log-time stays controlled while
the cost of reaching T is O(log T) in snapshots.

``trace_points`` integrates auxiliary phase points (forward or backward)
through the *stored* history, evaluating the field by summing the kernel
over particle positions linearly interpolated between bracketing
snapshots.  This keeps the kernel structure (and its odd-symmetry
cancellations) intact, unlike interpolating the field itself.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from ._accel import field_direct_k, pair_potential_k
from .kernel import RieszParams
from .meanfield import TreeParams, field_tree

__all__ = [
    "TimeSchedule",
    "FlowState",
    "FlowHistory",
    "step",
    "evolve",
    "trace_points",
    "backward_trace",
    "liouville_check",
    "total_energy",
    "write_history_bin",
    "read_history_bin",
    "write_history_csv",
    "read_history_csv",
]

_MAGIC = b"RKHIST1\n"


@dataclass(frozen=True)
class TimeSchedule:
    """Step and snapshot timing for a run to t_final."""

    t_final: float
    dt_base: float = 0.01
    snap_ratio: float = 1.25
    uniform_dt: float = 0.25
    companion_delta: float = 0.04

    def __post_init__(self):
        if self.t_final <= 0 or self.dt_base <= 0:
            raise ValueError("t_final and dt_base must be > 0")
        if self.snap_ratio <= 1.0:
            raise ValueError("snap_ratio must be > 1")
        if not 0.0 < self.companion_delta < (self.snap_ratio - 1.0) / 2.5:
            raise ValueError("companion_delta must sit inside the snapshot gaps")

    def snapshot_times(self) -> tuple[np.ndarray, np.ndarray]:
        """(times, is_companion): uniform grid on [0, 1], geometric times
        r^k up to t_final (ratio adjusted to land exactly), and companion
        pairs t (1 +- delta) around interior geometric times.  Companions
        exist to let time derivatives be estimated by close-spaced finite
        differences without densifying the whole grid."""
        t_end = self.t_final
        uni = list(np.arange(0.0, min(1.0, t_end), self.uniform_dt)) + [min(1.0, t_end)]
        geo: list[float] = []
        comp: list[float] = []
        if t_end > 1.0:
            k = max(1, round(np.log(t_end) / np.log(self.snap_ratio)))
            r = t_end ** (1.0 / k)
            geo = [r ** i for i in range(1, k + 1)]
            geo[-1] = t_end
            for t in geo:
                if t * (1.0 + self.companion_delta) < t_end:
                    comp += [t * (1.0 - self.companion_delta),
                             t * (1.0 + self.companion_delta)]
        times = np.array(sorted(set(np.round(np.array(uni + geo + comp), 12).tolist())))
        return times, np.isin(times, np.round(comp, 12))

    def step_times(self, t_end: float) -> np.ndarray:
        """Integration-step ladder on [0, t_end]: uniform dt_base up to
        t = 1, then multiplicative steps dt = dt_base * t."""
        ts = [0.0]
        t = 0.0
        cap = min(1.0, t_end)
        while t < cap - 1e-13:
            t = min(t + self.dt_base, cap)
            ts.append(t)
        while t < t_end * (1.0 - 1e-13):
            t = min(t * (1.0 + self.dt_base), t_end)
            ts.append(t)
        return np.array(ts)


@dataclass(frozen=True)
class FlowState:
    """All particle positions and velocities at one time."""

    t: float
    X: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class FlowHistory:
    """Snapshot record of a run; the ground truth for all diagnostics."""

    times: np.ndarray
    X: np.ndarray
    V: np.ndarray
    is_companion: np.ndarray
    weights: np.ndarray
    params: RieszParams
    schedule: TimeSchedule
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("snapshot times must be strictly increasing")
        if not (self.X.shape == self.V.shape and self.X.shape[0] == len(self.times)):
            raise ValueError("snapshot arrays inconsistent with times")

    @property
    def n_particles(self) -> int:
        return self.X.shape[1]

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    @property
    def main_times(self) -> np.ndarray:
        return self.times[~self.is_companion]

    def index_of(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"{t} is not a snapshot time")
        return k

    def state(self, t: float) -> FlowState:
        k = self.index_of(t)
        return FlowState(float(self.times[k]), self.X[k], self.V[k])

    def positions_at(self, t: float) -> np.ndarray:
        """Particle positions at any t in range, linearly interpolated
        between bracketing snapshots."""
        ts = self.times
        if t < ts[0] - 1e-9 or t > ts[-1] * (1 + 1e-12) + 1e-9:
            raise ValueError(f"t={t} outside stored history [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t))
        if k == 0:
            return self.X[0]
        if k >= len(ts):
            return self.X[-1]
        th = (t - ts[k - 1]) / (ts[k] - ts[k - 1])
        return np.ascontiguousarray((1.0 - th) * self.X[k - 1] + th * self.X[k])


def _self_field(p: RieszParams, X: np.ndarray, w: np.ndarray,
                tree_params: TreeParams | None) -> np.ndarray:
    out = np.empty_like(X)
    if tree_params is None:
        excl = np.arange(len(X))
        field_direct_k(p.alpha, p.lam, p.eps2, X, w, X, excl, out)
    else:
        # softened kernel vanishes at zero separation, so no exclusion needed
        out = field_tree(tree_params, p, X, w, X)
    return out


def step(p: RieszParams, state: FlowState, dt: float, weights: np.ndarray,
         tree_params: TreeParams | None = None) -> FlowState:
    """One velocity-Verlet step of the self-consistent system.

    Time-reversible up to round-off: step(+dt) followed by step(-dt)
    returns the input state.
    """
    if dt == 0.0:
        return state
    X = np.ascontiguousarray(state.X, dtype=float)
    V = np.ascontiguousarray(state.V, dtype=float)
    w = np.ascontiguousarray(weights, dtype=float)
    acc = _self_field(p, X, w, tree_params)
    Vh = V + 0.5 * dt * acc
    Xn = X + dt * Vh
    accn = _self_field(p, Xn, w, tree_params)
    Vn = Vh + 0.5 * dt * accn
    if not (np.all(np.isfinite(Xn)) and np.all(np.isfinite(Vn))):
        raise FloatingPointError("non-finite state after step")
    return FlowState(state.t + dt, Xn, Vn)


def evolve(ens, schedule: TimeSchedule, p: RieszParams,
           tree_params: TreeParams | None = None,
           max_dv: float | None = None,
           metadata: dict | None = None) -> FlowHistory:
    """Integrate the ensemble to t_final, storing snapshots.

    Preconditions: the initial field must be weak enough that one time
    unit of acceleration stays well below the ensemble's velocity spread
    (small-data regime).  Aborts if any particle's velocity drifts more
    than ``max_dv`` from its initial value.
    """
    X = np.array(ens.x, dtype=float)
    V = np.array(ens.v, dtype=float)
    w = np.ascontiguousarray(ens.w, dtype=float)
    V0 = V.copy()
    n = len(w)

    acc = _self_field(p, X, w, tree_params)
    sup_e0 = float(np.linalg.norm(acc, axis=1).max()) if n else 0.0
    v_spread = float(np.std(V)) if n else 0.0
    if v_spread > 0.0 and sup_e0 > 0.2 * v_spread:
        raise ValueError(
            f"initial field too strong for the small-data regime: "
            f"max|E(0)| = {sup_e0:.3e} vs velocity spread {v_spread:.3e}")

    snap_ts, is_comp = schedule.snapshot_times()
    step_ts = np.unique(np.round(np.concatenate([schedule.step_times(schedule.t_final),
                                                 snap_ts]), 12))
    K = len(snap_ts)
    out_X = np.empty((K, n, 3))
    out_V = np.empty((K, n, 3))
    j = 0
    if snap_ts[0] == 0.0:
        out_X[0] = X
        out_V[0] = V
        j = 1
    for k in range(len(step_ts) - 1):
        dt = step_ts[k + 1] - step_ts[k]
        V += 0.5 * dt * acc
        X += dt * V
        acc = _self_field(p, X, w, tree_params)
        V += 0.5 * dt * acc
        if j < K and abs(step_ts[k + 1] - snap_ts[j]) <= 1e-9 * max(1.0, snap_ts[j]):
            if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
                raise FloatingPointError(f"non-finite state at t={step_ts[k+1]}")
            if max_dv is not None and n:
                drift = float(np.linalg.norm(V - V0, axis=1).max())
                if drift > max_dv:
                    raise RuntimeError(
                        f"velocity drift {drift:.3e} exceeds max_dv={max_dv:.3e} "
                        f"at t={step_ts[k+1]:.3f}: left the small-data regime")
            out_X[j] = X
            out_V[j] = V
            j += 1
    if j != K:
        raise RuntimeError("internal error: snapshot grid not fully visited")
    return FlowHistory(times=snap_ts, X=out_X, V=out_V, is_companion=is_comp,
                       weights=w, params=p, schedule=schedule,
                       metadata=dict(metadata or {}))


def trace_points(h: FlowHistory, t_from: float, t_to: float, pts: np.ndarray,
                 dt_factor: float = 1.0,
                 tree_params: TreeParams | None = None) -> np.ndarray:
    """Integrate phase points (M, 6) from t_from to t_to (either direction)
    through the field reconstructed from the stored history."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    hi = max(t_from, t_to)
    lo = min(t_from, t_to)
    if hi > h.t_final * (1 + 1e-12) + 1e-9:
        raise ValueError(f"trace beyond stored history: {hi} > {h.t_final}")
    sched = replace(h.schedule, dt_base=h.schedule.dt_base * dt_factor)
    grid = sched.step_times(hi)
    grid = np.unique(np.concatenate([grid[(grid >= lo) & (grid <= hi)], [lo, hi]]))
    steps = grid[::-1] if t_from > t_to else grid
    X = np.ascontiguousarray(pts[:, :3].copy())
    V = pts[:, 3:].copy()
    w = h.weights
    p = h.params
    acc = np.empty_like(X)
    noex = np.full(len(pts), -1, dtype=np.int64)

    def fld(t, probes, out):
        src = h.positions_at(t)
        if tree_params is None:
            field_direct_k(p.alpha, p.lam, p.eps2, src, w, probes, noex, out)
        else:
            out[:] = field_tree(tree_params, p, src, w, probes)

    fld(steps[0], X, acc)
    for k in range(len(steps) - 1):
        dt = steps[k + 1] - steps[k]
        V += 0.5 * dt * acc
        X += dt * V
        fld(steps[k + 1], X, acc)
        V += 0.5 * dt * acc
    return np.concatenate([X, V], axis=1)


def backward_trace(h: FlowHistory, t: float, point, dt_factor: float = 1.0,
                   tree_params: TreeParams | None = None) -> np.ndarray:
    """Preimage at time 0 of phase point(s) given at time t."""
    pts = np.asarray(point, dtype=float)
    single = pts.ndim == 1
    out = trace_points(h, t, 0.0, np.atleast_2d(pts), dt_factor, tree_params)
    return out[0] if single else out


def liouville_check(h: FlowHistory, t: float, seed, delta: float = 1e-4,
                    dt_factor: float = 1.0) -> float:
    """|det - 1| of the finite-difference 6x6 Jacobian of the time-t flow
    map around the seed (phase-volume preservation check)."""
    seed = np.asarray(seed, dtype=float).ravel()
    pts = np.tile(seed, (12, 1))
    for k in range(6):
        pts[2 * k, k] += delta
        pts[2 * k + 1, k] -= delta
    out = trace_points(h, 0.0, t, pts, dt_factor)
    jac = np.empty((6, 6))
    for k in range(6):
        jac[:, k] = (out[2 * k] - out[2 * k + 1]) / (2.0 * delta)
    return abs(float(np.linalg.det(jac)) - 1.0)


def total_energy(p: RieszParams, X: np.ndarray, V: np.ndarray, w: np.ndarray) -> float:
    """Kinetic plus pairwise interaction energy of the ensemble."""
    X = np.ascontiguousarray(X, dtype=float)
    w = np.ascontiguousarray(w, dtype=float)
    kin = 0.5 * float(np.sum(w * np.sum(np.asarray(V) ** 2, axis=1)))
    pot = float(pair_potential_k(p.alpha, p.lam, p.eps2, X, w))
    return kin + pot


def write_history_bin(h: FlowHistory, path) -> None:
    """Binary snapshot record: magic, counts, times, companion flags,
    then per-snapshot positions and velocities (float64, C order)."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<qq", len(h.times), h.n_particles))
        f.write(np.ascontiguousarray(h.times, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(h.is_companion, dtype="u1").tobytes())
        f.write(np.ascontiguousarray(h.X, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(h.V, dtype="<f8").tobytes())


def read_history_bin(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times, X, V, is_companion) from a history binary."""
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a history binary")
        k, n = struct.unpack("<qq", f.read(16))
        times = np.frombuffer(f.read(8 * k), dtype="<f8").copy()
        comp = np.frombuffer(f.read(k), dtype="u1").astype(bool)
        X = np.frombuffer(f.read(8 * k * n * 3), dtype="<f8").reshape(k, n, 3).copy()
        V = np.frombuffer(f.read(8 * k * n * 3), dtype="<f8").reshape(k, n, 3).copy()
    return times, X, V, comp


def write_history_csv(h: FlowHistory, path, config_hash: str = "") -> None:
    """Snapshot record as CSV: one row per particle per snapshot."""
    fmt = "%.17g"
    with open(path, "w", newline="\n") as f:
        if config_hash:
            f.write(f"# config_hash={config_hash}\n")
        f.write("snap,t,x1,x2,x3,v1,v2,v3\n")
        for k, t in enumerate(h.times):
            tstr = fmt % t
            for i in range(h.n_particles):
                row = np.concatenate([h.X[k, i], h.V[k, i]])
                f.write(f"{k},{tstr}," + ",".join(fmt % val for val in row) + "\n")


def read_history_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (times, X, V) from a history CSV (companion flags are not
    stored in this format)."""
    with open(path) as f:
        lines = [ln for ln in f if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("snap,"):
        raise ValueError("history CSV must start with the snap,t,... header")
    import io as _io
    data = np.loadtxt(_io.StringIO("".join(lines[1:])), delimiter=",", ndmin=2)
    snaps = data[:, 0].astype(int)
    k = snaps.max() + 1
    n = int(len(data) / k)
    times = np.empty(k)
    X = np.empty((k, n, 3))
    V = np.empty((k, n, 3))
    for s in range(k):
        rows = data[snaps == s]
        times[s] = rows[0, 1]
        X[s] = rows[:, 2:5]
        V[s] = rows[:, 5:8]
    return times, X, V
