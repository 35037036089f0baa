"""Electrical network model: admittances, state mapping, power flow.

Branches are stored as an asymmetric Pi equivalent (series admittance plus
a possibly different shunt at each end). An off-nominal tap ratio tau folds
into that form exactly: series y/tau, from-end shunt (y + jb/2)/tau^2 -
y/tau, to-end shunt (y + jb/2) - y/tau. The resulting bus admittance matrix
stays symmetric, which is what the measurement model assumes; phase-shifting
transformers would break the symmetry and are rejected.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import BoxSet
from ..errors import CaseParseError, InvalidArgumentError, PowerFlowError, UnsupportedFeatureError
from . import matpower as mp
from .matpower import MatpowerCase

PQ_BUS, PV_BUS, SLACK_BUS = 1, 2, 3


@dataclass(frozen=True)
class Branch:
    """One line or transformer between internal bus indices (0-based)."""

    from_bus: int
    to_bus: int
    y_series: complex
    shunt_from: complex
    shunt_to: complex


@dataclass(frozen=True, eq=False)
class GridModel:
    name: str
    n_buses: int
    branches: tuple[Branch, ...]
    slack_bus: int
    bus_types: np.ndarray
    loads: np.ndarray        # complex Pd + jQd, per unit
    bus_shunts: np.ndarray   # complex Gs + jBs, per unit
    gen_v_setpoint: np.ndarray   # nan where no generator
    gen_p: np.ndarray        # per-unit active injection from generators
    ybus: np.ndarray = field(repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.n_buses < 2:
            raise InvalidArgumentError("a grid needs at least 2 buses")
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if not 0 <= end < self.n_buses:
                    raise InvalidArgumentError(f"branch endpoint {end} out of range")
        if not 0 <= self.slack_bus < self.n_buses:
            raise InvalidArgumentError("slack bus out of range")
        asym = float(np.max(np.abs(self.ybus - self.ybus.T))) if self.ybus.size else 0.0
        if asym > 1e-9:
            raise InvalidArgumentError("assembled admittance matrix is not symmetric")

    def __eq__(self, other):
        if not isinstance(other, GridModel):
            return NotImplemented
        return (
            self.name == other.name
            and self.n_buses == other.n_buses
            and self.branches == other.branches
            and self.slack_bus == other.slack_bus
            and np.array_equal(self.bus_types, other.bus_types)
            and np.array_equal(self.loads, other.loads)
            and np.array_equal(self.bus_shunts, other.bus_shunts)
            and np.array_equal(self.gen_v_setpoint, other.gen_v_setpoint, equal_nan=True)
            and np.array_equal(self.gen_p, other.gen_p)
            and np.array_equal(self.ybus, other.ybus)
        )

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    @property
    def n_unknowns(self) -> int:
        return 2 * self.n_buses - 1

    def cache_lookup(self, key):
        return self._cache.get(key)

    def cache_store(self, key, value, cap: int = 64):
        if len(self._cache) >= cap:
            # drop the oldest half; insertion order is iteration order
            for old in list(self._cache.keys())[: cap // 2]:
                del self._cache[old]
        self._cache[key] = value


def build_grid_model(case: MatpowerCase) -> GridModel:
    bus_ids = case.bus[:, mp.BUS_I].astype(int)
    if len(set(bus_ids.tolist())) != len(bus_ids):
        raise CaseParseError("duplicate bus ids in bus table")
    index_of = {int(b): i for i, b in enumerate(bus_ids)}
    n = len(bus_ids)

    types = case.bus[:, mp.BUS_TYPE].astype(int)
    slack_rows = np.flatnonzero(types == SLACK_BUS)
    if slack_rows.size != 1:
        raise CaseParseError(f"expected exactly one slack bus, found {slack_rows.size}")
    slack = int(slack_rows[0])

    loads = (case.bus[:, mp.BUS_PD] + 1j * case.bus[:, mp.BUS_QD]) / case.base_mva
    shunts = (case.bus[:, mp.BUS_GS] + 1j * case.bus[:, mp.BUS_BS]) / case.base_mva

    gen_v = np.full(n, np.nan)
    gen_p = np.zeros(n)
    for row in case.gen:
        if row.shape[0] > mp.GEN_STATUS and row[mp.GEN_STATUS] <= 0:
            continue
        b = int(row[mp.GEN_BUS])
        if b not in index_of:
            raise CaseParseError(f"generator references unknown bus {b}")
        i = index_of[b]
        gen_v[i] = row[mp.GEN_VG]
        gen_p[i] += row[mp.GEN_PG] / case.base_mva

    branches = []
    ybus = np.zeros((n, n), dtype=complex)
    for row_no, row in enumerate(case.branch):
        if row.shape[0] > mp.BR_STATUS and row[mp.BR_STATUS] == 0:
            continue
        fb, tb = int(row[mp.BR_F]), int(row[mp.BR_T])
        if fb not in index_of or tb not in index_of:
            raise CaseParseError(f"branch row {row_no + 1} references unknown bus")
        f, t = index_of[fb], index_of[tb]
        r, x, b_chg = row[mp.BR_R], row[mp.BR_X], row[mp.BR_B]
        shift = row[mp.BR_SHIFT] if row.shape[0] > mp.BR_SHIFT else 0.0
        if shift != 0.0:
            raise UnsupportedFeatureError(
                f"branch row {row_no + 1}: phase-shifting transformers are not supported"
            )
        if r == 0.0 and x == 0.0:
            raise CaseParseError(f"branch row {row_no + 1} has zero impedance")
        tau = row[mp.BR_TAP] if row.shape[0] > mp.BR_TAP else 0.0
        if tau == 0.0:
            tau = 1.0
        ys = 1.0 / (r + 1j * x)
        y_eff = ys / tau
        total = ys + 0.5j * b_chg
        shunt_f = total / tau**2 - y_eff
        shunt_t = total - y_eff
        branches.append(Branch(f, t, y_eff, shunt_f, shunt_t))
        ybus[f, f] += y_eff + shunt_f
        ybus[t, t] += y_eff + shunt_t
        ybus[f, t] -= y_eff
        ybus[t, f] -= y_eff
    ybus[np.arange(n), np.arange(n)] += shunts

    return GridModel(
        name=case.name, n_buses=n, branches=tuple(branches), slack_bus=slack,
        bus_types=types, loads=loads, bus_shunts=shunts,
        gen_v_setpoint=gen_v, gen_p=gen_p, ybus=ybus,
    )


def parse_matpower_case(text: str) -> GridModel:
    """Parse case text straight into the electrical model."""
    return build_grid_model(mp.parse_matpower_text(text))


@dataclass(frozen=True)
class PowerState:
    """Bus voltage phasors: angles in radians, magnitudes per unit."""

    theta: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if theta.ndim != 1 or theta.shape != v.shape:
            raise InvalidArgumentError("theta and v must be 1-D of equal length")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(v))):
            raise InvalidArgumentError("state entries must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "v", v)

    @property
    def n_buses(self) -> int:
        return self.theta.size

    def complex_voltages(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


def state_to_vector(state: PowerState, slack_bus: int) -> np.ndarray:
    """Unknown vector: angles of all non-slack buses, then all magnitudes."""
    keep = np.arange(state.n_buses) != slack_bus
    return np.concatenate([state.theta[keep], state.v])


def vector_to_state(x: np.ndarray, n_buses: int, slack_bus: int) -> PowerState:
    x = np.asarray(x, dtype=float)
    if x.size != 2 * n_buses - 1:
        raise InvalidArgumentError(f"expected {2 * n_buses - 1} unknowns, got {x.size}")
    theta = np.zeros(n_buses)
    keep = np.arange(n_buses) != slack_bus
    theta[keep] = x[: n_buses - 1]
    return PowerState(theta=theta, v=x[n_buses - 1 :].copy())


def make_box(n_buses: int, theta_max: float = np.pi / 2, v_max: float = 1.5) -> BoxSet:
    """Feasible set for the unknown vector: |angle| <= theta_max, 0 <= V <= v_max."""
    lower = np.concatenate([np.full(n_buses - 1, -theta_max), np.zeros(n_buses)])
    upper = np.concatenate([np.full(n_buses - 1, theta_max), np.full(n_buses, v_max)])
    return BoxSet(lower=lower, upper=upper)


def flat_start_vector(grid: GridModel) -> np.ndarray:
    """All angles zero, all magnitudes one: the conventional initializer."""
    return np.concatenate([np.zeros(grid.n_buses - 1), np.ones(grid.n_buses)])


def complex_injection_derivatives(
    ybus: np.ndarray, v_complex: np.ndarray, v_unit: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """d(complex bus power)/d(angle), d(.)/d(magnitude) as dense matrices.

    v_unit carries the angle phasors e^{j theta}. Callers that know the
    polar state should pass them so the derivatives stay defined when a
    magnitude sits at the lower box edge V = 0 (where v_complex loses the
    angle information). Without v_unit they are recovered from v_complex,
    which requires strictly positive magnitudes.
    """
    ibus = ybus @ v_complex
    diag_v = np.diag(v_complex)
    diag_i = np.diag(ibus)
    if v_unit is None:
        vm = np.abs(v_complex)
        if np.any(vm == 0.0):
            raise InvalidArgumentError(
                "zero voltage magnitude: pass v_unit to keep derivatives defined"
            )
        v_unit = v_complex / vm
    diag_norm = np.diag(v_unit)
    ds_dva = 1j * diag_v @ np.conj(diag_i - ybus @ diag_v)
    ds_dvm = diag_v @ np.conj(ybus @ diag_norm) + np.conj(diag_i) @ diag_norm
    return ds_dva, ds_dvm


def newton_power_flow(
    grid: GridModel, tol: float = 1e-10, max_iter: int = 30
) -> PowerState:
    """Solve the conventional power flow for the case's specified loads.

    PV buses hold the generator voltage setpoint and active injection; the
    slack bus holds its setpoint voltage at angle zero. Converges on the
    infinity norm of the power mismatch.
    """
    n = grid.n_buses
    types = grid.bus_types
    pv = np.flatnonzero(types == PV_BUS)
    pq = np.flatnonzero(types == PQ_BUS)
    pvpq = np.concatenate([pv, pq])

    vm = np.ones(n)
    has_gen = ~np.isnan(grid.gen_v_setpoint)
    vm[has_gen] = grid.gen_v_setpoint[has_gen]
    va = np.zeros(n)
    s_spec = grid.gen_p - grid.loads.real - 1j * grid.loads.imag

    for _ in range(max_iter):
        v_c = vm * np.exp(1j * va)
        s_calc = v_c * np.conj(grid.ybus @ v_c)
        mismatch = s_calc - s_spec
        f_vec = np.concatenate([mismatch[pvpq].real, mismatch[pq].imag])
        if f_vec.size == 0:
            return PowerState(theta=va, v=vm)
        if float(np.max(np.abs(f_vec))) <= tol:
            return PowerState(theta=va, v=vm)
        ds_dva, ds_dvm = complex_injection_derivatives(grid.ybus, v_c)
        j11 = ds_dva[np.ix_(pvpq, pvpq)].real
        j12 = ds_dvm[np.ix_(pvpq, pq)].real
        j21 = ds_dva[np.ix_(pq, pvpq)].imag
        j22 = ds_dvm[np.ix_(pq, pq)].imag
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, f_vec)
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError(f"power-flow Jacobian is singular: {exc}")
        va[pvpq] -= dx[: pvpq.size]
        vm[pq] -= dx[pvpq.size :]
    raise PowerFlowError(f"power flow did not converge in {max_iter} iterations")


def save_true_state(path: str | Path, state: PowerState) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bus", "theta", "v"])
        for i in range(state.n_buses):
            writer.writerow([i + 1, repr(float(state.theta[i])), repr(float(state.v[i]))])


def load_true_state(path: str | Path, n_buses: int) -> PowerState:
    """Read a (bus, theta, V) table; angles are radians, 1-based bus ids."""
    theta = np.full(n_buses, np.nan)
    v = np.full(n_buses, np.nan)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    for row in rows:
        if not row or row[0].strip().lower() == "bus":
            continue
        if len(row) < 3:
            raise InvalidArgumentError(f"true-state row needs 3 fields: {row!r}")
        idx = int(float(row[0])) - 1
        if not 0 <= idx < n_buses:
            raise InvalidArgumentError(f"true-state bus id {row[0]} out of range")
        theta[idx] = float(row[1])
        v[idx] = float(row[2])
    if np.any(np.isnan(theta)) or np.any(np.isnan(v)):
        raise InvalidArgumentError("true-state file does not cover every bus")
    return PowerState(theta=theta, v=v)
