"""Gossiped Gauss-Newton updates and the first-order diffusion baseline.

Per update every agent forms its local info pair (h = G_i^T g_i,
H = G_i^T G_i), the network runs a fixed number of gossip exchanges on the
stacked pairs, and each agent then takes a projected Gauss-Newton step using
its own mixed surrogate:

    d_i = (H_i + ridge I)^-1 h_i,     x_i <- P[x_i - alpha d_i].

Because every exchange matrix is doubly stochastic, the network mean of the
info pairs is conserved, so with enough exchanges each surrogate approaches
the average of the exact normal-equation terms and the update approaches the
centralized one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoxSet, SiteModel, exact_descent, project, solve_normal
from .errors import InvalidArgumentError, SingularSystemError
from .gossip import (
    GossipConfig,
    Topology,
    WeightMatrix,
    build_cse_weights,
    gossip_round,
    sample_ure_round,
)


@dataclass(frozen=True)
class InfoVector:
    """Gossip payload of one agent: vector term h and matrix term H.

    On the wire this is the concatenation [h, vec(H)] of length
    N_u*(N_u+1); H is kept symmetric (mixing preserves symmetry, the
    constructor re-symmetrizes to stop rounding drift).
    """

    h: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h, dtype=float)
        hm = np.asarray(self.H, dtype=float)
        if hm.shape != (h.size, h.size):
            raise InvalidArgumentError("info matrix shape does not match vector length")
        scale = max(1.0, float(np.max(np.abs(hm)))) if hm.size else 1.0
        if float(np.max(np.abs(hm - hm.T))) > 1e-12 * scale:
            raise InvalidArgumentError("info matrix is not symmetric")
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "H", (hm + hm.T) / 2.0)

    @property
    def n_unknowns(self) -> int:
        return self.h.size

    def to_payload(self) -> np.ndarray:
        return np.concatenate([self.h, self.H.reshape(-1, order="F")])

    @staticmethod
    def from_payload(payload: np.ndarray, n_unknowns: int) -> "InfoVector":
        payload = np.asarray(payload, dtype=float)
        if payload.size != n_unknowns * (n_unknowns + 1):
            raise InvalidArgumentError("payload length is not N_u*(N_u+1)")
        h = payload[:n_unknowns]
        hm = payload[n_unknowns:].reshape((n_unknowns, n_unknowns), order="F")
        return InfoVector(h=h, H=hm)


@dataclass
class AgentState:
    """Mutable per-agent record: iterate, current surrogate, last step."""

    agent_id: int
    x: np.ndarray
    info: InfoVector | None = None
    last_descent: np.ndarray | None = None


@dataclass(frozen=True)
class ExchangeSchedule:
    """Number of gossip exchanges per update.

    kind 'constant' always runs `base` exchanges; 'incrementing' runs
    base + k at update k (the schedule under which the accumulated gossip
    error admits a finite geometric sum).
    """

    kind: str = "constant"
    base: int = 3

    def __post_init__(self):
        if self.kind not in ("constant", "incrementing"):
            raise InvalidArgumentError(f"unknown schedule kind {self.kind!r}")
        if self.base < 1:
            raise InvalidArgumentError("exchange count must be >= 1")

    def exchanges_at(self, update_index: int) -> int:
        if self.kind == "constant":
            return self.base
        return self.base + update_index


@dataclass(frozen=True)
class GgnConfig:
    alpha: float
    schedule: ExchangeSchedule
    max_updates: int
    stop_tol: float
    ridge: float = 1e-8
    track_discrepancy: bool = True

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise InvalidArgumentError("alpha must lie in (0, 1]")
        if self.max_updates < 1:
            raise InvalidArgumentError("max_updates must be >= 1")
        if self.stop_tol <= 0.0:
            raise InvalidArgumentError("stop_tol must be positive")
        if self.ridge < 0.0:
            raise InvalidArgumentError("ridge must be >= 0")


def _start_stack(x0: np.ndarray, n_agents: int, box: BoxSet) -> np.ndarray:
    """Normalize a shared vector or per-agent stack of starts, projected."""
    x0 = np.asarray(x0, dtype=float)
    if x0.ndim == 1:
        x0 = np.tile(x0, (n_agents, 1))
    if x0.ndim != 2 or x0.shape[0] != n_agents:
        raise InvalidArgumentError(f"x0 must be a vector or an ({n_agents}, N_u) stack")
    return np.stack([project(row, box) for row in x0])


def local_init_info(site: SiteModel, x: np.ndarray) -> InfoVector:
    """Initial info pair at the agent's own iterate."""
    jac = np.asarray(site.eval_jacobian(x), dtype=float)
    res = np.asarray(site.eval_residual(x), dtype=float)
    return InfoVector(h=jac.T @ res, H=jac.T @ jac)


def _effective_ridge(hm: np.ndarray, ridge: float) -> float:
    # Scaled by the mean diagonal mass so the regularizer is unit-free.
    if ridge == 0.0:
        return 0.0
    n = hm.shape[0]
    return ridge * float(np.trace(hm)) / max(n, 1)


def surrogate_descent(info: InfoVector, ridge: float, context: str) -> np.ndarray:
    """d = (H + ridge_eff I)^-1 h for one agent's mixed surrogate.

    An exactly zero info pair means no measurement information reached this
    agent in the current update (its own Jacobian vanished and no exchange
    touched it). The surrogate is 0 = 0 d, whose minimum-norm solution is a
    zero step; moving on no information would be arbitrary.
    """
    hm = info.H
    if not np.any(hm) and not np.any(info.h):
        return np.zeros_like(info.h)
    r = _effective_ridge(hm, ridge)
    if r != 0.0:
        hm = hm + r * np.eye(hm.shape[0])
    return solve_normal(hm, info.h, context=context)


def local_update(agent: AgentState, alpha: float, box: BoxSet, ridge: float) -> AgentState:
    """Projected GN step from the agent's post-gossip surrogate."""
    if agent.info is None:
        raise InvalidArgumentError(f"agent {agent.agent_id} has no info vector")
    d = surrogate_descent(agent.info, ridge, context=f"agent {agent.agent_id}")
    x_new = project(agent.x - alpha * d, box)
    return AgentState(agent_id=agent.agent_id, x=x_new, info=agent.info, last_descent=d)


def descent_discrepancy(
    sites: list[SiteModel],
    agents: list[AgentState],
    box: BoxSet,
    ridge: float,
    strict: bool = True,
) -> np.ndarray:
    """Per-agent ||d_i(gossiped) - d_i(exact at x_i)||.

    The exact direction re-solves the full normal equations at that agent's
    own iterate, so the result isolates the gossip-induced error. With
    strict=False a singular full system at some agent's iterate (possible at
    degenerate box corners) yields NaN for that agent instead of raising;
    the run trackers use this so instrumentation cannot kill a run the
    algorithm itself survives.
    """
    out = np.empty(len(agents))
    for idx, agent in enumerate(agents):
        if agent.info is None:
            raise InvalidArgumentError(f"agent {agent.agent_id} has no info vector")
        if not box.contains(agent.x, tol=1e-9):
            raise InvalidArgumentError(f"agent {agent.agent_id} iterate left the box")
        try:
            d_mixed = surrogate_descent(agent.info, ridge, context=f"agent {agent.agent_id}")
            d_exact = exact_descent(sites, agent.x)
        except SingularSystemError:
            if strict:
                raise
            out[idx] = np.nan
            continue
        out[idx] = float(np.linalg.norm(d_mixed - d_exact))
    return out


@dataclass
class GgnTrajectory:
    """Everything a run produced, indexed by update k.

    iterates[k] is the (I x N_u) stack BEFORE update k; iterates[-1] is the
    final stack. gossip_err_vec[k][l] is the stacked deviation norm of the
    h-parts from their conserved mean after l exchanges (index 0 = before
    any exchange); gossip_err_mat likewise for the H-parts in Frobenius
    norm. mean_drift_max certifies conservation: the largest deviation of
    the payload mean from its initial value seen at any exchange.
    """

    alpha: float
    ridge: float
    iterates: np.ndarray
    descents: np.ndarray
    step_norms: np.ndarray
    discrepancies: np.ndarray | None
    exchange_counts: np.ndarray
    gossip_err_vec: list[np.ndarray]
    gossip_err_mat: list[np.ndarray]
    mean_drift_max: float
    eta_observed: float
    union_connected: np.ndarray
    early_stopped: bool

    @property
    def n_updates(self) -> int:
        return self.iterates.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.iterates.shape[1]

    @property
    def cumulative_exchanges(self) -> np.ndarray:
        return np.cumsum(self.exchange_counts)


def _stacked_errors(payloads: np.ndarray, n_u: int) -> tuple[float, float, np.ndarray]:
    """Deviation norms of h and H parts from the across-agent mean."""
    mean = payloads.mean(axis=0)
    dev = payloads - mean
    err_vec = float(np.linalg.norm(dev[:, :n_u]))
    err_mat = float(np.linalg.norm(dev[:, n_u:]))
    return err_vec, err_mat, mean


def ggn_run(
    sites: list[SiteModel],
    box: BoxSet,
    gossip_config: GossipConfig,
    ggn_config: GgnConfig,
    x0: np.ndarray,
    rng: np.random.Generator | int | None = None,
) -> GgnTrajectory:
    """Run the full algorithm: init info, gossip, local updates, repeat.

    x0 is one vector shared by all agents, or an (I, N_u) stack of
    per-agent starts (warm starts between measurement snapshots). Updates
    are bulk-synchronous; the run stops early once every agent's step
    norm is within stop_tol, or after max_updates. URE exchange matrices
    are drawn from `rng` (wake-up, partner, failure, in that order, once
    per exchange).
    """
    n_agents = len(sites)
    if n_agents != gossip_config.n_agents:
        raise InvalidArgumentError(
            f"{n_agents} sites but gossip config for {gossip_config.n_agents} agents"
        )
    x0_stack = _start_stack(x0, n_agents, box)
    n_u = x0_stack.shape[1]
    rng = np.random.default_rng(rng)

    static_weights: WeightMatrix | None = None
    topo_connected = True
    if gossip_config.protocol == "cse":
        static_weights = build_cse_weights(gossip_config.topology, gossip_config.beta)
        topo_connected = gossip_config.topology.is_connected()

    agents = [AgentState(agent_id=i, x=x0_stack[i].copy()) for i in range(n_agents)]
    iterates = [x0_stack.copy()]
    descents = []
    step_norms = []
    discrepancies = [] if ggn_config.track_discrepancy else None
    exchange_counts = []
    gossip_err_vec = []
    gossip_err_mat = []
    union_connected = []
    mean_drift_max = 0.0
    eta_observed = np.inf

    for k in range(ggn_config.max_updates):
        ell_k = ggn_config.schedule.exchanges_at(k)
        payloads = np.stack(
            [local_init_info(site, agent.x).to_payload() for site, agent in zip(sites, agents)]
        )
        ev0, em0, mean0 = _stacked_errors(payloads, n_u)
        err_vec_k = [ev0]
        err_mat_k = [em0]

        used_edges: set[tuple[int, int]] = set()
        for _ in range(ell_k):
            if static_weights is not None:
                weights = static_weights
            else:
                weights = sample_ure_round(gossip_config, rng)
                off = weights.entries - np.diag(np.diag(weights.entries))
                for i, j in np.argwhere(off > 0.0):
                    if i < j:
                        used_edges.add((int(i), int(j)))
            eta_observed = min(eta_observed, weights.eta)
            payloads = gossip_round(payloads, weights)
            ev, em, mean_now = _stacked_errors(payloads, n_u)
            err_vec_k.append(ev)
            err_mat_k.append(em)
            mean_drift_max = max(mean_drift_max, float(np.max(np.abs(mean_now - mean0))))
        if static_weights is not None:
            eta_observed = min(eta_observed, static_weights.eta)
            union_connected.append(topo_connected)
        else:
            union_connected.append(
                Topology(n_agents, frozenset(used_edges)).is_connected()
            )

        for i, agent in enumerate(agents):
            agent.info = InfoVector.from_payload(payloads[i], n_u)

        if discrepancies is not None:
            discrepancies.append(
                descent_discrepancy(sites, agents, box, ggn_config.ridge, strict=False)
            )

        new_agents = [
            local_update(agent, ggn_config.alpha, box, ggn_config.ridge) for agent in agents
        ]
        steps = np.array(
            [float(np.linalg.norm(na.x - a.x)) for na, a in zip(new_agents, agents)]
        )
        agents = new_agents
        iterates.append(np.stack([a.x for a in agents]))
        descents.append(np.stack([a.last_descent for a in agents]))
        step_norms.append(steps)
        exchange_counts.append(ell_k)
        gossip_err_vec.append(np.array(err_vec_k))
        gossip_err_mat.append(np.array(err_mat_k))

        if float(steps.max()) <= ggn_config.stop_tol:
            early = k + 1 < ggn_config.max_updates
            return _finish(
                ggn_config, iterates, descents, step_norms, discrepancies,
                exchange_counts, gossip_err_vec, gossip_err_mat, mean_drift_max,
                eta_observed, union_connected, early,
            )

    return _finish(
        ggn_config, iterates, descents, step_norms, discrepancies, exchange_counts,
        gossip_err_vec, gossip_err_mat, mean_drift_max, eta_observed,
        union_connected, False,
    )


def _finish(
    ggn_config, iterates, descents, step_norms, discrepancies, exchange_counts,
    gossip_err_vec, gossip_err_mat, mean_drift_max, eta_observed, union_connected,
    early_stopped,
) -> GgnTrajectory:
    return GgnTrajectory(
        alpha=ggn_config.alpha,
        ridge=ggn_config.ridge,
        iterates=np.stack(iterates),
        descents=np.stack(descents),
        step_norms=np.stack(step_norms),
        discrepancies=np.stack(discrepancies) if discrepancies is not None else None,
        exchange_counts=np.asarray(exchange_counts, dtype=int),
        gossip_err_vec=gossip_err_vec,
        gossip_err_mat=gossip_err_mat,
        mean_drift_max=mean_drift_max,
        eta_observed=float(eta_observed),
        union_connected=np.asarray(union_connected, dtype=bool),
        early_stopped=early_stopped,
    )


@dataclass
class DiffusionTrajectory:
    """Per-exchange iterate history of the diffusion baseline."""

    iterates: np.ndarray
    step_sizes: np.ndarray
    eta_observed: float

    @property
    def n_exchanges(self) -> int:
        return self.iterates.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.iterates.shape[1]


def diminishing_steps(c: float):
    """Step schedule alpha_l = c / l (l counted from 1)."""

    def schedule(ell: int) -> float:
        return c / ell

    return schedule


def constant_steps(c: float):
    def schedule(ell: int) -> float:
        return c

    return schedule


def diffusion_baseline_run(
    sites: list[SiteModel],
    box: BoxSet,
    gossip_config: GossipConfig,
    step_schedule,
    total_exchanges: int,
    x0: np.ndarray,
    rng: np.random.Generator | int | None = None,
) -> DiffusionTrajectory:
    """First-order baseline: one mixing plus one local gradient step per
    exchange, x_i <- P[sum_j W_ij x_j - alpha_l G_i^T(x_i) g_i(x_i)]."""
    n_agents = len(sites)
    if n_agents != gossip_config.n_agents:
        raise InvalidArgumentError(
            f"{n_agents} sites but gossip config for {gossip_config.n_agents} agents"
        )
    if total_exchanges < 1:
        raise InvalidArgumentError("total_exchanges must be >= 1")
    rng = np.random.default_rng(rng)

    static_weights = None
    if gossip_config.protocol == "cse":
        static_weights = build_cse_weights(gossip_config.topology, gossip_config.beta)

    x = _start_stack(x0, n_agents, box)
    iterates = [x.copy()]
    steps = []
    eta_observed = np.inf
    for ell in range(1, total_exchanges + 1):
        alpha_ell = float(step_schedule(ell))
        if alpha_ell < 0.0:
            raise InvalidArgumentError("step schedule produced a negative step")
        weights = static_weights if static_weights is not None else sample_ure_round(
            gossip_config, rng
        )
        eta_observed = min(eta_observed, weights.eta)
        mixed = weights.entries @ x
        grads = np.stack(
            [
                np.asarray(site.eval_jacobian(x[i]), dtype=float).T
                @ np.asarray(site.eval_residual(x[i]), dtype=float)
                for i, site in enumerate(sites)
            ]
        )
        x = np.clip(mixed - alpha_ell * grads, box.lower, box.upper)
        iterates.append(x.copy())
        steps.append(alpha_ell)

    return DiffusionTrajectory(
        iterates=np.stack(iterates),
        step_sizes=np.asarray(steps),
        eta_observed=float(eta_observed),
    )
