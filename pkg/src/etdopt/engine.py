"""Fixed-step simulation loop, run configuration, outputs and metrics.

Each tick, in order: evaluate triggers and commit broadcasts, advance
``(y, mu)``, run the observer/controller and the plant, apply any
scheduled perturbation that has come due, and log.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import triggers as tr
from .dynamics import PrimalDualState, lyapunov, mu_field, g_field, step_continuous, step_held
from .errors import ConfigError, ScenarioError
from .graph import Graph, build_augmented, flood_bounds, read_edge_list
from .plant import ObserverState, advance_observer, ladrc_gain_margin
from .problem import (ProblemInstance, kkt_solve, load_problem, normalize_constraints,
                      problem_from_dict, problem_to_dict)
from .scenarios import SCENARIOS, Scenario, apply_perturbation, file_scenario

log = logging.getLogger(__name__)

MODES = ("continuous", "centralized", "decentralized", "every-step")
PLANTS = ("ideal", "uncertain")
FLUSH_EVERY = 100


@dataclass
class RunConfig:
    mode: str = "decentralized"
    plant: str = "ideal"
    dt: float | None = None
    t_final: float | None = None
    eps: float | list = 0.005
    seed: int = 0
    scenario: str | None = "case1"
    problem_path: str | None = None
    graph_path: str | None = None
    safety: float = 0.9
    out: str | None = None
    gain: float | None = None
    normalize_objective: bool = True
    k1: float = 2.0
    k2: float = 1.0
    alpha: float = -10.0
    stride: int | None = None
    perturb: bool = True
    track_lyapunov: bool = False

    def validate(self, require_source: bool = True) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.plant not in PLANTS:
            raise ConfigError(f"plant must be one of {PLANTS}, got {self.plant!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_final is not None and self.dt is not None and not self.t_final > self.dt:
            raise ConfigError("t_final must exceed dt")
        if self.plant == "uncertain" and np.any(np.asarray(self.eps, dtype=float) <= 0):
            raise ConfigError("eps must be positive")
        if not 0 < self.safety < 1:
            raise ConfigError("safety factor must lie in (0, 1)")
        if self.gain is not None and not self.gain > 0:
            raise ConfigError("gain must be positive")
        if self.stride is not None and self.stride < 1:
            raise ConfigError("stride must be at least 1")
        if not require_source:
            return
        if self.scenario is None and not (self.problem_path and self.graph_path):
            raise ConfigError("need a scenario or both a problem and a graph file")
        if self.scenario is not None and self.scenario not in SCENARIOS and self.problem_path is None:
            raise ConfigError(f"unknown scenario {self.scenario!r}")

    def as_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["eps"], np.ndarray):
            d["eps"] = d["eps"].tolist()
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)


@dataclass
class RunMetrics:
    primal_error: float
    relative_primal_error: float
    tracking_error: float
    steady_tracking_error: float
    events: int
    events_per_agent: list
    ticks: int
    min_gap: float
    segment_errors: list
    wall_clock: float
    lyapunov: np.ndarray | None = None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("lyapunov")
        return d


@dataclass
class RunResult:
    config: RunConfig
    metrics: RunMetrics
    events: tr.EventLog
    y: np.ndarray
    mu: np.ndarray
    x: np.ndarray
    y_star: np.ndarray
    mu_star: np.ndarray
    params: tr.TriggerParams
    manifest: dict
    trace: dict = field(default_factory=dict)


@dataclass
class _Phase:
    """Everything that changes when the problem data change."""

    problem: ProblemInstance
    active: np.ndarray
    nbr: tr.NeighborIndex
    neighbors: tuple
    params: tr.TriggerParams
    gamma_sq: np.ndarray
    y_star: np.ndarray
    mu_star: np.ndarray


def load_scenario(cfg: RunConfig) -> Scenario:
    if cfg.problem_path:
        p = load_problem(cfg.problem_path)
        g = read_edge_list(cfg.graph_path, n_vertices=p.n)
        return file_scenario(p, g, cfg.seed)
    return SCENARIOS[cfg.scenario](cfg.seed)


def _neighbor_lists(graph: Graph, C: np.ndarray) -> tuple:
    n, m = C.shape[1], C.shape[0]
    out = []
    for i in range(n):
        out.append(graph.neighbors[i] + tuple(n + int(l) for l in np.flatnonzero(C[:, i])))
    for l in range(m):
        out.append(tuple(int(i) for i in np.flatnonzero(C[l])))
    return tuple(out)


def _build_phase(raw: ProblemInstance, graph: Graph, active: np.ndarray, scale: float,
                 safety: float, strict: bool, y_frozen: np.ndarray) -> _Phase:
    keep = np.flatnonzero(active)
    cs = normalize_constraints(raw.constraints)
    p = raw.with_constraints(cs).scaled(scale)
    sub = p.restrict(keep)
    build_augmented(graph.induced(keep), sub.constraints, strict=strict)
    lo_i = np.array([o.second_deriv_lo for o in sub.objectives])
    hi_i = np.array([o.second_deriv_hi for o in sub.objectives])
    lo, hi, _ = flood_bounds(graph.induced(keep), lo_i, hi_i)
    params = tr.select_params(lo, hi, p.n + p.m, safety)
    sol = kkt_solve(sub)
    y_star = np.array(y_frozen, dtype=float)
    y_star[keep] = sol.y_star
    mu_star = np.zeros(p.m)
    rows = np.flatnonzero(np.any(p.constraints.C[:, keep] != 0, axis=1))
    mu_star[rows] = sol.mu_star
    neighbors = _neighbor_lists(graph, p.constraints.C)
    agent_active = np.concatenate([active, np.ones(p.m, dtype=bool)])
    agent_active[p.n + np.setdiff1d(np.arange(p.m), rows)] = False
    return _Phase(p, agent_active, tr.NeighborIndex(neighbors), neighbors, params,
                  params.gamma ** 2, y_star, mu_star)


class _StateWriter:
    def __init__(self, out: Path, n: int, m: int, with_v: bool):
        self.fh = open(out / "states.csv", "w", newline="", encoding="utf-8")
        self.w = csv.writer(self.fh)
        header = ["t"] + [f"x_{i}" for i in range(1, n + 1)] + [f"y_{i}" for i in range(1, n + 1)]
        header += [f"mu_{l}" for l in range(1, m + 1)] + [f"u_{i}" for i in range(1, n + 1)]
        if with_v:
            header.append("v")
        self.w.writerow(header)
        self.pending = 0

    def row(self, t, x, y, mu, u, v=None):
        vals = [t, *x, *y, *mu, *u] + ([] if v is None else [v])
        self.w.writerow([repr(float(z)) for z in vals])
        self.pending += 1

    def tick(self, s: int):
        if s % FLUSH_EVERY == 0 and self.pending:
            self.fh.flush()
            self.pending = 0

    def close(self):
        self.fh.close()


def resolve_timing(cfg: RunConfig, scen: Scenario, params: tr.TriggerParams):
    gain = cfg.gain if cfg.gain is not None else scen.preset.get("gain", 1.0)
    dt = cfg.dt if cfg.dt is not None else scen.preset.get("dt")
    if dt is None:
        dt = min(1e-3, float(np.min(params.r_min)) / (10.0 * gain))
    t_final = cfg.t_final if cfg.t_final is not None else scen.preset.get("t_final", 20.0)
    if not t_final > dt:
        raise ConfigError("t_final must exceed dt")
    stride = cfg.stride if cfg.stride is not None else scen.preset.get("stride", 1)
    return gain, dt, t_final, stride


def run(cfg: RunConfig, scenario: Scenario | None = None) -> RunResult:
    """Simulate one configuration; writes outputs when ``cfg.out`` is set."""
    cfg.validate(require_source=scenario is None)
    scen = scenario if scenario is not None else load_scenario(cfg)
    raw = scen.problem
    n, m = raw.n, raw.m
    scale = raw.bound_hi if cfg.normalize_objective else 1.0
    active = np.ones(n, dtype=bool)
    x0 = np.asarray(scen.x0, dtype=float)
    ph = _build_phase(raw, scen.graph, active, scale, cfg.safety, scen.strict_compatibility, x0)
    gain, dt, t_final, stride = resolve_timing(cfg, scen, ph.params)
    if cfg.plant == "uncertain" and np.any(np.asarray(cfg.eps) > 0.1):
        log.warning("eps=%s is large; tracking will be loose", cfg.eps)
    ticks = int(round(t_final / dt))
    window = ph.params.r_min / gain

    state = PrimalDualState.initial(x0.copy(), m)
    x = x0.copy()
    u = np.zeros(n)
    bank = scen.plants
    obs = None
    if cfg.plant == "uncertain":
        eps = np.broadcast_to(np.asarray(cfg.eps, dtype=float), (n,)).copy()
        obs = ObserverState(x - state.y, np.zeros(n), eps, cfg.k1, cfg.k2, cfg.alpha)

    schedule = sorted(scen.schedule, key=lambda e: e.time) if cfg.perturb else []
    data = scen.data
    phases = [{"time": 0.0, "params": ph.params.as_dict(),
               "y_star": ph.y_star.tolist(), "mu_star": ph.mu_star.tolist()}]

    events = tr.EventLog()
    n_agents = n + m
    code = {k: i for i, k in enumerate(tr.KINDS)}
    cause = {c: i for i, c in enumerate(tr.CAUSES)}
    kind_of = np.where(np.arange(n_agents) < n, code[tr.STATE], code[tr.MULTIPLIER])

    out = Path(cfg.out) if cfg.out else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer = _StateWriter(out, n, m, cfg.track_lyapunov)

    def v_now():
        return lyapunov(ph.problem, state.y, state.mu, ph.y_star, ph.mu_star)

    v_trace = [v_now()] if cfg.track_lyapunov else None
    if writer:
        writer.row(0.0, x, state.y, state.mu, u, v_trace[0] if v_trace else None)
    keep_trace = {"t": [0.0], "y": [state.y.copy()], "x": [x.copy()]}

    segment_errors = []
    steady = 0.0
    g_held = g_field(ph.problem, state.y_held, state.mu_held)
    r_held = mu_field(ph.problem, state.y_held)
    wall0 = time.perf_counter()
    for s in range(ticks):
        t = s * dt
        p = ph.problem
        # (a) triggers
        if cfg.mode == "decentralized":
            fire, prox = tr.decentralized_fire(state.y, state.mu, state.y_held, state.mu_held,
                                               g_held, r_held, state.last_broadcast, t,
                                               ph.gamma_sq, window, ph.nbr, ph.active)
            if fire.any():
                idx = np.flatnonzero(fire)
                fy, fm = fire[:n], fire[n:]
                state.y_held[fy] = state.y[fy]
                state.mu_held[fm] = state.mu[fm]
                state.last_broadcast[idx] = t
                causes = np.where(prox[idx], cause[tr.PROXIMITY_RULE], cause[tr.ERROR_RULE])
                events.record(t, idx, kind_of[idx], causes)
                g_held = g_field(p, state.y_held, state.mu_held)
                r_held = mu_field(p, state.y_held)
        elif cfg.mode in ("centralized", "every-step"):
            fire_all = cfg.mode == "every-step" or tr.centralized_should_trigger(p, ph.params, state)
            if fire_all:
                idx = np.flatnonzero(ph.active)
                state.y_held[:] = state.y
                state.mu_held[:] = state.mu
                state.last_broadcast[idx] = t
                if cfg.mode == "every-step":
                    events.record(t, idx, kind_of[idx], cause[tr.EVERY_STEP])
                else:
                    events.record(t, idx, code[tr.SYNC], cause[tr.ERROR_RULE])
        y_prev = state.y.copy()
        # (b) optimization layer
        if cfg.mode == "continuous":
            state = step_continuous(p, state, dt, gain)
        else:
            state = step_held(p, state, dt, gain)
        frozen = ~ph.active[:n]
        if frozen.any():
            state.y[frozen] = y_prev[frozen]
            if cfg.mode == "continuous":
                state.y_held[frozen] = y_prev[frozen]
        # (c) observer, controller and plant, driven by values at the tick start
        if obs is not None:
            u = advance_observer(obs, bank.p_known, bank.b_known, x, y_prev, dt)
            x = bank.step(x, u, dt)
        else:
            x = state.y.copy()
        t_next = (s + 1) * dt
        # (d) perturbations snap to the first tick boundary at or after their time
        while schedule and t_next >= schedule[0].time - 1e-9 * dt:
            ev = schedule.pop(0)
            segment_errors.append((t_next, _rel_err(state.y, ph)))
            if not hasattr(data, "active"):
                raise ScenarioError(f"scenario {scen.name!r} cannot apply {ev.kind!r}")
            data = apply_perturbation(data, ev.kind, ev.payload)
            ph = _build_phase(data.problem(), data.graph(), data.active, scale, cfg.safety,
                              scen.strict_compatibility, state.y)
            window = ph.params.r_min / gain
            g_held = g_field(ph.problem, state.y_held, state.mu_held)
            r_held = mu_field(ph.problem, state.y_held)
            phases.append({"time": t_next, "kind": ev.kind, "params": ph.params.as_dict(),
                           "y_star": ph.y_star.tolist(), "mu_star": ph.mu_star.tolist()})
            log.info("t=%.4f applied %s", t_next, ev.kind)
        # (e) logging
        if t_next >= t_final / 2 - 1e-12:
            steady = max(steady, float(np.max(np.abs(x - state.y))))
        if v_trace is not None:
            v_trace.append(v_now())
        if (s + 1) % stride == 0 or s + 1 == ticks:
            if writer:
                writer.row(t_next, x, state.y, state.mu, u, v_trace[-1] if v_trace else None)
            keep_trace["t"].append(t_next)
            keep_trace["y"].append(state.y.copy())
            keep_trace["x"].append(x.copy())
        if writer:
            writer.tick(s + 1)
    wall = time.perf_counter() - wall0
    if writer:
        writer.close()

    err = float(np.linalg.norm((state.y - ph.y_star)[ph.active[:n]]))
    rel = _rel_err(state.y, ph)
    segment_errors.append((ticks * dt, rel))
    counts = events.counts(n_agents)
    min_gap = tr.dwell_time_report(events, n_agents).min_gap_global if len(events) else math.inf
    metrics = RunMetrics(
        primal_error=err, relative_primal_error=rel,
        tracking_error=float(np.max(np.abs(x - state.y))), steady_tracking_error=steady,
        events=int(len(events)), events_per_agent=counts.tolist(), ticks=ticks,
        min_gap=min_gap, segment_errors=segment_errors, wall_clock=wall,
        lyapunov=None if v_trace is None else np.array(v_trace))

    manifest = {
        "config": cfg.as_dict(),
        "scenario": scen.name,
        "seed": cfg.seed,
        "resolved": {"dt": dt, "t_final": t_final, "gain": gain, "stride": stride,
                     "objective_scale": scale, "ticks": ticks},
        "problem": problem_to_dict(raw),
        "graph": {"n_vertices": scen.graph.n_vertices,
                  "edges": [[i + 1, j + 1] for i, j in sorted(scen.graph.edges)]},
        "plants": bank.description,
        "x0": x0.tolist(),
        "schedule": [e.as_dict() for e in scen.schedule] if cfg.perturb else [],
        "phases": phases,
        "observer": _observer_manifest(cfg, bank) if obs is not None else None,
    }
    if out is not None:
        events.write_csv(out / "events.csv")
        write_metrics(metrics, out / "metrics.csv")
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, default=_json_default)
    trace = {k: np.array(v) for k, v in keep_trace.items()}
    return RunResult(cfg, metrics, events, state.y, state.mu, x, ph.y_star, ph.mu_star,
                     ph.params, manifest, trace)


def _observer_manifest(cfg: RunConfig, bank) -> dict:
    margins = [ladrc_gain_margin(float(bank.lipschitz_p[i]), float(bank.rho_b[i]),
                                 float(bank.b_known[i]), cfg.k1, cfg.k2) for i in range(bank.n)]
    return {"eps": cfg.eps, "k1": cfg.k1, "k2": cfg.k2, "alpha": cfg.alpha,
            "gain_margin": margins[0][0], "margin_satisfied": [ok for _, ok in margins]}


def _rel_err(y, ph: _Phase) -> float:
    a = ph.active[: len(y)]
    ref = max(float(np.linalg.norm(ph.y_star[a])), 1e-12)
    return float(np.linalg.norm((y - ph.y_star)[a])) / ref


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_metrics(metrics: RunMetrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in metrics.summary().items():
            w.writerow([k, json.dumps(v, default=_json_default)])


def scenario_from_manifest(doc: dict) -> Scenario:
    """Rebuild the scenario a manifest describes."""
    name = doc["scenario"]
    if name in SCENARIOS:
        return SCENARIOS[name](doc["seed"])
    p = problem_from_dict(doc["problem"])
    g = Graph(doc["graph"]["n_vertices"], [(i - 1, j - 1) for i, j in doc["graph"]["edges"]])
    return file_scenario(p, g, doc["seed"])


def replay(manifest_path, out: str | None = None) -> RunResult:
    with open(manifest_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    cfg = RunConfig.from_dict({**doc["config"], "out": out})
    return run(cfg, scenario_from_manifest(doc))


@dataclass
class CommReport:
    events_a: int
    events_b: int
    error_a: float
    error_b: float
    ratio: float
    tolerance: float

    @property
    def b_cheaper(self) -> bool:
        """``b`` uses strictly fewer broadcasts and still meets the tolerance."""
        return self.events_b < self.events_a and self.error_b <= max(self.tolerance, self.error_a)

    def as_dict(self) -> dict:
        return {**asdict(self), "b_cheaper": self.b_cheaper}


def compare_communication(cfg_a: RunConfig, cfg_b: RunConfig, scenario: Scenario | None = None,
                          tolerance: float = 1e-3) -> CommReport:
    """Run two trigger settings on the same problem and compare their traffic."""
    ra = run(cfg_a, scenario)
    rb = run(cfg_b, scenario)
    ratio = rb.metrics.events / ra.metrics.events if ra.metrics.events else math.inf
    return CommReport(ra.metrics.events, rb.metrics.events, ra.metrics.primal_error,
                      rb.metrics.primal_error, ratio, tolerance)
