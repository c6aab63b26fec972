"""Optimal joint detection and estimation under miss and false-alarm budgets.

The solver works on a :class:`DecisionTable`: a finite set of observation
points, each carrying integration weights under every hypothesis and the
minimal posterior cost of every model. For continuous models the points are
drawn from all hypotheses and weighted with the balance heuristic, so one
frozen table gives common random numbers across every ``u``, ``alpha`` and
``beta`` the solver visits. Discretised models supply exact cell
probabilities instead.

For a fixed candidate cost ``u`` the feasibility program is attacked through
its Lagrangian: each multiplier vector on the simplex induces a deterministic
argmin rule, the rule's worst constraint slack is a primal certificate, and
the dual value bounds the achievable slack from below.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .bayes import SquaredError, attack_free_baseline, optimal_estimates, posterior_costs_at
from .model import ModelSpace, _data, log_marginal_likelihoods, sample_stack
from .numerics import MonteCarloConfig, bisect, empirical_quantile, map_blocks, simplex_grid, substream


class FeasibilityError(RuntimeError):
    """No rule satisfies the error budgets; ``beta_floor`` is the NP miss-rate floor."""

    def __init__(self, message: str, beta_floor: float | None = None):
        super().__init__(message)
        self.beta_floor = beta_floor


class ConfigurationError(ValueError):
    pass


# ---------------------------------------------------------------- types


@dataclass(frozen=True)
class LagrangeVector:
    """Multipliers ``(l_0..l_T, l_md, l_fa)`` on the probability simplex."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, float)
        if v.ndim != 1 or v.size < 4:
            raise ValueError("need T + 3 >= 4 multipliers")
        if np.any(v < -1e-12) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("multipliers must be nonnegative and sum to one")
        object.__setattr__(self, "values", tuple(float(x) for x in np.clip(v, 0.0, None)))

    @property
    def T(self) -> int:
        return len(self.values) - 3

    def array(self) -> np.ndarray:
        return np.asarray(self.values)


def _score_tensor(ell: np.ndarray, f: np.ndarray, cstar: np.ndarray, u: float,
                  eps_t: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Scores for multipliers ``ell`` (L, T+3) at points with likelihoods ``f`` (N, T+1)."""
    T1 = f.shape[1]
    a = f * (cstar - u) / scale
    mix = f[:, 1:] @ eps_t
    b = np.empty_like(f)
    b[:, 0] = mix
    b[:, 1:] = mix[:, None] - f[:, 1:] * eps_t
    c = np.zeros_like(f)
    c[:, 1:] = f[:, :1]
    return (ell[:, None, :T1] * a[None]
            + ell[:, None, T1, None] * b[None]
            + ell[:, None, T1 + 1, None] * c[None])


def lagrangian_scores(model: ModelSpace, ell: LagrangeVector, u: float, Y,
                      mc: MonteCarloConfig | None = None, cost=SquaredError()) -> np.ndarray:
    """Scores ``A_0..A_T`` for a batch (shape ``(T+1,)``) or a stack (``(N, T+1)``)."""
    if ell.T != model.T:
        raise ValueError("multiplier dimension does not match the model")
    d = _data(model, Y)
    single = d.ndim == 2
    stack = d[None] if single else d
    f = np.exp(log_marginal_likelihoods(model, stack))
    cstar = np.stack([optimal_estimates(model, i, stack, cost)[1] for i in range(model.T + 1)], axis=-1)
    A = _score_tensor(ell.array()[None], f, cstar, u, model.attack_weights)[0]
    return A[0] if single else A


class DetectionRule:
    """Deterministic selector of one hypothesis per observation batch."""

    def select(self, model: ModelSpace, Y) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class FixedHypothesis(DetectionRule):
    index: int

    def select(self, model, Y):
        d = _data(model, Y)
        N = 1 if d.ndim == 2 else d.shape[0]
        return np.full(N, self.index, int)


@dataclass(frozen=True)
class Custom(DetectionRule):
    """Argmin of a user score function mapping a data stack to ``(N, T+1)`` scores."""

    score: Callable

    def select(self, model, Y):
        d = _data(model, Y)
        stack = d[None] if d.ndim == 2 else d
        return np.argmin(np.asarray(self.score(stack)), axis=1)


@dataclass(frozen=True)
class LagrangianScore(DetectionRule):
    """Argmin of the Lagrangian scores, ties resolved towards the lowest index."""

    u: float
    ell: LagrangeVector
    cost: object = SquaredError()

    def select(self, model, Y):
        d = _data(model, Y)
        stack = d[None] if d.ndim == 2 else d
        logf = log_marginal_likelihoods(model, stack)
        # a positive per-observation factor leaves the argmin unchanged
        f = np.exp(logf - logf.max(axis=1, keepdims=True))
        cstar = np.stack([optimal_estimates(model, i, stack, self.cost)[1]
                          for i in range(model.T + 1)], axis=-1)
        S = _score_tensor(self.ell.array()[None], f, cstar, self.u, model.attack_weights)[0]
        return np.argmin(S, axis=1)


@dataclass(frozen=True)
class PerformancePoint:
    alpha: float
    beta: float
    P_fa: float
    P_md: float
    J: float
    q: float
    u_star: float
    P_fa_se: float = 0.0
    P_md_se: float = 0.0
    J_se: float = 0.0
    q_se: float = 0.0
    J_i: tuple = ()
    excluded: tuple = ()
    gap: float = 0.0


# ---------------------------------------------------------------- tables


@dataclass
class DecisionTable:
    """Weighted observation points for the solver.

    ``w[k, i]`` integrates functions of the observation against ``f_i``,
    ``cstar[k, i]`` is the minimal posterior cost of model ``i`` at point ``k``.
    ``strata`` records which hypothesis generated each point (``None`` for
    exact cell tables) and is used only for standard errors.
    """

    w: np.ndarray
    cstar: np.ndarray
    eps_t: np.ndarray
    J0: float
    J0_se: float = 0.0
    strata: np.ndarray | None = None
    logf: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.w.shape[1] - 1

    @property
    def scale(self) -> float:
        return self.J0 if self.J0 > 0 else max(float(np.mean(self.cstar)), 1e-12)

    @classmethod
    def from_model(cls, model: ModelSpace, mc: MonteCarloConfig, cost=SquaredError(),
                   J0: tuple[float, float] | None = None) -> "DecisionTable":
        """Stratified draws from every hypothesis with balance-heuristic weights.

        ``mc.samples`` points are split evenly across the ``T + 1`` hypotheses.
        """
        T1 = model.T + 1
        per = max(mc.samples // T1, 1)
        Ys, strata = [], []
        for h in range(T1):
            def draw(b, size, h=h):
                return sample_stack(model, h, substream(mc.seed, 31, h, b), size)[1]
            Ys.extend(map_blocks(draw, per, mc.workers))
            strata.append(np.full(per, h))
        Y = np.concatenate(Ys)
        strata = np.concatenate(strata)
        logf = log_marginal_likelihoods(model, Y)
        cstar = np.stack([optimal_estimates(model, i, Y, cost)[1] for i in range(T1)], axis=-1)
        logq = special.logsumexp(logf, axis=1) - math.log(T1)
        w = np.exp(logf - logq[:, None]) / (per * T1)
        if J0 is None:
            base = attack_free_baseline(model, cost, mc)
            J0 = (base.J0, base.se)
        return cls(w, cstar, model.attack_weights, float(J0[0]), float(J0[1]), strata, logf)

    @classmethod
    def from_bins(cls, model: ModelSpace, edges: Sequence[float], panels: int = 40,
                  order: int = 20) -> "DecisionTable":
        """Exact table for a scalar model whose observation is only the cell index.

        Requires ``n = m = 1`` and families exposing ``cdf``. Cell probabilities
        and cell-conditional posterior variances are integrated over the prior
        on the probability scale.
        """
        if model.n != 1 or model.m != 1:
            raise ConfigurationError("binned tables need n = m = 1")
        edges = np.asarray(edges, float)
        gx, gw = np.polynomial.legendre.leggauss(order)
        # panels graded towards both tails of the prior; the clipped tails hold < 1e-15
        cut = special.ndtr(np.linspace(-8.0, 8.0, panels + 1))
        p = (0.5 * (cut[:-1] + cut[1:])[:, None] + 0.5 * np.diff(cut)[:, None] * gx).ravel()
        pw = (0.5 * np.diff(cut)[:, None] * gw).ravel()
        x = model.prior.ppf(p)
        probs, cst = [], []
        for i in range(model.T + 1):
            fam = model.families(i)[0]
            F = np.stack([fam.cdf(e, x) if np.isfinite(e) else np.full_like(x, float(e > 0)) for e in edges])
            cell = np.clip(np.diff(F, axis=0), 0.0, None)           # (B, G)
            mass = cell @ pw
            m1 = cell @ (pw * x) / mass
            m2 = cell @ (pw * x * x) / mass
            probs.append(mass)
            cst.append(np.maximum(m2 - m1 * m1, 0.0))
        w = np.stack(probs, axis=1)
        cstar = np.stack(cst, axis=1)
        J0 = float(np.sum(w[:, 0] * cstar[:, 0]))
        return cls(w, cstar, model.attack_weights, J0, 0.0, None, np.log(np.maximum(w, 1e-300)))


# ------------------------------------------------------- table evaluation


@dataclass
class _Evaluated:
    E: np.ndarray       # (L, T+1) estimation slacks, unscaled
    mass: np.ndarray    # (L, T+1) selection mass under own hypothesis
    jnum: np.ndarray    # (L, T+1)
    P_md: np.ndarray
    P_fa: np.ndarray


def _evaluate(table: DecisionTable, D: np.ndarray, u: float) -> _Evaluated:
    T1 = table.T + 1
    mass = np.empty((D.shape[0], T1))
    jnum = np.empty_like(mass)
    for i in range(T1):
        sel = (D == i).astype(float)
        mass[:, i] = sel @ table.w[:, i]
        jnum[:, i] = sel @ (table.w[:, i] * table.cstar[:, i])
    tot = table.w.sum(axis=0)
    P_fa = tot[0] - mass[:, 0]
    P_md = (tot[1:] - mass[:, 1:]) @ table.eps_t
    return _Evaluated(jnum - u * mass, mass, jnum, P_md, P_fa)


def _slack(table, ev: _Evaluated, alpha, beta):
    return np.maximum(np.max(ev.E, axis=1) / table.scale,
                      np.maximum(ev.P_md - beta, ev.P_fa - alpha))


@dataclass
class _Search:
    gamma: float = math.inf
    ell: np.ndarray | None = None
    decisions: np.ndarray | None = None
    dual: float = -math.inf
    dual_ell: np.ndarray | None = None
    evaluations: int = 0


def _probe(table, ells, u, alpha, beta, state: _Search, stop_on_sign=False,
           chunk_budget=4_000_000):
    """Evaluate a batch of multipliers, updating the best primal and dual values."""
    N, T1 = table.w.shape
    step = max(1, chunk_budget // (N * T1))
    duals = np.full(len(ells), -np.inf)
    for s in range(0, len(ells), step):
        E = ells[s:s + step]
        S = _score_tensor(E, table.w, table.cstar, u, table.eps_t, table.scale)
        D = np.argmin(S, axis=2)
        duals[s:s + step] = S.min(axis=2).sum(axis=1) - E[:, T1] * beta - E[:, T1 + 1] * alpha
        g = _slack(table, _evaluate(table, D, u), alpha, beta)
        k = int(np.argmin(g))
        if g[k] < state.gamma:
            state.gamma, state.ell, state.decisions = float(g[k]), E[k].copy(), D[k].copy()
        k = s + int(np.argmax(duals[s:s + step]))
        if duals[k] > state.dual:
            state.dual, state.dual_ell = float(duals[k]), ells[k].copy()
        state.evaluations += len(E)
        if stop_on_sign and (state.gamma <= 0 or state.dual > 0):
            break
    return duals


def _refine(table, start, u, alpha, beta, state, stop_on_sign, h0=0.05, h_min=1e-6, max_iter=400):
    """Pairwise-transfer pattern search maximising the dual from ``start``."""
    P = start.size
    pairs = [(a, b) for a in range(P) for b in range(P) if a != b]
    cur = start.copy()
    cur_val = _probe(table, cur[None], u, alpha, beta, state, stop_on_sign)[0]
    h = h0
    for _ in range(max_iter):
        if h < h_min or (stop_on_sign and (state.gamma <= 0 or state.dual > 0)):
            break
        cand = []
        for a, b in pairs:
            t = min(h, cur[b])
            if t <= 0:
                continue
            c = cur.copy()
            c[a] += t
            c[b] -= t
            cand.append(c)
        cand = np.asarray(cand)
        vals = _probe(table, cand, u, alpha, beta, state, stop_on_sign)
        k = int(np.argmax(vals))
        if vals[k] > cur_val + 1e-15:
            cur, cur_val = cand[k], vals[k]
            h *= 1.5
        else:
            h *= 0.5


def _search(table, alpha, beta, u, resolution, stop_on_sign=False, refine=True) -> _Search:
    state = _Search()
    grid = simplex_grid(table.T + 3, resolution)
    duals = _probe(table, grid, u, alpha, beta, state, stop_on_sign)
    if stop_on_sign and (state.gamma <= 0 or state.dual > 0):
        return state
    if refine:
        starts = [grid[int(np.argmax(duals))], state.ell.copy()]
        for s in starts:
            _refine(table, s, u, alpha, beta, state, stop_on_sign, h0=0.5 / (resolution - 1))
            if stop_on_sign and (state.gamma <= 0 or state.dual > 0):
                break
    return state


def _default_resolution(T: int) -> int:
    return 21 if T <= 1 else 11


def _to_rule_ell(table: DecisionTable, ell: np.ndarray) -> LagrangeVector:
    """Undo the internal cost scaling so the rule uses raw posterior costs."""
    T1 = table.T + 1
    v = ell.copy()
    v[:T1] /= table.scale
    return LagrangeVector(tuple(v / v.sum()))


# ------------------------------------------------------------- public ops


@dataclass
class FeasibilityResult:
    gamma: float
    ell: LagrangeVector
    rule: LagrangianScore
    decisions: np.ndarray
    dual: float

    def __iter__(self):
        return iter((self.gamma, self.ell, self.rule))


def feasibility_R(model: ModelSpace | None, alpha: float, beta: float, u: float,
                  grid_resolution: int | None = None, mc: MonteCarloConfig | None = None,
                  table: DecisionTable | None = None, cost=SquaredError(),
                  refine: bool = True) -> FeasibilityResult:
    """Smallest worst-case constraint slack over multiplier-induced rules at cost level ``u``.

    A nonpositive ``gamma`` certifies that every model's conditional cost can
    be held at or below ``u`` while meeting both error budgets.
    """
    if not (0 < alpha <= 1 and 0 < beta <= 1):
        raise ConfigurationError("alpha and beta must lie in (0, 1]")
    if u < 0:
        raise ConfigurationError("u must be nonnegative")
    if table is None:
        table = DecisionTable.from_model(model, mc or MonteCarloConfig(12_000), cost)
    res = grid_resolution or _default_resolution(table.T)
    if res < 2:
        raise ConfigurationError("grid resolution must be at least 2 points per axis")
    st = _search(table, alpha, beta, u, res, refine=refine)
    ell = _to_rule_ell(table, st.ell)
    return FeasibilityResult(st.gamma, ell, LagrangianScore(u, ell, cost), st.decisions, st.dual)


def _np_floor(table: DecisionTable, alpha: float) -> float:
    """Miss rate of the likelihood-ratio test of the attack mixture against ``f_0`` at level ``alpha``."""
    if alpha >= 1:
        return 0.0
    w0 = table.w[:, 0]
    w1 = table.w[:, 1:] @ table.eps_t
    with np.errstate(over="ignore"):
        lr = np.where(w0 > 0, w1 / np.where(w0 > 0, w0, 1.0), np.inf)
    order = np.argsort(-lr, kind="stable")
    c0 = np.cumsum(w0[order])
    c1 = np.cumsum(w1[order])
    k = int(np.searchsorted(c0, alpha, side="right"))
    caught = c1[k - 1] if k > 0 else 0.0
    if k < len(order):
        # randomise on the boundary point to use the remaining budget
        prev0 = c0[k - 1] if k > 0 else 0.0
        frac = (alpha - prev0) / w0[order[k]] if w0[order[k]] > 0 else 0.0
        caught += min(max(frac, 0.0), 1.0) * w1[order[k]]
    return float(min(max(w1.sum() - caught, 0.0), 1.0))


def feasibility_floor(model: ModelSpace | None, alpha: float, mc: MonteCarloConfig | None = None,
                      table: DecisionTable | None = None) -> float:
    """Lower estimate of the smallest achievable miss rate at false-alarm level ``alpha``."""
    if not 0 < alpha <= 1:
        raise ConfigurationError("alpha must lie in (0, 1]")
    if alpha >= 1:
        return 0.0
    if table is None:
        table = DecisionTable.from_model(model, mc or MonteCarloConfig(12_000), J0=(1.0, 0.0))
    return _np_floor(table, alpha)


def _strat_se(table: DecisionTable, contrib: np.ndarray) -> float:
    """Standard error of ``sum(contrib)`` for a stratified-sample table."""
    if table.strata is None:
        return 0.0
    var = 0.0
    for h in np.unique(table.strata):
        v = contrib[table.strata == h]
        if v.size > 1:
            var += v.size * float(np.var(v, ddof=1))
    return math.sqrt(var)


def _point_from(table, D, u, alpha, beta, gap) -> PerformancePoint:
    ev = _evaluate(table, D[None], u)
    T1 = table.T + 1
    mass, jnum = ev.mass[0], ev.jnum[0]
    live = mass > 1e-12
    J_i = np.where(live, jnum / np.where(live, mass, 1.0), 0.0)
    excluded = tuple(int(i) for i in np.flatnonzero(~live))
    k = int(np.argmax(np.where(live, J_i, -np.inf)))
    J = float(J_i[k])
    sel = D == k
    J_se = _strat_se(table, np.where(sel, table.w[:, k] * (table.cstar[:, k] - J), 0.0)) / mass[k]
    fa_se = _strat_se(table, np.where(D != 0, table.w[:, 0], 0.0))
    md = sum(table.eps_t[i - 1] * np.where(D != i, table.w[:, i], 0.0) for i in range(1, T1))
    md_se = _strat_se(table, md)
    q = J / table.J0 if table.J0 > 0 else math.inf
    q_se = q * math.sqrt((J_se / J) ** 2 + (table.J0_se / table.J0) ** 2) if J > 0 and table.J0 > 0 else 0.0
    P_fa = min(max(float(ev.P_fa[0]), 0.0), 1.0)
    P_md = min(max(float(ev.P_md[0]), 0.0), 1.0)
    return PerformancePoint(alpha, beta, P_fa, P_md, J, q, u,
                            fa_se, md_se, J_se, q_se, tuple(float(x) for x in J_i), excluded, gap)


@dataclass
class Solution:
    point: PerformancePoint
    rule: LagrangianScore
    ell: LagrangeVector
    decisions: np.ndarray
    evaluations: int = 0
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.point, self.rule, self.ell))


def solve_P(model: ModelSpace | None, alpha: float, beta: float, mc: MonteCarloConfig | None = None,
            bisect_tol: float | None = None, table: DecisionTable | None = None,
            grid_resolution: int | None = None, cost=SquaredError()) -> Solution:
    """Minimal worst-case conditional estimation cost under both error budgets.

    Bisects ``u`` upward from zero; each probe asks the multiplier search for a
    rule with nonpositive slack. ``bisect_tol`` defaults to ``1e-3`` times the
    attack-free cost.
    """
    if table is None:
        table = DecisionTable.from_model(model, mc or MonteCarloConfig(12_000), cost)
    res = grid_resolution or _default_resolution(table.T)
    tol = bisect_tol if bisect_tol is not None else 1e-3 * table.scale
    floor = _np_floor(table, alpha)
    if beta < floor - 1e-12:
        raise FeasibilityError(f"beta={beta} is below the detection floor {floor:.6g}", floor)

    witnesses = {}
    history = []
    evals = [0]

    def feasible(u):
        st = _search(table, alpha, beta, u, res, stop_on_sign=True)
        evals[0] += st.evaluations
        history.append((u, st.gamma, st.dual))
        if st.gamma <= 0:
            witnesses[u] = st
            return True
        return False

    top = table.cstar.max(axis=1)
    hi = empirical_quantile(top, 0.999)
    for _ in range(8):
        if feasible(hi):
            break
        hi *= 2.0
    else:
        raise FeasibilityError(f"no feasible rule found for alpha={alpha}, beta={beta} "
                               f"(detection floor {floor:.6g})", floor)
    u_star = bisect(feasible, 0.0, hi, tol)
    st = witnesses[u_star]
    ell = _to_rule_ell(table, st.ell)
    point = _point_from(table, st.decisions, u_star, alpha, beta, gap=float(st.gamma - st.dual))
    return Solution(point, LagrangianScore(u_star, ell, cost), ell, st.decisions, evals[0], history)


def trace_performance_region(model: ModelSpace | None, alpha: float, beta_grid: Sequence[float],
                             mc: MonteCarloConfig | None = None, table: DecisionTable | None = None,
                             bisect_tol: float | None = None, grid_resolution: int | None = None,
                             skip_infeasible: bool = False, cost=SquaredError()) -> list[PerformancePoint]:
    """One optimal point per ``beta`` on a shared table (common random numbers)."""
    betas = list(beta_grid)
    if betas != sorted(betas):
        raise ConfigurationError("beta grid must be ascending")
    if table is None:
        table = DecisionTable.from_model(model, mc or MonteCarloConfig(12_000), cost)
    out = []
    for b in betas:
        try:
            out.append(solve_P(model, alpha, b, table=table, bisect_tol=bisect_tol,
                               grid_resolution=grid_resolution, cost=cost).point)
        except FeasibilityError:
            if not skip_infeasible:
                raise
    return out


# -------------------------------------------------------- rule evaluation


@dataclass(frozen=True)
class RuleEvaluation:
    P_md: float
    P_fa: float
    J: float
    J_i: tuple
    P_md_se: float
    P_fa_se: float
    J_i_se: tuple
    excluded: tuple


def evaluate_rule(model: ModelSpace, rule: DetectionRule, estimators: Callable | None = None,
                  mc: MonteCarloConfig | None = None, cost=SquaredError()) -> RuleEvaluation:
    """Monte Carlo error rates and conditional costs of ``rule``.

    ``estimators(i, Y)`` returns the estimate used after deciding ``H_i``;
    by default the model-``i`` optimal estimator. Conditional costs use the
    posterior cost of that estimate (a Rao-Blackwellised integrand).
    """
    mc = mc or MonteCarloConfig(20_000)
    T1 = model.T + 1
    wrong = np.empty(T1)
    wrong_se = np.empty(T1)
    J_i = np.zeros(T1)
    J_se = np.zeros(T1)
    excluded = []
    for h in range(T1):
        def run(b, size, h=h):
            _, Y = sample_stack(model, h, substream(mc.seed, 41, h, b), size)
            D = np.asarray(rule.select(model, Y))
            sel = D == h
            costs = np.full(size, np.nan)
            if sel.any():
                Ys = Y[sel]
                est = (optimal_estimates(model, h, Ys, cost)[0] if estimators is None
                       else np.asarray(estimators(h, Ys), float))
                costs[sel] = posterior_costs_at(model, h, Ys, est, cost)
            return sel, costs
        parts = map_blocks(run, mc.samples, mc.workers)
        sel = np.concatenate([p[0] for p in parts])
        costs = np.concatenate([p[1] for p in parts])
        p_wrong = 1.0 - sel.mean()
        wrong[h] = p_wrong
        wrong_se[h] = math.sqrt(max(p_wrong * (1 - p_wrong), 0.0) / sel.size)
        if sel.any():
            c = costs[sel]
            J_i[h] = float(c.mean())
            J_se[h] = float(c.std(ddof=1) / math.sqrt(c.size)) if c.size > 1 else 0.0
        else:
            excluded.append(h)
    live = [h for h in range(T1) if h not in excluded]
    J = max(J_i[h] for h in live) if live else 0.0
    eps_t = model.attack_weights if model.T else np.zeros(0)
    P_md = float(wrong[1:] @ eps_t)
    P_md_se = float(math.sqrt(np.sum((eps_t * wrong_se[1:]) ** 2)))
    return RuleEvaluation(P_md, float(wrong[0]), float(J), tuple(J_i), P_md_se, float(wrong_se[0]),
                          tuple(J_se), tuple(excluded))
