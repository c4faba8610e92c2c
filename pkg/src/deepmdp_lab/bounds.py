"""Executable certificates for the DeepMDP value, representation and bisimulation bounds.

Every function evaluates both sides of one inequality exactly on a finite
instance ``(M, (M-bar, phi), pi-bar)`` and returns a ``Certificate``. Value
functions come from linear solves, bisimulation metrics from the contraction
with its remaining gap added to the left-hand side, so a satisfied
certificate is a statement about the exact quantities.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bisim import BisimResult, PseudometricTable, bisim_metric
from .certificate import CERT_TOL, Certificate, digest
from .latent import (
    LatentModel,
    global_losses,
    lift_policy,
    local_losses,
    policy_constants,
    reward_lipschitz,
    transition_lipschitz,
    value_seminorm,
)
from .mdp_core import (
    FiniteMdp,
    InvalidInputError,
    Policy,
    ValueTable,
    solve_optimal_values,
    solve_policy_values,
    stationary_distribution,
)
from .prob_metrics import MetricKind, dual_seminorm, lipschitz_seminorm

MASS_FLOOR = 1e-6
BISIM_TOL = 1e-12

__all__ = [
    "AssumptionError",
    "Certificate",
    "DeepPolicyConstruction",
    "PolicyNotLipschitzError",
    "certify_bisim_chain",
    "certify_global_value_diff",
    "certify_instance",
    "certify_lipschitz_value",
    "certify_local_value_diff",
    "certify_representation",
    "certify_suboptimality",
    "construct_deep_policy",
    "joined_mdp",
]


class AssumptionError(ValueError):
    """``gamma * K_P < 1`` fails, so the Lipschitz-derived constants are infinite."""


class PolicyNotLipschitzError(ValueError):
    def __init__(self, pair, action, gap, allowed):
        self.pair, self.action = pair, action
        super().__init__(
            f"policy is not K-Lipschitz in the bisimulation metric: states {pair} differ by "
            f"{gap:.3e} on action {action}, allowed {allowed:.3e}"
        )


def _inputs(mdp: FiniteMdp, model: LatentModel, *extra) -> str:
    return digest(mdp.transition, mdp.reward, mdp.discount, model, *extra)


def _lipschitz_constants(model: LatentModel) -> tuple[float, float]:
    dist = model.space.dist
    return reward_lipschitz(model.reward, dist)[0], transition_lipschitz(model.transition, dist)[0]


def _require_assumption(gamma: float, k_p: float, what: str = "K_P") -> None:
    if not gamma * k_p < 1.0:
        raise AssumptionError(f"gamma * {what} = {gamma * k_p:.6g} is not below 1")


def _deep_values(mdp: FiniteMdp, model: LatentModel, policy: Policy) -> tuple[ValueTable, ValueTable]:
    latent = model.as_mdp(mdp.discount)
    return solve_policy_values(mdp, lift_policy(model, policy)), solve_policy_values(latent, policy)


def _k_v(mdp, model, policy, bar: ValueTable, kind: MetricKind, k_v, k_v_mode: str) -> tuple[float, str]:
    if k_v is not None:
        return float(k_v), "supplied"
    if k_v_mode == "measured":
        return value_seminorm(bar, model.space, kind)[0], "measured"
    if k_v_mode == "derived":
        if kind is not MetricKind.WASSERSTEIN:
            raise InvalidInputError("derived K_V comes from the Lipschitz lemma and needs the Wasserstein kind")
        k_r_pi, k_p_pi = policy_constants(model, policy)
        _require_assumption(mdp.discount, k_p_pi, "K_P of the policy")
        return k_r_pi / (1.0 - mdp.discount * k_p_pi), "derived"
    raise InvalidInputError(f"unknown K_V mode {k_v_mode!r}")


def certify_global_value_diff(mdp: FiniteMdp, model: LatentModel, deep_policy: Policy, kind="wasserstein",
                              k_v: float | None = None, k_v_mode: str = "measured") -> Certificate:
    """``max |Q(s, a) - Q-bar(phi(s), a)| <= (L_R + gamma K_V L_P) / (1 - gamma)``."""
    kind = MetricKind.parse(kind)
    gamma = mdp.discount
    real, bar = _deep_values(mdp, model, deep_policy)
    k, how = _k_v(mdp, model, deep_policy, bar, kind, k_v, k_v_mode)
    losses = global_losses(mdp, model, kind)
    gap = np.abs(real.q - bar.q[model.embed])
    s, a = np.unravel_index(np.argmax(gap), gap.shape)
    rhs = (losses.reward_loss + gamma * k * losses.transition_loss) / (1.0 - gamma)
    return Certificate(
        "global_value_diff", kind.value, float(gap[s, a]), float(rhs), (int(s), int(a)),
        _inputs(mdp, model, deep_policy.probs),
        notes=[f"K_V={k:.6g} ({how})", f"L_R={losses.reward_loss:.6g}", f"L_P={losses.transition_loss:.6g}"],
    )


def certify_local_value_diff(mdp: FiniteMdp, model: LatentModel, deep_policy: Policy, kind="wasserstein",
                             k_v: float | None = None, k_v_mode: str = "measured") -> Certificate:
    """``E_xi |Q - Q-bar o phi| <= (L_R^xi + gamma K_V L_P^xi) / (1 - gamma)`` under the lifted policy's xi."""
    kind = MetricKind.parse(kind)
    gamma = mdp.discount
    lifted = lift_policy(model, deep_policy)
    xi = stationary_distribution(mdp, lifted)
    real, bar = _deep_values(mdp, model, deep_policy)
    k, how = _k_v(mdp, model, deep_policy, bar, kind, k_v, k_v_mode)
    losses = local_losses(mdp, model, kind, xi)
    gap = np.abs(real.q - bar.q[model.embed])
    lhs = float(np.sum(xi.state_action_mass * gap))
    rhs = (losses.reward_loss + gamma * k * losses.transition_loss) / (1.0 - gamma)
    return Certificate(
        "local_value_diff", kind.value, lhs, float(rhs), (),
        _inputs(mdp, model, deep_policy.probs),
        notes=[f"K_V={k:.6g} ({how})", f"L_R^xi={losses.reward_loss:.6g}", f"L_P^xi={losses.transition_loss:.6g}",
               f"balance residual {xi.balance_residual:.2e}"],
    )


def _lipschitz_of_values(bar: ValueTable, model: LatentModel, use_q: bool) -> float:
    tables = [bar.q[:, a] for a in range(bar.q.shape[1])] if use_q else [bar.v]
    return max(lipschitz_seminorm(t, model.space.dist)[0] for t in tables)


def certify_representation(mdp: FiniteMdp, model: LatentModel, deep_policy: Policy, kind="wasserstein",
                           mode: str = "global", k_v: float | None = None,
                           k_v_mode: str = "measured") -> Certificate:
    """Representation quality, certified pairwise.

    global: ``|Q(s1, a) - Q(s2, a)| - K d(phi s1, phi s2) <= 2 (L_R + gamma K_V L_P) / (1 - gamma)``.
    local: ``|V(s1) - V(s2)| - K d(phi s1, phi s2) <= (L_R^xi + gamma K_V L_P^xi) / (1 - gamma) * (1/xi(s1) + 1/xi(s2))``
    over states with stationary mass at least ``MASS_FLOOR``.

    ``K`` is the Lipschitz constant of the deep values in the latent metric and
    ``K_V`` the dual seminorm paired with ``kind``; for the Wasserstein kind they
    coincide. Diagonal pairs are included, so the lhs is never negative.
    """
    kind = MetricKind.parse(kind)
    if mode not in ("global", "local"):
        raise InvalidInputError(f"mode must be 'global' or 'local', got {mode!r}")
    gamma = mdp.discount
    real, bar = _deep_values(mdp, model, deep_policy)
    k, how = _k_v(mdp, model, deep_policy, bar, kind, k_v, k_v_mode)
    dphi = model.space.dist[np.ix_(model.embed, model.embed)]
    notes = [f"K_V={k:.6g} ({how})"]
    if mode == "global":
        k_lip = k if kind is MetricKind.WASSERSTEIN and k_v is None and k_v_mode == "measured" \
            else _lipschitz_of_values(bar, model, use_q=True)
        losses = global_losses(mdp, model, kind)
        diff = np.abs(real.q[:, None, :] - real.q[None, :, :]) - k_lip * dphi[:, :, None]
        s1, s2, a = np.unravel_index(np.argmax(diff), diff.shape)
        rhs = 2.0 * (losses.reward_loss + gamma * k * losses.transition_loss) / (1.0 - gamma)
        notes.append(f"Lipschitz K={k_lip:.6g}")
        return Certificate("representation_global", kind.value, float(diff[s1, s2, a]), float(rhs),
                           (int(s1), int(s2), int(a)), _inputs(mdp, model, deep_policy.probs), notes=notes)
    k_lip = k if kind is MetricKind.WASSERSTEIN and k_v is None and k_v_mode == "measured" \
        else _lipschitz_of_values(bar, model, use_q=False)
    xi = stationary_distribution(mdp, lift_policy(model, deep_policy))
    losses = local_losses(mdp, model, kind, xi)
    mass = xi.state_mass
    keep = np.flatnonzero(mass >= MASS_FLOOR)
    excluded = np.flatnonzero(mass < MASS_FLOOR)
    if excluded.size:
        notes.append(f"excluded states below mass {MASS_FLOOR:g}: {excluded.tolist()}")
    if keep.size == 0:
        raise InvalidInputError("no state carries stationary mass above the floor")
    base = (losses.reward_loss + gamma * k * losses.transition_loss) / (1.0 - gamma)
    sub = np.ix_(keep, keep)
    lhs = np.abs(real.v[keep, None] - real.v[None, keep]) - k_lip * dphi[sub]
    rhs = base * (1.0 / mass[keep, None] + 1.0 / mass[None, keep])
    slack = rhs - lhs
    i, j = np.unravel_index(np.argmin(slack), slack.shape)
    notes.append(f"Lipschitz K={k_lip:.6g}")
    return Certificate("representation_local", kind.value, float(lhs[i, j]), float(rhs[i, j]),
                       (int(keep[i]), int(keep[j])), _inputs(mdp, model, deep_policy.probs), notes=notes)


def certify_suboptimality(mdp: FiniteMdp, model: LatentModel, kind="wasserstein") -> Certificate:
    """``max_s V*(s) - V^{pi-bar*}(s)`` against the Lipschitz form (Wasserstein) or the smoothness form.

    For the Wasserstein kind the Lipschitz form
    ``2 L_R / (1 - gamma) + 2 gamma K_R L_P / ((1 - gamma)(1 - gamma K_P))`` is the
    certificate itself and the smoothness form ``2 (L_R + gamma ||V-bar*||_D L_P) / (1 - gamma)``
    is attached as a part; other kinds certify the smoothness form only.
    """
    kind = MetricKind.parse(kind)
    gamma = mdp.discount
    latent = model.as_mdp(gamma)
    bar_star, pi_bar_star = solve_optimal_values(latent)
    lifted = solve_policy_values(mdp, lift_policy(model, pi_bar_star))
    v_star, _ = solve_optimal_values(mdp)
    loss = v_star.v - lifted.v
    s = int(np.argmax(loss))
    lhs = float(loss[s])
    losses = global_losses(mdp, model, kind)
    norm_v = dual_seminorm(bar_star.v, model.space, kind)
    general_rhs = 2.0 * (losses.reward_loss + gamma * norm_v * losses.transition_loss) / (1.0 - gamma)
    ident = _inputs(mdp, model)
    general = Certificate("suboptimality_smooth", kind.value, lhs, float(general_rhs), (s,), ident,
                          notes=[f"||V-bar*||_D={norm_v:.6g}"])
    if kind is not MetricKind.WASSERSTEIN:
        return general
    k_r, k_p = _lipschitz_constants(model)
    _require_assumption(gamma, k_p)
    rhs = 2.0 * losses.reward_loss / (1.0 - gamma) + 2.0 * gamma * k_r * losses.transition_loss / (
        (1.0 - gamma) * (1.0 - gamma * k_p))
    return Certificate("suboptimality", kind.value, lhs, float(rhs), (s,), ident, parts=[general],
                       notes=[f"K_R={k_r:.6g}", f"K_P={k_p:.6g}"])


def _summary(name: str, kind: str, parts: list[Certificate], ident: str, notes=None) -> Certificate:
    """Parent certificate mirroring its tightest part."""
    worst = min(parts, key=lambda c: c.slack)
    return Certificate(name, kind, worst.lhs, worst.rhs, (worst.name,) + tuple(worst.witness), ident,
                       parts=parts, notes=list(notes or []))


def certify_lipschitz_value(model: LatentModel, gamma: float, policy: Policy | None = None,
                            tol: float = CERT_TOL) -> Certificate:
    """Lipschitz-valuedness of latent policies.

    Parts: the optimal policy against ``K_R / (1 - gamma K_P)`` (V and every Q);
    a supplied policy with ``gamma K_P^pi < 1`` whose V is checked against
    ``K_R^pi / (1 - gamma K_P^pi)`` and whose Q tables against
    ``K_R + gamma K_P K_R^pi / (1 - gamma K_P^pi)``; and every deterministic
    constant policy plus the uniform one against ``K_R / (1 - gamma K_P)``.
    """
    model.require_closed("Lipschitz-valued policies")
    latent = model.as_mdp(gamma)
    k_r, k_p = _lipschitz_constants(model)
    _require_assumption(gamma, k_p)
    bound = k_r / (1.0 - gamma * k_p)
    ident = digest(model, gamma, None if policy is None else policy.probs)
    dist = model.space.dist
    parts = []

    def measured(values: ValueTable, use_q: bool = True, use_v: bool = True):
        tables = ([("v", values.v)] if use_v else []) + (
            [(f"q{a}", values.q[:, a]) for a in range(values.q.shape[1])] if use_q else [])
        best, wit = 0.0, ("v",)
        for tag, t in tables:
            k, pair = lipschitz_seminorm(t, dist)
            if k >= best:
                best, wit = k, (tag,) + (pair or ())
        return best, wit

    opt, _ = solve_optimal_values(latent)
    k, wit = measured(opt)
    parts.append(Certificate("lipschitz_value_optimal", "wasserstein", k, bound, wit, ident))

    if policy is not None:
        k_r_pi, k_p_pi = policy_constants(model, policy)
        if gamma * k_p_pi < 1.0:
            vals = solve_policy_values(latent, policy)
            v_bound = k_r_pi / (1.0 - gamma * k_p_pi)
            k, wit = measured(vals, use_q=False)
            parts.append(Certificate("lipschitz_value_policy_v", "wasserstein", k, v_bound, wit, ident,
                                     notes=[f"K_R^pi={k_r_pi:.6g}", f"K_P^pi={k_p_pi:.6g}"]))
            k, wit = measured(vals, use_v=False)
            parts.append(Certificate("lipschitz_value_policy_q", "wasserstein", k, k_r + gamma * k_p * v_bound,
                                     wit, ident))
        else:
            note = f"supplied policy has gamma K_P^pi = {gamma * k_p_pi:.4g} >= 1; claim not applicable"
            parts.append(Certificate("lipschitz_value_policy_v", "wasserstein", 0.0, np.inf, (), ident, notes=[note]))

    n_a = model.n_actions
    consts = [np.eye(n_a)[a] for a in range(n_a)] + [np.full(n_a, 1.0 / n_a)]
    for c, probs in enumerate(consts):
        vals = solve_policy_values(latent, Policy.constant(probs, model.n_latent))
        k, wit = measured(vals)
        label = f"a{c}" if c < n_a else "uniform"
        parts.append(Certificate(f"lipschitz_value_constant_{label}", "wasserstein", k, bound, wit, ident))
    return _summary("lipschitz_value", "wasserstein", parts, ident, [f"K_R={k_r:.6g}", f"K_P={k_p:.6g}"])


def joined_mdp(mdp: FiniteMdp, model: LatentModel) -> FiniteMdp:
    """Disjoint union of M and M-bar; each component moves under its own dynamics.

    States ``0..n-1`` are those of M, ``n + z`` is latent point ``z``.
    """
    n, m, n_a = mdp.n_states, model.n_latent, mdp.n_actions
    if model.n_actions != n_a:
        raise InvalidInputError("M and M-bar must share the action set")
    P = np.zeros((n + m, n_a, n + m))
    P[:n, :, :n] = mdp.transition
    P[n:, :, n:] = model.transition
    R = np.concatenate([mdp.reward, model.reward], axis=0)
    return FiniteMdp(P, R, mdp.discount)


def _upper(res: BisimResult, gamma: float) -> np.ndarray:
    """Upper envelope of the fixed point: the iterate plus its remaining gap off the diagonal."""
    margin = gamma * res.residual / (1.0 - gamma) if gamma > 0 else 0.0
    d = res.metric.d
    return d + margin * (1.0 - np.eye(d.shape[0]))


def certify_bisim_chain(mdp: FiniteMdp, model: LatentModel, tol: float = BISIM_TOL) -> Certificate:
    """Three linked bisimulation bounds (Wasserstein only).

    (a) ``d~_Mbar(z1, z2) <= C d(z1, z2)`` with ``C = (1 - gamma) K_R / (1 - gamma K_P)``;
    (b) ``d~(s, phi(s)) <= L_R + gamma L_P K_R / (1 - gamma K_P)`` in the joined MDP;
    (c) ``d~(s1, s2) - C d(phi s1, phi s2) <= 2 (L_R + gamma L_P K_R / (1 - gamma K_P))``.
    """
    model.require_closed("bisimulation chain")
    gamma = mdp.discount
    k_r, k_p = _lipschitz_constants(model)
    _require_assumption(gamma, k_p)
    C = (1.0 - gamma) * k_r / (1.0 - gamma * k_p)
    losses = global_losses(mdp, model, MetricKind.WASSERSTEIN)
    eps_half = losses.reward_loss + gamma * losses.transition_loss * k_r / (1.0 - gamma * k_p)
    ident = _inputs(mdp, model)
    n = mdp.n_states

    joined = bisim_metric(joined_mdp(mdp, model), tol)
    up = _upper(joined, gamma)
    d_latent = up[n:, n:]
    dz = model.space.dist
    diff_a = d_latent - C * dz
    i, j = np.unravel_index(np.argmax(diff_a), diff_a.shape)
    part_a = Certificate("bisim_latent_lipschitz", "wasserstein", float(d_latent[i, j]), float(C * dz[i, j]),
                         (int(i), int(j)), ident, notes=[f"C={C:.6g}"])
    if diff_a[i, j] <= 0:
        # report the tight pair as a difference so that lhs <= rhs reads directly
        part_a = Certificate("bisim_latent_lipschitz", "wasserstein", float(diff_a[i, j]), 0.0,
                             (int(i), int(j)), ident, notes=[f"C={C:.6g}", "lhs is d~ - C d"])
    cross = up[np.arange(n), n + model.embed]
    s = int(np.argmax(cross))
    part_b = Certificate("bisim_embedding_gap", "wasserstein", float(cross[s]), float(eps_half), (s,), ident,
                         notes=[f"joined iterations {joined.iterations}, residual {joined.residual:.1e}"])
    d_states = up[:n, :n]
    diff_c = d_states - C * dz[np.ix_(model.embed, model.embed)]
    s1, s2 = np.unravel_index(np.argmax(diff_c), diff_c.shape)
    part_c = Certificate("bisim_state_bound", "wasserstein", float(diff_c[s1, s2]), float(2.0 * eps_half),
                         (int(s1), int(s2)), ident)
    parts = [part_a, part_b, part_c]
    return _summary("bisim_chain", "wasserstein", parts, ident,
                    [f"C={C:.6g}", f"K_R={k_r:.6g}", f"K_P={k_p:.6g}", f"eps/2={eps_half:.6g}"])


@dataclass
class DeepPolicyConstruction:
    """Per-action functions ``g[z, a]`` on latent points built from a bisimilar policy."""

    g: np.ndarray
    sup_gap: float
    eps: float
    lipschitz_bound: float  # C K
    lipschitz_measured: float
    nonstochastic_rows: list[int] = field(default_factory=list)
    certificate: Certificate | None = None

    def as_policy(self) -> Policy:
        """Only valid when every row happens to be a distribution."""
        if self.nonstochastic_rows:
            raise InvalidInputError(f"rows {self.nonstochastic_rows} are not probability vectors")
        return Policy(self.g)


def construct_deep_policy(mdp: FiniteMdp, model: LatentModel, bisim_policy: Policy, K: float,
                          dtilde: PseudometricTable | BisimResult | None = None,
                          tol: float = BISIM_TOL) -> DeepPolicyConstruction:
    """Approximate a K-Lipschitz bisimilar policy by CK-Lipschitz functions of the latent point.

    For each action the construction takes the midpoint of the smallest and the
    largest CK-Lipschitz extensions of ``a -> pi~(a|y)`` from the anchors
    ``phi(y)``. Each extension lies within ``K eps`` of ``pi~`` on the states,
    one from above and one from below, so the midpoint is within ``K eps / 2``
    (at most ``eps / 2`` for ``K <= 1``) and stays CK-Lipschitz. Rows are not
    renormalised.
    """
    if K < 0:
        raise InvalidInputError("K must be non-negative")
    model.require_closed("deep policy construction")
    gamma = mdp.discount
    k_r, k_p = _lipschitz_constants(model)
    _require_assumption(gamma, k_p)
    C = (1.0 - gamma) * k_r / (1.0 - gamma * k_p)
    losses = global_losses(mdp, model, MetricKind.WASSERSTEIN)
    eps = 2.0 * (losses.reward_loss + gamma * losses.transition_loss * k_r / (1.0 - gamma * k_p))

    if dtilde is None:
        dtilde = bisim_metric(mdp, tol)
    if isinstance(dtilde, BisimResult):
        d_hi = _upper(dtilde, gamma)
    else:
        d_hi = dtilde.d
    pi = bisim_policy.probs
    if pi.shape != (mdp.n_states, mdp.n_actions):
        raise InvalidInputError("bisimilar policy must be defined on the states of M")
    for a in range(mdp.n_actions):
        gap = np.abs(pi[:, None, a] - pi[None, :, a])
        excess = gap - (K * d_hi + CERT_TOL)
        if np.any(excess > 0):
            i, j = np.unravel_index(np.argmax(excess), excess.shape)
            raise PolicyNotLipschitzError((int(i), int(j)), a, float(gap[i, j]), float(K * d_hi[i, j]))

    ck = C * K
    d_anchor = model.space.dist[:, model.embed]  # latent point x state
    upper = np.min(pi[None, :, :] + ck * d_anchor[:, :, None], axis=1)
    lower = np.max(pi[None, :, :] - ck * d_anchor[:, :, None], axis=1)
    g = 0.5 * (upper + lower)
    sup_gap = float(np.max(np.abs(pi - g[model.embed])))
    k_meas = max(lipschitz_seminorm(g[:, a], model.space.dist)[0] for a in range(mdp.n_actions)) \
        if model.n_latent > 1 else 0.0
    rows = [int(z) for z in np.flatnonzero((np.abs(g.sum(1) - 1.0) > 1e-12) | np.any(g < 0, axis=1))]
    ident = digest(mdp.transition, mdp.reward, gamma, model, pi, K)
    # d~ <= C d + eps on states, so the extensions sit within K eps of pi~; K <= 1 gives eps / 2
    gap_cert = Certificate("deep_policy_gap", "wasserstein", sup_gap, max(K, 1.0) * eps / 2.0, (), ident,
                           notes=[f"K={K:.6g}", f"C={C:.6g}", f"eps={eps:.6g}"])
    lip_cert = Certificate("deep_policy_lipschitz", "wasserstein", k_meas, ck, (), ident)
    cert = _summary("deep_policy_construction", "wasserstein", [gap_cert, lip_cert], ident,
                    [f"non-stochastic rows: {rows}"] if rows else [])
    return DeepPolicyConstruction(g, sup_gap, eps, ck, k_meas, rows, cert)


def certify_instance(mdp: FiniteMdp, model: LatentModel, deep_policy: Policy, kind="wasserstein",
                     which: tuple[str, ...] | None = None) -> list[Certificate]:
    """The certificate battery on one instance. Kind-independent certificates run for Wasserstein only."""
    kind = MetricKind.parse(kind)
    which = which or ("global", "local", "rep_global", "rep_local", "subopt", "lipschitz", "bisim")
    out = []
    if "global" in which:
        out.append(certify_global_value_diff(mdp, model, deep_policy, kind))
    if "local" in which:
        out.append(certify_local_value_diff(mdp, model, deep_policy, kind))
    if "rep_global" in which:
        out.append(certify_representation(mdp, model, deep_policy, kind, "global"))
    if "rep_local" in which:
        out.append(certify_representation(mdp, model, deep_policy, kind, "local"))
    if "subopt" in which:
        out.append(certify_suboptimality(mdp, model, kind))
    if kind is MetricKind.WASSERSTEIN:
        if "lipschitz" in which:
            out.append(certify_lipschitz_value(model, mdp.discount, deep_policy))
        if "bisim" in which:
            out.append(certify_bisim_chain(mdp, model))
    return out
