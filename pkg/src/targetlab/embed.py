"""Rewriting an expectation-minimization control problem as a target problem.

Given dynamics for X controlled by nu and a bounded payoff g, the value
inf E[g(X_T)] equals the least y from which the martingale

    Y = y + int alpha' dW + int int gamma' (jump measure - compensator)

can be driven to Y_T >= g(X_T) almost surely, with alpha and gamma free.
The functions here build that target problem out of a control-form spec,
lift controls into it, and synthesize the replication-spanning control
sets the equality needs (a fixed lattice cannot track the integrands).
"""

from __future__ import annotations

import numpy as np

from .model import Coefficients, ControlGrid, ControlValue, ProblemSpec

__all__ = [
    "embedded_target_spec",
    "lift_control",
    "spanning_grid",
    "ReplicationControls",
]


def embedded_target_spec(base: ProblemSpec):
    """Target-problem spec whose controls are (nu, alpha, gamma).

    u1 concatenates the base control nu (first q entries) with the
    Brownian integrand alpha (next d); u2(e) is the per-process jump
    integrand gamma(e) in R^I.  X ignores (alpha, gamma); Y is the
    compensated martingale they generate.
    """
    q0, d = base.q, base.d
    marks = base.marks
    weights = marks.weights  # (I, M)
    co = base.coefficients

    def nu_part(u: ControlValue):
        return ControlValue(u.u1[:q0], {})

    def mu_X(t, x, u):
        return co.mu_X(t, x, nu_part(u))

    def sigma_X(t, x, u):
        return co.sigma_X(t, x, nu_part(u))

    def beta(t, x, u1, u2e, e):
        return co.beta(t, x, u1[:q0], np.zeros(base.n), e)

    def mu_Y(t, x, y, u):
        # minus the compensator of the jump integrand
        total = 0.0
        for j, e in enumerate(marks.points):
            total += float(u.u2_at(e) @ weights[:, j])
        return -total

    def sigma_Y(t, x, y, u):
        return u.u1[q0 : q0 + d]

    def b(t, x, y, u1, u2e, e):
        return u2e

    coeffs = Coefficients(
        mu_X=mu_X,
        sigma_X=sigma_X,
        beta=beta,
        mu_Y=mu_Y,
        sigma_Y=sigma_Y,
        b=b,
        lipschitz_L=co.lipschitz_L,
        growth_C=co.growth_C,
    )
    return ProblemSpec(
        coefficients=coeffs,
        marks=marks,
        T=base.T,
        g=base.g,
        d=d,
        q=q0 + d,
        n=marks.n_processes,
        g_bound=base.g_bound,
        x_box=base.x_box,
        y_box=base.y_box,
    )


def lift_control(base: ProblemSpec, nu: ControlValue, alpha=None, gamma=None):
    """ControlValue of the embedded problem from (nu, alpha, gamma).

    gamma: (I, M) array of per-process integrands per mark; defaults 0.
    """
    d = base.d
    marks = base.marks
    alpha = np.zeros(d) if alpha is None else np.asarray(alpha, float).reshape(d)
    if gamma is None:
        gamma = np.zeros((marks.n_processes, marks.n_marks))
    gamma = np.asarray(gamma, float).reshape(marks.n_processes, marks.n_marks)
    u1 = np.concatenate([nu.u1, alpha])
    u2 = {float(e): gamma[:, j].copy() for j, e in enumerate(marks.points)}
    return ControlValue(u1, u2)


def lifted_grid(base: ProblemSpec, nu_grid: ControlGrid):
    """The nu grid lifted with alpha = 0, gamma = 0 (X-transitions only)."""
    return ControlGrid(
        tuple(lift_control(base, nu) for nu in nu_grid),
        truncation_radius=nu_grid.truncation_radius,
    )


def spanning_grid(
    base: ProblemSpec,
    embedded: ProblemSpec,
    t,
    x,
    y,
    p,
    phi,
    box,
    counts,
    nu_values,
    s_pad=1.0,
):
    """Controls hitting every lattice point of a boundary-gap search box.

    For each nu and each lattice value r of the mismatch axes, includes a
    control with alpha = sigma_X' p + r (exact mismatch r) and a jump
    integrand large enough that every margin clears the box top.  On the
    embedded problem the attainable set is all of R^d x R, and this grid
    is its honest rendering on the given box.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float).reshape(-1)
    d = base.d
    marks = base.marks
    box = np.asarray(box, dtype=float).reshape(d + 1, 2)
    counts = np.broadcast_to(np.asarray(counts, dtype=int), (d + 1,))
    r_axes = [np.linspace(box[i, 0], box[i, 1], counts[i]) for i in range(d)]
    s_top = box[d, 1]

    values = []
    for nu in nu_values:
        sig = np.atleast_2d(np.asarray(base.coefficients.sigma_X(t, x, nu), float))
        base_alpha = sig.T @ p
        # jump integrand big enough for every mark and process
        gamma = np.zeros((marks.n_processes, marks.n_marks))
        for j, e in enumerate(marks.points):
            beta = np.atleast_2d(
                np.asarray(base.coefficients.beta(t, x, nu.u1, np.zeros(base.n), e), float)
            ).reshape(d, marks.n_processes)
            diffs = phi.shifted_difference(t, x, x[None, :] + beta.T)
            gamma[:, j] = s_top + s_pad + diffs
        import itertools

        for combo in itertools.product(*r_axes):
            alpha = base_alpha + np.asarray(combo)
            values.append(lift_control(base, nu, alpha=alpha, gamma=gamma))
    return ControlGrid(tuple(values), truncation_radius=np.inf)


class ReplicationControls:
    """Per-node synthesized (alpha, gamma) controls for the PDE sweep.

    alpha matches sigma_X' p exactly (zero volatility mismatch) and
    gamma(e) tops each test-function jump by eta_pad plus a few ulps of
    rounding headroom, so membership holds at tolerances (eps, eta)
    whenever eta_pad >= eta.
    """

    def __init__(self, base: ProblemSpec, nu_values, eta_pad=0.0):
        self.base = base
        self.nu_values = tuple(nu_values)
        self.eta_pad = float(eta_pad)

    def controls(self, spec, t, x, p, phi):
        """p is the gradient slot: an array, or a resolver called with the
        lifted control (the sweep hands one out per drift sign)."""
        base = self.base
        x = np.asarray(x, dtype=float).reshape(-1)
        marks = base.marks
        out = []
        for nu in self.nu_values:
            if callable(p):
                p_nu = np.asarray(p(lift_control(base, nu)), float).reshape(-1)
            else:
                p_nu = np.asarray(p, dtype=float).reshape(-1)
            sig = np.atleast_2d(
                np.asarray(base.coefficients.sigma_X(t, x, nu), float)
            )
            alpha = sig.T @ p_nu
            gamma = np.zeros((marks.n_processes, marks.n_marks))
            for j, e in enumerate(marks.points):
                beta = np.atleast_2d(
                    np.asarray(
                        base.coefficients.beta(t, x, nu.u1, np.zeros(base.n), e), float
                    )
                ).reshape(base.d, marks.n_processes)
                diffs = phi.shifted_difference(t, x, x[None, :] + beta.T)
                # rounding headroom: gamma - diffs recomputed later must not
                # dip below eta_pad
                gamma[:, j] = diffs + self.eta_pad + 1e-12 * (1.0 + np.abs(diffs))
            out.append(lift_control(base, nu, alpha=alpha, gamma=gamma))
        return out
