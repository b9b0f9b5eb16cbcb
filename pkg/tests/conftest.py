import numpy as np
import pytest

from targetlab.model import (
    Coefficients,
    ControlGrid,
    ControlValue,
    MarkSpace,
    ProblemSpec,
    affine_coefficient,
    constant_coefficient,
)


def make_spec(
    d=1,
    q=1,
    n=0,
    marks=None,
    mu_X=0.0,
    sigma_X=0.0,
    beta=0.0,
    mu_Y=0.0,
    sigma_Y=0.0,
    b=0.0,
    T=1.0,
    g=None,
    L=1.0,
    C=None,
    g_bound=None,
    y_box=(-4.0, 4.0),
    x_box=None,
    neutral=None,
):
    """Constant-coefficient spec unless a callable is passed for a slot."""
    marks = MarkSpace.empty(0) if marks is None else marks
    I = marks.n_processes

    def co(value, shape):
        if callable(value):
            return value
        arr = np.broadcast_to(np.asarray(value, dtype=float), shape)
        return constant_coefficient(arr)

    coeffs = Coefficients(
        mu_X=co(mu_X, (d,)),
        sigma_X=co(sigma_X, (d, d)),
        beta=co(beta, (d, I)),
        mu_Y=co(mu_Y, ()),
        sigma_Y=co(sigma_Y, (d,)),
        b=co(b, (I,)),
        lipschitz_L=L,
        growth_C=C,
    )
    if g is None:
        g = lambda x: np.zeros(np.asarray(x).shape[:-1])
    return ProblemSpec(
        coefficients=coeffs,
        marks=marks,
        T=T,
        g=g,
        d=d,
        q=q,
        n=n,
        g_bound=g_bound,
        x_box=x_box,
        y_box=np.asarray(y_box),
        neutral_control=neutral,
    )


def one_mark(e=1.0, weight=0.5, processes=1):
    w = np.full((processes, 1), weight)
    return MarkSpace(np.array([float(e)]), w)


def zero_control(spec):
    return ControlValue(
        np.zeros(spec.q), {float(e): np.zeros(spec.n) for e in spec.marks.points}
    )


def grid_of(spec, *u1_values):
    vals = tuple(
        ControlValue(
            np.full(spec.q, float(v)),
            {float(e): np.zeros(spec.n) for e in spec.marks.points},
        )
        for v in u1_values
    )
    return ControlGrid(vals, truncation_radius=np.inf)


@pytest.fixture
def rng():
    return np.random.default_rng(20240614)
