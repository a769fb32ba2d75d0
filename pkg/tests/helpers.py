"""Random instance generators shared by the test modules."""

import numpy as np

from certkit.additive import AdditiveModel, PiecewiseLinear, Polynomial


def random_component(rng, lo=-1.0, hi=1.0, kind=None):
    kind = kind or rng.choice(["pwl", "poly"])
    if kind == "pwl":
        inner = np.sort(rng.uniform(lo, hi, rng.integers(0, 6)))
        knots = np.unique(np.concatenate([[lo], inner, [hi]]))
        return PiecewiseLinear(knots, rng.normal(size=knots.size))
    return Polynomial(rng.normal(size=rng.integers(1, 5)), (lo, hi))


def random_additive(rng, dim=None, n_components=None, kind=None):
    dim = dim or int(rng.integers(1, 6))
    n_components = dim if n_components is None else n_components
    coords = rng.choice(dim, size=min(n_components, dim), replace=False)
    ref = tuple((-1.0, 1.0) for _ in range(dim))
    comps = tuple((int(j), random_component(rng, kind=kind)) for j in coords)
    return AdditiveModel(float(rng.normal()), comps, dim, ref)


def grid_sup_inf(m, box, n=200, extra=None):
    """Exhaustive grid search over the product grid of the active coordinates.

    ``extra`` maps a coordinate to additional grid points on that axis.
    """
    extra = extra or {}
    active = [j for j, _ in m.components]
    axes = [np.union1d(np.linspace(box.lo[j], box.hi[j], n), extra.get(j, [])) for j in active]
    mesh = np.meshgrid(*axes, indexing="ij") if axes else []
    x = np.tile((box.lo + box.hi) / 2, (mesh[0].size if axes else 1, 1))
    for j, g in zip(active, mesh):
        x[:, j] = g.ravel()
    vals = m(x)
    return float(vals.min()), float(vals.max())
