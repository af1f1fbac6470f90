"""Small builders shared by the test modules."""

import numpy as np

from choicecopula.data_io import Dataset, Schema


def make_dataset(z, choice, x=None, m=None, z_names=None, x_names=None, n_alternatives=None,
                 extra=None):
    """Dataset from arrays; ``choice`` is 0-based here and stored 1-based."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    choice = np.asarray(choice, dtype=int)
    J = int(n_alternatives if n_alternatives is not None else choice.max() + 1)
    z_names = list(z_names or [f"z{k}" for k in range(z.shape[1])])
    cols = {"choice": choice + 1, "m": np.zeros(n) if m is None else np.asarray(m, float)}
    for k, name in enumerate(z_names):
        cols[name] = z[:, k]
    x_list = []
    if x is not None:
        x = np.asarray(x, dtype=float)
        x_names = list(x_names or [f"x{k}" for k in range(x.shape[1])])
        for k, name in enumerate(x_names):
            cols[name] = x[:, k]
        x_list = x_names
    cols.update(extra or {})
    schema = Schema(choice="choice", outcome="m", n_alternatives=J, z=tuple(z_names), x=tuple(x_list))
    return Dataset(schema, cols)


def logit_sample(n, beta, seed, vl_scale=1.0):
    """Choices from a logit model ``vl + z beta_j + Gumbel``; z = [const, z1, z2]."""
    g = np.random.default_rng(seed)
    beta = np.asarray(beta, dtype=float)
    J, kz = beta.shape
    z = np.column_stack([np.ones(n), g.standard_normal((n, kz - 1))])
    vl = vl_scale * g.standard_normal((n, J))
    V = vl + z @ beta.T
    choice = np.argmax(V + g.gumbel(size=(n, J)), axis=1)
    return make_dataset(z, choice, n_alternatives=J, z_names=["const"] + [f"z{k}" for k in range(1, kz)]), vl
