"""Shared fixtures: finite-difference gradient oracle and small scenario
variants sized for fast tests."""

from dataclasses import replace

import numpy as np
import pytest

from magnet import datagen
from magnet.experts import ExpertRegistry, fit_expert
from magnet.nn.tensor import Tensor


def fd_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def check_backward(build, arrays: dict, rtol=1e-5, atol=1e-7, eps=1e-6):
    """Compare autodiff grads of `build(tensors) -> scalar Tensor` against
    finite differences for every input array."""
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build(tensors)
    loss.backward()
    for name, arr in arrays.items():
        def f(x, _name=name):
            probe = {
                k: Tensor(x if k == _name else v.copy())
                for k, v in arrays.items()
            }
            return float(build(probe).data)

        want = fd_grad(f, arr.copy(), eps=eps)
        got = tensors[name].grad
        assert got is not None, f"no gradient reached input '{name}'"
        np.testing.assert_allclose(
            got, want, rtol=rtol, atol=atol, err_msg=f"gradient mismatch for '{name}'"
        )


@pytest.fixture(scope="session")
def tiny2d():
    """2-user, 2x2-condition 2D scene; keeps generated datasets tiny."""
    sc = datagen.mts2d()
    return replace(
        sc,
        name="tiny2d",
        users=2,
        reps=4,
        n_targets=5,
        widths=(65.0, 125.0),
        speeds=(300.0, 800.0),
    )


@pytest.fixture(scope="session")
def tiny3d():
    sc = datagen.mts3d()
    return replace(
        sc,
        name="tiny3d",
        users=2,
        reps=4,
        n_targets=4,
        widths=(0.04, 0.12),
        speeds=(0.22, 0.45),
    )


@pytest.fixture(scope="session")
def tiny_dataset(tiny2d):
    return datagen.build_dataset(tiny2d, seed=7)


@pytest.fixture(scope="session")
def tiny_registry(tiny_dataset):
    reg = ExpertRegistry()
    reg.add(fit_expert("s-f", datagen.dataset_samples(tiny_dataset, gesture="fixed")))
    reg.add(fit_expert("s-h", datagen.dataset_samples(tiny_dataset, gesture="handheld")))
    return reg
