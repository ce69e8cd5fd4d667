import numpy as np
import pytest

from dualspeech import autodiff as ad


def finite_diff_check(build_loss, tensors, h=1e-5, tol=1e-4):
    """Central finite-difference oracle for reverse-mode gradients.

    ``build_loss`` maps the tensors to a scalar loss Tensor; gradients
    from ``backward`` must match (f(x+h)-f(x-h))/2h coordinate-wise
    within relative L2 error ``tol``.
    """
    loss = build_loss()
    for t in tensors:
        t.grad = None
    ad.backward(loss)
    for t in tensors:
        analytic = t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = build_loss().item()
            flat[i] = orig - h
            down = build_loss().item()
            flat[i] = orig
            num_flat[i] = (up - down) / (2.0 * h)
        denom = max(np.linalg.norm(numeric), 1e-8)
        err = np.linalg.norm(analytic - numeric) / denom
        assert err < tol, f"gradient mismatch: rel err {err:.3e} (shape {t.shape})"


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
