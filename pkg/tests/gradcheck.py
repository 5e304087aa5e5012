"""Central finite-difference gradient oracle shared by the test modules."""

import numpy as np

from privgnn.nn import softmax_cross_entropy


def numeric_param_gradients(model, x, labels, h=1e-6):
    """Central finite differences of the training loss over all parameters."""

    def loss_fn():
        logits, _ = model.forward(x, training=True)
        loss, _ = softmax_cross_entropy(logits, labels)
        return loss

    grads = []
    for p in model.parameters():
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def analytic_param_gradients(model, x, labels):
    logits, tape = model.forward(x, training=True)
    _, grad_logits = softmax_cross_entropy(logits, labels)
    grads, _ = model.backward(tape, grad_logits)
    return grads


def assert_gradients_match(model, x, labels, tol=1e-5):
    analytic = analytic_param_gradients(model, x, labels)
    numeric = numeric_param_gradients(model, x, labels)
    for a, n in zip(analytic, numeric):
        scale = max(np.abs(n).max(), 1e-8)
        # Absolute floor covers parameters whose true gradient is ~0 (for
        # example biases under batch norm), where central differences bottom
        # out near 1e-10.
        assert np.abs(a - n).max() <= tol * scale + 1e-9
