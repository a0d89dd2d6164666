"""Independent reference computations used as test oracles."""

import numpy as np

from metaprompt import promptmodel as pm


def central_fd(f, x, h=1e-5):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (x is restored)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        dn = f(x)
        x[idx] = old
        g[idx] = (up - dn) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def fomaml_reference(scorer, theta, batches, alpha, beta, optimizer="sgd"):
    """Plain first-order MAML: one SGD inner step per task, outer step on the summed
    query gradients taken at the adapted prompts.  Written without the package's
    training loop; only the scorer gradient (itself checked by finite differences)
    is shared."""
    theta = np.array(theta, dtype=float)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = []
    for k, batch in enumerate(batches, start=1):
        total = np.zeros_like(theta)
        for task in batch:
            adapted = theta - alpha * pm.grad_prompt(scorer, theta, task.support)
            total = total + pm.grad_prompt(scorer, adapted, task.query)
        if optimizer == "sgd":
            theta = theta - beta * total
        else:
            m = 0.9 * m + 0.1 * total
            v = 0.999 * v + 0.001 * total * total
            mhat = m / (1 - 0.9**k)
            vhat = v / (1 - 0.999**k)
            theta = theta - beta * mhat / (np.sqrt(vhat) + 1e-8)
        trace.append(theta.copy())
    return trace
