import numpy as np
import pytest

from reasoner import network as N
from reasoner import tensor as RT


def finite_diff_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def reference_mlp_forward(layers, x):
    """Independent NumPy forward pass for fixture recording.

    ``layers`` entries mirror the bundle writer input: dicts with kind,
    params, and float32-quantized W/b where applicable.
    """
    h = np.asarray(x, dtype=np.float64)
    for layer in layers:
        kind = layer["kind"]
        if kind == "dense":
            w = np.asarray(layer["W"], dtype=np.float32).astype(np.float64)
            b = np.asarray(layer["b"], dtype=np.float32).astype(np.float64)
            h = w @ h + b
        elif kind == "relu":
            h = np.maximum(h, 0.0)
        elif kind == "leaky_relu":
            h = np.where(h > 0, h, h * layer["params"]["slope"])
        elif kind == "tanh":
            h = np.tanh(h)
        elif kind == "sigmoid":
            h = 1.0 / (1.0 + np.exp(-h))
        elif kind == "softmax":
            e = np.exp(h - h.max())
            h = e / e.sum()
        elif kind == "reshape":
            h = h.reshape(layer["params"]["shape"])
        else:
            raise AssertionError(kind)
    return h


def random_mlp_layers(rng, sizes, final="softmax", slope=0.1):
    """Random dense stack with alternating activations."""
    layers = []
    acts = ["tanh", "relu", "leaky_relu", "sigmoid"]
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        layers.append({
            "kind": "dense",
            "W": rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_out, n_in)),
            "b": rng.normal(scale=0.1, size=n_out),
        })
        if i < len(sizes) - 2:
            kind = acts[i % len(acts)]
            layer = {"kind": kind}
            if kind == "leaky_relu":
                layer["params"] = {"slope": slope}
            layers.append(layer)
    if final:
        layers.append({"kind": final})
    return layers


def write_mlp_bundle(path, rng, sizes, output_kind, final="softmax",
                     n_fixtures=3, name="net", metadata=None):
    """Write a random MLP bundle with independently computed golden pairs."""
    layers = random_mlp_layers(rng, sizes, final=final)
    fixtures = []
    for _ in range(n_fixtures):
        x = rng.normal(size=sizes[0])
        fixtures.append((x, reference_mlp_forward(layers, x)))
    N.write_bundle(path, name, [sizes[0]], output_kind, layers,
                   fixtures=fixtures, metadata=metadata)
    return path


def linear_gaussian_graph(rng, d_latent=4, d_obs=6, noise=0.5, name="A"):
    """Fixed-matrix 'generator' with a Gaussian measurement term.

    Returns (graph, oracle) where oracle carries the closed-form posterior:
    precision I + A' N^-1 A, mean prec^-1 A' N^-1 y, and the exact joint
    log-density (posterior logpdf + evidence logpdf).
    """
    from reasoner import probmodel as P

    a = rng.normal(size=(d_obs, d_latent))
    y = rng.normal(size=d_obs)
    noise_var = np.full(d_obs, float(noise))
    bundle = N.NetworkBundle(name, [d_latent], "image", [
        N.LayerSpec("dense", weight=RT.Tensor(a, const=True),
                    bias=RT.Tensor(np.zeros(d_obs), const=True)),
    ])
    doc = {
        "latents": [{"name": "z", "dim": d_latent}],
        "networks": [],
        "pipelines": [{"name": "obs", "input": "z", "steps": [{"net": "gen"}]}],
        "constraints": [{"name": "meas", "type": "gaussian", "input": "obs",
                         "target": y.tolist(),
                         "noise_cov": noise_var.tolist()}],
    }
    graph = P.compile_spec(doc, networks={"gen": bundle})
    return graph, LinearGaussianOracle(a, y, noise_var)


class LinearGaussianOracle:
    """Independent closed-form posterior for y = A xi + noise, xi ~ N(0, I)."""

    def __init__(self, a, y, noise_var):
        self.a = a
        self.y = y
        self.noise_var = noise_var
        self.precision = np.eye(a.shape[1]) + a.T @ (a / noise_var[:, None])
        self.cov = np.linalg.inv(self.precision)
        self.mean = self.cov @ (a.T @ (y / noise_var))

    def joint_log_density(self, xi):
        d_obs = self.y.size
        resid = self.y - self.a @ xi
        log_lik = -0.5 * float(resid @ (resid / self.noise_var)) \
            - 0.5 * float(np.log(2 * np.pi * self.noise_var).sum())
        log_prior = -0.5 * float(xi @ xi) - 0.5 * xi.size * np.log(2 * np.pi)
        return log_lik + log_prior

    def grad_log_density(self, xi):
        return -self.precision @ xi + self.a.T @ (self.y / self.noise_var)

    def posterior_logpdf(self, xi):
        from scipy.stats import multivariate_normal
        return float(multivariate_normal(self.mean, self.cov).logpdf(xi))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
