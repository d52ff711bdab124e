"""Torch training for the toy networks.

Architectures stay inside the engine's layer vocabulary (dense, tanh,
sigmoid, softmax) so every trained model exports losslessly.  Training is
deterministic: fixed torch seed, single thread, seeded batch order.
"""

import numpy as np
import torch
from torch import nn

from .export import reference_forward

torch.set_num_threads(1)


def _dense_layers(modules):
    """Extract exportable layer dicts from a sequential torch module."""
    layers = []
    for module in modules:
        if isinstance(module, nn.Linear):
            layers.append({"kind": "dense",
                           "W": module.weight.detach().numpy().copy(),
                           "b": module.bias.detach().numpy().copy()})
        elif isinstance(module, nn.Tanh):
            layers.append({"kind": "tanh"})
        elif isinstance(module, nn.Sigmoid):
            layers.append({"kind": "sigmoid"})
        else:
            raise ValueError(f"unexportable module {module!r}")
    return layers


class DigitVae(nn.Module):
    def __init__(self, latent_dim=16, hidden=64):
        super().__init__()
        self.encoder = nn.Sequential(nn.Linear(64, hidden), nn.Tanh())
        self.to_mean = nn.Linear(hidden, latent_dim)
        self.to_logvar = nn.Linear(hidden, latent_dim)
        self.decoder = nn.Sequential(nn.Linear(latent_dim, 48), nn.Tanh(),
                                     nn.Linear(48, 64), nn.Sigmoid())

    def forward(self, x):
        h = self.encoder(x)
        mean, logvar = self.to_mean(h), self.to_logvar(h)
        z = mean + torch.exp(0.5 * logvar) * torch.randn_like(mean)
        return self.decoder(z), mean, logvar


def train_generator(x_train, seed, epochs=400, batch_size=128,
                    latent_dim=16):
    """VAE on the digit images; returns the decoder's exportable layers.

    The decoder's latent input is the VAE's standard-normal prior, so no
    source-distribution transformation is needed at export.
    """
    torch.manual_seed(seed)
    model = DigitVae(latent_dim=latent_dim)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    data = torch.tensor(x_train, dtype=torch.float32)
    order_rng = np.random.default_rng(seed)
    last_loss = np.inf
    for epoch in range(epochs):
        perm = order_rng.permutation(len(data))
        total = 0.0
        for lo in range(0, len(data), batch_size):
            batch = data[perm[lo:lo + batch_size]]
            recon, mean, logvar = model(batch)
            bce = nn.functional.binary_cross_entropy(recon, batch,
                                                     reduction="sum")
            kl = -0.5 * torch.sum(1 + logvar - mean ** 2 - logvar.exp())
            loss = (bce + kl) / len(batch)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total += loss.detach().item() * len(batch)
        last_loss = total / len(data)
    return _dense_layers(model.decoder), {"final_loss": last_loss,
                                          "epochs": epochs,
                                          "latent_dim": latent_dim}


def train_classifier(x_train, y_train, x_test, y_test, n_classes, seed,
                     hidden=48, epochs=250, batch_size=128, lr=1e-3):
    """Cross-entropy MLP; returns exportable layers (softmax appended)
    and the held-out accuracy measured on the quantized export weights."""
    torch.manual_seed(seed)
    model = nn.Sequential(nn.Linear(64, hidden), nn.Tanh(),
                          nn.Linear(hidden, n_classes))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    data = torch.tensor(x_train, dtype=torch.float32)
    labels = torch.tensor(y_train)
    order_rng = np.random.default_rng(seed)
    for epoch in range(epochs):
        perm = order_rng.permutation(len(data))
        for lo in range(0, len(data), batch_size):
            idx = perm[lo:lo + batch_size]
            logits = model(data[idx])
            loss = nn.functional.cross_entropy(logits, labels[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    layers = _dense_layers(model) + [{"kind": "softmax"}]
    accuracy = classify_accuracy(layers, x_test, y_test)
    return layers, accuracy


def classify_accuracy(layers, x, y):
    """Accuracy of the exported (quantized) network, engine-equivalent path."""
    hits = sum(int(np.argmax(reference_forward(layers, xi))) == int(yi)
               for xi, yi in zip(x, y))
    return hits / len(x)


def embedding_from_classifier(layers):
    """Penultimate representation: everything up to the final dense+softmax."""
    return layers[:-2]
