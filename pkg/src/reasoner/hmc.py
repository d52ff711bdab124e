"""Multi-chain Hamiltonian Monte Carlo with warmup adaptation.

Warmup is split into three windows: step-size settling, a mass window whose
sample variances set the diagonal inverse mass, and a final step-size window
under the frozen mass.  Step size follows dual averaging toward the target
acceptance rate and everything is frozen before retained draws, so the
sampling phase is a proper Markov chain.

Per-chain randomness derives from the master seed through a 64-bit mix, so
chain streams stay uncorrelated regardless of chain count.
"""

import math
from dataclasses import dataclass

import numpy as np

from .archive import SampleArchive

_MASK64 = (1 << 64) - 1
_DIVERGENCE_ENERGY = 1000.0


class DivergenceError(RuntimeError):
    """More than half of the post-warmup trajectories diverged."""


def mix_seed(master_seed, index):
    """splitmix64 finalizer over (master, index); decorrelates chain streams."""
    z = (int(master_seed) + (index + 1) * 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@dataclass
class HmcConfig:
    n_chains: int = 4
    n_samples: int = 4000          # total retained draws across chains
    leapfrog_steps: int = 10
    target_acceptance: float = 0.6
    warmup_iterations: int = 1000
    master_seed: int = 0
    initial_step_size: float = 0.1
    alpha_scale: float = 1.0

    def __post_init__(self):
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not 0.0 < self.target_acceptance < 1.0:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.n_chains < 2:
            raise ValueError("need at least 2 chains for convergence checks")
        if self.n_samples < self.n_chains:
            raise ValueError("n_samples must cover at least one draw per chain")
        if self.warmup_iterations < 0:
            raise ValueError("warmup_iterations must be >= 0")


@dataclass
class ChainState:
    position: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    rng: np.random.Generator
    accepted: int = 0
    proposed: int = 0
    divergent: int = 0


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step_size, target, gamma=0.2, t0=20.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps_bar = math.log(step_size)
        self.log_eps = math.log(step_size)

    def update(self, accept_prob):
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        weight = self.t ** -self.kappa
        self.log_eps_bar = weight * self.log_eps + (1.0 - weight) * self.log_eps_bar
        return math.exp(self.log_eps)

    def adapted(self):
        return math.exp(self.log_eps_bar)


def _integrate(graph, xi, rho, eps, n_steps, inv_mass, alpha_scale,
               logp=None, grad=None):
    """Leapfrog trajectory; returns end state plus its cached log-density.

    A non-finite value anywhere along the trajectory flags divergence and
    aborts the integration.
    """
    if logp is None or grad is None:
        logp, grad = graph.logp_and_grad(xi, alpha_scale)
    if not np.isfinite(logp) or not np.isfinite(grad).all():
        return xi, rho, logp, grad, True
    xi = xi.copy()
    rho = rho + 0.5 * eps * grad
    for step in range(n_steps):
        xi += eps * inv_mass * rho
        logp, grad = graph.logp_and_grad(xi, alpha_scale)
        if not np.isfinite(logp) or not np.isfinite(grad).all():
            return xi, rho, logp, grad, True
        if step < n_steps - 1:
            rho += eps * grad
    rho = rho + 0.5 * eps * grad
    return xi, rho, logp, grad, False


def leapfrog(graph, xi, rho, eps, n_steps, inv_mass, alpha_scale=1.0):
    """Volume-preserving leapfrog update of (position, momentum)."""
    xi = np.asarray(xi, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    inv_mass = np.asarray(inv_mass, dtype=np.float64)
    xi2, rho2, _, _, _ = _integrate(graph, xi, rho, eps, n_steps, inv_mass,
                                    alpha_scale)
    return xi2, rho2


def hamiltonian(graph, xi, rho, inv_mass, alpha_scale=1.0, logp=None):
    if logp is None:
        logp = graph.log_density(xi, alpha_scale)
    return -logp + 0.5 * float(np.dot(rho * rho, inv_mass))


def _find_initial_step(graph, xi, rng, inv_mass, eps, alpha_scale):
    """Double/halve until the one-step acceptance crosses one half."""
    logp, grad = graph.logp_and_grad(xi, alpha_scale)
    rho = rng.standard_normal(xi.size) / np.sqrt(inv_mass)

    def log_accept(e):
        xi2, rho2, logp2, _, div = _integrate(graph, xi, rho, e, 1, inv_mass,
                                              alpha_scale, logp, grad)
        if div:
            return -np.inf
        h0 = -logp + 0.5 * float(np.dot(rho * rho, inv_mass))
        h1 = -logp2 + 0.5 * float(np.dot(rho2 * rho2, inv_mass))
        return h0 - h1

    direction = 1.0 if log_accept(eps) > math.log(0.5) else -1.0
    for _ in range(40):
        trial = eps * (2.0 ** direction)
        if direction > 0 and log_accept(trial) <= math.log(0.5):
            break
        if direction < 0 and log_accept(trial) >= math.log(0.5):
            eps = trial
            break
        eps = trial
        if not 1e-10 < eps < 1e6:
            break
    return eps


def _transition(graph, state, config):
    """One Metropolis-corrected leapfrog proposal; returns acceptance prob.

    The step size is jittered uniformly in [0.8, 1.2] per proposal: with a
    fixed trajectory length, coordinates whose leapfrog rotation hits a
    multiple of 2*pi would otherwise return to their start and freeze.
    """
    rng = state.rng
    dim = state.position.size
    rho = rng.standard_normal(dim) / np.sqrt(state.inv_mass)
    eps = state.step_size * rng.uniform(0.8, 1.2)
    logp0, grad0 = graph.logp_and_grad(state.position, config.alpha_scale)
    h0 = -logp0 + 0.5 * float(np.dot(rho * rho, state.inv_mass))
    xi2, rho2, logp2, _, diverged = _integrate(
        graph, state.position, rho, eps, config.leapfrog_steps,
        state.inv_mass, config.alpha_scale, logp0, grad0)
    state.proposed += 1
    if diverged:
        state.divergent += 1
        return 0.0
    h2 = -logp2 + 0.5 * float(np.dot(rho2 * rho2, state.inv_mass))
    delta = h0 - h2
    if not np.isfinite(delta) or -delta > _DIVERGENCE_ENERGY:
        state.divergent += 1
        return 0.0
    accept_prob = min(1.0, math.exp(min(0.0, delta)))
    if math.log(rng.uniform()) < delta:
        state.position = xi2
        state.accepted += 1
    return accept_prob


def _run_chain(graph, config, chain_index, n_draws):
    rng = np.random.Generator(np.random.PCG64(mix_seed(config.master_seed,
                                                       chain_index)))
    dim = graph.total_dim
    state = ChainState(
        position=rng.standard_normal(dim),
        step_size=config.initial_step_size,
        inv_mass=np.ones(dim),
        rng=rng,
    )
    warmup = np.empty((config.warmup_iterations, dim))

    if config.warmup_iterations > 0:
        state.step_size = _find_initial_step(
            graph, state.position, rng, state.inv_mass, state.step_size,
            config.alpha_scale)
        w = config.warmup_iterations
        w1 = max(1, int(0.15 * w))
        w2 = max(1, int(0.65 * w))  # mass window spans (w1, w2]
        adapter = _DualAveraging(state.step_size, config.target_acceptance)
        mass_samples = []
        for it in range(w):
            accept_prob = _transition(graph, state, config)
            state.step_size = adapter.update(accept_prob)
            warmup[it] = state.position
            if w1 <= it < w2:
                mass_samples.append(state.position.copy())
            if it == w2 - 1 and len(mass_samples) >= 2:
                var = np.var(np.asarray(mass_samples), axis=0, ddof=1)
                n = len(mass_samples)
                state.inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                state.step_size = _find_initial_step(
                    graph, state.position, rng, state.inv_mass,
                    adapter.adapted(), config.alpha_scale)
                adapter = _DualAveraging(state.step_size,
                                         config.target_acceptance)
        state.step_size = adapter.adapted()

    state.accepted = state.proposed = state.divergent = 0
    draws = np.empty((n_draws, dim))
    for it in range(n_draws):
        _transition(graph, state, config)
        draws[it] = state.position
        if (it + 1) % 50 == 0 or it == n_draws - 1:
            if state.divergent > 0.5 * state.proposed:
                raise DivergenceError(
                    f"chain {chain_index}: {state.divergent}/{state.proposed} "
                    f"divergent trajectories after warmup (step size "
                    f"{state.step_size:.3g})")
    acceptance = state.accepted / max(1, state.proposed)
    return draws, warmup, acceptance, state


def sample(graph, config):
    """Run all chains and collect retained plus warmup draws."""
    n_per_chain = config.n_samples // config.n_chains
    draws, warmups, acceptance = [], [], []
    for chain_index in range(config.n_chains):
        d, w, a, _ = _run_chain(graph, config, chain_index, n_per_chain)
        draws.append(d)
        warmups.append(w)
        acceptance.append(a)
    return SampleArchive(np.asarray(draws), np.asarray(warmups),
                         config.master_seed, acceptance)


# ---------------------------------------------------------------------------
# convergence diagnostics


def _chains_array(archive):
    draws = archive.draws if isinstance(archive, SampleArchive) else np.asarray(archive)
    if draws.ndim != 3:
        raise ValueError(f"expected (chains, draws, dim), got {draws.shape}")
    if draws.shape[0] < 2:
        raise ValueError("need at least 2 chains")
    if draws.shape[1] < 10:
        raise ValueError("need at least 10 draws per chain")
    return draws


def gelman_rubin(archive):
    """Split-R-hat per coordinate; +inf where within-chain variance is zero."""
    draws = _chains_array(archive)
    m, n, dim = draws.shape
    half = n // 2
    split = np.concatenate([draws[:, :half, :], draws[:, n - half:, :]], axis=0)
    means = split.mean(axis=1)                # (2m, dim)
    variances = split.var(axis=1, ddof=1)     # (2m, dim)
    w = variances.mean(axis=0)
    b = half * means.var(axis=0, ddof=1)
    rhat = np.full(dim, np.inf)
    ok = w > 0
    var_hat = (half - 1) / half * w[ok] + b[ok] / half
    rhat[ok] = np.sqrt(var_hat / w[ok])
    return rhat


def _chain_autocorr(x):
    """Biased autocovariance sequence via FFT, normalized to rho_0 = 1."""
    n = x.shape[0]
    centered = x - x.mean(axis=0)
    size = 1
    while size < 2 * n:
        size *= 2
    f = np.fft.rfft(centered, size, axis=0)
    acov = np.fft.irfft(f * np.conjugate(f), size, axis=0)[:n].real / n
    return acov


def effective_sample_size(archive):
    """Per-coordinate ESS, Geyer initial-monotone truncation, summed over chains."""
    draws = _chains_array(archive)
    m, n, dim = draws.shape
    ess = np.zeros(dim)
    for chain in range(m):
        acov = _chain_autocorr(draws[chain])
        for d in range(dim):
            c0 = acov[0, d]
            if c0 <= 0:
                continue  # constant chain contributes the 0 sentinel
            rho = acov[:, d] / c0
            tau = -1.0
            prev = np.inf
            for k in range(0, n - 1, 2):
                gamma = rho[k] + (rho[k + 1] if k + 1 < n else 0.0)
                if gamma <= 0:
                    break
                gamma = min(gamma, prev)
                prev = gamma
                tau += 2.0 * gamma
            if tau > 0:
                ess[d] += n / tau
    return ess
