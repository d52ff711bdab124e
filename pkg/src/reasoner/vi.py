"""Mean-field Gaussian variational inference with antithetic reparametrization.

The approximation is q(xi) = N(mean, diag(exp(log_std)^2)).  The ELBO splits
into an analytic KL against the standard-normal prior and a likelihood
expectation estimated over antithetic sample pairs (zeta, -zeta); gradients
come from the reparametrization xi = mean + sigma * zeta.

Two optimizers: Adam-style stochastic ascent with a 1/sqrt(k) decay, and a
deterministic backtracking line search on a fixed-sample surrogate (common
random numbers, refreshed every outer iteration).  Constraint strength is
annealed over stages that multiply the alpha of every tempered term.
"""

import math
from dataclasses import dataclass

import numpy as np

from .archive import SampleArchive
from .hmc import mix_seed

DEFAULT_STAGES = ((0.5, 500), (1.0, 500), (3.0, 500), (10.0, 500))


class ElboDivergenceError(RuntimeError):
    """ELBO fell off a cliff; carries the partial trace and last state."""

    def __init__(self, message, state, trace):
        super().__init__(message)
        self.state = state
        self.trace = trace


@dataclass
class VariationalState:
    mean: np.ndarray
    log_std: np.ndarray
    iteration: int = 0

    @property
    def sigma(self):
        return np.exp(self.log_std)

    @property
    def dim(self):
        return self.mean.size

    def copy(self):
        return VariationalState(self.mean.copy(), self.log_std.copy(),
                                self.iteration)


class AnnealSchedule:
    """Ordered (alpha multiplier, iteration budget) stages."""

    def __init__(self, stages=DEFAULT_STAGES, allow_non_monotone=False):
        stages = [(float(a), int(n)) for a, n in stages]
        if not stages:
            raise ValueError("schedule needs at least one stage")
        for alpha, iters in stages:
            if alpha <= 0:
                raise ValueError(f"stage alpha {alpha} must be positive")
            if iters < 1:
                raise ValueError(f"stage budget {iters} must be >= 1")
        alphas = [a for a, _ in stages]
        if not allow_non_monotone and sorted(alphas) != alphas:
            raise ValueError(
                f"stage alphas {alphas} must be non-decreasing (pass "
                "allow_non_monotone to override)")
        self.stages = stages

    @classmethod
    def parse(cls, text, allow_non_monotone=False):
        """Parse 'alpha:iters,alpha:iters,...'."""
        stages = []
        for part in text.split(","):
            alpha, _, iters = part.strip().partition(":")
            stages.append((float(alpha), int(iters)))
        return cls(stages, allow_non_monotone)

    @property
    def final_alpha(self):
        return self.stages[-1][0]

    @property
    def total_iterations(self):
        return sum(n for _, n in self.stages)


@dataclass
class ViConfig:
    n_pairs: int = 5
    seed: int = 0
    init_mean: np.ndarray = None
    init_log_std: float = math.log(0.1)
    learning_rate: float = 0.1          # adam
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    initial_step: float = 1.0           # line search
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    step_decay_iters: float = 25.0      # trial-step cap ~ (1 + i/this)^-power
    step_decay_power: float = 0.5
    callback: object = None             # callback(iter, stage_alpha, state)
    callback_every: int = 0
    divergence_drop: float = 1e6


def kl_to_prior(mean, log_std):
    """KL(q || N(0, 1)); zero exactly at mean 0, log_std 0."""
    sigma2 = np.exp(2.0 * log_std)
    return 0.5 * float((sigma2 + mean * mean - 1.0).sum()) - float(log_std.sum())


def antithetic_zetas(rng, n_pairs, dim):
    """2*n_pairs standard-normal draws, each pair (zeta, -zeta) adjacent."""
    base = rng.standard_normal((n_pairs, dim))
    out = np.empty((2 * n_pairs, dim))
    out[0::2] = base
    out[1::2] = -base
    return out


def elbo_fixed_samples(graph, mean, log_std, zetas, alpha_scale=1.0):
    """Surrogate ELBO and its (mean, log_std) gradient for a fixed zeta set."""
    sigma = np.exp(log_std)
    n = zetas.shape[0]
    lik = 0.0
    g_mean = np.zeros_like(mean)
    g_sigma_scaled = np.zeros_like(mean)
    for zeta in zetas:
        value, grad = graph.loglik_and_grad(mean + sigma * zeta, alpha_scale)
        lik += value
        g_mean += grad
        g_sigma_scaled += grad * zeta
    lik /= n
    g_mean /= n
    g_log_std = (g_sigma_scaled / n) * sigma
    sigma2 = sigma * sigma
    elbo = lik - kl_to_prior(mean, log_std)
    g_mean = g_mean - mean
    g_log_std = g_log_std - (sigma2 - 1.0)
    return elbo, g_mean, g_log_std


def elbo_value_fixed_samples(graph, mean, log_std, zetas, alpha_scale=1.0):
    sigma = np.exp(log_std)
    lik = 0.0
    for zeta in zetas:
        lik += graph.log_lik(mean + sigma * zeta, alpha_scale)
    return lik / zetas.shape[0] - kl_to_prior(mean, log_std)


def elbo_estimate(graph, state, n_pairs, rng, alpha_scale=1.0):
    """Antithetic ELBO estimate and its gradient w.r.t. (mean, log_std)."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    zetas = antithetic_zetas(rng, n_pairs, state.dim)
    elbo, g_mean, g_log_std = elbo_fixed_samples(graph, state.mean,
                                                 state.log_std, zetas,
                                                 alpha_scale)
    return elbo, (g_mean, g_log_std)


def _init_state(graph, config):
    if config.init_mean is None:
        mean = np.zeros(graph.total_dim)
    else:
        mean = np.array(config.init_mean, dtype=np.float64).reshape(-1)
        if mean.size != graph.total_dim:
            raise ValueError(
                f"init_mean has {mean.size} entries, graph has "
                f"{graph.total_dim}")
    log_std = np.full(graph.total_dim, float(config.init_log_std))
    return VariationalState(mean, log_std)


def _check_divergence(trace, state, config):
    if len(trace) >= 2:
        drop = trace[-2]["elbo_estimate"] - trace[-1]["elbo_estimate"]
        if drop > config.divergence_drop:
            raise ElboDivergenceError(
                f"ELBO dropped by {drop:.3g} in one iteration", state, trace)


def _maybe_callback(config, iteration, stage_alpha, state):
    if config.callback is not None and config.callback_every > 0:
        if iteration % config.callback_every == 0:
            config.callback(iteration, stage_alpha, state)


def fit_adam(graph, schedule, config=None):
    """Stochastic ELBO ascent with Adam moments and 1/sqrt(k) decay."""
    config = config or ViConfig()
    state = _init_state(graph, config)
    rng = np.random.Generator(np.random.PCG64(mix_seed(config.seed, 0)))
    m1 = np.zeros(2 * state.dim)
    v1 = np.zeros(2 * state.dim)
    trace = []
    k = 0
    for stage_alpha, budget in schedule.stages:
        for _ in range(budget):
            k += 1
            elbo, (g_mean, g_log_std) = elbo_estimate(graph, state,
                                                      config.n_pairs, rng,
                                                      stage_alpha)
            g = np.concatenate([g_mean, g_log_std])
            m1 = config.beta1 * m1 + (1.0 - config.beta1) * g
            v1 = config.beta2 * v1 + (1.0 - config.beta2) * g * g
            m_hat = m1 / (1.0 - config.beta1 ** k)
            v_hat = v1 / (1.0 - config.beta2 ** k)
            lr = config.learning_rate * k ** (-0.5 + 1e-16)
            step = lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
            state.mean = state.mean + step[:state.dim]
            state.log_std = state.log_std + step[state.dim:]
            state.iteration = k
            trace.append({"iter": k, "stage_alpha": stage_alpha,
                          "elbo_estimate": elbo,
                          "grad_norm": float(np.linalg.norm(g)),
                          "step_size": lr})
            _check_divergence(trace, state, config)
            _maybe_callback(config, k, stage_alpha, state)
    return state, trace


def armijo_search(graph, mean, log_std, d_mean, d_log_std, f0, zetas,
                  alpha_scale, config, initial_step):
    """Backtracking Armijo search along one ascent direction.

    Returns (mean, log_std, accepted_step, f_new); the step is 0.0 when the
    search exhausts its backtracks and the parameters come back unchanged.
    """
    g_sq = float(np.dot(d_mean, d_mean) + np.dot(d_log_std, d_log_std))
    if g_sq <= 0.0 or not np.isfinite(f0):
        return mean, log_std, 0.0, f0
    step = initial_step
    for _ in range(config.max_backtracks):
        m2 = mean + step * d_mean
        s2 = log_std + step * d_log_std
        trial = elbo_value_fixed_samples(graph, m2, s2, zetas, alpha_scale)
        if np.isfinite(trial) and trial >= f0 + config.armijo_c * step * g_sq:
            return m2, s2, step, trial
        step *= config.backtrack_factor
    return mean, log_std, 0.0, f0


def fit_linesearch(graph, schedule, config=None):
    """Deterministic ascent on a per-iteration fixed-sample surrogate.

    Each outer iteration draws one antithetic set and ascends the resulting
    deterministic surrogate with two Armijo backtracking searches, first
    along the mean gradient, then along the log-std gradient.  Separating
    the blocks keeps the stiff mean subproblem stable: a joint step would
    let spread-direction gains mask mean-direction overshoot.  Accepted
    steps never decrease the surrogate; a fully backtracked search skips
    the step and the samples refresh next round.
    """
    config = config or ViConfig()
    state = _init_state(graph, config)
    rng = np.random.Generator(np.random.PCG64(mix_seed(config.seed, 0)))
    trace = []
    k = 0
    zero = np.zeros(graph.total_dim)
    mem_mean = mem_std = config.initial_step
    for stage_alpha, budget in schedule.stages:
        for stage_iter in range(budget):
            k += 1
            # the trial-step cap decays within each stage so the iterates
            # average out surrogate resampling noise, and resets when alpha
            # jumps so the new landscape can be explored again
            cap = config.initial_step * (
                1.0 + stage_iter / config.step_decay_iters
            ) ** -config.step_decay_power
            zetas = antithetic_zetas(rng, config.n_pairs, state.dim)
            f0, g_mean, g_log_std = elbo_fixed_samples(
                graph, state.mean, state.log_std, zetas, stage_alpha)
            g_sq = float(np.dot(g_mean, g_mean) + np.dot(g_log_std, g_log_std))
            state.mean, state.log_std, t_mean, f_mid = armijo_search(
                graph, state.mean, state.log_std, g_mean, zero, f0, zetas,
                stage_alpha, config, min(mem_mean, cap))
            state.mean, state.log_std, t_std, _ = armijo_search(
                graph, state.mean, state.log_std, zero, g_log_std, f_mid,
                zetas, stage_alpha, config, min(mem_std, cap))
            if t_mean:
                mem_mean = min(t_mean * 2.0, config.initial_step)
            if t_std:
                mem_std = min(t_std * 2.0, config.initial_step)
            state.iteration = k
            trace.append({"iter": k, "stage_alpha": stage_alpha,
                          "elbo_estimate": f0,
                          "grad_norm": math.sqrt(g_sq),
                          "step_size": max(t_mean, t_std)})
            _check_divergence(trace, state, config)
            _maybe_callback(config, k, stage_alpha, state)
    return state, trace


def sample_approximation(state, n, rng, master_seed=0):
    """Draw n samples from q as an archive; draws come in antithetic pairs."""
    dim = state.dim
    if n == 0:
        return SampleArchive(np.zeros((1, 0, dim)), master_seed=master_seed)
    pairs = (n + 1) // 2
    zetas = antithetic_zetas(rng, pairs, dim)[:n]
    draws = state.mean + state.sigma * zetas
    return SampleArchive(draws[None, :, :], master_seed=master_seed)


def write_trace(path, trace):
    """One JSON record per iteration, newline-delimited."""
    import json
    import os
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in trace:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)
