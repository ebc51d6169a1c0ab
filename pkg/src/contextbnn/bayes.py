"""Posterior over network weights: log density, leapfrog, HMC, predictive.

The unnormalized log posterior is the negative summed cross-entropy plus a
zero-mean isotropic Gaussian log prior; the evidence term cancels in the
Metropolis ratio so it is never computed.  Proposals integrate Hamiltonian
dynamics with the leapfrog scheme (kick-drift-kick), momenta are resampled
standard normal every iteration, and a proposal is accepted with probability
min(1, exp(H_old - H_new)).

The chain engine is target-agnostic: it takes any (log_density, gradient)
pair, which is how the Gaussian validation targets are run.  Optional
burn-in adaptation rescales the step size toward a 0.65-0.85 acceptance
window and freezes it afterwards, so the retained samples come from a fixed
transition kernel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mlp import Architecture, MlpParams, init_params, _gradient_raw, _loss_raw
from .mlp import forward_logits, read_params, softmax, write_params

_ADAPT_WINDOW = 25
_ADAPT_LO, _ADAPT_HI = 0.65, 0.85
_ADAPT_SHRINK, _ADAPT_GROW = 0.7, 1.3
_EPS_MIN, _EPS_MAX = 1e-8, 10.0
_LOW_ACCEPTANCE = 0.05


class LeapfrogDivergenceError(RuntimeError):
    """The integrator left the region where the energy is finite."""


@dataclass(frozen=True)
class PriorSpec:
    """Zero-mean Gaussian prior with one shared diagonal variance."""

    variance: float = 1.0

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("prior variance must be positive")


@dataclass(frozen=True)
class HmcConfig:
    step_size: float = 0.01
    n_leapfrog: int = 20
    n_samples: int = 200
    burn_in: int = 500
    thinning: int = 5
    seed: int = 0
    adapt: bool = True

    def __post_init__(self):
        if self.step_size <= 0 or self.n_leapfrog < 0:
            raise ValueError("step_size must be positive and n_leapfrog >= 0")
        if self.n_samples < 1 or self.thinning < 1 or self.burn_in < 0:
            raise ValueError("n_samples, thinning must be >= 1 and burn_in >= 0")


@dataclass
class PosteriorEnsemble:
    """Retained posterior draws plus chain diagnostics.

    ``samples`` is an (m, n_params) array, one flat weight vector per row;
    ``energies`` records the negative log posterior of each retained draw.
    """

    arch: Architecture
    prior: PriorSpec
    config: HmcConfig
    samples: np.ndarray
    acceptance_rate: float
    energies: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.energies = np.asarray(self.energies, dtype=float)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise ValueError("ensemble needs at least one sample row")
        if self.samples.shape[1] != self.arch.n_params:
            raise ValueError("sample width does not match the architecture")
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ValueError("acceptance_rate must lie in [0, 1]")

    def __len__(self) -> int:
        return self.samples.shape[0]

    def member(self, i: int) -> MlpParams:
        return MlpParams(self.arch, self.samples[i])


def log_posterior_unnorm(params: MlpParams, ds, prior: PriorSpec) -> float:
    """log p(D|w) + log p(w) up to the w-independent normalizers."""
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels)
    return -_loss_raw(params.arch, params.theta, x, y) - float(
        params.theta @ params.theta
    ) / (2.0 * prior.variance)


def log_posterior_gradient(params: MlpParams, ds, prior: PriorSpec) -> np.ndarray:
    """Exact gradient of :func:`log_posterior_unnorm` with respect to theta."""
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels)
    return -_gradient_raw(params.arch, params.theta, x, y) - params.theta / prior.variance


def leapfrog(theta, momentum, step_size: float, n_steps: int, grad_fn):
    """Kick-drift-kick integration of H = -log_density + |momentum|^2 / 2.

    ``grad_fn`` returns the gradient of the log density.  The map is
    symplectic and time-reversible: running it again with the negated final
    momentum returns to the start.  ``n_steps=0`` is the identity.  Raises
    ``LeapfrogDivergenceError`` as soon as the state stops being finite.
    """
    q = np.array(theta, dtype=float)
    p = np.array(momentum, dtype=float)
    if q.shape != p.shape:
        raise ValueError("theta and momentum must have matching shapes")
    if n_steps == 0:
        return q, p
    p += 0.5 * step_size * grad_fn(q)
    for step in range(n_steps):
        q += step_size * p
        if not np.all(np.isfinite(q)):
            raise LeapfrogDivergenceError("position left the finite domain")
        g = grad_fn(q)
        p += (step_size if step < n_steps - 1 else 0.5 * step_size) * g
        if not np.all(np.isfinite(p)):
            raise LeapfrogDivergenceError("momentum left the finite domain")
    return q, p


def hmc_chain(log_density, grad_log_density, theta0, cfg: HmcConfig):
    """Run one HMC chain on an arbitrary differentiable target.

    Returns (samples, acceptance_rate, energies, step_size) where
    ``samples`` has ``cfg.n_samples`` rows retained every ``cfg.thinning``
    iterations after ``cfg.burn_in``, ``acceptance_rate`` counts accepted
    post-burn-in proposals, ``energies`` holds -log_density of each retained
    row, and ``step_size`` is the (possibly adapted) final value.
    """
    rng = np.random.default_rng(cfg.seed)
    q = np.array(theta0, dtype=float).ravel()
    eps = cfg.step_size
    neg_logp = -log_density(q)
    if not np.isfinite(neg_logp):
        raise ValueError("chain must start at a point of finite density")

    samples = np.empty((cfg.n_samples, q.size))
    energies = np.empty(cfg.n_samples)
    n_kept = 0
    accepted_main = 0
    window_accepts: list[float] = []
    total_iters = cfg.burn_in + cfg.n_samples * cfg.thinning

    for it in range(total_iters):
        p = rng.standard_normal(q.size)
        h_old = neg_logp + 0.5 * float(p @ p)
        proposal = None
        try:
            q_new, p_new = leapfrog(q, p, eps, cfg.n_leapfrog, grad_log_density)
            neg_logp_new = -log_density(q_new)
            h_new = neg_logp_new + 0.5 * float(p_new @ p_new)
            if np.isfinite(h_new):
                proposal = (q_new, neg_logp_new)
                delta = h_old - h_new
                accept_prob = 1.0 if delta >= 0 else float(np.exp(delta))
            else:
                accept_prob = 0.0
        except LeapfrogDivergenceError:
            accept_prob = 0.0

        in_burn_in = it < cfg.burn_in
        if proposal is not None and rng.uniform() < accept_prob:
            q, neg_logp = proposal
            if not in_burn_in:
                accepted_main += 1

        if in_burn_in and cfg.adapt:
            window_accepts.append(accept_prob)
            if len(window_accepts) == _ADAPT_WINDOW:
                rate = float(np.mean(window_accepts))
                if rate < _ADAPT_LO:
                    eps = max(eps * _ADAPT_SHRINK, _EPS_MIN)
                elif rate > _ADAPT_HI:
                    eps = min(eps * _ADAPT_GROW, _EPS_MAX)
                window_accepts.clear()
        if not in_burn_in and (it - cfg.burn_in + 1) % cfg.thinning == 0:
            samples[n_kept] = q
            energies[n_kept] = neg_logp
            n_kept += 1

    acceptance_rate = accepted_main / (cfg.n_samples * cfg.thinning)
    return samples, acceptance_rate, energies, eps


def hmc_sample(
    arch: Architecture,
    ds,
    prior: PriorSpec,
    cfg: HmcConfig,
    init_theta: np.ndarray | None = None,
) -> PosteriorEnsemble:
    """Sample the weight posterior of ``arch`` on ``ds`` with one HMC chain.

    The chain starts from a seeded random initialization unless
    ``init_theta`` is given (e.g. a short gradient-descent warm start, which
    cuts the burn-in needed to reach the posterior bulk).  Emits a warning
    when the post-burn-in acceptance rate drops below 5%, the usual sign of
    an oversized step.
    """
    if len(ds) == 0:
        raise ValueError("cannot sample a posterior conditioned on no data")
    x = np.asarray(ds.features, dtype=float)
    y = np.asarray(ds.labels)
    prior_var = prior.variance

    def log_density(theta):
        return -_loss_raw(arch, theta, x, y) - float(theta @ theta) / (2.0 * prior_var)

    def grad(theta):
        return -_gradient_raw(arch, theta, x, y) - theta / prior_var

    if init_theta is None:
        init_theta = init_params(arch, seed=cfg.seed).theta
    samples, acceptance_rate, energies, _ = hmc_chain(log_density, grad, init_theta, cfg)
    if acceptance_rate < _LOW_ACCEPTANCE:
        warnings.warn(
            f"HMC acceptance rate {acceptance_rate:.3f} is below {_LOW_ACCEPTANCE}; "
            "the step size looks too large",
            RuntimeWarning,
        )
    return PosteriorEnsemble(arch, prior, cfg, samples, acceptance_rate, energies)


def predictive(ensemble: PosteriorEnsemble, x) -> np.ndarray:
    """Posterior predictive: the plain average of member output distributions."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    mean = np.zeros((batch.shape[0], ensemble.arch.n_classes))
    for i in range(len(ensemble)):
        mean += softmax(forward_logits(ensemble.member(i), batch))
    mean /= len(ensemble)
    return mean[0] if single else mean


def effective_sample_size(values: np.ndarray) -> float:
    """ESS of a scalar chain via Geyer's initial positive sequence estimator."""
    v = np.asarray(values, dtype=float).ravel()
    n = v.size
    if n < 4:
        return float(n)
    centered = v - v.mean()
    acov = np.correlate(centered, centered, mode="full")[n - 1 :] / n
    if acov[0] <= 0:
        return float(n)
    rho = acov / acov[0]
    # sum consecutive even/odd pairs while they stay positive
    total = 0.0
    for k in range(1, n - 1, 2):
        pair = rho[k] + rho[k + 1]
        if pair <= 0:
            break
        total += pair
    return float(n / (1.0 + 2.0 * total))


# ---------------------------------------------------------------------------
# Ensemble files: one header with architecture, prior, chain settings and
# acceptance rate, then one checkpoint block per retained sample.
# ---------------------------------------------------------------------------


def save_ensemble(ensemble: PosteriorEnsemble, path) -> None:
    cfg = ensemble.config
    layers = ",".join(str(s) for s in ensemble.arch.layer_sizes)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(
            "# ensemble "
            f"input_dim={ensemble.arch.input_dim} layers={layers} "
            f"activation={ensemble.arch.activation} "
            f"prior_variance={ensemble.prior.variance:.17g} "
            f"step_size={cfg.step_size:.17g} n_leapfrog={cfg.n_leapfrog} "
            f"n_samples={cfg.n_samples} burn_in={cfg.burn_in} "
            f"thinning={cfg.thinning} seed={cfg.seed} adapt={int(cfg.adapt)} "
            f"acceptance_rate={ensemble.acceptance_rate:.17g}\n"
        )
        for i in range(len(ensemble)):
            write_params(fh, ensemble.member(i))
        fh.write("# energies\n")
        for e in ensemble.energies:
            fh.write(f"{e:.17g}\n")


def load_ensemble(path) -> PosteriorEnsemble:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# ensemble"):
            raise ValueError(f"not an ensemble header: {header!r}")
        fields = dict(part.split("=", 1) for part in header.split()[2:])
        arch = Architecture(
            input_dim=int(fields["input_dim"]),
            layer_sizes=tuple(int(s) for s in fields["layers"].split(",")),
            activation=fields.get("activation", "relu"),
        )
        prior = PriorSpec(variance=float(fields["prior_variance"]))
        cfg = HmcConfig(
            step_size=float(fields["step_size"]),
            n_leapfrog=int(fields["n_leapfrog"]),
            n_samples=int(fields["n_samples"]),
            burn_in=int(fields["burn_in"]),
            thinning=int(fields["thinning"]),
            seed=int(fields["seed"]),
            adapt=bool(int(fields["adapt"])),
        )
        samples = np.empty((cfg.n_samples, arch.n_params))
        for i in range(cfg.n_samples):
            samples[i] = read_params(fh).theta
        marker = fh.readline()
        if not marker.startswith("# energies"):
            raise ValueError("ensemble file is missing the energies block")
        energies = np.array([float(fh.readline()) for _ in range(cfg.n_samples)])
    return PosteriorEnsemble(
        arch, prior, cfg, samples, float(fields["acceptance_rate"]), energies
    )
