"""Denoisers and the analytic toy worlds they act on.

Two latent-space "worlds" stand in for the priors of a frame-wise and a
sequence-wise generative model:

* ``SpatialWorld`` — every frame independently drawn from a sharp isotropic
  Gaussian mixture.  Its posterior denoiser refines frames independently and
  is the imaging-quality reference.
* ``TemporalWorld`` — the same mixture modes with blurred means, tiled across
  frames and coupled by an AR(1) correlation.  Its posterior denoiser smooths
  across frames but knows nothing about sharp detail.

Both posterior denoisers are exact (conjugate-Gaussian algebra, log-space
responsibilities), so the rest of the package can be validated against
closed forms.  A third denoiser, ``ToyAttentionDenoiser``, is a small
self-attention network over frame tokens with feature taps, used by the
inversion-feature-injection machinery.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError
from .schedule import NoiseSchedule

DEFAULT_FRAMES = 16
DEFAULT_DIM = 64
DEFAULT_MODES = 4
DEFAULT_SIGMA_SPATIAL = 0.1
DEFAULT_SIGMA_TEMPORAL = 0.3
DEFAULT_RHO = 0.95
DEFAULT_BLUR_WIDTH = 3
DEFAULT_WORLD_SEED = 7


# ---------------------------------------------------------------------------
# Conditions and worlds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Condition:
    """Class conditioning plus an optional out-of-distribution style offset.

    ``mode_id`` hard-restricts analytic mixtures to one component; ``style``
    is only consumed when sampling (it shifts samples off both priors'
    support) and is invisible to every denoiser.
    """

    mode_id: int | None = None
    style: np.ndarray | None = None


def _check_mixture(means, weights, sigma):
    if means.ndim != 2:
        raise ShapeError(f"means must be (modes, dim), got {means.shape}")
    if weights.shape != (means.shape[0],):
        raise ShapeError("weights must have one entry per mode")
    if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0):
        raise ParameterError("weights must be positive and sum to 1")
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")


@dataclass(frozen=True, eq=False)
class SpatialWorld:
    """Sharp per-frame mixture; frames are statistically independent."""

    means: np.ndarray  # (modes, dim)
    weights: np.ndarray  # (modes,)
    sigma: float
    frames: int = DEFAULT_FRAMES

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        _check_mixture(self.means, self.weights, self.sigma)

    @property
    def modes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True, eq=False)
class TemporalWorld:
    """Blurred mixture tiled across frames with AR(1) frame correlation."""

    means: np.ndarray  # (modes, dim), already blurred
    weights: np.ndarray
    sigma: float
    rho: float
    frames: int = DEFAULT_FRAMES

    def __post_init__(self):
        object.__setattr__(self, "means", np.asarray(self.means, dtype=np.float64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        _check_mixture(self.means, self.weights, self.sigma)
        if not 0.0 <= self.rho < 1.0:
            raise ParameterError(f"rho must be in [0, 1), got {self.rho}")
        if self.frames < 1:
            raise ParameterError("frames must be >= 1")

    @property
    def modes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @cached_property
    def correlation(self) -> np.ndarray:
        return ar1_correlation(self.frames, self.rho)

    @cached_property
    def correlation_eig(self):
        lam, u = np.linalg.eigh(self.correlation)
        return lam, u

    @cached_property
    def correlation_chol(self) -> np.ndarray:
        return np.linalg.cholesky(self.correlation)


def ar1_correlation(frames: int, rho: float) -> np.ndarray:
    """Correlation matrix C[i, j] = rho^|i-j| (positive definite for rho < 1)."""
    idx = np.arange(frames)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def blur_means(means: np.ndarray, width: int = DEFAULT_BLUR_WIDTH) -> np.ndarray:
    """Moving average along the detail axis with reflect padding."""
    if width < 1 or width % 2 == 0:
        raise ParameterError(f"blur width must be odd and >= 1, got {width}")
    pad = width // 2
    padded = np.pad(np.asarray(means, dtype=np.float64), ((0, 0), (pad, pad)), mode="reflect")
    out = np.zeros_like(np.asarray(means, dtype=np.float64))
    for k in range(width):
        out += padded[:, k : k + means.shape[1]]
    return out / width


def default_worlds(
    dim: int = DEFAULT_DIM,
    modes: int = DEFAULT_MODES,
    frames: int = DEFAULT_FRAMES,
    sigma_spatial: float = DEFAULT_SIGMA_SPATIAL,
    sigma_temporal: float = DEFAULT_SIGMA_TEMPORAL,
    rho: float = DEFAULT_RHO,
    blur_width: int = DEFAULT_BLUR_WIDTH,
    seed: int = DEFAULT_WORLD_SEED,
) -> tuple[SpatialWorld, TemporalWorld]:
    """Build the paired worlds: same modes, blurred and frame-coupled on one side.

    Mode means are Rademacher (+/-1) patterns, so the width-``blur_width``
    moving average removes a large share of their high-frequency energy and
    "sharp vs blurry" is structural, not a matter of tuning.
    """
    rng = np.random.default_rng(seed)
    means = rng.integers(0, 2, size=(modes, dim)).astype(np.float64) * 2.0 - 1.0
    weights = np.full(modes, 1.0 / modes)
    spatial = SpatialWorld(means=means, weights=weights, sigma=sigma_spatial, frames=frames)
    temporal = TemporalWorld(
        means=blur_means(means, blur_width),
        weights=weights,
        sigma=sigma_temporal,
        rho=rho,
        frames=frames,
    )
    return spatial, temporal


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _pick_mode(world, c: Condition | None, rng) -> int:
    if c is not None and c.mode_id is not None:
        if not 0 <= c.mode_id < world.modes:
            raise ParameterError(f"mode_id {c.mode_id} outside 0..{world.modes - 1}")
        return int(c.mode_id)
    return int(rng.choice(world.modes, p=world.weights))


def sample_world(world, c: Condition | None, seed) -> np.ndarray:
    """Draw one video latent (frames, dim) from a world's mixture.

    One mode per video; the temporal world draws jointly with its AR(1)
    frame coupling.  A style offset on the condition is added to every frame.
    """
    rng = _as_rng(seed)
    k = _pick_mode(world, c, rng)
    eta = rng.standard_normal((world.frames, world.dim))
    if isinstance(world, TemporalWorld):
        noise = world.sigma * (world.correlation_chol @ eta)
    else:
        noise = world.sigma * eta
    z = world.means[k][None, :] + noise
    if c is not None and c.style is not None:
        z = z + np.asarray(c.style, dtype=np.float64)[None, :]
    return z


def make_degraded_video(
    world_t: TemporalWorld, c: Condition | None, flicker_sigma: float, seed
) -> np.ndarray:
    """Temporal-world sample plus independent per-frame jitter (flicker)."""
    if flicker_sigma < 0:
        raise ParameterError(f"flicker_sigma must be >= 0, got {flicker_sigma}")
    rng = _as_rng(seed)
    z = sample_world(world_t, c, rng)
    return z + flicker_sigma * rng.standard_normal(z.shape)


# ---------------------------------------------------------------------------
# Analytic posterior denoisers
# ---------------------------------------------------------------------------


def _log_softmax_weights(loglik: np.ndarray, axis: int) -> np.ndarray:
    shifted = loglik - loglik.max(axis=axis, keepdims=True)
    w = np.exp(shifted)
    return w / w.sum(axis=axis, keepdims=True)


def gmm_posterior_eps(
    z_t: np.ndarray, t: int, world, c: Condition | None, sched: NoiseSchedule
) -> np.ndarray:
    """Optimal noise prediction under the world's mixture prior.

    This is the posterior-mean denoiser rearranged to predict noise.  The
    responsibilities are computed in log space; at level 0 the prediction is
    exactly zero (the noising map is the identity there).
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    t = sched.check_timestep(t)
    ab = sched.alpha_bar[t]
    restrict = None if c is None else c.mode_id
    if restrict is not None and not 0 <= restrict < world.modes:
        raise ParameterError(f"mode_id {restrict} outside 0..{world.modes - 1}")

    if isinstance(world, SpatialWorld):
        return _spatial_posterior_eps(z_t, ab, world, restrict)
    if isinstance(world, TemporalWorld):
        return _temporal_posterior_eps(z_t, ab, world, restrict)
    raise ParameterError(f"unsupported world type {type(world).__name__}")


def _spatial_posterior_eps(z_t, ab, world: SpatialWorld, restrict):
    if z_t.ndim != 2 or z_t.shape[1] != world.dim:
        raise ShapeError(f"latent must be (frames, {world.dim}), got {z_t.shape}")
    scaled_means = np.sqrt(ab) * world.means  # (K, D)
    marg_var = ab * world.sigma**2 + (1.0 - ab)
    if restrict is not None:
        post_mean_scaled = scaled_means[restrict][None, :]
    else:
        diff = z_t[:, None, :] - scaled_means[None, :, :]  # (F, K, D)
        loglik = np.log(world.weights)[None, :] - (diff**2).sum(-1) / (2.0 * marg_var)
        resp = _log_softmax_weights(loglik, axis=1)  # (F, K)
        post_mean_scaled = resp @ scaled_means  # (F, D)
    return np.sqrt(1.0 - ab) * (z_t - post_mean_scaled) / marg_var


def _temporal_posterior_eps(z_t, ab, world: TemporalWorld, restrict):
    if z_t.shape != (world.frames, world.dim):
        raise ShapeError(
            f"latent must be ({world.frames}, {world.dim}), got {z_t.shape}"
        )
    lam, u = world.correlation_eig
    var = ab * world.sigma**2 * lam + (1.0 - ab)  # (F,) eigen-variances
    scaled_means = np.sqrt(ab) * world.means  # (K, D), tiled across frames
    diffs = z_t[None, :, :] - scaled_means[:, None, :]  # (K, F, D)
    tilde = np.einsum("fi,kfd->kid", u, diffs)  # U^T along the frame axis
    if restrict is not None:
        resp = np.zeros(world.modes)
        resp[restrict] = 1.0
    else:
        quad = ((tilde**2).sum(-1) / var[None, :]).sum(-1)  # (K,)
        loglik = np.log(world.weights) - 0.5 * quad
        resp = _log_softmax_weights(loglik, axis=0)
    whitened = tilde / var[None, :, None]
    eps_modes = np.einsum("if,kfd->kid", u, whitened)  # back out of the eigenbasis
    return np.sqrt(1.0 - ab) * np.einsum("k,kfd->fd", resp, eps_modes)


def spatial_log_density(v: np.ndarray, world: SpatialWorld, c: Condition | None = None):
    """Per-frame log density under the sharp mixture (fully normalized)."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != world.dim:
        raise ShapeError(f"latent must be (frames, {world.dim}), got {v.shape}")
    diff = v[:, None, :] - world.means[None, :, :]
    quad = (diff**2).sum(-1) / (2.0 * world.sigma**2)
    const = -0.5 * world.dim * np.log(2.0 * np.pi * world.sigma**2)
    restrict = None if c is None else c.mode_id
    if restrict is not None:
        return const - quad[:, restrict]
    logterms = np.log(world.weights)[None, :] - quad
    peak = logterms.max(axis=1, keepdims=True)
    return const + (peak + np.log(np.exp(logterms - peak).sum(axis=1, keepdims=True)))[:, 0]


class Denoiser:
    """Noise-prediction interface with exact evaluation counting.

    Subclasses implement ``_eps``; ``evaluate`` checks the output shape and
    bumps the counter under a lock so concurrent callers stay linearizable.
    """

    frame_independent = False
    has_taps = False

    def __init__(self):
        self._evals = 0
        self._lock = threading.Lock()

    @property
    def num_evals(self) -> int:
        return self._evals

    def _count(self):
        with self._lock:
            self._evals += 1

    def evaluate(self, z_t, t, c):
        self._count()
        out = self._eps(z_t, t, c)
        if out.shape != np.shape(z_t):
            raise ShapeError(f"denoiser output {out.shape} != input {np.shape(z_t)}")
        return out

    def _eps(self, z_t, t, c):
        raise NotImplementedError


class AnalyticDenoiser(Denoiser):
    """Exact posterior denoiser for either toy world."""

    def __init__(self, world, sched: NoiseSchedule):
        super().__init__()
        self.world = world
        self.sched = sched
        self.frame_independent = isinstance(world, SpatialWorld)

    def _eps(self, z_t, t, c):
        return gmm_posterior_eps(z_t, t, self.world, c, self.sched)


class ZeroDenoiser(Denoiser):
    """Predicts zero noise everywhere; inversion under it is pure rescaling."""

    frame_independent = True

    def _eps(self, z_t, t, c):
        return np.zeros_like(np.asarray(z_t, dtype=np.float64))


# ---------------------------------------------------------------------------
# Toy attention denoiser with feature taps
# ---------------------------------------------------------------------------

_TIME_FREQS = np.arange(1, 9, dtype=np.float64)  # 8 sin + 8 cos features


def _time_features(t: int, total_steps: int) -> np.ndarray:
    u = 2.0 * np.pi * (t / total_steps)
    return np.concatenate([np.sin(_TIME_FREQS * u), np.cos(_TIME_FREQS * u)])


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ToyAttentionDenoiser(Denoiser):
    """Stack of single-head self-attention blocks over frame tokens.

    Each block runs two parallel paths off its input: a linear feature map
    (tap kind ``f``) and an attention path whose query/key/value projections
    are tapped as ``Q``/``K``/``V``.  The block output is
    ``f + Attn(Q, K, V) @ w_o + b_o``, so replacing all four tapped
    quantities pins the block output regardless of the block input; with
    every block injected the network output is determined entirely by the
    cache.  That property is what makes full-injection reconstruction exact
    for arbitrary (even untrained) weights.
    """

    has_taps = True

    def __init__(
        self,
        dim: int = DEFAULT_DIM,
        embed: int = DEFAULT_DIM,
        blocks: int = 4,
        total_steps: int = 8,
        n_modes: int = DEFAULT_MODES,
        seed: int = 0,
    ):
        super().__init__()
        self.dim = dim
        self.embed = embed
        self.blocks = blocks
        self.total_steps = total_steps
        self.n_modes = n_modes
        self.seed = seed
        rng = np.random.default_rng(seed)
        tdim = 2 * len(_TIME_FREQS)

        def w(shape):
            return rng.standard_normal(shape) / np.sqrt(shape[0])

        p = {
            "w_in": w((dim, embed)),
            "w_time": w((tdim, embed)),
            "cond_emb": rng.standard_normal((n_modes + 1, embed)) * 0.1,
            "b_in": np.zeros(embed),
            "w_out": w((embed, dim)),
            "b_out": np.zeros(dim),
        }
        for layer in range(blocks):
            p[f"w_f{layer}"] = w((embed, embed))
            p[f"b_f{layer}"] = np.zeros(embed)
            p[f"w_q{layer}"] = w((embed, embed))
            p[f"w_k{layer}"] = w((embed, embed))
            p[f"w_v{layer}"] = w((embed, embed))
            p[f"w_o{layer}"] = w((embed, embed))
            p[f"b_o{layer}"] = np.zeros(embed)
        self.params = p

    # -- parameter plumbing (serialization keeps this order) --

    def param_names(self) -> list[str]:
        names = ["w_in", "w_time", "cond_emb", "b_in"]
        for layer in range(self.blocks):
            names += [
                f"w_f{layer}", f"b_f{layer}", f"w_q{layer}", f"w_k{layer}",
                f"w_v{layer}", f"w_o{layer}", f"b_o{layer}",
            ]
        names += ["w_out", "b_out"]
        return names

    def _cond_index(self, c: Condition | None) -> int:
        if c is None or c.mode_id is None:
            return 0
        if not 0 <= c.mode_id < self.n_modes:
            raise ParameterError(f"mode_id {c.mode_id} outside 0..{self.n_modes - 1}")
        return c.mode_id + 1

    def forward(self, z_t, t, c, injection=None, capture=None, capture_key=None):
        """One denoiser evaluation, optionally with capture or injection.

        ``injection`` is a ``(FeatureCache, InjectionConfig)`` pair; cached
        features are looked up at the call's timestep.  ``capture`` records
        this call's tap outputs under ``capture_key`` (defaults to ``t``).
        """
        self._count()
        z_t = np.asarray(z_t, dtype=np.float64)
        if z_t.ndim != 2 or z_t.shape[1] != self.dim:
            raise ShapeError(f"latent must be (frames, {self.dim}), got {z_t.shape}")
        from .sfi import blended_attention  # local import to avoid a cycle

        cache = cfg = None
        if injection is not None:
            cache, cfg = injection
        key = t if capture_key is None else capture_key
        p = self.params
        h = (
            z_t @ p["w_in"]
            + _time_features(t, self.total_steps) @ p["w_time"]
            + p["cond_emb"][self._cond_index(c)]
            + p["b_in"]
        )
        scale = 1.0 / np.sqrt(self.embed)
        for layer in range(self.blocks):
            f = h @ p[f"w_f{layer}"] + p[f"b_f{layer}"]
            q = h @ p[f"w_q{layer}"]
            k = h @ p[f"w_k{layer}"]
            v = h @ p[f"w_v{layer}"]
            if capture is not None:
                capture.put(key, layer, "f", f)
                capture.put(key, layer, "Q", q)
                capture.put(key, layer, "K", k)
                capture.put(key, layer, "V", v)
            injected = cfg is not None and layer in cfg.layers
            if injected and cfg.inject_f:
                f = cache.get(t, layer, "f")
            if injected and cfg.inject_kv:
                attn = blended_attention(
                    q,
                    cache.get(t, layer, "Q"),
                    cache.get(t, layer, "K"),
                    cache.get(t, layer, "V"),
                    cfg.gamma,
                )
            else:
                attn = _softmax_rows((q @ k.T) * scale) @ v
            h = f + attn @ p[f"w_o{layer}"] + p[f"b_o{layer}"]
        return h @ p["w_out"] + p["b_out"]

    def evaluate(self, z_t, t, c):
        # forward() counts the evaluation itself
        return self.forward(z_t, t, c)


def attention_forward(model: ToyAttentionDenoiser, z_t, t, c, injection=None):
    """Forward pass of the attention denoiser, optionally with injection."""
    return model.forward(z_t, t, c, injection=injection)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainRecipe:
    steps: int = 3500
    lr: float = 3e-3
    batch_size: int = 32
    seed: int = 0


def _batched_forward(model: ToyAttentionDenoiser, z, tfeat, cond_idx, want_grads=False):
    """Vectorized forward over a batch (B, F, D); returns output and tape."""
    p = model.params
    scale = 1.0 / np.sqrt(model.embed)
    h = z @ p["w_in"] + (tfeat @ p["w_time"])[:, None, :] + p["cond_emb"][cond_idx][:, None, :] + p["b_in"]
    tape = {"h": [h], "f": [], "q": [], "k": [], "v": [], "a": [], "attn": []}
    for layer in range(model.blocks):
        f = h @ p[f"w_f{layer}"] + p[f"b_f{layer}"]
        q = h @ p[f"w_q{layer}"]
        k = h @ p[f"w_k{layer}"]
        v = h @ p[f"w_v{layer}"]
        a = _softmax_rows(np.einsum("bfe,bge->bfg", q, k) * scale)
        attn = np.einsum("bfg,bge->bfe", a, v)
        h = f + attn @ p[f"w_o{layer}"] + p[f"b_o{layer}"]
        if want_grads:
            for name, val in (("f", f), ("q", q), ("k", k), ("v", v), ("a", a), ("attn", attn)):
                tape[name].append(val)
            tape["h"].append(h)
    out = h @ p["w_out"] + p["b_out"]
    return out, tape


def _batched_backward(model, z, tfeat, cond_idx, tape, dout):
    """Gradients of a scalar loss wrt every parameter, given d(loss)/d(output)."""
    p = model.params
    scale = 1.0 / np.sqrt(model.embed)
    grads = {name: np.zeros_like(val) for name, val in p.items()}
    h_last = tape["h"][-1]
    grads["w_out"] = np.einsum("bfe,bfd->ed", h_last, dout)
    grads["b_out"] = dout.sum((0, 1))
    dh = dout @ p["w_out"].T
    for layer in range(model.blocks - 1, -1, -1):
        h_in = tape["h"][layer]
        f, q, k, v = (tape[n][layer] for n in ("f", "q", "k", "v"))
        a, attn = tape["a"][layer], tape["attn"][layer]
        grads[f"w_o{layer}"] = np.einsum("bfe,bfg->eg", attn, dh)
        grads[f"b_o{layer}"] = dh.sum((0, 1))
        dattn = dh @ p[f"w_o{layer}"].T
        df = dh  # residual path
        da = np.einsum("bfe,bge->bfg", dattn, v)
        dv = np.einsum("bgf,bge->bfe", a.transpose(0, 2, 1), dattn)
        ds = a * (da - (da * a).sum(-1, keepdims=True))
        dq = np.einsum("bfg,bge->bfe", ds, k) * scale
        dk = np.einsum("bgf,bge->bfe", ds.transpose(0, 2, 1), q) * scale
        grads[f"w_f{layer}"] = np.einsum("bfe,bfg->eg", h_in, df)
        grads[f"b_f{layer}"] = df.sum((0, 1))
        grads[f"w_q{layer}"] = np.einsum("bfe,bfg->eg", h_in, dq)
        grads[f"w_k{layer}"] = np.einsum("bfe,bfg->eg", h_in, dk)
        grads[f"w_v{layer}"] = np.einsum("bfe,bfg->eg", h_in, dv)
        dh = (
            df @ p[f"w_f{layer}"].T
            + dq @ p[f"w_q{layer}"].T
            + dk @ p[f"w_k{layer}"].T
            + dv @ p[f"w_v{layer}"].T
        )
    grads["w_in"] = np.einsum("bfd,bfe->de", z, dh)
    grads["w_time"] = np.einsum("bt,bfe->te", tfeat, dh)
    grads["b_in"] = dh.sum((0, 1))
    np.add.at(grads["cond_emb"], cond_idx, dh.sum(1))
    return grads


def _draw_training_batch(world: TemporalWorld, sched, rng, batch_size):
    modes = rng.integers(0, world.modes, size=batch_size)
    eta = rng.standard_normal((batch_size, world.frames, world.dim))
    chol = world.correlation_chol
    z0 = world.means[modes][:, None, :] + world.sigma * np.einsum("fg,bgd->bfd", chol, eta)
    t = rng.integers(1, sched.total_steps + 1, size=batch_size)
    eps = rng.standard_normal(z0.shape)
    ab = sched.alpha_bar[t][:, None, None]
    z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    tfeat = np.stack([_time_features(ti, sched.total_steps) for ti in t])
    return z_t, tfeat, modes + 1, eps


def train_toy_denoiser(
    world: TemporalWorld, sched: NoiseSchedule, recipe: TrainRecipe
) -> ToyAttentionDenoiser:
    """Fit the attention denoiser to the temporal world by noise regression.

    Adam on mini-batches of (noisy latent, level, condition, target noise).
    The returned model carries a ``train_report`` dict with held-out losses.
    """
    model = ToyAttentionDenoiser(
        dim=world.dim,
        total_steps=sched.total_steps,
        n_modes=world.modes,
        seed=recipe.seed,
    )
    data_rng = np.random.default_rng(np.random.SeedSequence([recipe.seed, 1]))
    held_rng = np.random.default_rng(np.random.SeedSequence([recipe.seed, 2]))
    held = _draw_training_batch(world, sched, held_rng, 256)

    def held_out_loss():
        z_t, tfeat, cond_idx, eps = held
        out, _ = _batched_forward(model, z_t, tfeat, cond_idx)
        return float(np.mean((out - eps) ** 2))

    initial = held_out_loss()
    if recipe.steps == 0:
        model.train_report = {"initial_loss": initial, "final_loss": initial}
        return model

    m = {k: np.zeros_like(v) for k, v in model.params.items()}
    v2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    for step in range(1, recipe.steps + 1):
        z_t, tfeat, cond_idx, eps = _draw_training_batch(
            world, sched, data_rng, recipe.batch_size
        )
        out, tape = _batched_forward(model, z_t, tfeat, cond_idx, want_grads=True)
        resid = out - eps
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise TrainingError(f"training loss became non-finite at step {step}")
        dout = 2.0 * resid / resid.size
        grads = _batched_backward(model, z_t, tfeat, cond_idx, tape, dout)
        for name, g in grads.items():
            m[name] = beta1 * m[name] + (1 - beta1) * g
            v2[name] = beta2 * v2[name] + (1 - beta2) * g**2
            mhat = m[name] / (1 - beta1**step)
            vhat = v2[name] / (1 - beta2**step)
            model.params[name] -= recipe.lr * mhat / (np.sqrt(vhat) + eps_adam)

    final = held_out_loss()
    if not final < initial:
        raise TrainingError(
            f"training did not reduce held-out loss ({initial:.4f} -> {final:.4f})"
        )
    model.train_report = {"initial_loss": initial, "final_loss": final}
    return model
