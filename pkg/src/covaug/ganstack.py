"""Conditional GAN variants for feature translation and their objectives.

Four variants share one code path:

``cgan``   G_n / D_n with the conditional adversarial loss only.
``ccyc``   adds G_b / D_b, the reverse adversarial loss and cycle consistency,
           with standard normal noise fed to G_b.
``cdeli``  as ``ccyc`` but the noise comes from a learnable Gaussian mixture.
``ccov``   as ``ccyc`` plus the covariance-preserving Ky Fan loss.

Generators are conditioned on prototypes rather than one-hot labels:
``G_n(x_b | l_src, l_tgt)`` and ``G_b(x_n | l_src, l_tgt, z)``.
Discriminators output ``len(slots) + 1`` logits; the last one is "fake".

A batch is first turned into a :class:`BatchPlan` holding every index and
weight the losses need. Per novel class, the similarity weights of the base
classes that actually occur in the batch are renormalized to one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffengine as de
from .errors import ArgumentError, NotApplicableError

VARIANTS = ("cgan", "ccyc", "cdeli", "ccov")
LOG_FLOOR = 1e-12


# -- model bundle ---------------------------------------------------------

@dataclass
class MixtureNoise:
    mu: np.ndarray     # (C, Z)
    sigma: np.ndarray  # (C, Z), used as drawn; only sigma * eps matters

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        k = 1 if n is None else n
        comp = rng.integers(self.n_components, size=k)
        eps = rng.standard_normal((k, self.mu.shape[1]))
        z = self.mu[comp] + self.sigma[comp] * eps
        return z[0] if n is None else z

    def mean(self) -> np.ndarray:
        return self.mu.mean(axis=0)


def init_mixture(n_components: int, noise_dim: int, rng: np.random.Generator) -> MixtureNoise:
    """Means ~ U(-1, 1), standard deviations ~ N(0, 0.2) elementwise."""
    if n_components < 1 or noise_dim < 1:
        raise ArgumentError("mixture needs C >= 1 and Z >= 1")
    mu = rng.uniform(-1.0, 1.0, size=(n_components, noise_dim))
    sigma = rng.normal(0.0, 0.2, size=(n_components, noise_dim))
    return MixtureNoise(mu, sigma)


def sample_noise(variant: str, mixture: MixtureNoise | None, noise_dim: int,
                 rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    if variant == "cdeli":
        if mixture is None:
            raise ArgumentError("cdeli noise needs a mixture")
        return mixture.sample(rng, n)
    shape = (noise_dim,) if n is None else (n, noise_dim)
    return rng.standard_normal(shape)


@dataclass
class ModelBundle:
    variant: str
    dim: int
    noise_dim: int
    hidden: int
    novel_slots: list      # class labels of D_n's real outputs
    base_slots: list       # class labels of D_b's real outputs
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArgumentError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.novel_slots = [int(x) for x in self.novel_slots]
        self.base_slots = [int(x) for x in self.base_slots]
        self._novel_index = {y: i for i, y in enumerate(self.novel_slots)}
        self._base_index = {y: i for i, y in enumerate(self.base_slots)}

    @property
    def two_way(self) -> bool:
        return self.variant != "cgan"

    @property
    def mixture(self) -> MixtureNoise | None:
        if "mix.mu" not in self.params:
            return None
        return MixtureNoise(self.params["mix.mu"], self.params["mix.sigma"])

    def novel_slot(self, label) -> int:
        try:
            return self._novel_index[int(label)]
        except KeyError:
            raise ArgumentError(f"class {label} has no D_n output slot") from None

    def base_slot(self, label) -> int:
        try:
            return self._base_index[int(label)]
        except KeyError:
            raise ArgumentError(f"class {label} has no D_b output slot") from None

    def generator_names(self) -> list[str]:
        return sorted(k for k in self.params if k.split(".")[0] in ("gn", "gb", "mix"))

    def discriminator_names(self) -> list[str]:
        return sorted(k for k in self.params if k.split(".")[0] in ("dn", "db"))

    def copy(self) -> "ModelBundle":
        return ModelBundle(self.variant, self.dim, self.noise_dim, self.hidden,
                           list(self.novel_slots), list(self.base_slots),
                           {k: v.copy() for k, v in self.params.items()})


def init_bundle(variant: str, dim: int, novel_slots, base_slots, rng: np.random.Generator,
                hidden: int = 512, noise_dim: int = 100, n_components: int = 50) -> ModelBundle:
    """Randomly initialized networks for ``variant``.

    G_n sees ``[x, l_src, l_tgt]`` (width 3D); G_b additionally sees ``z``.
    """
    params: dict = {}
    de.init_mlp(params, "gn", [3 * dim, hidden, hidden, dim], rng)
    de.init_mlp(params, "dn", [dim, hidden, hidden, len(novel_slots) + 1], rng)
    if variant != "cgan":
        de.init_mlp(params, "gb", [3 * dim + noise_dim, hidden, hidden, dim], rng)
        de.init_mlp(params, "db", [dim, hidden, hidden, len(base_slots) + 1], rng)
    if variant == "cdeli":
        mix = init_mixture(n_components, noise_dim, rng)
        params["mix.mu"], params["mix.sigma"] = mix.mu, mix.sigma
    return ModelBundle(variant, dim, noise_dim, hidden, list(novel_slots), list(base_slots), params)


# -- generators -----------------------------------------------------------

def g_novel(params, x, l_src, l_tgt, tape: de.Tape) -> de.Node:
    """Batched G_n on rows ``[x, l_src, l_tgt]``."""
    return de.mlp_forward(params, "gn", de.concat([x, l_src, l_tgt], axis=1, tape=tape), tape)


def g_base(params, x, l_src, l_tgt, z, tape: de.Tape) -> de.Node:
    """Batched G_b on rows ``[x, l_src, l_tgt, z]``."""
    return de.mlp_forward(params, "gb", de.concat([x, l_src, l_tgt, z], axis=1, tape=tape), tape)


def _check_vec(v, n, what):
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise ArgumentError(f"{what} has shape {v.shape}, expected ({n},)")
    return v


def generate_novel(bundle: ModelBundle, x_b, y_b, y_n, protos, tape: de.Tape | None = None):
    """Translate one base example of class ``y_b`` into novel class ``y_n``."""
    D = bundle.dim
    x_b = _check_vec(x_b, D, "x_b")
    own = tape is None
    tape = tape or de.Tape()
    out = g_novel(bundle.params, x_b[None], protos[y_b][None], protos[y_n][None], tape)
    return out.value[0] if own else out


def generate_base(bundle: ModelBundle, x_n, y_n, y_b, z, protos, tape: de.Tape | None = None):
    """Translate one novel example back to base class ``y_b`` with noise ``z``."""
    if not bundle.two_way:
        raise NotApplicableError("variant cgan has no G_b")
    x_n = _check_vec(x_n, bundle.dim, "x_n")
    z = _check_vec(z, bundle.noise_dim, "z")
    own = tape is None
    tape = tape or de.Tape()
    out = g_base(bundle.params, x_n[None], protos[y_n][None], protos[y_b][None], z[None], tape)
    return out.value[0] if own else out


def generate_novel_batch(bundle: ModelBundle, x, src_labels, tgt_labels, protos) -> np.ndarray:
    """G_n over many rows; plain arrays in and out."""
    x = np.asarray(x, dtype=np.float64)
    l_src = protos.matrix(src_labels)
    l_tgt = protos.matrix(tgt_labels)
    return g_novel(bundle.params, x, l_src, l_tgt, de.Tape()).value


# -- batch plan -----------------------------------------------------------

@dataclass
class BatchPlan:
    """Indices, prototypes and weights derived from one batch."""

    novel_x: np.ndarray
    novel_y: np.ndarray
    base_x: np.ndarray
    base_y: np.ndarray
    groups: list                 # novel labels with at least one retrieved base row
    # D_n real term
    real_n_rows: np.ndarray
    real_n_slots: np.ndarray
    real_n_w: np.ndarray
    active_n: np.ndarray
    # fakes G_n(x_b): one row per (base row, novel group) pair
    fake_src: np.ndarray
    fake_grp: np.ndarray
    fake_lsrc: np.ndarray
    fake_ltgt: np.ndarray
    fake_w: np.ndarray
    # novel -> base pairs for the forward cycle and D_b's fakes
    fwd_rows: np.ndarray
    fwd_lsrc: np.ndarray
    fwd_ltgt: np.ndarray
    fwd_w: np.ndarray
    fwd_fake_w: np.ndarray
    # D_b real term
    real_b_slots: np.ndarray
    real_b_w: np.ndarray
    active_b: np.ndarray
    # covariance pairs (novel group, base class)
    cov_grp: np.ndarray
    cov_base: np.ndarray
    cov_w: np.ndarray
    skipped_cov_pairs: int = 0

    @property
    def n_fake(self) -> int:
        return len(self.fake_src)

    @property
    def n_fwd(self) -> int:
        return len(self.fwd_rows)


def plan_batch(bundle: ModelBundle, batch) -> BatchPlan:
    """Derive loss weights from a batch.

    ``batch`` needs ``novel`` and ``base`` feature sets, a translation map
    ``tmap`` and a prototype table ``protos`` covering every label used.
    """
    novel, base, tmap, protos = batch.novel, batch.base, batch.tmap, batch.protos
    D = bundle.dim
    if novel.dim != D or base.dim != D:
        raise ArgumentError(f"batch feature dimension does not match model D={D}")
    if len(novel) == 0:
        raise ArgumentError("batch has no novel examples")
    base_counts = base.counts()
    novel_counts = novel.counts()

    # renormalized similarity weights over base classes present in the batch
    alpha: dict = {}
    for y in sorted(novel_counts):
        pairs = [(b, w) for b, w in tmap[y] if base_counts.get(b, 0) > 0]
        s = sum(w for _, w in pairs)
        if pairs and s > 0:
            alpha[y] = {b: w / s for b, w in pairs}
    groups = sorted(alpha)
    gindex = {y: i for i, y in enumerate(groups)}
    G = len(groups)
    if G == 0:
        raise ArgumentError("no novel class has a retrieved base example in the batch")

    # D_n real term: per-class mean, then mean over classes
    rows = np.flatnonzero(np.isin(novel.labels, groups))
    real_n_slots = np.array([bundle.novel_slot(y) for y in novel.labels[rows]], dtype=np.int64)
    real_n_w = np.array([1.0 / (G * novel_counts[int(y)]) for y in novel.labels[rows]])
    active_n = np.zeros(len(bundle.novel_slots) + 1, dtype=bool)
    active_n[[bundle.novel_slot(y) for y in groups]] = True
    active_n[-1] = True

    # fakes: every retrieved base row translated into every novel group
    fake_src, fake_grp, fake_w = [], [], []
    for y in groups:
        for i, b in enumerate(base.labels):
            a = alpha[y].get(int(b))
            if a is None:
                continue
            fake_src.append(i)
            fake_grp.append(gindex[y])
            fake_w.append(a / base_counts[int(b)] / G)
    fake_src = np.array(fake_src, dtype=np.int64)
    fake_grp = np.array(fake_grp, dtype=np.int64)
    fake_lsrc = protos.matrix(base.labels[fake_src])
    fake_ltgt = protos.matrix([groups[g] for g in fake_grp])

    # forward cycle: each novel row sent to each present base class of its group
    reverse: dict = {}
    for y in groups:
        for b, a in alpha[y].items():
            reverse.setdefault(b, {})[y] = a
    fwd_rows, fwd_base, fwd_w = [], [], []
    for j, y in enumerate(novel.labels):
        y = int(y)
        if y not in alpha:
            continue
        for b in sorted(alpha[y]):
            fwd_rows.append(j)
            fwd_base.append(b)
            fwd_w.append(alpha[y][b] / novel_counts[y] / G)
    fwd_rows = np.array(fwd_rows, dtype=np.int64)
    fwd_base = np.array(fwd_base, dtype=np.int64)
    fwd_lsrc = protos.matrix(novel.labels[fwd_rows])
    fwd_ltgt = protos.matrix(fwd_base)
    # D_b fakes reuse the same pairs with the reverse map, normalized per base class
    n_rev = len(reverse)
    fwd_fake_w = np.empty(len(fwd_rows))
    for k, (j, b) in enumerate(zip(fwd_rows, fwd_base)):
        y = int(novel.labels[j])
        s = sum(reverse[int(b)].values())
        fwd_fake_w[k] = reverse[int(b)][y] / s / novel_counts[y] / n_rev

    # D_b real term over retrieved base classes present in the batch
    retrieved = sorted(reverse)
    if bundle.two_way:
        real_b_slots = np.array([bundle.base_slot(b) for b in base.labels], dtype=np.int64)
        keep = np.isin(base.labels, retrieved)
        real_b_w = np.where(keep, 1.0, 0.0)
        for b in retrieved:
            m = base.labels == b
            real_b_w[m] /= base_counts[b] * len(retrieved)
        active_b = np.zeros(len(bundle.base_slots) + 1, dtype=bool)
        active_b[[bundle.base_slot(b) for b in retrieved]] = True
        active_b[-1] = True
    else:
        real_b_slots = np.zeros(0, dtype=np.int64)
        real_b_w = np.zeros(0)
        active_b = np.zeros(0, dtype=bool)

    # covariance pairs need >= 2 real base rows and >= 2 fakes
    fake_per_group = np.bincount(fake_grp, minlength=G)
    cov_grp, cov_base, cov_w = [], [], []
    skipped = 0
    contributing = []
    for y in groups:
        g = gindex[y]
        pairs = []
        for b, a in alpha[y].items():
            if base_counts[b] >= 2 and fake_per_group[g] >= 2:
                pairs.append((b, a))
            else:
                skipped += 1
        if pairs:
            contributing.append((g, pairs))
    for g, pairs in contributing:
        s = sum(a for _, a in pairs)
        for b, a in sorted(pairs):
            cov_grp.append(g)
            cov_base.append(b)
            cov_w.append(a / s / len(contributing))

    return BatchPlan(
        novel_x=novel.features, novel_y=novel.labels, base_x=base.features, base_y=base.labels,
        groups=groups, real_n_rows=rows, real_n_slots=real_n_slots, real_n_w=real_n_w,
        active_n=active_n, fake_src=fake_src, fake_grp=fake_grp, fake_lsrc=fake_lsrc,
        fake_ltgt=fake_ltgt, fake_w=np.array(fake_w), fwd_rows=fwd_rows, fwd_lsrc=fwd_lsrc,
        fwd_ltgt=fwd_ltgt, fwd_w=np.array(fwd_w), fwd_fake_w=fwd_fake_w,
        real_b_slots=real_b_slots, real_b_w=real_b_w, active_b=active_b,
        cov_grp=np.array(cov_grp, dtype=np.int64), cov_base=np.array(cov_base, dtype=np.int64),
        cov_w=np.array(cov_w), skipped_cov_pairs=skipped,
    )


def base_covariances(plan: BatchPlan, protos, labels) -> np.ndarray:
    """Covariance of each base class's batch rows, centered at its prototype."""
    out = []
    for b in labels:
        x = plan.base_x[plan.base_y == b]
        d = x - protos[int(b)]
        out.append(d.T @ d / x.shape[0])
    return np.stack(out) if out else np.zeros((0, plan.base_x.shape[1], plan.base_x.shape[1]))


# -- noise for a batch ----------------------------------------------------

@dataclass
class BatchNoise:
    """Frozen noise draws: ``eps`` rows and (for the mixture) component ids."""

    eps_fwd: np.ndarray
    eps_bwd: np.ndarray
    comp_fwd: np.ndarray | None = None
    comp_bwd: np.ndarray | None = None


def draw_batch_noise(bundle: ModelBundle, plan: BatchPlan, rng: np.random.Generator) -> BatchNoise:
    Z = bundle.noise_dim
    if not bundle.two_way:
        return BatchNoise(np.zeros((0, Z)), np.zeros((0, Z)))
    comp_fwd = comp_bwd = None
    if bundle.variant == "cdeli":
        C = bundle.params["mix.mu"].shape[0]
        comp_fwd = rng.integers(C, size=plan.n_fwd)
        comp_bwd = rng.integers(C, size=plan.n_fake)
    eps_fwd = rng.standard_normal((plan.n_fwd, Z))
    eps_bwd = rng.standard_normal((plan.n_fake, Z))
    return BatchNoise(eps_fwd, eps_bwd, comp_fwd, comp_bwd)


def _noise_node(params, eps, comp, tape):
    if comp is None:
        return tape.const(eps)
    mu = de.take_rows(tape.param("mix.mu", params["mix.mu"]), comp)
    sigma = de.take_rows(tape.param("mix.sigma", params["mix.sigma"]), comp)
    return mu + sigma * eps


# -- forward pass ---------------------------------------------------------

@dataclass
class Forward:
    fake_n: de.Node                    # G_n(x_b) for every fake pair
    fwd_b: de.Node | None = None       # G_b(x_n, z): novel rows sent to base classes
    rec_n: de.Node | None = None       # G_n(G_b(x_n, z))
    rec_b: de.Node | None = None       # G_b(G_n(x_b), z)


def forward_pass(bundle: ModelBundle, params, plan: BatchPlan, noise: BatchNoise,
                 tape: de.Tape) -> Forward:
    fake_n = g_novel(params, plan.base_x[plan.fake_src], plan.fake_lsrc, plan.fake_ltgt, tape)
    if not bundle.two_way:
        return Forward(fake_n)
    z_fwd = _noise_node(params, noise.eps_fwd, noise.comp_fwd, tape)
    z_bwd = _noise_node(params, noise.eps_bwd, noise.comp_bwd, tape)
    fwd_b = g_base(params, plan.novel_x[plan.fwd_rows], plan.fwd_lsrc, plan.fwd_ltgt, z_fwd, tape)
    rec_n = g_novel(params, fwd_b, plan.fwd_ltgt, plan.fwd_lsrc, tape)
    rec_b = g_base(params, fake_n, plan.fake_ltgt, plan.fake_lsrc, z_bwd, tape)
    return Forward(fake_n, fwd_b, rec_n, rec_b)


# -- losses ---------------------------------------------------------------

def disc_log_probs(params, prefix: str, x, active, tape: de.Tape) -> de.Node:
    """Clamped log-probabilities of a discriminator over its active outputs."""
    logits = de.mlp_forward(params, prefix, x, tape)
    return de.log_clamped(de.log_softmax(logits, active), LOG_FLOOR)


def disc_probs(params, prefix: str, x, active=None) -> np.ndarray:
    logits = de.mlp_forward(params, prefix, x, de.Tape()).value
    if active is None:
        active = np.ones(logits.shape[1], dtype=bool)
    z = np.where(active, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def adv_loss(params, prefix: str, real_x, real_slots, real_w, fake_x, fake_w, active,
             tape: de.Tape, nonsaturating: bool = False) -> tuple[de.Node, de.Node]:
    """Conditional adversarial objective for one discriminator.

    Returns ``(value, generator_term)``. ``value`` is the weighted mean
    log-probability of real rows under their class plus the weighted mean
    log-probability of fake rows under the fake output; the discriminator
    ascends it. ``generator_term`` is what the generator descends: the fake
    part itself (minimax) or ``-log(1 - p_fake)`` when ``nonsaturating``.
    """
    real_slots = np.asarray(real_slots, dtype=np.int64)
    if real_slots.size == 0:
        raise ArgumentError("adversarial loss needs at least one real example")
    fake_col = len(active) - 1
    lp_real = disc_log_probs(params, prefix, real_x, active, tape)
    real_term = de.weighted_sum(de.pick(lp_real, real_slots), real_w)
    logits_fake = de.mlp_forward(params, prefix, fake_x, tape)
    lp_fake = de.log_clamped(de.log_softmax(logits_fake, active), LOG_FLOOR)
    n_fake = lp_fake.shape[0]
    fake_term = de.weighted_sum(de.pick(lp_fake, np.full(n_fake, fake_col)), fake_w)
    if nonsaturating:
        not_fake = de.log_clamped(de.log_prob_excluding(logits_fake, fake_col, active), LOG_FLOOR)
        g_term = -de.weighted_sum(not_fake, fake_w)
    else:
        g_term = fake_term
    return real_term + fake_term, g_term


def adv_novel(bundle, params, plan: BatchPlan, fwd: Forward, tape, nonsaturating=False):
    return adv_loss(params, "dn", plan.novel_x[plan.real_n_rows], plan.real_n_slots,
                    plan.real_n_w, fwd.fake_n, plan.fake_w, plan.active_n, tape, nonsaturating)


def adv_base(bundle, params, plan: BatchPlan, fwd: Forward, tape, nonsaturating=False):
    if not bundle.two_way:
        raise NotApplicableError("variant cgan has no D_b")
    return adv_loss(params, "db", plan.base_x, plan.real_b_slots, plan.real_b_w,
                    fwd.fwd_b, plan.fwd_fake_w, plan.active_b, tape, nonsaturating)


def cyc_loss(bundle, plan: BatchPlan, fwd: Forward) -> de.Node:
    """Weighted squared reconstruction error of both translation cycles."""
    if not bundle.two_way:
        raise NotApplicableError("variant cgan has no cycle-consistency term")
    err_n = de.row_sqnorm(fwd.rec_n - plan.novel_x[plan.fwd_rows])
    err_b = de.row_sqnorm(fwd.rec_b - plan.base_x[plan.fake_src])
    return de.weighted_sum(err_n, plan.fwd_w) + de.weighted_sum(err_b, plan.fake_w)


def cov_loss(bundle, plan: BatchPlan, fwd: Forward, protos, m: int,
             svd_method: str = "jacobi") -> de.Node:
    """Similarity-weighted Ky Fan m-norm distance between base and generated covariances.

    Generated covariances are centered at each novel class's pseudo-prototype
    (the mean of its generated rows in this batch). ``m`` is capped at D.
    """
    tape = fwd.fake_n.tape
    if plan.cov_w.size == 0:
        return tape.const(0.0)
    m = min(m, bundle.dim)
    n_groups = int(plan.fake_grp.max()) + 1
    sigma_g = de.group_covariance(fwd.fake_n, plan.fake_grp, n_groups)
    labels = sorted(set(plan.cov_base.tolist()))
    sigma_x = base_covariances(plan, protos, labels)
    pos = {b: i for i, b in enumerate(labels)}
    target = sigma_x[[pos[b] for b in plan.cov_base]]
    diff = de.sub(target, de.take_rows(sigma_g, plan.cov_grp))
    return de.weighted_sum(de.kyfan(diff, m, svd_method), plan.cov_w)


@dataclass
class LossReport:
    adv_n: float
    adv_b: float
    cyc: float
    cov: float
    total_generator: float
    total_discriminator: float

    def as_row(self) -> list[float]:
        return [self.adv_n, self.adv_b, self.cyc, self.cov,
                self.total_generator, self.total_discriminator]


@dataclass
class ObjectiveNodes:
    adv_n: de.Node
    adv_b: de.Node | None
    cyc: de.Node | None
    cov: de.Node | None
    total_g: de.Node
    total_d: de.Node

    def report(self) -> LossReport:
        def val(n):
            return 0.0 if n is None else float(n.value)
        return LossReport(val(self.adv_n), val(self.adv_b), val(self.cyc), val(self.cov),
                          val(self.total_g), val(self.total_d))


def objective(bundle: ModelBundle, params, plan: BatchPlan, protos, noise: BatchNoise,
              tape: de.Tape, lam_cyc: float = 5.0, lam_cov: float = 0.5, m: int = 10,
              nonsaturating: bool = False, with_cov: bool = True,
              svd_method: str = "jacobi") -> ObjectiveNodes:
    """Build every active loss term of ``bundle.variant`` on ``tape``.

    ``total_d`` is what the discriminators maximize (both adversarial
    terms); ``total_g`` is what the generators minimize (the fake parts of
    the adversarial terms plus the weighted cycle and covariance terms).
    ``with_cov=False`` leaves the covariance term out; it does not touch the
    discriminators, so a discriminator step can skip it.
    """
    fwd = forward_pass(bundle, params, plan, noise, tape)
    adv_n, g_n = adv_novel(bundle, params, plan, fwd, tape, nonsaturating)
    if not bundle.two_way:
        return ObjectiveNodes(adv_n, None, None, None, g_n, adv_n)
    adv_b, g_b = adv_base(bundle, params, plan, fwd, tape, nonsaturating)
    cyc = cyc_loss(bundle, plan, fwd)
    total_g = g_n + g_b + lam_cyc * cyc
    cov = None
    if bundle.variant == "ccov" and with_cov:
        cov = cov_loss(bundle, plan, fwd, protos, m, svd_method)
        total_g = total_g + lam_cov * cov
    return ObjectiveNodes(adv_n, adv_b, cyc, cov, total_g, adv_n + adv_b)


def total_objective(bundle: ModelBundle, batch, lam_cyc: float, lam_cov: float,
                    rng: np.random.Generator, m: int = 10,
                    nonsaturating: bool = False, svd_method: str = "jacobi") -> LossReport:
    """Evaluate the variant's full objective on a batch with fresh noise."""
    plan = plan_batch(bundle, batch)
    noise = draw_batch_noise(bundle, plan, rng)
    nodes = objective(bundle, bundle.params, plan, batch.protos, noise, de.Tape(),
                      lam_cyc, lam_cov, m, nonsaturating, svd_method=svd_method)
    return nodes.report()
