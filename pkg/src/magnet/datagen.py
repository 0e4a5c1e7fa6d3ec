"""Synthetic moving-target-selection data.

Real in-vehicle selection logs are not publicly available, so this module
synthesizes stand-ins with the same shape: bouncing-target scenes, 3 s
motion windows from a mean-reverting base process plus impulse events, and
endpoints drawn from a known ternary-Gaussian ground truth whose spread is
coupled to window intensity. Because the ground truth is explicit, fitted
experts and context gating have real signal to recover, and parameter
recovery is testable exactly.

Units: 2D scenes are pixels and px/s; 3D scenes are meters and m/s; windows
are m/s^2 at `sample_rate` Hz. Target `size` is the radius.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import hilbert

from .errors import ConfigurationError, GenerationError, InputError, SplitError
from .gaussian import TargetState, TernaryGaussianParams, local_frame, ternary_moments
from .metrics import rmsa
from .records import GENDERS, Dataset, EnvWindow, TrialRecord, UserProfile

# Per-user style effects are deterministic, smooth functions of the profile
# (tanh-squashed sinusoids over the age range plus gender offsets), so they
# survive serialization and are recoverable from a handful of a user's
# trials. Each effect is sized in units of the coefficient it perturbs and
# bounded by half that coefficient's spread, so correcting for a user takes
# per-user evidence rather than a population average, while wide calibration
# rosters still average out to the population model. Component layout: rows
# 0-8 shift the local-frame mean coefficients, axis-major over
# (tangent, normal, binormal) x (anchor, velocity, size); rows 9-11 scale
# each local axis's endpoint spread. Spread scaling is per axis rather than
# a single user factor: a shared factor cancels when candidate densities are
# compared within a trial, whereas axis anisotropy reweights them.
MEAN_SHIFT_AMP = 0.5
IDIO_AGE_SPAN = (19.0, 55.0)
IDIO_SQUASH = 1.5
# One (frequency, phase) pair per component; frequencies are in cycles over
# the age span, with irrational-ish spacing to decorrelate the components.
IDIO_FREQ = (1.3, 1.7, 2.3, 2.9, 3.4, 4.1, 1.5, 2.1, 2.7)
IDIO_PHASE = (0.0, 1.1, 2.4, 3.9, 5.0, 0.7, 1.8, 3.2, 4.4)
# Additive gender effect per component (rows) and gender index (cols).
IDIO_GENDER = np.array([
    [+1.0, -1.0, 0.0],
    [-1.0, +1.0, 0.0],
    [+1.0, 0.0, -1.0],
    [-1.0, +1.0, +1.0],
    [0.0, -1.0, +1.0],
    [+1.0, -1.0, +1.0],
    [-1.0, 0.0, +1.0],
    [0.0, +1.0, -1.0],
    [+1.0, +1.0, 0.0],
])
IDIO_GENDER_GAIN = 0.3

# Per-axis log spread scales follow smooth motor-precision trends: tangent
# scatter grows with age (tracking lag smears along the motion) while normal
# scatter tightens mildly, with small gender tilts on top. Axes move at
# different rates, so users differ in spread shape and not only in overall
# scale. Rows are local axes (tangent, normal, depth), columns of the tilt
# table follow GENDERS order.
PRECISION_AGE_SLOPE = np.array([0.43, -0.18, 0.30])
PRECISION_GENDER_TILT = np.array([
    [-0.05, +0.05, 0.0],
    [+0.08, -0.08, 0.0],
    [+0.03, -0.03, 0.0],
])
PRECISION_CAP = 0.48  # |age slope| + |gender tilt| stays under this per axis

# Users also carry a narrowband grip-tremor line in the motion window, far
# above the vehicle base's ~0.3 Hz spectral corner. Its frequency and
# amplitude follow the same age trend as the endpoint spread, so a window is
# informative about the user's precision profile and not only about the
# vehicle regime. Amplitudes stay well below the base RMS so regime
# clustering is untouched.
TREMOR_FREQ_MID = 9.5       # Hz
TREMOR_FREQ_SPAN = 2.5      # Hz across the age span
TREMOR_AMP = 0.06           # m/s^2
TREMOR_AMP_SPAN = 0.6       # log-amplitude across the age span
TREMOR_AGE_GAIN = 0.95      # keeps the line strictly inside the spans
TREMOR_AXIS_GAIN = (1.0, 1.0, 0.5)

# Window intensity widens endpoint spread along the motion tangent with the
# full coupling gain; off-tangent axes get this fraction of it.
OFF_TANGENT_COUPLING = 0.4

ENV_DECIMALS = 4
COORD_DECIMALS = 4


@dataclass
class VibrationProfile:
    """Mean-reverting base acceleration plus bump/turn impulses."""

    reversion: float = 2.0              # 1/s pull toward zero
    diffusion: tuple = (0.44, 0.44, 0.44)   # per-axis m/s^2 per sqrt(s)
    impulse_rate: float = 0.1           # events per second
    impulse_amp: float = 1.8            # m/s^2 peak scale
    sample_rate: float = 50.0
    duration: float = 3.0

    def __post_init__(self):
        if self.sample_rate < 10:
            raise InputError(f"sample rate must be >= 10 Hz, got {self.sample_rate}")
        if self.reversion <= 0 or self.reversion / self.sample_rate >= 1:
            raise ConfigurationError(
                f"reversion {self.reversion}/s is unstable at {self.sample_rate} Hz"
            )
        if len(self.diffusion) != 3 or any(d < 0 for d in self.diffusion):
            raise ConfigurationError(f"diffusion must be 3 nonnegative values, got {self.diffusion}")


VIB_QUIET = VibrationProfile(diffusion=(0.42, 0.42, 0.60), impulse_rate=0.04, impulse_amp=1.0)
VIB_ACTIVE = VibrationProfile(diffusion=(0.70, 0.70, 1.10), impulse_rate=0.55, impulse_amp=2.2)


def _geometric_scan(x: np.ndarray, decay: float) -> np.ndarray:
    """y[t] = decay * y[t-1] + x[t] with y[-1] = 0, vectorized over time.

    Uses y[t]/decay^t = sum_j x[j]/decay^j; decay^-t stays in float64 range
    for the decays used here (>= 0.5 over ~150 steps), guarded by a loop
    fallback for anything stiffer.
    """
    T = x.shape[0]
    if decay < 0.5:
        y = np.zeros_like(x)
        for t in range(T):
            y[t] = (y[t - 1] if t else 0.0) * decay + x[t]
        return y
    pows = decay ** np.arange(T)[:, None]
    return pows * np.cumsum(x / pows, axis=0)


def _leaky_integral(x: np.ndarray, beta: float, dt: float) -> np.ndarray:
    return _geometric_scan(x * dt, beta)


def _vib_channels(acc: np.ndarray, rate: float) -> np.ndarray:
    """Derive the 12 vibration channels from acceleration: leaky-integrated
    velocity and displacement, instantaneous oscillation angle (deg), and
    smoothed instantaneous frequency (Hz), each per axis."""
    dt = 1.0 / rate
    beta = 1.0 - 2.0 * np.pi * 0.5 * dt    # 0.5 Hz leak keeps integrals drift-free
    vel = _leaky_integral(acc, beta, dt)
    disp = _leaky_integral(vel, beta, dt)
    analytic = hilbert(acc, axis=0)
    phase = np.angle(analytic)
    angle = np.degrees(phase)
    unwrapped = np.unwrap(phase, axis=0)
    freq = np.diff(unwrapped, axis=0, prepend=unwrapped[:1]) * rate / (2 * np.pi)
    freq = np.clip(freq, 0.0, None)
    kernel = np.ones(5) / 5
    freq = np.stack([np.convolve(freq[:, i], kernel, mode="same") for i in range(3)], axis=1)
    return np.concatenate([vel, angle, disp, freq], axis=1)


def simulate_motion_window(
    p: VibrationProfile, seed, tremor: tuple | None = None
) -> EnvWindow:
    rng = np.random.default_rng(seed)
    T = round(p.duration * p.sample_rate)
    dt = 1.0 / p.sample_rate
    phi = 1.0 - p.reversion * dt
    diffusion = np.asarray(p.diffusion)

    # Discrete mean-reverting recursion a[t] = phi a[t-1] + c xi[t], started
    # from its exact stationary distribution.
    c = diffusion * np.sqrt(dt)
    a0 = rng.standard_normal(3) * c / np.sqrt(1 - phi**2)
    noise = rng.standard_normal((T, 3)) * c
    noise[0] = a0
    acc = _geometric_scan(noise, phi)

    n_impulses = rng.poisson(p.impulse_rate * p.duration)
    for _ in range(n_impulses):
        t0 = rng.uniform(0, p.duration)
        dur = rng.uniform(0.2, 0.4)
        axis = rng.choice(3, p=[0.2, 0.2, 0.6])
        amp = p.impulse_amp * rng.uniform(0.6, 1.4) * rng.choice([-1.0, 1.0])
        i0, i1 = int(t0 * p.sample_rate), min(int((t0 + dur) * p.sample_rate), T)
        if i1 > i0:
            acc[i0:i1, axis] += amp * np.sin(np.linspace(0, np.pi, i1 - i0))

    if tremor is not None:
        # (frequency Hz, amplitude m/s^2); per-axis phases are random so the
        # line is user-stable in spectrum but not a per-trial fingerprint
        f, a = tremor
        if not 0 < f < p.sample_rate / 2:
            raise ConfigurationError(f"tremor frequency {f} Hz out of band")
        t_axis = np.arange(T) * dt
        phases = rng.uniform(0.0, 2.0 * np.pi, 3)
        acc += a * np.asarray(TREMOR_AXIS_GAIN) * np.sin(
            2.0 * np.pi * f * t_axis[:, None] + phases
        )

    acc = np.round(acc, ENV_DECIMALS)
    vib = np.round(_vib_channels(acc, p.sample_rate), ENV_DECIMALS)
    return EnvWindow(acc=acc, vib=vib, sample_rate=p.sample_rate, duration=p.duration)


@dataclass
class ScenarioConfig:
    name: str
    dim: int
    n_targets: int
    widths: tuple
    speeds: tuple
    bounds: tuple                      # ((lo, hi) per axis)
    gestures: tuple
    users: int
    reps: int
    expert_ids: dict                   # gesture -> ground-truth expert id
    true_params: dict                  # gesture -> TernaryGaussianParams
    kappa: float = 0.8
    p_active: float = 0.4
    profiles: dict = field(default_factory=lambda: {"quiet": VIB_QUIET, "active": VIB_ACTIVE})
    sample_rate: float = 50.0
    dwell_range: tuple = (0.5, 2.0)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigurationError(f"dim must be 2 or 3, got {self.dim}")
        if self.kappa < 0:
            raise ConfigurationError(f"kappa must be >= 0, got {self.kappa}")
        if self.n_targets < 2:
            raise ConfigurationError(f"need at least 2 targets, got {self.n_targets}")
        if not self.widths or not self.speeds:
            raise ConfigurationError("width and speed grids must be nonempty")
        if len(self.bounds) != self.dim:
            raise ConfigurationError(f"{len(self.bounds)} bounds for dim {self.dim}")
        for g in self.gestures:
            if g not in self.true_params or g not in self.expert_ids:
                raise ConfigurationError(f"gesture '{g}' missing ground-truth params or expert id")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "n_targets": self.n_targets,
            "widths": list(self.widths),
            "speeds": list(self.speeds),
            "bounds": [list(b) for b in self.bounds],
            "gestures": list(self.gestures),
            "users": self.users,
            "reps": self.reps,
            "expert_ids": dict(self.expert_ids),
            "true_params": {
                g: {"mu": p.mu.tolist(), "sigma": p.sigma.tolist()}
                for g, p in self.true_params.items()
            },
            "kappa": self.kappa,
            "p_active": self.p_active,
            "sample_rate": self.sample_rate,
        }


# Ground-truth coefficients. Tangent rows first: mean lags behind the target
# along its motion (negative velocity coefficient, in seconds), spread grows
# with speed and size; the off-tangent axis is tighter and unbiased.
SF_TRUE = TernaryGaussianParams(
    mu=np.array([[2.0, -0.055, 0.020], [0.0, 0.0, 0.0]]),
    sigma=np.array([[26.0, 0.075, 0.19], [21.0, 0.034, 0.17]]),
)
SH_TRUE = TernaryGaussianParams(
    mu=np.array([[3.0, -0.075, 0.030], [0.5, 0.0, 0.010]]),
    sigma=np.array([[32.0, 0.098, 0.25], [25.0, 0.045, 0.21]]),
)
WH_TRUE = TernaryGaussianParams(
    mu=np.array([[4.0, -0.090, 0.040], [1.0, 0.005, 0.010]]),
    sigma=np.array([[38.0, 0.113, 0.30], [30.0, 0.057, 0.25]]),
)
TRUE_3D = TernaryGaussianParams(
    mu=np.array([[0.004, -0.060, 0.020], [0.0, 0.0, 0.0], [0.001, 0.0, 0.0]]),
    sigma=np.array(
        [[0.022, 0.110, 0.180], [0.018, 0.055, 0.130], [0.020, 0.066, 0.155]]
    ),
)


def mts2d() -> ScenarioConfig:
    """Tablet-in-vehicle preset: 15 targets on a 2560x1600 px screen."""
    return ScenarioConfig(
        name="mts2d",
        dim=2,
        n_targets=15,
        widths=(65.0, 95.0, 125.0, 155.0),
        speeds=(300.0, 550.0, 800.0, 1050.0),
        bounds=((0.0, 2560.0), (0.0, 1600.0)),
        gestures=("fixed", "handheld"),
        users=10,
        reps=12,
        expert_ids={"fixed": "s-f", "handheld": "s-h"},
        true_params={"fixed": SF_TRUE, "handheld": SH_TRUE},
    )


def walk2d() -> ScenarioConfig:
    """Walking-with-tablet calibration preset (source for the w-h expert)."""
    cfg = mts2d()
    return replace(
        cfg,
        name="walk2d",
        gestures=("handheld",),
        expert_ids={"handheld": "w-h"},
        true_params={"handheld": WH_TRUE},
        p_active=0.9,
    )


def mts3d() -> ScenarioConfig:
    """Headset preset: 5 spherical targets in a meter-scale volume with the
    depth axis spanning 0.25-0.6 m."""
    return ScenarioConfig(
        name="mts3d",
        dim=3,
        n_targets=5,
        widths=(0.04, 0.08, 0.12, 0.16),
        speeds=(0.22, 0.34, 0.45, 0.56),
        bounds=((-0.5, 0.5), (-0.35, 0.35), (0.25, 0.6)),
        gestures=("controller",),
        users=10,
        reps=6,
        expert_ids={"controller": "3d"},
        true_params={"controller": TRUE_3D},
        kappa=0.9,
        p_active=0.35,
    )


PRESETS = {"mts2d": mts2d, "mts3d": mts3d, "walk2d": walk2d}


def advance_bounce(pos, vel, t, lo, hi):
    """Reflective motion in a box, closed form. Positions fold into [lo, hi]
    with specular wall bounces; speed is conserved exactly (sign flips only)."""
    L = hi - lo
    x = (pos - lo) + vel * t
    y = np.mod(x, 2 * L)
    over = y > L
    return np.where(over, 2 * L - y, y) + lo, np.where(over, -vel, vel)


def _user_idio(age: float, gender: str) -> np.ndarray:
    """Nine bounded per-user style scores in (-1, 1): sinusoids in age plus
    a gender shift, squashed through tanh so the tails saturate smoothly."""
    lo, hi = IDIO_AGE_SPAN
    u = (age - lo) / (hi - lo)
    g = GENDERS.index(gender)
    wave = np.sqrt(2.0) * np.sin(
        2.0 * np.pi * np.asarray(IDIO_FREQ) * u + np.asarray(IDIO_PHASE)
    )
    return np.tanh(IDIO_SQUASH * (wave + IDIO_GENDER_GAIN * IDIO_GENDER[:, g]))


def _age_frac(age: float) -> float:
    """Age mapped onto [0, 1] across the roster span, clamped outside it."""
    lo, hi = IDIO_AGE_SPAN
    return float(np.clip((age - lo) / (hi - lo), 0.0, 1.0))


def _user_precision(age: float, gender: str, dim: int) -> np.ndarray:
    """Per-axis log spread scales from the smooth motor-precision trends."""
    u = _age_frac(age)
    g = GENDERS.index(gender)
    return (
        PRECISION_AGE_SLOPE[:dim] * (2.0 * u - 1.0)
        + PRECISION_GENDER_TILT[:dim, g]
    )


def _user_effects(age: float, gender: str, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-user deviation from the gesture's population endpoint model.

    Returns (mean_shift, spread_scale): mean_shift is a (dim, 3) matrix of
    local-frame coefficient shifts in units of the matching sigma
    coefficient, bounded by +-MEAN_SHIFT_AMP; spread_scale multiplies each
    local axis's endpoint spread, bounded by exp(+-PRECISION_CAP).
    """
    z = _user_idio(age, gender)
    mean_shift = MEAN_SHIFT_AMP * z[: dim * 3].reshape(dim, 3)
    spread_scale = np.exp(_user_precision(age, gender, dim))
    return mean_shift, spread_scale


def _user_tremor(age: float, gender: str) -> tuple[float, float]:
    """Grip-tremor line for a profile: (frequency Hz, amplitude m/s^2),
    following the same age trend as the endpoint spread."""
    p = TREMOR_AGE_GAIN * (2.0 * _age_frac(age) - 1.0)
    freq = TREMOR_FREQ_MID + TREMOR_FREQ_SPAN * p
    amp = TREMOR_AMP * np.exp(TREMOR_AMP_SPAN * p)
    return float(freq), float(amp)


def gen_trial(
    sc: ScenarioConfig,
    cond: tuple,
    user_id: int,
    profile: UserProfile,
    seed,
    trial_id: int = 0,
) -> TrialRecord:
    """One selection trial: random bouncing scene at condition (W, V), a
    motion window carrying the user's tremor line, and an endpoint drawn
    from the gesture's ground truth perturbed by the user's style effects,
    with spread widened by (1 + kappa * RMSA)."""
    w, v = cond
    if w not in sc.widths or v not in sc.speeds:
        raise InputError(f"condition (w={w}, v={v}) not in scenario grids")
    if profile.gesture not in sc.gestures:
        raise InputError(f"gesture '{profile.gesture}' not in scenario {sc.name}")
    rng = np.random.default_rng(seed)

    # Centers roam the full bounds (the stated movement range); the scene is
    # degenerate when the box cannot plausibly host the targets at all.
    lo = np.array([b[0] for b in sc.bounds])
    hi = np.array([b[1] for b in sc.bounds])
    if np.any(hi <= lo) or np.prod(hi - lo) < sc.n_targets * w**sc.dim:
        raise GenerationError(
            f"bounds {sc.bounds} too small for {sc.n_targets} targets of radius {w}"
        )

    pos = rng.uniform(lo, hi, size=(sc.n_targets, sc.dim))
    dirs = rng.standard_normal((sc.n_targets, sc.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dwell = rng.uniform(*sc.dwell_range)
    pos, vel = advance_bounce(pos, dirs * v, dwell, lo, hi)
    dirs = vel / np.linalg.norm(vel, axis=1, keepdims=True)

    regime = "active" if rng.random() < sc.p_active else "quiet"
    env = simulate_motion_window(
        sc.profiles[regime],
        int(rng.integers(2**63)),
        tremor=_user_tremor(profile.age, profile.gender),
    )
    trial_rmsa = rmsa(env.acc)

    targets = [
        TargetState(
            id=i,
            center=np.round(pos[i], COORD_DECIMALS),
            size=w,
            speed=v,
            direction=np.round(dirs[i], 6),
            dim=sc.dim,
        )
        for i in range(sc.n_targets)
    ]
    intended = targets[int(rng.integers(sc.n_targets))]

    params = sc.true_params[profile.gesture]
    mean_shift, spread_scale = _user_effects(profile.age, profile.gender, sc.dim)
    mu_eff = params.mu + mean_shift * params.sigma
    mu_loc, var_loc = ternary_moments(
        TernaryGaussianParams(mu=mu_eff, sigma=params.sigma), v, w
    )
    coupling = np.full(sc.dim, OFF_TANGENT_COUPLING)
    coupling[0] = 1.0
    sigma_loc = np.sqrt(var_loc) * spread_scale * (
        1.0 + sc.kappa * trial_rmsa * coupling
    )
    frame = local_frame(intended)
    offset = mu_loc + sigma_loc * rng.standard_normal(sc.dim)
    endpoint = np.round(intended.center + frame.axes.T @ offset, COORD_DECIMALS)

    return TrialRecord(
        trial_id=trial_id,
        user_id=user_id,
        user=profile,
        scenario_id=sc.name,
        targets=targets,
        intended_id=intended.id,
        endpoint=endpoint,
        env=env,
        rmsa=round(trial_rmsa, 6),
    )


def make_users(sc: ScenarioConfig, seed) -> list[tuple[int, float, str]]:
    """Deterministic per-dataset user roster: (id, age, gender)."""
    rng = np.random.default_rng([int(seed), 1])
    ages = np.round(rng.uniform(19, 55, sc.users), 1)
    genders = rng.choice(["female", "male", "nonbinary"], size=sc.users, p=[0.4, 0.55, 0.05])
    return [(i, float(ages[i]), str(genders[i])) for i in range(sc.users)]


def build_dataset(sc: ScenarioConfig, seed: int = 0, users=None, reps=None) -> Dataset:
    """Full-factorial dataset: users x gestures x W x V x reps."""
    roster = users if users is not None else make_users(sc, seed)
    reps = reps if reps is not None else sc.reps
    records = []
    trial_id = 0
    for uid, age, gender in roster:
        for gesture in sc.gestures:
            profile = UserProfile(gesture=gesture, age=age, gender=gender)
            for w in sc.widths:
                for v in sc.speeds:
                    for _ in range(reps):
                        records.append(
                            gen_trial(
                                sc, (w, v), uid, profile,
                                seed=[int(seed), 2, trial_id], trial_id=trial_id,
                            )
                        )
                        trial_id += 1
    meta = {"scenario": sc.to_dict(), "seed": int(seed), "n_trials": len(records)}
    return Dataset(meta=meta, records=records)


@dataclass
class SplitSpec:
    test_count: int
    val_count: int
    seed: int = 0

    def __post_init__(self):
        if self.test_count < 0 or self.val_count < 0:
            raise ConfigurationError("split counts must be nonnegative")


def split_dataset(d: Dataset, s: SplitSpec) -> dict[str, Dataset]:
    """Disjoint test/val/train-pool split, uniform across (W, V) cells.

    Within each cell, trials are drawn round-robin across (user, gesture)
    subgroups so every user keeps a balanced share of the training pool;
    this is what makes the deepest shot counts feasible deterministically.
    """
    cells: dict[tuple, dict[tuple, list[TrialRecord]]] = {}
    for r in d.records:
        t = r.intended
        cells.setdefault((t.size, t.speed), {}).setdefault(
            (r.user_id, r.user.gesture), []
        ).append(r)

    n_cells = len(cells)
    if s.test_count % n_cells or s.val_count % n_cells:
        raise SplitError(
            f"test={s.test_count} and val={s.val_count} must be divisible by "
            f"{n_cells} (W x V) cells for uniform sampling"
        )
    test_per, val_per = s.test_count // n_cells, s.val_count // n_cells

    rng = np.random.default_rng([s.seed, 3])
    test, val, pool = [], [], []
    for cell_key in sorted(cells):
        subgroups = [cells[cell_key][k] for k in sorted(cells[cell_key])]
        total = sum(len(g) for g in subgroups)
        if total < test_per + val_per:
            raise SplitError(
                f"cell (w={cell_key[0]}, v={cell_key[1]}) has {total} trials; "
                f"needs {test_per + val_per}"
            )
        for g in subgroups:
            rng.shuffle(g)
        order = rng.permutation(len(subgroups))
        stream = []
        for i in range(max(len(g) for g in subgroups)):
            for j in order:
                if i < len(subgroups[j]):
                    stream.append(subgroups[j][i])
        test.extend(stream[:test_per])
        val.extend(stream[test_per : test_per + val_per])
        pool.extend(stream[test_per + val_per :])

    def _mk(name, records):
        meta = dict(d.meta)
        meta["split"] = name
        return Dataset(meta=meta, records=sorted(records, key=lambda r: r.trial_id))

    return {"train_pool": _mk("train_pool", pool), "val": _mk("val", val), "test": _mk("test", test)}


def few_shot_subset(
    train_pool: Dataset, n: int, seed, include_gesture: bool = False
) -> Dataset:
    """Exactly n trials per (user x W x V) cell, uniformly sampled. With
    include_gesture the cell key also carries the gesture, which doubles the
    requested depth on two-gesture scenes."""
    if n < 1:
        raise InputError(f"shots must be >= 1, got {n}")
    cells: dict[tuple, list[TrialRecord]] = {}
    for r in train_pool.records:
        t = r.intended
        key = (r.user_id, t.size, t.speed) + ((r.user.gesture,) if include_gesture else ())
        cells.setdefault(key, []).append(r)

    rng = np.random.default_rng([seed, 4])
    chosen = []
    for key in sorted(cells):
        group = cells[key]
        if len(group) < n:
            raise SplitError(
                f"user {key[0]} cell (w={key[1]}, v={key[2]}"
                + (f", gesture={key[3]}" if include_gesture else "")
                + f") has {len(group)} trials < {n}-shot"
            )
        idx = rng.choice(len(group), size=n, replace=False)
        chosen.extend(group[i] for i in sorted(idx))
    meta = dict(train_pool.meta)
    meta["split"] = f"{n}-shot"
    return Dataset(meta=meta, records=sorted(chosen, key=lambda r: r.trial_id))


def dataset_samples(d: Dataset, gesture: str | None = None):
    """(intended target, endpoint) pairs for expert fitting, optionally
    filtered to one gesture."""
    return [
        (r.intended, r.endpoint)
        for r in d.records
        if gesture is None or r.user.gesture == gesture
    ]


def moments_from_params(
    params: TernaryGaussianParams,
    widths,
    speeds,
    count: int = 100,
    noise: float = 0.0,
    seed=0,
):
    """Analytic condition moments for a known ground truth; the exact inverse
    oracle for fit_ternary_params. Optional multiplicative uniform noise on
    both moments models estimation error."""
    from .experts import CellMoments, ConditionMoments

    rng = np.random.default_rng(seed)
    cells = []
    for w in widths:
        for v in speeds:
            mu, var = ternary_moments(params, v, w)
            if noise:
                mu = mu * (1 + rng.uniform(-noise, noise, size=mu.shape))
                var = var * (1 + rng.uniform(-noise, noise, size=var.shape))
            cells.append(
                CellMoments(width=float(w), speed=float(v), count=count, mean=mu, var=var)
            )
    if not cells:
        raise InputError("empty condition grid")
    return ConditionMoments(dim=params.dim, cells=cells)
