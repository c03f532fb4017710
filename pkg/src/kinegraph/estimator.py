"""Twist, configuration, and motion-mode estimation for one track cluster.

The solver fits a single screw motion to a cluster: one twist (omega, vel)
shared across the whole window plus a per-frame configuration theta_m,
anchored at theta. Consecutive frames are tied by the residual

    r = p_(m+1) - exp(twist * (theta_(m+1) - theta_m)) p_m

summed over points visible in both frames. Two penalty rows steer the twist
toward an ideal joint: a revolute-weighted cosine between omega and vel
(zero for pitch-free rotation) and a prismatic-weighted pull of the rotation
fraction |omega|/|twist| toward zero. Both penalties are invariant to the
scale gauge of the fit (twist and thetas can trade a common factor without
changing the data term). The weights come from the secant direction
statistic: near-parallel displacement chords mean prismatic, spread chords
mean revolute.

Only frame indices enter the model; wall-clock timestamps are never read, so
any time rescaling of the input stream leaves all outputs unchanged.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    ConvergenceError,
    DegenerateMotionError,
    InsufficientMotionError,
    InsufficientPairsError,
    ShapeError,
    ValidationError,
)
from .se3 import (
    DEGENERATE_EPS,
    JointKind,
    ScrewAxis,
    Twist,
    log_map,
    rodrigues,
    rotation_coefficients,
    screw_axis_from_twist,
    skew,
)
from .tracks import PointTracks3D

COSINE_GATE = 1e-12
MU_MAX = 1e12
COST_FLOOR = 1e-24  # squared-residual total this small is a machine-exact fit


class Mode(enum.Enum):
    OPENING = "OPENING"
    CLOSING = "CLOSING"
    OPENING_CLOSING = "OPENING-CLOSING"
    CLOSING_OPENING = "CLOSING-OPENING"
    UNKNOWN = "UNKNOWN"

    @classmethod
    def from_string(cls, text: str) -> "Mode":
        return cls(text.strip().upper().replace("_", "-"))


@dataclass(frozen=True)
class ModeToken:
    value: Mode
    consistent: bool
    # True when no external hint was given and the direction label rests on
    # the positive-theta-opens convention rather than observed semantics.
    convention_dependent: bool = False


@dataclass(frozen=True, eq=False)
class SecantSet:
    vectors: np.ndarray  # (M, 3) displacement chords
    end_times: np.ndarray  # (M,) frame index of each chord's far end
    source_track: np.ndarray  # (M,) track index each chord came from

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=float)
        if vec.ndim != 2 or vec.shape[1] != 3:
            raise ShapeError(f"vectors must be (M, 3), got {vec.shape}")
        ends = np.asarray(self.end_times, dtype=int)
        src = np.asarray(self.source_track, dtype=int)
        if ends.shape != (vec.shape[0],) or src.shape != (vec.shape[0],):
            raise ShapeError("end_times/source_track must match vector count")
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "end_times", ends)
        object.__setattr__(self, "source_track", src)

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass(frozen=True)
class PriorWeights:
    eta: float
    lambda_pris: float
    lambda_rev: float

    def __post_init__(self):
        if not (0.0 <= self.lambda_pris <= 1.0 and 0.0 <= self.lambda_rev <= 1.0):
            raise ValidationError("lambda weights must lie in [0, 1]")
        if abs(self.lambda_pris + self.lambda_rev - 1.0) > 1e-12:
            raise ValidationError("lambda_pris + lambda_rev must equal 1")


@dataclass(frozen=True, eq=False)
class ArticulationEstimate:
    twist: Twist  # gauge-normalized
    thetas: np.ndarray  # (T,), rad for REVOLUTE, m for PRISMATIC; thetas[0] = 0
    kind: JointKind
    axis: ScrewAxis
    residual_rms: float
    prior: PriorWeights
    raw_twist: Twist  # optimizer output before gauge normalization
    mode: ModeToken | None = None

    def with_mode(self, mode: ModeToken) -> "ArticulationEstimate":
        return replace(self, mode=mode)


def sample_secants(
    tracks: PointTracks3D, *, stride: int = 3, min_norm: float = 0.03
) -> SecantSet:
    """Displacement chords from each track's first visible point.

    Every ``stride``-th later visible sample contributes one chord; chords
    shorter than ``min_norm`` carry mostly noise and are dropped.
    """
    if stride < 1:
        raise ValidationError(f"stride must be >= 1, got {stride}")
    vectors, ends, sources = [], [], []
    for f in range(tracks.n_tracks):
        ts = np.nonzero(tracks.visibility[:, f])[0]
        if ts.size <= stride:
            continue
        anchor = tracks.positions[ts[0], f]
        for j in range(stride, ts.size, stride):
            vec = tracks.positions[ts[j], f] - anchor
            if np.linalg.norm(vec) >= min_norm:
                vectors.append(vec)
                ends.append(ts[j])
                sources.append(f)
    if len(vectors) < 2:
        raise InsufficientMotionError(
            f"only {len(vectors)} usable secants; cluster barely moves"
        )
    return SecantSet(np.array(vectors), np.array(ends), np.array(sources))


def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


def cosine_prior(
    secants: SecantSet, *, eta_star: float = 0.994, k: float = 200.0
) -> PriorWeights:
    """Prismatic/revolute weights from pairwise secant alignment.

    eta is the median cosine over all admissible pairs; pairs whose chords
    end at the same frame are excluded (they see the identical configuration
    and would bias eta toward 1 regardless of joint type).
    """
    unit = secants.vectors / np.linalg.norm(secants.vectors, axis=1, keepdims=True)
    cos = unit @ unit.T
    m = len(secants)
    idx_i, idx_j = np.triu_indices(m, k=1)
    admissible = secants.end_times[idx_i] != secants.end_times[idx_j]
    if not np.any(admissible):
        raise InsufficientPairsError(
            "every secant pair ends at the same frame; no admissible pair"
        )
    eta = float(np.median(cos[idx_i[admissible], idx_j[admissible]]))
    lam = _sigmoid(k * (eta - eta_star))
    return PriorWeights(eta=eta, lambda_pris=lam, lambda_rev=1.0 - lam)


def regularizer_value(twist: Twist, prior: PriorWeights, alpha: float) -> float:
    """Penalty term of the fit objective at a given twist.

    Both terms are invariant to rescaling the twist: the cosine between
    omega and vel weighted by lambda_rev, and the fraction of the twist norm
    carried by omega weighted by lambda_pris.
    """
    nw = float(np.linalg.norm(twist.omega))
    nv = float(np.linalg.norm(twist.vel))
    value = 0.0
    norm2 = nw * nw + nv * nv
    if norm2 >= COSINE_GATE:
        value += alpha * prior.lambda_pris * nw / np.sqrt(norm2)
    if nw * nv >= COSINE_GATE:
        value += alpha * prior.lambda_rev * abs(float(twist.omega @ twist.vel)) / (nw * nv)
    return value


def _dVu_dphi(phi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """d(V(phi) u)/d phi for stacked (M,3) rotation vectors and payloads."""
    theta = np.linalg.norm(phi, axis=1)
    _, b, c = rotation_coefficients(theta)
    small = theta < 1e-3
    safe = np.where(small, 1.0, theta)
    bp_over = np.where(
        small,
        -1.0 / 12.0 + theta**2 / 180.0,
        (theta * np.sin(theta) - 2.0 * (1.0 - np.cos(theta))) / safe**4,
    )
    cp_over = np.where(
        small,
        -1.0 / 60.0 + theta**2 / 1260.0,
        ((1.0 - np.cos(theta)) * theta - 3.0 * (theta - np.sin(theta))) / safe**5,
    )
    pxu = np.cross(phi, u)
    pxpxu = np.cross(phi, pxu)
    eye = np.eye(3)
    out = (
        bp_over[:, None, None] * pxu[:, :, None] * phi[:, None, :]
        - b[:, None, None] * skew(u)
        + cp_over[:, None, None] * pxpxu[:, :, None] * phi[:, None, :]
        + c[:, None, None]
        * (
            np.einsum("mi,mi->m", phi, u)[:, None, None] * eye
            + phi[:, :, None] * u[:, None, :]
            - 2.0 * u[:, :, None] * phi[:, None, :]
        )
    )
    return out


class _Objective:
    """Stacked residual/Jacobian of the screw fit for one track window."""

    def __init__(self, tracks: PointTracks3D, prior: PriorWeights, alpha: float):
        n = tracks.n_frames
        pair_step, sources, targets = [], [], []
        for m in range(n - 1):
            both = tracks.visibility[m] & tracks.visibility[m + 1]
            js = np.nonzero(both)[0]
            if js.size:
                pair_step.append(np.full(js.size, m))
                sources.append(tracks.positions[m, js])
                targets.append(tracks.positions[m + 1, js])
        if not pair_step:
            raise DegenerateMotionError("no consecutive covisible points to fit")
        self.step = np.concatenate(pair_step)
        self.p = np.vstack(sources)
        self.q = np.vstack(targets)
        self.n_frames = n
        self.n_rows = 3 * self.step.size
        self.n_params = 6 + (n - 1)
        self.alpha = alpha
        self.prior = prior

    def split(self, x: np.ndarray):
        omega, vel = x[:3], x[3:6]
        thetas = np.concatenate([[0.0], x[6:]])
        return omega, vel, thetas

    def __call__(self, x: np.ndarray):
        omega, vel, thetas = self.split(x)
        delta = np.diff(thetas)  # (n_frames - 1,)
        phi = delta[:, None] * omega[None, :]
        rot, vmat = rodrigues(phi)
        u = delta[:, None] * vel[None, :]
        trans = np.einsum("mij,mj->mi", vmat, u)
        dvu = _dVu_dphi(phi, u)

        s = self.step
        rp = np.einsum("nij,nj->ni", rot[s], self.p)
        y = rp + trans[s]
        res = self.q - y

        # d y / d phi, then chain through phi = omega * delta.
        dy_dphi = -np.einsum("nij,njk->nik", skew(rp), vmat[s]) + dvu[s]
        dy_domega = dy_dphi * delta[s][:, None, None]
        dy_dv = vmat[s] * delta[s][:, None, None]
        gen = np.cross(np.broadcast_to(omega, y.shape), y) + vel  # d y / d delta

        n_pts = s.size
        jac = np.zeros((n_pts, 3, self.n_params))
        jac[:, :, 0:3] = -dy_domega
        jac[:, :, 3:6] = -dy_dv
        rows = np.arange(n_pts)
        jac[rows, :, 6 + s] = -gen
        prev = s >= 1
        jac[rows[prev], :, 6 + s[prev] - 1] = gen[prev]

        f_full = np.concatenate([res.ravel(), np.zeros(4)])
        j_full = np.vstack([jac.reshape(self.n_rows, self.n_params), np.zeros((4, self.n_params))])

        if self.alpha > 0.0:
            k_rev = np.sqrt(self.alpha * self.prior.lambda_rev)
            k_pris = np.sqrt(self.alpha * self.prior.lambda_pris)
            nw = np.linalg.norm(omega)
            nv = np.linalg.norm(vel)
            prod = nw * nv
            if prod >= COSINE_GATE:
                dot = float(omega @ vel)
                f_full[self.n_rows] = k_rev * dot / prod
                j_full[self.n_rows, 0:3] = k_rev * (vel / prod - dot * omega / (nw**2 * prod))
                j_full[self.n_rows, 3:6] = k_rev * (omega / prod - dot * vel / (nv**2 * prod))
            # Penalize omega relative to the full twist norm. The data term
            # is invariant under (twist, thetas) -> (twist/s, s*thetas), so a
            # raw |omega| penalty could be driven to zero along that gauge
            # direction forever; the normalized form is scale-invariant.
            s2 = nw * nw + nv * nv
            if s2 >= COSINE_GATE:
                s = np.sqrt(s2)
                f_full[self.n_rows + 1 : self.n_rows + 4] = k_pris * omega / s
                j_full[self.n_rows + 1 : self.n_rows + 4, 0:3] = k_pris * (
                    np.eye(3) / s - np.outer(omega, omega) / s**3
                )
                j_full[self.n_rows + 1 : self.n_rows + 4, 3:6] = -k_pris * np.outer(
                    omega, vel
                ) / s**3
        return f_full, j_full

    def data_rms(self, x: np.ndarray) -> float:
        f, _ = self(x)
        return float(np.sqrt(np.mean(f[: self.n_rows] ** 2)))


def _kabsch(p: np.ndarray, q: np.ndarray):
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    h = (p - pc).T @ (q - qc)
    u_svd, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u_svd.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u_svd.T
    return rot, qc - rot @ pc


def _initial_guess(tracks: PointTracks3D):
    from .se3 import RigidTransform

    n = tracks.n_frames
    vis0 = tracks.visibility[0]
    last = None
    for f1 in range(n - 1, 0, -1):
        both = vis0 & tracks.visibility[f1]
        if both.sum() >= 3:
            last = f1
            break
    if last is None:
        raise DegenerateMotionError("no frame shares 3 points with the window start")
    js = np.nonzero(vis0 & tracks.visibility[last])[0]
    p, q = tracks.positions[0, js], tracks.positions[last, js]
    if float(np.linalg.norm(q - p, axis=1).max()) < 1e-9:
        raise DegenerateMotionError("cluster points do not move over the window")
    rot, trans = _kabsch(p, q)
    twist, theta_total = log_map(RigidTransform(rot, trans))
    thetas = theta_total * np.arange(n) / last
    x0 = np.concatenate([twist.omega, twist.vel, thetas[1:]])
    return x0


def _solve_lm(obj: _Objective, x0: np.ndarray, max_iters: int, rel_tol: float):
    x = x0.copy()
    f, jac = obj(x)
    cost = float(f @ f)
    if cost < COST_FLOOR:
        return x, True
    mu = 1e-4
    for _ in range(max_iters):
        jtj = jac.T @ jac
        jtf = jac.T @ f
        damp = np.diag(np.clip(np.diag(jtj), 1e-12, None))
        stepped = False
        while mu <= MU_MAX:
            try:
                dx = np.linalg.solve(jtj + mu * damp, -jtf)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            if not np.all(np.isfinite(dx)):
                raise DegenerateMotionError("normal equations produced non-finite step")
            f_new, jac_new = obj(x + dx)
            cost_new = float(f_new @ f_new)
            if cost_new <= cost:
                rel = (cost - cost_new) / max(cost, 1e-300)
                x, f, jac, cost = x + dx, f_new, jac_new, cost_new
                mu = max(mu * 0.3, 1e-12)
                stepped = True
                if rel < rel_tol or cost < COST_FLOOR:
                    return x, True
                break
            mu *= 3.0
        if not stepped:
            # No damping level improves the cost: numerically at a minimum.
            return x, True
    return x, False


def estimate_twist(
    tracks: PointTracks3D,
    prior: PriorWeights,
    alpha: float = 1.0,
    *,
    max_iters: int = 200,
    rel_tol: float = 1e-10,
    pitch_cutoff: float = 1.0,
    warm_start: ArticulationEstimate | None = None,
    kind: JointKind | None = None,
) -> ArticulationEstimate:
    """Fit one screw motion to a cluster and classify the joint.

    With ``alpha > 0`` the penalty rows are active and the joint kind
    follows the prior gate (lambda_pris > 0.5 means PRISMATIC). With
    ``alpha = 0`` (ablation) the fit is unregularized and the kind falls
    back to the pitch-ratio rule |omega|/|vel| >= ``pitch_cutoff``. An
    explicit ``kind`` overrides both rules; a caller that already trusts a
    regularized fit's classification passes it here to read off unbiased
    parameters from a pure data fit (the penalty minimum does not coincide
    with the data minimum, so a regularized solution systematically
    under-rotates).

    ``warm_start`` seeds the solver from a previous estimate of the same
    window (same frame count) instead of the built-in initializer; the
    caller typically fits smoothed tracks first and polishes on raw ones.

    Raises ConvergenceError (carrying the best iterate) after ``max_iters``
    without meeting the relative-decrease tolerance, DegenerateMotionError
    for motionless or underconstrained input.
    """
    if alpha < 0.0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    if tracks.n_frames < 2:
        raise DegenerateMotionError("need at least 2 frames to fit motion")
    obj = _Objective(tracks, prior, alpha)
    if warm_start is not None:
        if warm_start.thetas.shape != (tracks.n_frames,):
            raise ValidationError(
                f"warm start covers {warm_start.thetas.shape[0]} frames, "
                f"tracks have {tracks.n_frames}"
            )
        raw0 = warm_start.raw_twist
        scale0 = np.linalg.norm(
            raw0.omega if warm_start.kind is JointKind.REVOLUTE else raw0.vel
        )
        x0 = np.concatenate([raw0.omega, raw0.vel, warm_start.thetas[1:] / scale0])
    else:
        x0 = _initial_guess(tracks)
    x, converged = _solve_lm(obj, x0, max_iters, rel_tol)

    omega, vel, thetas = obj.split(x)
    raw = Twist(omega.copy(), vel.copy())
    rms = obj.data_rms(x)

    if kind is None:
        if alpha == 0.0:
            nv = np.linalg.norm(vel)
            ratio = np.linalg.norm(omega) / nv if nv > DEGENERATE_EPS else np.inf
            kind = JointKind.REVOLUTE if ratio >= pitch_cutoff else JointKind.PRISMATIC
        else:
            kind = JointKind.PRISMATIC if prior.lambda_pris > 0.5 else JointKind.REVOLUTE

    if kind is JointKind.REVOLUTE:
        scale = np.linalg.norm(omega)
        if scale < DEGENERATE_EPS:
            raise DegenerateMotionError("revolute fit collapsed to zero rotation")
        twist = Twist(omega / scale, vel / scale)
    else:
        scale = np.linalg.norm(vel)
        if scale < DEGENERATE_EPS:
            raise DegenerateMotionError("prismatic fit collapsed to zero translation")
        twist = Twist(np.zeros(3), vel / scale)
    thetas = thetas * scale

    estimate = ArticulationEstimate(
        twist=twist,
        thetas=thetas,
        kind=kind,
        axis=screw_axis_from_twist(twist),
        residual_rms=rms,
        prior=prior,
        raw_twist=raw,
    )
    if not converged:
        raise ConvergenceError(
            f"no convergence after {max_iters} iterations", best=estimate
        )
    return estimate


_SHAPE_TO_MODE = {
    (1,): Mode.OPENING,
    (-1,): Mode.CLOSING,
    (1, -1): Mode.OPENING_CLOSING,
    (-1, 1): Mode.CLOSING_OPENING,
}
_MODE_TO_SHAPE = {m: s for s, m in _SHAPE_TO_MODE.items()}


def _run_shape(thetas: np.ndarray, band: float) -> tuple:
    """Sequence of monotone run directions, ignoring moves within the band."""
    runs = []
    direction = 0
    hi = lo = thetas[0]
    for th in thetas[1:]:
        if direction == 0:
            hi, lo = max(hi, th), min(lo, th)
            if th > lo + band:
                direction = 1
                hi = th
            elif th < hi - band:
                direction = -1
                lo = th
        elif direction == 1:
            if th > hi:
                hi = th
            elif th < hi - band:
                runs.append(1)
                direction = -1
                lo = th
        else:
            if th < lo:
                lo = th
            elif th > lo + band:
                runs.append(-1)
                direction = 1
                hi = th
    if direction != 0:
        runs.append(direction)
    return tuple(runs)


def infer_mode(thetas, hint: Mode | str | None = None) -> ModeToken:
    """Classify the configuration profile, optionally checking a hint.

    The profile is summarized by its monotone runs with a hysteresis band
    of 5% of the total range, so jitter below the band never splits a run.
    A hint is returned as-is with ``consistent`` reporting whether the
    observed shape matches it. Without a hint the shape is mapped through
    the positive-theta-opens convention and flagged convention-dependent.
    """
    th = np.asarray(thetas, dtype=float)
    if th.ndim != 1 or th.size < 3:
        raise ValidationError(f"need at least 3 configurations, got shape {th.shape}")
    rng = float(th.max() - th.min())
    shape = () if rng <= 0.0 else _run_shape(th, 0.05 * rng)
    observed = _SHAPE_TO_MODE.get(shape)

    if hint is not None:
        mode = hint if isinstance(hint, Mode) else Mode.from_string(hint)
        expected = _MODE_TO_SHAPE.get(mode)
        return ModeToken(value=mode, consistent=(expected == shape and expected is not None))
    if observed is None:
        return ModeToken(value=Mode.UNKNOWN, consistent=True)
    return ModeToken(value=observed, consistent=True, convention_dependent=True)

def _opening_direction(thetas: np.ndarray, mode: str) -> float:
    """Sign s such that opening increases s * theta.

    The first moving run sets the reference: under an OPENING-first mode it
    moves toward open, under a CLOSING-first mode away from it.
    """
    diffs = np.diff(thetas)
    nonzero = diffs[diffs != 0.0]
    first = float(np.sign(nonzero[0])) if nonzero.size else 1.0
    if mode.upper().startswith("CLOSING"):
        return -first
    return first


def max_open_frame(thetas, mode: Mode | str) -> int:
    """Index of the most-open configuration; earliest frame wins ties."""
    th = np.asarray(thetas, dtype=float)
    name = mode.value if isinstance(mode, Mode) else str(mode)
    return int(np.argmax(_opening_direction(th, name) * th))
