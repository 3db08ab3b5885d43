"""Realization calculus for pairs of signed kernel decompositions.

A *signed kernel system* is four positive tables and a fixed operator
``T`` on ``H`` satisfying

    K1 - T^H L1 T  =  K2 - T^H L2 T        (blockwise).

Rearranged, the stacked feature columns

    g(s, x) = [V_K2(s) x; V_L1(s) T x],    f(s, x) = [V_K1(s) x; V_L2(s) T x]

have identical Gram matrices, so ``g -> f`` extends to a partial isometry

    W = [[A, B], [C, D]]

from the span of the g-columns onto the span of the f-columns; it is
computed here as ``F G^+`` (Moore-Penrose, relative rank cutoff), which
vanishes on the orthogonal complement of the initial space automatically.
Whenever ``M(s) = V_L2(s) - D V_L1(s)`` has full column rank, the
fractional-linear expression

    T12(s) = A + B V_L1(s) M(s)^+ C

maps ``V_K2(s)`` onto ``V_K1(s)`` and reconstructs
``K1(s, t) = V_K1(s)^H T12(t) V_K2(t)``.

For a dominated pair ``lo <= hi`` the Radon-Nikodym derivative is the
unique operator ``Phi`` on the dilation space of ``hi`` with
``lo(s, t) = V_hi(s)^H Phi V_hi(t)`` and ``0 <= Phi <= I``; when the system
is dominated (``K1 <= K2``) its square root agrees with the transfer
function on the span of the ``V_K2(s) a``, after the canonical isometric
identification of the two dilation spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .dilation import FeatureSystem, kolmogorov_factorize
from .errors import (
    GramMismatch,
    InternalInvariantViolation,
    NotDominated,
    NotEquivalent,
    NotInvertible,
    NotPositiveDefinite,
    ShapeError,
    SpectrumOutOfRange,
)
from .kernels import (
    RANK_RTOL,
    LabelSet,
    OperatorKernelTable,
    is_positive_definite,
)

_TINY = 1e-300


@dataclass(frozen=True)
class SignedKernelSystem:
    """Validated system (K1, K2, L1, L2, T); see :func:`validate_system`."""

    k1: OperatorKernelTable
    k2: OperatorKernelTable
    l1: OperatorKernelTable
    l2: OperatorKernelTable
    t_op: np.ndarray
    identity_residual: float

    @property
    def label_set(self) -> LabelSet:
        return self.k1.label_set

    @property
    def dim_h(self) -> int:
        return self.k1.dim_h

    def tables(self) -> dict[str, OperatorKernelTable]:
        return {"k1": self.k1, "k2": self.k2, "l1": self.l1, "l2": self.l2}


def validate_system(
    k1: OperatorKernelTable,
    k2: OperatorKernelTable,
    l1: OperatorKernelTable,
    l2: OperatorKernelTable,
    t_op,
    tol: float = 1e-10,
) -> SignedKernelSystem:
    """Check shapes, positivity, and the defining identity of a system.

    The identity residual is measured blockwise in spectral norm, relative
    to the largest flattened norm among the four tables (the L-side scaled
    by ``max(1, ||T||^2)``).  Violations raise :class:`NotEquivalent` with
    the offending residual attached.
    """
    tables = {"k1": k1, "k2": k2, "l1": l1, "l2": l2}
    for name, tab in tables.items():
        k1._require_same_shape(tab)
        report = is_positive_definite(tab)
        if not report.pd:
            raise NotPositiveDefinite(
                f"kernel {name} is not positive (min eig {report.min_eig:.3e})",
                min_eig=report.min_eig,
            )
    t_op = np.asarray(t_op, dtype=np.complex128)
    if t_op.shape != (k1.dim_h, k1.dim_h):
        raise ShapeError(f"T must be ({k1.dim_h}, {k1.dim_h}), got {t_op.shape}")

    lhs = (k1 - k2).flat
    rhs = ((l1 - l2).conjugated(t_op)).flat
    residual = float(np.linalg.norm(lhs - rhs, 2))
    t_sq = max(1.0, float(np.linalg.norm(t_op, 2)) ** 2)
    scale = max(
        float(np.linalg.norm(k1.flat, 2)),
        float(np.linalg.norm(k2.flat, 2)),
        t_sq * float(np.linalg.norm(l1.flat, 2)),
        t_sq * float(np.linalg.norm(l2.flat, 2)),
        _TINY,
    )
    rel = residual / scale
    if residual > tol * scale:
        raise NotEquivalent(
            f"signed decompositions disagree: residual {residual:.3e} "
            f"(relative {rel:.3e} > {tol:g})",
            residual=residual,
            relative=rel,
        )
    return SignedKernelSystem(k1, k2, l1, l2, t_op, identity_residual=rel)


@dataclass(frozen=True)
class TransferRealization:
    """Partial isometry blocks A, B, C, D together with the factorizations.

    ``initial_basis`` / ``final_basis`` are orthonormal column bases of the
    initial and final spaces; ``g_columns`` / ``f_columns`` are the stacked
    feature columns the isometry was fitted to.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    initial_basis: np.ndarray
    final_basis: np.ndarray
    g_columns: np.ndarray
    f_columns: np.ndarray
    features: dict[str, FeatureSystem]
    gram_defect: float

    @property
    def w(self) -> np.ndarray:
        return np.block([[self.a, self.b], [self.c, self.d]])

    def partial_isometry_defect(self) -> float:
        """max of ||W^H W - P_init|| and ||W W^H - P_fin|| (spectral)."""
        w = self.w
        p_init = self.initial_basis @ self.initial_basis.conj().T
        p_fin = self.final_basis @ self.final_basis.conj().T
        return max(
            float(np.linalg.norm(w.conj().T @ w - p_init, 2)),
            float(np.linalg.norm(w @ w.conj().T - p_fin, 2)),
        )


def _orthonormal_range(matrix: np.ndarray, tol: float) -> np.ndarray:
    if matrix.size == 0:
        return np.zeros((matrix.shape[0], 0), dtype=np.complex128)
    u, s, _ = np.linalg.svd(matrix, full_matrices=False)
    keep = s > tol * (s[0] if s.size else 0.0)
    return u[:, keep]


def construct_partial_isometry(sys: SignedKernelSystem, tol: float = RANK_RTOL) -> TransferRealization:
    """Build W = F G^+ from the stacked feature columns of a valid system.

    Well-definedness rests on the equality of the Gram matrices of the two
    column families, which is implied by the system identity; a mismatch
    beyond tolerance signals a numerical rank pathology and raises
    :class:`GramMismatch`.
    """
    fs = {name: kolmogorov_factorize(tab, tol) for name, tab in sys.tables().items()}
    n = sys.label_set.n
    t_lift = np.kron(np.eye(n), sys.t_op)
    g = np.vstack([fs["k2"].stacked, fs["l1"].stacked @ t_lift])
    f = np.vstack([fs["k1"].stacked, fs["l2"].stacked @ t_lift])

    gram_g = g.conj().T @ g
    gram_f = f.conj().T @ f
    gram_scale = max(float(np.linalg.norm(gram_g, 2)), float(np.linalg.norm(gram_f, 2)), _TINY)
    gram_defect = float(np.linalg.norm(gram_g - gram_f, 2)) / gram_scale
    if gram_defect > 1e-9:
        raise GramMismatch(
            f"initial/final column Grams differ by relative {gram_defect:.3e}; "
            "the column correspondence is not isometric"
        )

    w = f @ np.linalg.pinv(g, rcond=tol)
    r_k1, r_k2 = fs["k1"].dilation_dim, fs["k2"].dilation_dim
    realization = TransferRealization(
        a=w[:r_k1, :r_k2],
        b=w[:r_k1, r_k2:],
        c=w[r_k1:, :r_k2],
        d=w[r_k1:, r_k2:],
        initial_basis=_orthonormal_range(g, tol),
        final_basis=_orthonormal_range(f, tol),
        g_columns=g,
        f_columns=f,
        features=fs,
        gram_defect=gram_defect,
    )
    return realization


def transfer_function(
    real: TransferRealization,
    sys: SignedKernelSystem,
    s: str,
    tol: float = RANK_RTOL,
) -> np.ndarray:
    """Evaluate ``T12(s) = A + B V_L1(s) M(s)^+ C`` at one label.

    ``M(s) = V_L2(s) - D V_L1(s)`` must have full column rank with
    ``sigma_min > tol * sigma_max``; otherwise the fractional-linear
    expression is undefined at ``s`` and :class:`NotInvertible` is raised.
    That failure reflects a violated hypothesis, not a numerical bug.
    """
    d_h = sys.dim_h
    v_l1 = real.features["l1"].operator(s)
    v_l2 = real.features["l2"].operator(s)
    m = v_l2 - real.d @ v_l1
    sv = np.linalg.svd(m, compute_uv=False) if m.size else np.zeros(0)
    sigma_max = float(sv[0]) if sv.size else 0.0
    sigma_min = float(sv[d_h - 1]) if sv.size >= d_h else 0.0
    if m.shape[0] < d_h or sigma_min <= tol * sigma_max or sigma_max == 0.0:
        raise NotInvertible(
            f"rank condition fails at label {s!r}: sigma_min {sigma_min:.3e}, sigma_max {sigma_max:.3e}",
            label=s,
            sigma_min=sigma_min,
        )
    return real.a + real.b @ v_l1 @ np.linalg.pinv(m, rcond=tol) @ real.c


@dataclass(frozen=True)
class RealizationReport:
    """Relative residuals of the realization identities.

    All residuals are relative to the scale documented on
    :func:`verify_realization`; ``partial_isometry_defect`` is absolute
    (projections have unit scale).
    """

    feature_map_residual: float
    reconstruction_residual: float
    intertwining_residual: float
    partial_isometry_defect: float
    gram_defect: float
    passed: bool


def verify_realization(
    real: TransferRealization,
    sys: SignedKernelSystem,
    tol: float = 1e-8,
) -> RealizationReport:
    """Check the two realization identities at every label.

    ``feature_map_residual`` is the worst ``||V_K1(s) - T12(s) V_K2(s)||``
    relative to ``||stacked V_K1||``; ``reconstruction_residual`` the worst
    ``||K1(s, t) - V_K1(s)^H T12(t) V_K2(t)||`` over pairs, relative to the
    flattened norm of K1.  Propagates :class:`NotInvertible`.
    """
    fs_k1, fs_k2 = real.features["k1"], real.features["k2"]
    labels = sys.label_set.labels
    t12 = {s: transfer_function(real, sys, s) for s in labels}

    k1_stack_scale = max(float(np.linalg.norm(fs_k1.stacked, 2)), _TINY)
    feature_dev = max(
        float(np.linalg.norm(fs_k1.operator(s) - t12[s] @ fs_k2.operator(s), 2))
        for s in labels
    )
    k1_flat_scale = max(float(np.linalg.norm(sys.k1.flat, 2)), _TINY)
    recon_dev = max(
        float(
            np.linalg.norm(
                sys.k1.block(s, t) - fs_k1.operator(s).conj().T @ t12[t] @ fs_k2.operator(t),
                2,
            )
        )
        for s in labels
        for t in labels
    )
    f_scale = max(float(np.linalg.norm(real.f_columns, 2)), _TINY)
    intertwine_dev = float(np.linalg.norm(real.f_columns - real.w @ real.g_columns, 2))

    report = RealizationReport(
        feature_map_residual=feature_dev / k1_stack_scale,
        reconstruction_residual=recon_dev / k1_flat_scale,
        intertwining_residual=intertwine_dev / f_scale,
        partial_isometry_defect=real.partial_isometry_defect(),
        gram_defect=real.gram_defect,
        passed=False,
    )
    passed = (
        report.feature_map_residual <= tol
        and report.reconstruction_residual <= tol
        and report.intertwining_residual <= tol
        and report.partial_isometry_defect <= tol
    )
    return replace(report, passed=passed)


def transitive_action_check(
    sys: SignedKernelSystem,
    real: TransferRealization,
    tol: float = 1e-8,
) -> bool:
    """True when the vectors ``T12(s) V_K2(s) a`` span the dilation space of K1.

    Column spaces are compared via principal angles; since the image
    vectors already live in the K1 dilation space, the decisive part is
    that their numerical rank reaches the full dilation dimension.
    """
    fs_k2 = real.features["k2"]
    r_k1 = real.features["k1"].dilation_dim
    cols = np.hstack(
        [transfer_function(real, sys, s) @ fs_k2.operator(s) for s in sys.label_set.labels]
    )
    basis = _orthonormal_range(cols, RANK_RTOL)
    if basis.shape[1] != r_k1:
        return False
    if r_k1 == 0:
        return True
    angles = scipy.linalg.subspace_angles(basis, np.eye(r_k1, dtype=np.complex128))
    return bool(np.all(angles <= tol))


@dataclass(frozen=True)
class RNDerivative:
    """Radon-Nikodym derivative of ``lo`` with respect to ``hi``.

    ``phi`` acts on the dilation space of ``hi``; its eigenvalues are
    clamped to [0, 1] (legal only within tolerance, enforced upstream).
    ``spectrum`` records the raw pre-clamp extremes.
    """

    phi: np.ndarray
    sqrt_phi: np.ndarray
    spectrum: tuple[float, float]
    feature_system: FeatureSystem
    reproduction_residual: float


def radon_nikodym(
    lo: OperatorKernelTable,
    hi: OperatorKernelTable,
    tol: float = 1e-9,
) -> RNDerivative:
    """Solve ``lo(s, t) = V_hi(s)^H Phi V_hi(t)`` for ``0 <= Phi <= I``.

    Requires ``lo <= hi`` (within ``-tol`` times the flattened norm of
    ``hi``); then ``Phi = (V^+)^H flat(lo) V^+`` on the dilation space of
    ``hi`` is the unique solution.  Eigenvalues outside ``[-tol, 1 + tol]``
    raise :class:`SpectrumOutOfRange`; inside, they are clamped to [0, 1]
    before the principal square root is taken.
    """
    lo._require_same_shape(hi)
    hi_scale = is_positive_definite(hi).scale
    diff_report = is_positive_definite(hi - lo, tol * hi_scale)
    if not diff_report.pd:
        raise NotDominated(
            f"domination fails: min eigenvalue of (hi - lo) is {diff_report.min_eig:.3e}"
        )
    fs = kolmogorov_factorize(hi)
    pinv = np.linalg.pinv(fs.stacked, rcond=RANK_RTOL)
    phi = pinv.conj().T @ lo.flat @ pinv
    phi = 0.5 * (phi + phi.conj().T)
    w, u = np.linalg.eigh(phi) if phi.size else (np.zeros(0), np.zeros((0, 0)))
    raw = (float(w[0]), float(w[-1])) if w.size else (0.0, 0.0)
    if w.size and (raw[0] < -tol or raw[1] > 1.0 + tol):
        raise SpectrumOutOfRange(
            f"derivative spectrum [{raw[0]:.3e}, {raw[1]:.3e}] leaves [0, 1] beyond {tol:g}"
        )
    clamped = np.clip(w, 0.0, 1.0)
    phi_c = (u * clamped) @ u.conj().T
    sqrt_phi = (u * np.sqrt(clamped)) @ u.conj().T

    residual = float(np.linalg.norm(fs.stacked.conj().T @ phi_c @ fs.stacked - lo.flat, 2))
    rel = residual / max(hi_scale, _TINY)
    if rel > max(tol, 10 * RANK_RTOL):
        raise InternalInvariantViolation(
            f"derivative reproduces lo with relative residual {rel:.3e}"
        )
    return RNDerivative(
        phi=phi_c,
        sqrt_phi=sqrt_phi,
        spectrum=raw,
        feature_system=fs,
        reproduction_residual=rel,
    )


@dataclass(frozen=True)
class RNTransferReport:
    """Agreement of sqrt(derivative) with the transfer function."""

    max_deviation: float
    spectrum: tuple[float, float]
    passed: bool


def verify_rn_transfer_identity(sys: SignedKernelSystem, tol: float = 1e-8) -> RNTransferReport:
    """Check ``sqrt(dK1/dK2) = T12`` on the span of the ``V_K2(s) a``.

    The transfer function maps into the dilation space of K1 while the
    derivative acts on that of K2, so the comparison composes T12 with the
    canonical identification ``V_K1(s) a -> sqrt(Phi) V_K2(s) a`` (an
    isometry on the span, fitted by least squares).  The reported deviation
    is the worst ``||sqrt(Phi) V_K2(s) - U T12(s) V_K2(s)||`` relative to
    ``||stacked V_K2||``.  Requires ``K1 <= K2``; propagates
    :class:`NotDominated` and :class:`NotInvertible`.
    """
    rn = radon_nikodym(sys.k1, sys.k2)
    real = construct_partial_isometry(sys)
    fs2 = rn.feature_system
    fs1 = real.features["k1"]

    ident = rn.sqrt_phi @ fs2.stacked @ np.linalg.pinv(fs1.stacked, rcond=RANK_RTOL)
    scale = max(float(np.linalg.norm(fs2.stacked, 2)), _TINY)
    dev = 0.0
    for s in sys.label_set.labels:
        t12 = transfer_function(real, sys, s)
        lifted = ident @ t12 @ real.features["k2"].operator(s)
        dev = max(dev, float(np.linalg.norm(rn.sqrt_phi @ fs2.operator(s) - lifted, 2)))
    rel = dev / scale
    return RNTransferReport(max_deviation=rel, spectrum=rn.spectrum, passed=rel <= tol)


# ---------------------------------------------------------------------------
# Instance generator
# ---------------------------------------------------------------------------


def _random_pd_flat(rng: np.random.Generator, size: int, ridge: float = 0.0) -> np.ndarray:
    g = rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))
    return g.conj().T @ g + ridge * np.eye(size)


def generate_valid_system(
    seed: int,
    n: int,
    d: int,
    dominated: bool = False,
    max_tries: int = 100,
    min_sigma_ratio: float = 1e-6,
) -> SignedKernelSystem:
    """Draw a random system satisfying every hypothesis of the realization.

    K2, L-side tables and a strict contraction T are drawn at random; a
    positive increment fixes L1 - L2, and K1 is defined by the system
    identity (scaled, in the dominated case, so that K1 stays positive and
    K1 <= K2).  Draws are rejected until the rank condition of the transfer
    function holds at every label with ``sigma_min/sigma_max`` at least
    ``min_sigma_ratio``.  Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    labels = LabelSet.of(f"s{i + 1}" for i in range(n))
    nd = n * d
    for _ in range(max_tries):
        k2_flat = _random_pd_flat(rng, nd, ridge=0.5)
        base_flat = _random_pd_flat(rng, nd)
        delta_flat = _random_pd_flat(rng, nd)
        t_op = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        t_op *= 0.8 / np.linalg.norm(t_op, 2)
        t_lift = np.kron(np.eye(n), t_op)
        bump = t_lift.conj().T @ delta_flat @ t_lift

        if dominated:
            # K1 = K2 - T^H (L2 - L1) T, with the increment shrunk so K1 > 0.
            lam_min = float(np.linalg.eigvalsh(k2_flat)[0])
            lam_bump = float(np.linalg.eigvalsh(bump)[-1])
            factor = 0.5 * lam_min / max(lam_bump, _TINY)
            delta_flat = factor * delta_flat
            bump = factor * bump
            l1_flat, l2_flat = base_flat, base_flat + delta_flat
            k1_flat = k2_flat - bump
        else:
            l1_flat, l2_flat = base_flat + delta_flat, base_flat
            k1_flat = k2_flat + bump

        tables = {
            name: OperatorKernelTable.from_flat(labels, d, flat)
            for name, flat in [("k1", k1_flat), ("k2", k2_flat), ("l1", l1_flat), ("l2", l2_flat)]
        }
        try:
            sys = validate_system(tables["k1"], tables["k2"], tables["l1"], tables["l2"], t_op)
            real = construct_partial_isometry(sys)
            for s in labels.labels:
                transfer_function(real, sys, s, tol=min_sigma_ratio)
        except (NotPositiveDefinite, NotEquivalent, GramMismatch, NotInvertible):
            continue
        return sys
    raise InternalInvariantViolation(f"no admissible system found in {max_tries} draws (seed {seed})")
