"""Vector-valued Gaussian sampling driven by kernel factorizations.

A path of the process attached to a positive table ``K`` is

    W(s) = V(s)^H Z,

with ``Z`` a real standard normal vector on the dilation space and ``V``
the feature operators from :func:`opkern.dilation.kolmogorov_factorize`.
The sesquilinear second moments then reproduce the kernel exactly:
``E[<a, W(s)> <W(t), b>] = <a, K(s, t) b>``.

Randomness is counter-based (Philox keyed by the user seed) and normal
variates come from the inverse normal CDF applied to 53-bit uniforms, so a
sample index always maps to the same path regardless of how draws are
batched or partitioned across workers.  Each sample consumes a fixed,
block-aligned slice of the key stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .dilation import FeatureSystem, kolmogorov_factorize
from .errors import (
    InvalidKernel,
    NotPositiveDefinite,
    ShapeError,
    SingularL,
)
from .kernels import (
    PD_RTOL,
    RANK_RTOL,
    LabelSet,
    OperatorKernelTable,
    is_positive_definite,
)

_TINY = 1e-300
_RAWS_PER_BLOCK = 4  # 64-bit outputs per Philox counter increment
_MASK64 = (1 << 64) - 1


def standard_normal_rows(seed: int, start: int, count: int, width: int) -> np.ndarray:
    """Deterministic (count, width) matrix of N(0, 1) variates.

    Row ``k`` depends only on ``(seed, start + k)``: each sample index owns
    ``ceil(width / 4)`` Philox counter blocks, and uniforms are mapped
    through the inverse CDF.  The stream is therefore stable across
    platforms and arbitrary re-batching.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    if count == 0 or width == 0:
        return np.zeros((count, width))
    blocks_per = max(1, -(-width // _RAWS_PER_BLOCK))
    gen = Philox(key=np.uint64(seed & _MASK64))
    gen.advance(start * blocks_per)
    raw = gen.random_raw(count * blocks_per * _RAWS_PER_BLOCK)
    raw = raw.reshape(count, blocks_per * _RAWS_PER_BLOCK)[:, :width]
    # 53-bit uniform in (0, 1): half-ulp offset keeps ndtri finite.
    uniform = (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53 + 2.0**-54
    return ndtri(uniform)


@dataclass(frozen=True)
class PathBatch:
    """Paths indexed (sample, label, coordinate); meta identifies the draw."""

    label_set: LabelSet
    paths: np.ndarray
    seed: int
    start: int

    def __post_init__(self):
        if self.paths.ndim != 3 or self.paths.shape[1] != self.label_set.n:
            raise ShapeError(f"paths must be (N, {self.label_set.n}, d), got {self.paths.shape}")
        if self.paths.shape[0] < 1:
            raise InvalidKernel("a path batch holds at least one sample")
        if not np.all(np.isfinite(self.paths.real)) or not np.all(np.isfinite(self.paths.imag)):
            raise InvalidKernel("paths contain non-finite entries")

    @property
    def count(self) -> int:
        return int(self.paths.shape[0])

    @property
    def dim_h(self) -> int:
        return int(self.paths.shape[2])


def draw_paths(fs: FeatureSystem, seed: int, start: int, count: int) -> PathBatch:
    """Paths for sample indices ``start .. start + count - 1``."""
    n, d, r = fs.label_set.n, fs.dim_h, fs.dilation_dim
    z = standard_normal_rows(seed, start, count, r)
    if r:
        # einsum (not BLAS matmul): its fixed sequential reduction makes a
        # path bitwise independent of how draws are batched.
        flat_paths = np.einsum("kr,rc->kc", z, fs.stacked.conj())
    else:
        flat_paths = np.zeros((count, n * d), dtype=np.complex128)
    paths = flat_paths.reshape(count, n, d).astype(np.complex128)
    paths.setflags(write=False)
    return PathBatch(label_set=fs.label_set, paths=paths, seed=seed, start=start)


@dataclass
class GaussianSampler:
    """Reproducible path source; ``counter`` is the next sample index."""

    feature_system: FeatureSystem
    seed: int
    counter: int = 0

    def draw(self, count: int) -> PathBatch:
        batch = draw_paths(self.feature_system, self.seed, self.counter, count)
        self.counter += count
        return batch

    def path_at(self, index: int) -> np.ndarray:
        """The (n, d) path of one sample index, independent of the counter."""
        return draw_paths(self.feature_system, self.seed, index, 1).paths[0]


def make_sampler(table: OperatorKernelTable, seed: int, tol: float = RANK_RTOL) -> GaussianSampler:
    """Sampler for the process whose covariance kernel is ``table``."""
    return GaussianSampler(feature_system=kolmogorov_factorize(table, tol), seed=seed)


def empirical_covariance(batch: PathBatch) -> OperatorKernelTable:
    """Monte-Carlo second moments: blocks ``(1/N) sum_k W_k(s) W_k(t)^H``.

    Uses the 1/N convention (a plain expectation estimate, not the
    bias-corrected 1/(N-1) variant).  The result is an exactly Hermitian,
    positive table; it converges to the sampled kernel at the usual CLT
    rate.
    """
    if batch.count < 1:
        raise InvalidKernel("empirical covariance needs at least one path")
    n, d = batch.label_set.n, batch.dim_h
    p = batch.paths.reshape(batch.count, n * d)
    flat = p.T @ p.conj() / batch.count
    return OperatorKernelTable.from_flat(batch.label_set, d, flat)


# ---------------------------------------------------------------------------
# Joint processes and conditioning
# ---------------------------------------------------------------------------


def _coupling_array(label_set: LabelSet, dim_h: int, coupling) -> np.ndarray:
    arr = np.asarray(coupling, dtype=np.complex128)
    n = label_set.n
    if arr.shape != (n, n, dim_h, dim_h):
        raise ShapeError(f"coupling must be ({n}, {n}, {dim_h}, {dim_h}), got {arr.shape}")
    if not np.all(np.isfinite(arr.real)) or not np.all(np.isfinite(arr.imag)):
        raise InvalidKernel("coupling contains non-finite entries")
    return arr


def _flatten_blocks(blocks: np.ndarray) -> np.ndarray:
    n, _, d, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(n * d, n * d)


@dataclass
class JointKernel:
    """Block table over H + H pairing two processes through a coupling.

    ``m`` is the assembled table with 2d x 2d blocks
    ``[[K(s,t), T(s,t)], [T(t,s)^H, L(s,t)]]``; ``schur`` holds the
    Gram-level Schur complement ``K - T L^+ T^H`` as a kernel table (the
    conditional covariance).
    """

    k: OperatorKernelTable
    l: OperatorKernelTable
    coupling: np.ndarray
    m: OperatorKernelTable
    schur: OperatorKernelTable

    @property
    def label_set(self) -> LabelSet:
        return self.k.label_set

    @property
    def dim_h(self) -> int:
        return self.k.dim_h

    @property
    def k_gram(self) -> np.ndarray:
        return self.k.flat

    @property
    def l_gram(self) -> np.ndarray:
        return self.l.flat

    @property
    def t_gram(self) -> np.ndarray:
        return _flatten_blocks(self.coupling)


def assemble_joint(
    k: OperatorKernelTable,
    l: OperatorKernelTable,
    coupling,
    tol: float = PD_RTOL,
) -> JointKernel:
    """Assemble and admit the joint table of a coupled pair of processes.

    The coupling is an (n, n, d, d) block function on pairs of labels (no
    Hermitian symmetry required).  Admissibility = positivity of the
    flattened joint table; the Gram-level Schur complement is computed with
    a pseudo-inverse and checked positive as well.  Rejections raise
    :class:`NotPositiveDefinite` and indicate an inadmissible coupling.
    """
    k._require_same_shape(l)
    n, d = k.n, k.dim_h
    t_blocks = _coupling_array(k.label_set, d, coupling)

    m_blocks = np.empty((n, n, 2 * d, 2 * d), dtype=np.complex128)
    m_blocks[:, :, :d, :d] = k.blocks
    m_blocks[:, :, :d, d:] = t_blocks
    m_blocks[:, :, d:, :d] = t_blocks.transpose(1, 0, 3, 2).conj()
    m_blocks[:, :, d:, d:] = l.blocks
    m_table = OperatorKernelTable(k.label_set, m_blocks)

    m_report = is_positive_definite(m_table)
    if m_report.min_eig < -tol * m_report.scale:
        raise NotPositiveDefinite(
            f"joint table is not positive (min eig {m_report.min_eig:.3e}); coupling inadmissible",
            min_eig=m_report.min_eig,
        )

    t_gram = _flatten_blocks(t_blocks)
    schur_flat = k.flat - t_gram @ np.linalg.pinv(l.flat, rcond=RANK_RTOL, hermitian=True) @ t_gram.conj().T
    schur_flat = 0.5 * (schur_flat + schur_flat.conj().T)
    schur_table = OperatorKernelTable.from_flat(k.label_set, d, schur_flat)
    s_report = is_positive_definite(schur_table)
    if s_report.min_eig < -tol * max(s_report.scale, m_report.scale):
        raise NotPositiveDefinite(
            f"Schur complement is not positive (min eig {s_report.min_eig:.3e}); coupling inadmissible",
            min_eig=s_report.min_eig,
        )
    return JointKernel(k=k, l=l, coupling=t_blocks, m=m_table, schur=schur_table)


def sample_joint(joint: JointKernel, seed: int, count: int) -> tuple[PathBatch, PathBatch]:
    """Draw the coupled pair by sampling the joint table and splitting H + H.

    The first batch carries the K-coordinates (first d of each 2d block),
    the second the L-coordinates.
    """
    d = joint.dim_h
    batch = make_sampler(joint.m, seed).draw(count)
    k_paths = batch.paths[:, :, :d].copy()
    l_paths = batch.paths[:, :, d:].copy()
    k_paths.setflags(write=False)
    l_paths.setflags(write=False)
    k_part = PathBatch(label_set=joint.label_set, paths=k_paths, seed=seed, start=batch.start)
    l_part = PathBatch(label_set=joint.label_set, paths=l_paths, seed=seed, start=batch.start)
    return k_part, l_part


@dataclass(frozen=True)
class ConditionalLaw:
    """Gaussian conditioning of the K-process on the full observed L-process.

    ``mean_map`` is the Gram-level matrix ``T L^{-1}`` sending the
    concatenated observation to the conditional mean; ``cond_cov`` is the
    Schur-complement table.  ``null_dim`` counts directions removed by the
    pseudo-inverse when a singular L was explicitly allowed.
    """

    mean_map: np.ndarray
    cond_cov: OperatorKernelTable
    observed: np.ndarray
    posterior_mean: np.ndarray
    null_dim: int


def condition(
    joint: JointKernel,
    observed_l,
    tol: float = RANK_RTOL,
    allow_singular: bool = False,
) -> ConditionalLaw:
    """Condition the K-process on observed values of the L-process.

    Conditioning is over the full finite label grid: the mean is
    ``T_gram L_gram^{-1} vec(observed)`` and the covariance the Schur
    complement.  A numerically singular L raises :class:`SingularL` unless
    ``allow_singular`` is set, in which case the pseudo-inverse is used,
    results are meaningful on the range of L only, and ``null_dim``
    reports the removed dimensions.
    """
    n, d = joint.label_set.n, joint.dim_h
    observed = np.asarray(observed_l, dtype=np.complex128)
    if observed.shape != (n, d):
        raise ShapeError(f"observed values must be ({n}, {d}), got {observed.shape}")

    l_gram = joint.l_gram
    evals = np.linalg.eigvalsh(l_gram)
    top = max(float(evals[-1]), 0.0)
    invertible = float(evals[0]) > tol * top and top > 0.0
    if invertible:
        mean_map = np.linalg.solve(l_gram.conj().T, joint.t_gram.conj().T).conj().T
        null_dim = 0
    elif allow_singular:
        mean_map = joint.t_gram @ np.linalg.pinv(l_gram, rcond=tol, hermitian=True)
        null_dim = int(np.sum(evals <= tol * top))
    else:
        raise SingularL(
            f"L Gram matrix is numerically singular (eigs in [{evals[0]:.3e}, {evals[-1]:.3e}])"
        )
    posterior = (mean_map @ observed.reshape(n * d)).reshape(n, d)
    return ConditionalLaw(
        mean_map=mean_map,
        cond_cov=joint.schur,
        observed=observed,
        posterior_mean=posterior,
        null_dim=null_dim,
    )


@dataclass(frozen=True)
class CondCovComparison:
    """Outcome of comparing the conditional covariances of two couplings."""

    equal: bool
    residual: float
    common_pd: bool
    common_min_eig: float


def conditional_cov_equal(
    k1: OperatorKernelTable,
    k2: OperatorKernelTable,
    l1: OperatorKernelTable,
    l2: OperatorKernelTable,
    coupling,
    tol: float = 1e-10,
) -> CondCovComparison:
    """Decide ``K1 - T L1^{-1} T^H == K2 - T L2^{-1} T^H`` at Gram level.

    Also reports whether the common value is positive, i.e. whether the two
    joint assemblies condition to one and the same admissible law.  Both
    L-tables must be numerically invertible; degeneracy raises
    :class:`SingularL`.
    """
    k1._require_same_shape(k2)
    k1._require_same_shape(l1)
    k1._require_same_shape(l2)
    t_gram = _flatten_blocks(_coupling_array(k1.label_set, k1.dim_h, coupling))

    conds = []
    for k, l in ((k1, l1), (k2, l2)):
        evals = np.linalg.eigvalsh(l.flat)
        if float(evals[0]) <= RANK_RTOL * max(float(evals[-1]), 0.0) or float(evals[-1]) <= 0.0:
            raise SingularL(f"L Gram matrix is numerically singular (min eig {evals[0]:.3e})")
        x = np.linalg.solve(l.flat, t_gram.conj().T)
        c = k.flat - t_gram @ x
        conds.append(0.5 * (c + c.conj().T))

    residual = float(np.linalg.norm(conds[0] - conds[1], 2))
    scale = max(
        float(np.linalg.norm(k1.flat, 2)),
        float(np.linalg.norm(k2.flat, 2)),
        float(np.linalg.norm(conds[0], 2)),
        float(np.linalg.norm(conds[1], 2)),
        _TINY,
    )
    common = OperatorKernelTable.from_flat(k1.label_set, k1.dim_h, 0.5 * (conds[0] + conds[1]))
    report = is_positive_definite(common)
    return CondCovComparison(
        equal=residual <= tol * scale,
        residual=residual / scale,
        common_pd=report.pd,
        common_min_eig=report.min_eig,
    )


@dataclass(frozen=True)
class ConditionalMcReport:
    """Monte-Carlo check of the conditional law, in standard-error units."""

    mean_map_dev_se: float
    residual_cov_dev_se: float
    count: int
    passed: bool


def mc_verify_conditional(
    joint: JointKernel,
    seed: int,
    count: int,
    tol_sigma: float = 5.0,
) -> ConditionalMcReport:
    """Regress sampled K-paths on L-paths and compare with the exact law.

    The empirical regression map is checked entrywise against
    ``T_gram L_gram^{-1}`` and the empirical residual covariance against the
    Schur complement, each deviation expressed in asymptotic standard
    errors (Gaussian plug-in formulas); the check passes when every entry
    stays within ``tol_sigma`` standard errors.
    """
    if count < 2:
        raise InvalidKernel("Monte-Carlo verification needs at least two samples")
    n, d = joint.label_set.n, joint.dim_h
    nd = n * d
    law = condition(joint, np.zeros((n, d)))  # raises SingularL when degenerate

    k_part, l_part = sample_joint(joint, seed, count)
    x = k_part.paths.reshape(count, nd)
    y = l_part.paths.reshape(count, nd)

    c_xy = x.T @ y.conj() / count
    c_yy = y.T @ y.conj() / count
    c_yy = 0.5 * (c_yy + c_yy.conj().T)
    b_hat = np.linalg.solve(c_yy.conj().T, c_xy.conj().T).conj().T

    l_inv = np.linalg.inv(joint.l_gram)
    schur_flat = joint.schur.flat
    se_floor = 1e-12 * max(float(np.linalg.norm(joint.m.flat, 2)), 1.0) / np.sqrt(count)
    se_mean = np.sqrt(
        np.outer(np.abs(np.diag(schur_flat)), np.abs(np.diag(l_inv))) / count
    )
    mean_dev = float(np.max(np.abs(b_hat - law.mean_map) / np.maximum(se_mean, se_floor)))

    resid = x - y @ b_hat.T
    s_hat = resid.T @ resid.conj() / count
    diag_s = np.abs(np.diag(schur_flat))
    se_cov = np.sqrt((np.outer(diag_s, diag_s) + np.abs(schur_flat) ** 2) / count)
    cov_dev = float(np.max(np.abs(s_hat - schur_flat) / np.maximum(se_cov, se_floor)))

    return ConditionalMcReport(
        mean_map_dev_se=mean_dev,
        residual_cov_dev_se=cov_dev,
        count=count,
        passed=mean_dev <= tol_sigma and cov_dev <= tol_sigma,
    )
