"""局所部分空間による sVLAD

クラスタ s のメンバーのグラム行列 K_s = U_s Λ_s U_sᵀ から
π_s(x) = Λ_s^{-1/2} U_sᵀ κ_s(x)（κ_s はメンバーとのカーネル値の列）を作り、
ブロック s に (π_s(φ(c_s)) − π_s(φ(x_i))) を足し合わせる。
射影した中心は Λ_s^{1/2} U_sᵀ 1/N_s で閉じた形で求める。
"""
import logging
from typing import Optional

import numpy as np

from codebook.kernel_kmeans import assign_kernel_batch
from encoders.normalization import normalize
from encoders.nystrom import EIG_FLOOR
from geometry.kernels import gram, kernel_matrix
from handlers.error_handler import DegenerateKernelError, FingerprintMismatchError, GeometryMismatchError
from models.data_models import DescriptorSet, ImplicitCodebook, NormalizationSpec, SubspaceProjector, VladCode

_logger = logging.getLogger(__name__)


def subspace_fit(cb: ImplicitCodebook, r: Optional[int] = None, eig_floor: float = EIG_FLOOR) -> SubspaceProjector:
    """クラスタごとに局所部分空間の基底を求める。

    Args:
        cb: 学習済みの暗黙的コードブック
        r: 各クラスタで保持する最大次元（None なら下限を超える全固有値）
        eig_floor: λ_max に対する固有値の相対下限

    Returns:
        SubspaceProjector: 射影器

    Raises:
        DegenerateKernelError: メンバーのグラム行列に正の固有値がない場合
    """
    bases, eigenvalues, centroids = [], [], []
    for s in range(cb.m):
        members = cb.member_descriptors(s)
        n_s = members.shape[0]
        w, v = np.linalg.eigh(gram(members, cb.kernel).values)
        order = np.argsort(w)[::-1]
        w, v = w[order], v[:, order]
        if w[0] <= 0.0:
            raise DegenerateKernelError(f"クラスタ {s} のグラム行列")
        limit = n_s if r is None else min(r, n_s)
        keep = np.flatnonzero(w[:limit] > eig_floor * w[0])
        u, lam = v[:, keep], w[keep]
        bases.append(u)
        eigenvalues.append(lam)
        centroids.append(np.sqrt(lam) * (u.T @ np.full(n_s, 1.0 / n_s)))
        _logger.debug("クラスタ %d: N_s=%d, r_s=%d", s, n_s, keep.size)
    _logger.info("局所部分空間を作成しました: m=%d, 合計次元=%d", cb.m, sum(lam.size for lam in eigenvalues))
    return SubspaceProjector(codebook=cb, bases=bases, eigenvalues=eigenvalues, centroids=centroids)


def _check_cluster(s: int, proj: SubspaceProjector) -> None:
    if not 0 <= s < proj.codebook.m:
        raise IndexError(f"クラスタ番号 {s} は範囲外です（m={proj.codebook.m}）")


def subspace_project_batch(x, s: int, proj: SubspaceProjector) -> np.ndarray:
    """記述子配列をクラスタ s の部分空間に射影する。

    Returns:
        np.ndarray: (N, r_s) の座標
    """
    _check_cluster(s, proj)
    kappa = kernel_matrix(x, proj.codebook.member_descriptors(s), proj.codebook.kernel)
    return (kappa @ proj.bases[s]) / np.sqrt(proj.eigenvalues[s])


def subspace_project(x, s: int, proj: SubspaceProjector) -> np.ndarray:
    """記述子一つをクラスタ s の部分空間に射影する。

    Raises:
        IndexError: クラスタ番号が範囲外の場合
    """
    z = subspace_project_batch(x, s, proj)
    if z.shape[0] != 1:
        raise ValueError("subspace_project は記述子一つを受け取ります")
    return z[0]


def svlad_encode(
    descriptors: DescriptorSet | np.ndarray,
    cb: ImplicitCodebook,
    proj: SubspaceProjector,
    norm: Optional[NormalizationSpec] = None,
) -> VladCode:
    """記述子集合を sVLAD 符号にする（ブロック長はクラスタごとに異なってよい）。

    Raises:
        FingerprintMismatchError: 射影器が別のコードブックから作られている場合
        ValueError: 記述子集合が空の場合
    """
    if proj.fingerprint != cb.fingerprint:
        raise FingerprintMismatchError(cb.fingerprint, proj.fingerprint)
    if isinstance(descriptors, DescriptorSet):
        if descriptors.geometry != cb.geometry:
            raise GeometryMismatchError(cb.geometry.describe(), descriptors.geometry.describe())
        x = descriptors.descriptors
    else:
        x = np.asarray(descriptors, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("記述子集合が空のため符号化できません")
    labels = assign_kernel_batch(x, cb)
    blocks = []
    for s in range(cb.m):
        assigned = x[labels == s]
        if assigned.shape[0] == 0:
            blocks.append(np.zeros(proj.eigenvalues[s].size))
            continue
        residuals = proj.centroids[s][np.newaxis, :] - subspace_project_batch(assigned, s, proj)
        blocks.append(residuals.sum(axis=0))
    code = VladCode(blocks=blocks, encoder="svlad")
    if norm is not None:
        code = normalize(code, norm)
    return code
