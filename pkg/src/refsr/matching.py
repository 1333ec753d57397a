"""Dense normalized patch matching between two feature maps.

Every location of the query map (zero-padded so the output grid equals the
query grid) is scored against every unpadded candidate patch of the
reference map by normalized inner product; the best candidate index and
score form the correspondence and similarity maps.

match_bruteforce is the oracle; match_features computes the identical
result through pre-normalized patch kernels as blocked GEMMs, parallel
over output-row blocks. Ties always break toward the smallest candidate
index, and results are bit-identical regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .features import FeatureMap

# Output image rows handled per work unit; fixed so that blocking does not
# depend on the worker count, and small enough that a 40-row grid splits
# into enough units to balance several workers.
ROW_BLOCK = 2
CANDIDATE_BLOCK = 1024


@dataclass(frozen=True)
class MatchConfig:
    patch_size: int = 3
    stride: int = 1
    epsilon: float = 1e-12

    def __post_init__(self):
        if self.patch_size < 1 or self.patch_size % 2 == 0:
            raise ValueError(f"patch_size must be odd and >= 1, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class MatchResult:
    """Best-candidate index map plus raw similarity scores (in [-1, 1]).

    clamped_sim() gives the [0, 1] weights used for texture suppression.
    """

    index_map: np.ndarray  # (H, W) int64
    sim_map: np.ndarray  # (H, W) float
    cand_rows: int
    cand_cols: int
    patch_size: int
    stride: int

    def clamped_sim(self) -> np.ndarray:
        return np.clip(self.sim_map, 0.0, 1.0)


def _as_chw(f) -> np.ndarray:
    return f.data if isinstance(f, FeatureMap) else np.asarray(f)


def patch_grid(height: int, width: int, cfg: MatchConfig):
    k, s = cfg.patch_size, cfg.stride
    if height < k or width < k:
        raise ValueError(f"map {height}x{width} smaller than patch size {k}")
    return (height - k) // s + 1, (width - k) // s + 1


def extract_patches(f, cfg: MatchConfig) -> np.ndarray:
    """One row per valid patch position in raster order, values channel-major."""
    x = _as_chw(f)
    c = x.shape[0]
    k, s = cfg.patch_size, cfg.stride
    rows, cols = patch_grid(x.shape[1], x.shape[2], cfg)
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    windows = windows[:, ::s, ::s]  # (C, rows, cols, k, k)
    patches = windows.transpose(1, 2, 0, 3, 4).reshape(rows * cols, c * k * k)
    return np.ascontiguousarray(patches)


def _padded_query_patches(m_lr, cfg: MatchConfig) -> np.ndarray:
    """Dense per-pixel patches of the query map, zero-padded to keep its grid."""
    x = _as_chw(m_lr)
    c, h, w = x.shape
    half = cfg.patch_size // 2
    xp = np.zeros((c, h + 2 * half, w + 2 * half), dtype=x.dtype)
    xp[:, half:half + h, half:half + w] = x
    dense = MatchConfig(patch_size=cfg.patch_size, stride=1, epsilon=cfg.epsilon)
    return extract_patches(xp, dense)


def _unit_rows(mat: np.ndarray, epsilon: float) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1)
    return mat / np.maximum(norms, epsilon)[:, None]


def _check_pair(m_lr, m_lref, cfg: MatchConfig):
    a, b = _as_chw(m_lr), _as_chw(m_lref)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"channel mismatch: {a.shape[0]} vs {b.shape[0]}")
    patch_grid(a.shape[1], a.shape[2], cfg)
    patch_grid(b.shape[1], b.shape[2], cfg)
    return a, b


def match_bruteforce(m_lr, m_lref, cfg: MatchConfig = MatchConfig()) -> MatchResult:
    """Exhaustive oracle: per location, score all candidates and take the
    first maximum."""
    a, b = _check_pair(m_lr, m_lref, cfg)
    h, w = a.shape[1], a.shape[2]
    cand_rows, cand_cols = patch_grid(b.shape[1], b.shape[2], cfg)
    cand = _unit_rows(extract_patches(b, cfg), cfg.epsilon)
    query = _unit_rows(_padded_query_patches(a, cfg), cfg.epsilon)
    n = query.shape[0]
    index_map = np.empty(n, dtype=np.int64)
    sim_map = np.empty(n, dtype=query.dtype)
    for i in range(n):
        scores = cand @ query[i]
        j = int(np.argmax(scores))
        index_map[i] = j
        sim_map[i] = scores[j]
    return MatchResult(
        index_map.reshape(h, w), sim_map.reshape(h, w),
        cand_rows, cand_cols, cfg.patch_size, cfg.stride,
    )


def _match_block(query_unit, cand_unit, lo, hi, index_out, sim_out):
    """Best candidate per query row in [lo, hi), blocked over candidates.

    Candidate blocks are scanned in ascending index order with a strict
    improvement test, so ties resolve to the smallest candidate index.
    """
    block = query_unit[lo:hi]
    nb = hi - lo
    best_sim = np.full(nb, -np.inf, dtype=block.dtype)
    best_idx = np.zeros(nb, dtype=np.int64)
    for c0 in range(0, cand_unit.shape[0], CANDIDATE_BLOCK):
        chunk = cand_unit[c0:c0 + CANDIDATE_BLOCK]
        scores = block @ chunk.T
        local = np.argmax(scores, axis=1)
        local_best = scores[np.arange(nb), local]
        better = local_best > best_sim
        best_sim = np.where(better, local_best, best_sim)
        best_idx = np.where(better, local + c0, best_idx)
    index_out[lo:hi] = best_idx
    sim_out[lo:hi] = best_sim


def save_match_result(match: MatchResult, index_path, sim_path) -> None:
    """Persist as two exchange-format tensors; indices ride as float32,
    which is exact for values below 2**24."""
    from .tensor_io import write_tensor

    if match.index_map.max(initial=0) >= 2 ** 24:
        raise ValueError("candidate index too large for exact float32 storage")
    write_tensor(match.index_map.astype(np.float32), index_path)
    write_tensor(match.sim_map.astype(np.float32), sim_path)


def load_match_result(index_path, sim_path, cand_rows: int, cand_cols: int,
                      cfg: MatchConfig = MatchConfig()) -> MatchResult:
    from .tensor_io import read_tensor

    index_map = read_tensor(index_path).astype(np.int64)
    sim_map = read_tensor(sim_path)
    if index_map.shape != sim_map.shape:
        raise ValueError(
            f"index grid {index_map.shape} does not match sim grid {sim_map.shape}"
        )
    return MatchResult(index_map, sim_map, cand_rows, cand_cols,
                       cfg.patch_size, cfg.stride)


def match_features(m_lr, m_lref, cfg: MatchConfig = MatchConfig(), workers: int = 1) -> MatchResult:
    """Fast path: identical argmax to the oracle, scores within rounding.

    Parallel over fixed-size output-row blocks; each worker writes a
    disjoint slice, so the result does not depend on the worker count.
    """
    a, b = _check_pair(m_lr, m_lref, cfg)
    h, w = a.shape[1], a.shape[2]
    cand_rows, cand_cols = patch_grid(b.shape[1], b.shape[2], cfg)
    with threadpool_limits(limits=1):
        cand_unit = _unit_rows(extract_patches(b, cfg), cfg.epsilon)
        query_unit = _unit_rows(_padded_query_patches(a, cfg), cfg.epsilon)
        n = query_unit.shape[0]
        index_flat = np.empty(n, dtype=np.int64)
        sim_flat = np.empty(n, dtype=query_unit.dtype)
        bounds = [
            (lo, min(lo + ROW_BLOCK * w, n)) for lo in range(0, n, ROW_BLOCK * w)
        ]
        if workers <= 1:
            for lo, hi in bounds:
                _match_block(query_unit, cand_unit, lo, hi, index_flat, sim_flat)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [
                    pool.submit(_match_block, query_unit, cand_unit, lo, hi, index_flat, sim_flat)
                    for lo, hi in bounds
                ]
                for fut in futures:
                    fut.result()
    return MatchResult(
        index_flat.reshape(h, w), sim_flat.reshape(h, w),
        cand_rows, cand_cols, cfg.patch_size, cfg.stride,
    )
