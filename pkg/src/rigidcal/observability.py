"""Segment-wise excitation analysis of angular-velocity streams.

A motion window is worth calibrating on only if it excites all three
rotational degrees of freedom. Each window is scored by the information
matrix accumulated from the per-sample angular-velocity rows; the window is
accepted when the smallest singular value of that matrix clears a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .validation import as_float_array, check_covariance3

# Default acceptance threshold on the smallest singular value (5^-10) and
# default window length in seconds.
DEFAULT_THRESHOLD = 5.0**-10
DEFAULT_WINDOW_S = 10.0


@dataclass
class SegmentReport:
    """Excitation summary of one time window."""

    t_start: int
    t_end: int
    fim: np.ndarray
    singular_values: np.ndarray
    accepted: bool
    n_samples: int
    partial: bool = False
    sample_slice: tuple[int, int] = field(default=(0, 0))

    def to_dict(self) -> dict:
        return {
            "t_start_ns": int(self.t_start),
            "t_end_ns": int(self.t_end),
            "fim": self.fim.tolist(),
            "singular_values": self.singular_values.tolist(),
            "accepted": bool(self.accepted),
            "n_samples": int(self.n_samples),
            "partial": bool(self.partial),
        }


def fisher_info(omega, sigma=None) -> np.ndarray:
    """Information matrix sum_i w_i omega_i omega_i^T over angular-rate rows.

    Parameters
    ----------
    omega : array-like, shape (N, 3)
        Angular-velocity samples [rad/s], accumulated in timestamp order.
    sigma : optional
        Per-sample noise covariance: a single 3x3 matrix applied to all
        samples, collapsed to the scalar weight tr(inv(sigma))/3, or an (N,)
        vector of scalar weights. None means unit weights.

    Returns
    -------
    ndarray, shape (3, 3)
        Symmetric positive semi-definite information matrix.
    """
    w = as_float_array(omega, "omega")
    if w.ndim != 2 or w.shape[1] != 3:
        raise ValueError(f"omega must have shape (N, 3), got {w.shape}")
    if len(w) == 0:
        raise ValueError("omega must be non-empty")
    if sigma is None:
        weights = np.ones(len(w))
    else:
        s = np.asarray(sigma, dtype=float)
        if s.shape == (3, 3):
            check_covariance3(s, "sigma")
            weights = np.full(len(w), np.trace(np.linalg.inv(s)) / 3.0)
        elif s.shape == (len(w),):
            weights = s
        else:
            raise ValueError(f"sigma must be 3x3 or (N,), got {s.shape}")
    fim = np.einsum("i,ij,ik->jk", weights, w, w)
    return 0.5 * (fim + fim.T)


def _window_report(t_ns, omega, lo, hi, threshold, sigma, partial) -> SegmentReport:
    fim = fisher_info(omega[lo:hi], sigma)
    sv = np.linalg.svd(fim, compute_uv=False)
    accepted = (not partial) and bool(sv[-1] > threshold)
    return SegmentReport(
        t_start=int(t_ns[lo]),
        t_end=int(t_ns[hi - 1]),
        fim=fim,
        singular_values=sv,
        accepted=accepted,
        n_samples=hi - lo,
        partial=partial,
        sample_slice=(lo, hi),
    )


def segment_select(
    t_ns,
    omega,
    window_s: float = DEFAULT_WINDOW_S,
    threshold: float = DEFAULT_THRESHOLD,
    sigma=None,
) -> list[SegmentReport]:
    """Split a rate series into consecutive windows and gate each one.

    Windows are non-overlapping and ``window_s`` long; a trailing partial
    window is reported but never accepted. Samples are accumulated in
    timestamp order so the result does not depend on input permutation.

    Returns
    -------
    list of SegmentReport, ordered by start time.
    """
    if window_s <= 0:
        raise ValueError("window_s must be positive")
    t_ns = np.asarray(t_ns, dtype=np.int64)
    w = as_float_array(omega, "omega")
    if len(t_ns) != len(w):
        raise ValueError("timestamp and omega lengths differ")
    if len(t_ns) == 0:
        return []
    order = np.argsort(t_ns, kind="stable")
    t_ns = t_ns[order]
    w = w[order]

    window_ns = int(round(window_s * 1e9))
    reports: list[SegmentReport] = []
    t0 = int(t_ns[0])
    span = int(t_ns[-1]) - t0
    # A trailing window short of the nominal length by more than ~1.5 sample
    # gaps is genuinely truncated; otherwise it is the usual endpoint-exclusive
    # tail of a uniform series and counts as full.
    gap_ns = int(np.median(np.diff(t_ns))) if len(t_ns) > 1 else window_ns
    n_full = span // window_ns if span >= window_ns else 0
    edges = [t0 + k * window_ns for k in range(n_full + 1)]
    lo = 0
    for k in range(n_full):
        hi = int(np.searchsorted(t_ns, edges[k + 1], side="left"))
        if hi > lo:
            reports.append(_window_report(t_ns, w, lo, hi, threshold, sigma, partial=False))
        lo = hi
    if lo < len(t_ns):
        tail_span = int(t_ns[-1]) - edges[n_full]
        partial = tail_span < window_ns - int(1.5 * gap_ns)
        reports.append(_window_report(t_ns, w, lo, len(t_ns), threshold, sigma, partial=partial))
    return reports


def accepted_mask(reports: list[SegmentReport], n_samples: int) -> np.ndarray:
    """Boolean mask over the gated series marking samples in accepted windows."""
    mask = np.zeros(n_samples, dtype=bool)
    for rep in reports:
        if rep.accepted:
            lo, hi = rep.sample_slice
            mask[lo:hi] = True
    return mask
