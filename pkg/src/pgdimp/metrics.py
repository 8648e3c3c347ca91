"""Perturbation and image-quality metrics.

Distances are reported on pixels scaled to [0, 1]; PSNR and SSIM use the
8-bit dynamic range. An identical pair has PSNR ``inf``, which aggregates
exclude from the mean and count separately.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InputError, NumericError

DATA_RANGE = 255.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_FIELDS = ("asr", "mean_iter", "linf", "l2", "psnr", "ssim", "psnr_inf_count", "n")


@dataclass(frozen=True)
class ImagePairMetrics:
    linf: float
    l2: float
    psnr: float
    ssim: float


@dataclass(frozen=True)
class AggregateReport:
    asr: float
    mean_iter: float
    linf: float
    l2: float
    psnr: float | None  # None when every sample had PSNR inf
    ssim: float
    psnr_inf_count: int
    n: int
    asr_denominator: int

    def as_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> list:
        d = self.as_dict()
        return ["" if d[k] is None else d[k] for k in REPORT_FIELDS]


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    c1 = (SSIM_K1 * DATA_RANGE) ** 2
    c2 = (SSIM_K2 * DATA_RANGE) ** 2
    if a.shape[0] < SSIM_WIN or a.shape[1] < SSIM_WIN:
        # single window over the whole channel
        mu_a, mu_b = a.mean(), b.mean()
        va = ((a - mu_a) ** 2).mean()
        vb = ((b - mu_b) ** 2).mean()
        cov = ((a - mu_a) * (b - mu_b)).mean()
        return float(((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2)))
    w = gaussian_window()

    def filt(img):
        return np.einsum("ijkl,kl->ij", sliding_window_view(img, w.shape), w)

    mu_a, mu_b = filt(a), filt(b)
    va = filt(a * a) - mu_a**2
    vb = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
    return float(smap.mean())


def ssim(x, y) -> float:
    """Mean local SSIM, averaged over channels. Images are (C, H, W)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 3:
        raise InputError(f"ssim needs two (C, H, W) images of equal shape, got {x.shape} and {y.shape}")
    if np.array_equal(x, y):
        return 1.0
    return float(np.mean([_ssim_channel(x[c], y[c]) for c in range(x.shape[0])]))


def psnr(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mse = float(np.mean((x - y) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(DATA_RANGE**2 / mse)


def pair_metrics(x, x_adv) -> ImagePairMetrics:
    x = np.asarray(x, dtype=np.float64)
    x_adv = np.asarray(x_adv, dtype=np.float64)
    if x.shape != x_adv.shape:
        raise InputError(f"shape mismatch: {x.shape} vs {x_adv.shape}")
    d = (x_adv - x) / DATA_RANGE
    return ImagePairMetrics(
        linf=float(np.max(np.abs(d))) if d.size else 0.0,
        l2=float(np.sqrt(np.sum(d * d))),
        psnr=psnr(x, x_adv),
        ssim=ssim(x, x_adv),
    )


def aggregate(records, targeted: bool = False) -> AggregateReport:
    """Summarize ``(AttackOutcome, ImagePairMetrics)`` pairs.

    Untargeted ASR counts only samples the model classified correctly before
    the attack; targeted ASR counts every sample. All other means run over
    every sample.
    """
    records = list(records)
    if not records:
        raise InputError("cannot aggregate an empty list")
    outcomes = [o for o, _ in records]
    mets = [m for _, m in records]
    if targeted:
        eligible = outcomes
    else:
        eligible = [o for o in outcomes if o.clean_pred == o.label]
    wins = sum(o.success for o in eligible)
    asr = 100.0 * wins / len(eligible) if eligible else 0.0
    finite_psnr = [m.psnr for m in mets if math.isfinite(m.psnr)]
    report = AggregateReport(
        asr=asr,
        mean_iter=float(np.mean([o.iterations_used for o in outcomes])),
        linf=float(np.mean([m.linf for m in mets])),
        l2=float(np.mean([m.l2 for m in mets])),
        psnr=float(np.mean(finite_psnr)) if finite_psnr else None,
        ssim=float(np.mean([m.ssim for m in mets])),
        psnr_inf_count=len(mets) - len(finite_psnr),
        n=len(records),
        asr_denominator=len(eligible),
    )
    for key in ("linf", "l2", "ssim", "mean_iter", "psnr"):
        value = getattr(report, key)
        if value is not None and math.isnan(value):
            raise NumericError(f"aggregate {key} is NaN")
    return report
