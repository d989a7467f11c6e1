"""Render DET curves to image files.

Takes the (threshold, FAR, FRR) rows produced by metrics.det_points and
draws the conventional probit-probit DET plot. Degenerate rates (0 or
1) have no probit image and are dropped from the drawn curve.
"""

from __future__ import annotations

from statistics import NormalDist

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

_TICKS = (0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4)
_PROBIT = NormalDist().inv_cdf


def save_det_figure(points, path, eer: float | None = None, title: str = "DET curve"):
    far = []
    frr = []
    for _, fa, fr in points:
        if 0.0 < fa < 1.0 and 0.0 < fr < 1.0:
            far.append(_PROBIT(fa))
            frr.append(_PROBIT(fr))

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    if far:
        ax.plot(far, frr, lw=1.5)
    else:
        ax.text(0.5, 0.5, "curve degenerate\n(no interior operating points)",
                ha="center", va="center", transform=ax.transAxes)
    if eer is not None and 0.0 < eer < 1.0:
        ax.plot(_PROBIT(eer), _PROBIT(eer), "o", color="crimson",
                label=f"EER = {100 * eer:.2f}%")
        ax.legend(loc="upper right")

    tick_pos = [_PROBIT(t) for t in _TICKS]
    tick_lab = [f"{100 * t:g}" for t in _TICKS]
    for axis_set_ticks, axis_set_labels in ((ax.set_xticks, ax.set_xticklabels),
                                            (ax.set_yticks, ax.set_yticklabels)):
        axis_set_ticks(tick_pos)
        axis_set_labels(tick_lab)
    lo, hi = _PROBIT(_TICKS[0]), _PROBIT(_TICKS[-1])
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.plot([lo, hi], [lo, hi], color="0.8", lw=0.8, zorder=0)
    ax.set_xlabel("False acceptance rate (%)")
    ax.set_ylabel("False rejection rate (%)")
    ax.set_title(title)
    ax.grid(True, which="both", lw=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
