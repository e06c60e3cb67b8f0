"""The three training losses and the reconstruction weight ramp.

Walks the loss pieces on hand-sized arrays: the multi-label soft margin
classification loss, the masked reconstruction distance between full-image
and merged-tile map stacks, the linear ramp that scales the reconstruction
term, and how the three combine into one training objective.
"""

import numpy as np

from puzzlecam import (
    AlphaSchedule,
    CAMStack,
    alpha_at,
    normalize_cams,
    reconstruction_loss,
    soft_margin_cls_loss,
    total_loss,
)


def show_cls_loss():
    # zero logits sit exactly at -log(1/2) per class regardless of labels
    logits = np.zeros((1, 3))
    labels = np.array([[1.0, 0.0, 1.0]])
    value = soft_margin_cls_loss(logits, labels)
    print(f"zero logits: loss = {value:.6f} (ln 2 = {np.log(2):.6f})")

    # confident and correct drives the loss toward zero
    confident = np.array([[8.0, -8.0, 8.0]])
    print(f"confident correct: {soft_margin_cls_loss(confident, labels):.6f}")
    print(f"confident wrong:   {soft_margin_cls_loss(-confident, labels):.6f}")


def show_reconstruction_loss():
    rng = np.random.default_rng(0)
    raw = rng.uniform(0.0, 1.0, size=(3, 4, 4))
    full = normalize_cams(CAMStack(maps=raw, normalized=False))
    labels = np.array([1.0, 0.0, 1.0])

    # identical stacks agree perfectly
    print(f"identical stacks: {reconstruction_loss(full, full, labels):.6f}")

    # a shifted copy disagrees in proportion to the shift
    shifted = CAMStack(maps=np.clip(full.maps - 0.25, 0.0, 1.0), normalized=True)
    print(f"shifted copy:     {reconstruction_loss(full, shifted, labels):.6f}")

    # absent classes are masked out, so changing them moves nothing
    only_absent = full.maps.copy()
    only_absent[1] = 1.0 - only_absent[1]
    flipped = CAMStack(maps=only_absent, normalized=True)
    print(f"absent class flipped: {reconstruction_loss(full, flipped, labels):.6f}")


def show_alpha_ramp():
    schedule = AlphaSchedule(alpha_max=4.0, ramp_end_fraction=0.5)
    total_steps = 100
    print("step  alpha")
    for step in (0, 10, 25, 40, 50, 75, 100):
        print(f"{step:4d}  {alpha_at(step, total_steps, schedule):.2f}")


def show_composition():
    cls, p_cls, re = 0.40, 0.55, 0.08
    for alpha in (0.0, 1.0, 4.0):
        breakdown = total_loss(cls, p_cls, re, alpha)
        print(f"alpha={alpha:.1f}: total = {breakdown.total:.4f} "
              f"= {cls} + {p_cls} + {alpha:.1f} * {re}")


def main():
    print("-- classification loss --")
    show_cls_loss()
    print("\n-- reconstruction loss --")
    show_reconstruction_loss()
    print("\n-- alpha ramp --")
    show_alpha_ramp()
    print("\n-- composed objective --")
    show_composition()


if __name__ == "__main__":
    main()
