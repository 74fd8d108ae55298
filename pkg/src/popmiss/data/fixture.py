"""Synthetic three-list mortality file with fixed missingness margins.

The real record-linked file is not redistributed. This generator produces a
file of the same shape: 29,271 rows over hospital, survey and social-media
lists, sex as the always-observed covariate, and age group and month of
death as the potentially missing pair. Profile-by-completeness counts are
fixed exactly. Within each profile, covariates are drawn from their
conditional distribution under a made-up model of conditionally independent
lists, so they carry no information about the real data.

Run ``python -m popmiss.data.fixture`` to regenerate ``gaza_like.csv``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent
FIXTURE_CSV = HERE / "gaza_like.csv"
FIXTURE_CONFIG = HERE / "gaza_like.json"

LISTS = ("hospital", "survey", "social")
SEX = ("female", "male")
AGE_GROUPS = ("0-14", "15-29", "30-44", "45-59", "60+")
MONTHS = ("2023-10", "2023-11", "2023-12", "2024-01", "2024-02", "2024-03", "2024-04", "2024-05", "2024-06")

# (hospital, survey, social) -> (incomplete, complete)
PROFILE_COUNTS = {
    (0, 0, 1): (979, 490),
    (0, 1, 0): (3, 5101),
    (0, 1, 1): (0, 351),
    (1, 0, 0): (0, 19048),
    (1, 0, 1): (0, 1173),
    (1, 1, 0): (0, 1929),
    (1, 1, 1): (0, 197),
}
N_MISSING_SEX = 56

# covariate cell probabilities and list log-odds effects
_MALE_P = 0.63
_AGE_P = np.array([0.33, 0.24, 0.20, 0.15, 0.08])
_MONTH_P = np.array([0.20, 0.17, 0.14, 0.11, 0.09, 0.08, 0.07, 0.07, 0.07])
_BASE = np.array([0.37, 0.126, 0.053])          # hospital, survey, social
_SEX_EFFECT = np.array([0.3, -0.1, 0.4])
_AGE_EFFECT = np.array([
    [0.2, -0.1, 0.0, 0.0, 0.1],
    [0.0, 0.1, 0.1, -0.1, -0.2],
    [-0.6, 0.4, 0.2, 0.0, -0.3],
])
_MONTH_SLOPE = np.array([-0.4, 0.6, -0.2])      # per unit of elapsed study time


def cell_distribution(bits: tuple[int, int, int]) -> np.ndarray:
    """P(sex, age group, month | profile) under conditionally independent lists."""
    sex = np.arange(2)[:, None, None, None]
    age = np.arange(5)[None, :, None, None]
    month = np.arange(9)[None, None, :, None]
    k = np.arange(3)[None, None, None, :]
    eta = (np.log(_BASE / (1 - _BASE))[k] + _SEX_EFFECT[k] * sex
           + _AGE_EFFECT[k, age] + _MONTH_SLOPE[k] * month / 8.0)
    p = 1.0 / (1.0 + np.exp(-eta))
    y = np.array(bits)[None, None, None, :]
    lik = np.prod(np.where(y == 1, p, 1 - p), axis=-1)
    prior = (np.array([1 - _MALE_P, _MALE_P])[:, None, None]
             * _AGE_P[None, :, None] * _MONTH_P[None, None, :])
    w = prior * lik
    return (w / w.sum()).ravel()


def make_rows(seed: int = 20240630) -> list[dict[str, str]]:
    """All fixture rows, shuffled deterministically."""
    rng = np.random.default_rng(seed)
    rows = []
    for bits, (n_incomplete, n_complete) in PROFILE_COUNTS.items():
        n = n_incomplete + n_complete
        cells = rng.choice(90, size=n, p=cell_distribution(bits))
        sex, age, month = np.unravel_index(cells, (2, 5, 9))
        # incomplete records lose the age group, the month, or both
        lost = rng.choice(3, size=n_incomplete, p=(0.3, 0.3, 0.4))
        for i in range(n):
            a, m = AGE_GROUPS[age[i]], MONTHS[month[i]]
            if i < n_incomplete:
                if lost[i] in (0, 2):
                    a = ""
                if lost[i] in (1, 2):
                    m = ""
            rows.append({
                "hospital": str(bits[0]), "survey": str(bits[1]), "social": str(bits[2]),
                "sex": SEX[sex[i]], "age_group": a, "month": m,
            })
    order = rng.permutation(len(rows))
    rows = [rows[i] for i in order]
    hospital_only = [i for i, r in enumerate(rows) if (r["hospital"], r["survey"], r["social"]) == ("1", "0", "0")]
    for i in rng.choice(hospital_only, size=N_MISSING_SEX, replace=False):
        rows[i]["sex"] = ""
    return rows


def write_fixture(path: str | Path = FIXTURE_CSV, seed: int = 20240630) -> Path:
    path = Path(path)
    rows = make_rows(seed)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(LISTS) + ["sex", "age_group", "month"])
        writer.writeheader()
        writer.writerows(rows)
    return path


if __name__ == "__main__":
    print(write_fixture())
