"""Regenerate the bundled synthetic height/weight table.

The table mimics the layout of the public ``Howell1.csv`` file (semicolon
separated; height in cm, weight in kg, age in years, male in {0, 1}) so the
demo can run offline.  Values come from a simple growth-curve model with
correlated noise; they are not real measurements.

    python tools/make_height_weight_fixture.py > src/jointpred/datasets/height_weight_synthetic.csv
"""

import sys

import numpy as np

N = 544
SEED = 20240607


def growth_height(age, male):
    adult = np.where(male == 1, 160.5, 149.5)
    h = adult * (1.0 - 0.62 * np.exp(-0.13 * age))
    # slight shrinkage in old age
    return h - 0.06 * np.maximum(age - 50.0, 0.0)


def body_mass_index(age, male):
    adult = np.where(male == 1, 18.9, 18.7)
    ramp = 1.0 - np.exp(-np.maximum(age - 8.0, 0.0) / 5.0)
    return 15.4 + (adult - 15.4) * ramp


def main(out=sys.stdout):
    rng = np.random.default_rng(SEED)
    n_child = int(0.35 * N)
    child_age = rng.integers(0, 18, size=n_child).astype(float)
    adult_age = np.floor(18 + rng.triangular(0, 0, 71, size=N - n_child))
    age = np.concatenate([child_age, adult_age])
    male = (rng.uniform(size=N) < 0.47).astype(int)
    # covariate combinations used by the demo queries
    age[:4] = [6.0, 10.0, 43.0, 67.0]
    male[:4] = [1, 0, 1, 0]

    cov = np.array([[1.0, 0.55], [0.55, 1.0]])
    eps = rng.multivariate_normal(np.zeros(2), cov, size=N)
    mean_h = growth_height(age, male)
    height = mean_h + eps[:, 0] * (1.5 + 3.5 * (mean_h - 55.0) / 105.0)
    weight = body_mass_index(age, male) * (height / 100.0) ** 2 * np.exp(0.09 * eps[:, 1])

    order = rng.permutation(N)
    out.write('"height";"weight";"age";"male"\n')
    for k in order:
        out.write(f"{height[k]:.3f};{weight[k]:.7f};{age[k]:.1f};{male[k]}\n")


if __name__ == "__main__":
    main()
