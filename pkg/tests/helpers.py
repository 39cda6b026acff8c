"""Shared builders for the test suite."""

import numpy as np

from cenrank.cohort import Censored, Cohort, DesignSet, Event, SubjectSeries


def random_design(rng, T, P, n_complete, n_censored, noise=1.0):
    """A random design with labels from a planted full-rank linear model."""
    d = T * P
    Xc = rng.standard_normal((d, n_complete))
    Xz = rng.standard_normal((d, n_censored))
    theta = rng.standard_normal(d)
    b = rng.standard_normal()
    yc = Xc.T @ theta + b + noise * rng.standard_normal(n_complete)
    yz = Xz.T @ theta + b + noise * rng.standard_normal(n_censored)
    return DesignSet(Xc, yc, Xz, yz, T, P)


def tiny_cohort():
    """Two hand-built subjects: one event (onset day 7), one censored."""
    values_a = np.arange(10.0).reshape(5, 2) + 1.0
    mask_a = np.ones((5, 2), dtype=bool)
    a = SubjectSeries("A", 1, values_a, mask_a, Event(onset_day=7))
    values_b = np.arange(12.0).reshape(6, 2) * 0.5
    mask_b = np.ones((6, 2), dtype=bool)
    mask_b[2, 1] = False
    values_b[2, 1] = np.nan
    b = SubjectSeries("B", 1, values_b, mask_b, Censored(horizon_day=6))
    return Cohort(subjects=[a, b], variables=["v01", "v02"])


def write_cohort_files(tmp_path, observations, outcomes, variables):
    """Write raw CSV/text inputs and return their paths."""
    obs = tmp_path / "observations.csv"
    obs.write_text("subject_id,day,variable,value\n" + "".join(f"{r}\n" for r in observations))
    out = tmp_path / "outcomes.csv"
    out.write_text("subject_id,ssi,onset_day,last_obs_day\n" + "".join(f"{r}\n" for r in outcomes))
    dic = tmp_path / "variables.txt"
    dic.write_text("".join(f"{v}\n" for v in variables))
    return obs, out, dic
