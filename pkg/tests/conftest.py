import csv

import numpy as np
import pytest

from svyconf.pipeline.io import NHANES_COLUMNS

# class-conditional (mean, sd) for a synthetic extract: (diabetic, non-diabetic)
_PROFILE = {
    "age": ((54.1, 15.2), (44.8, 16.2)),
    "height": ((168.0, 10.0), (169.0, 9.6)),
    "weight_kg": ((88.3, 22.5), (80.8, 19.3)),
    "bmi": ((30.8, 7.1), (28.1, 6.2)),
    "waist": ((105.6, 16.8), (96.9, 14.9)),
    "dbp": ((71.1, 12.2), (70.9, 11.2)),
    "sbp": ((126.0, 16.5), (119.2, 15.5)),
    "pulse": ((73.7, 12.1), (71.5, 11.4)),
    "cholesterol": ((5.0, 1.1), (4.98, 1.0)),
    "triglycerides": ((2.09, 1.7), (1.55, 1.06)),
}


def synthetic_nhanes_rows(n=400, seed=0, messy=True):
    """Rows in the input schema; the latent class shifts every covariate."""
    rng = np.random.default_rng(seed)
    latent = rng.random(n) < 0.32
    rows = []
    for i in range(n):
        k = 0 if latent[i] else 1
        row = {"id": f"P{i:05d}", "weight": f"{rng.lognormal(9.5, 0.6):.2f}"}
        for col, prof in _PROFILE.items():
            mu, sd = prof[k]
            row[col] = f"{max(rng.normal(mu, sd), 0.1):.2f}"
        male = rng.random() < (0.47 if latent[i] else 0.50)
        row["gender"] = ("male" if male else "female") if i % 2 else ("1" if male else "2")
        row["race"] = str(int(rng.integers(1, 7)))
        glucose = rng.normal(123, 48) if latent[i] else rng.normal(89, 10)
        hba1c = rng.normal(6.22, 1.35) if latent[i] else rng.normal(5.33, 0.35)
        row["glucose"] = f"{max(glucose, 40):.1f}"
        row["hba1c"] = f"{max(hba1c, 3.5):.2f}"
        row["prior_dx"] = "1" if latent[i] and rng.random() < 0.5 else "0"
        rows.append(row)
    if messy:
        rows[3]["pulse"] = ""          # incomplete for pulse-using models
        rows[5]["glucose"] = "NA"      # label still decided by hba1c / prior_dx
        rows[7]["cholesterol"] = "abc"  # unparseable cell: row dropped at load
    return rows


def write_nhanes_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(NHANES_COLUMNS), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return path


@pytest.fixture(scope="session")
def nhanes_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("nhanes") / "extract.csv"
    return write_nhanes_csv(path, synthetic_nhanes_rows())


# one summary line per acceptance criterion, printed after the test run
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    def record(criterion, passed, detail):
        status = "PASS" if passed is True else "FAIL" if passed is False else "SKIP"
        line = f"{status} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
