"""Cohort CSV with an ``.npz`` feature sidecar."""

from __future__ import annotations

import csv
import io
import zipfile
from pathlib import Path

import numpy as np

from .records import LesionFeature, SurvivalRecord


def write_cohort(patients, csv_path, sidecar_path) -> None:
    """Write ``patient_id,endpoint,time_months,event,trg,volume_1..k`` plus per-lesion arrays."""
    k = max(len(p.lesions) for p in patients)
    arrays = {}
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "endpoint", "time_months", "event", "trg"] + [f"volume_{j + 1}" for j in range(k)])
        for p in patients:
            vols = [repr(float(l.volume)) for l in p.lesions] + [""] * (k - len(p.lesions))
            w.writerow([p.patient_id, p.record.endpoint, repr(float(p.record.time)), int(p.record.event),
                        int(p.trg)] + vols)
            for j, les in enumerate(p.lesions):
                arrays[f"{p.patient_id}/lesion_{j + 1}"] = (les.patch_features if les.patch_features is not None
                                                            else les.vector[None, :])
            arrays[f"{p.patient_id}/clinical"] = np.asarray(p.clinical)
            for extra in ("composition", "thumbnail"):
                if getattr(p, extra, None) is not None:
                    arrays[f"{p.patient_id}/{extra}"] = np.asarray(getattr(p, extra))
            if getattr(p, "oracle_risk", None) is not None:
                arrays[f"{p.patient_id}/oracle_risk"] = np.array([p.oracle_risk])
    _write_npz(sidecar_path, arrays)


def _write_npz(path, arrays: dict) -> None:
    """``np.load``-compatible archive with fixed member timestamps, so equal inputs give equal bytes."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            zf.writestr(info, buf.getvalue())


class CohortRow:
    """A patient as read back from disk; attribute-compatible with generated patients."""

    def __init__(self, patient_id, lesions, clinical, record, trg, composition=None, oracle_risk=None,
                 thumbnail=None):
        self.patient_id = patient_id
        self.lesions = lesions
        self.clinical = clinical
        self.record = record
        self.trg = trg
        self.composition = composition
        self.oracle_risk = oracle_risk
        self.thumbnail = thumbnail


def read_cohort(csv_path, sidecar_path) -> list:
    for pth in (csv_path, sidecar_path):
        if not Path(pth).exists():
            raise FileNotFoundError(str(pth))
    side = np.load(sidecar_path)
    rows = []
    with open(csv_path, newline="") as fh:
        for r in csv.DictReader(fh):
            pid = r["patient_id"]
            lesions = []
            j = 1
            while f"volume_{j}" in r and r[f"volume_{j}"] != "":
                pf = side[f"{pid}/lesion_{j}"]
                lesions.append(LesionFeature(pf.mean(axis=0), float(r[f"volume_{j}"]), pf))
                j += 1
            get = lambda key: side[f"{pid}/{key}"] if f"{pid}/{key}" in side else None
            orisk = get("oracle_risk")
            rows.append(CohortRow(
                pid, lesions, get("clinical") if get("clinical") is not None else np.zeros(0),
                SurvivalRecord(pid, float(r["time_months"]), bool(int(r["event"])), r["endpoint"]),
                int(r["trg"]), get("composition"), float(orisk[0]) if orisk is not None else None,
                get("thumbnail")))
    return rows
