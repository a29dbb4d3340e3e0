"""Per-core group delay, inter-core skew, TDC regression and skew-vs-temperature tables."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from cotdr.peak_fit import ReflectionPeak


class TimingError(ValueError):
    pass


@dataclass(frozen=True)
class CoreDelayRecord:
    core_id: str
    one_way_delay: float  # s
    temperature: float  # °C
    reference_peak: ReflectionPeak
    end_peak: ReflectionPeak

    def __post_init__(self):
        if not self.one_way_delay > 0:
            raise TimingError(f"core {self.core_id}: one-way delay must be positive")
        if not self.end_peak.position > self.reference_peak.position:
            raise TimingError(f"core {self.core_id}: end echo precedes the reference echo")


@dataclass(frozen=True)
class TdcFit:
    slope_ppm_per_k: float
    intercept: float  # s, delay extrapolated to 0 °C
    r_squared: float
    slope: float  # s/K


def extract_delay(ref_peak: ReflectionPeak, end_peak: ReflectionPeak, splitter_excess_delay: float = 0.0) -> float:
    """One-way core delay from the reference and end-reflection peak times."""
    one_way = (end_peak.position - ref_peak.position) / 2.0 - splitter_excess_delay
    if not one_way > 0:
        raise TimingError(f"non-positive one-way delay {one_way:g} s")
    return one_way


def compute_skew(records: Mapping[str, CoreDelayRecord] | Sequence[CoreDelayRecord], center_core_id: str) -> dict[str, float]:
    """Delay of every core minus the center core's delay, from one simultaneous measurement."""
    if not isinstance(records, Mapping):
        records = {r.core_id: r for r in records}
    if center_core_id not in records:
        raise TimingError(f"center core {center_core_id!r} missing from the records")
    temps = {r.temperature for r in records.values()}
    if len(temps) > 1:
        raise TimingError("records span several temperatures")
    ref = records[center_core_id].one_way_delay
    skews = {cid: r.one_way_delay - ref for cid, r in records.items()}
    skews[center_core_id] = 0.0
    return skews


def fit_tdc(series: Sequence[tuple[float, float]]) -> TdcFit:
    """Ordinary least squares of delay against temperature.

    The slope is reported relative to the delay at the lowest temperature of
    the series, in ppm/K.
    """
    data = np.asarray(series, dtype=float)
    if data.ndim != 2 or data.shape[0] < 3:
        raise TimingError("TDC fit needs at least 3 (temperature, delay) points")
    T, d = data[:, 0], data[:, 1]
    if np.unique(T).size < 3:
        raise TimingError("TDC fit needs at least 3 distinct temperatures")
    Tc = T - T.mean()
    sxx = Tc @ Tc
    if sxx == 0:
        raise TimingError("zero temperature spread")
    dc = d - d.mean()
    slope = (Tc @ dc) / sxx
    intercept = d.mean() - slope * T.mean()
    resid = dc - slope * Tc
    ss_tot = dc @ dc
    r2 = 1.0 - (resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    r2 = float(min(max(r2, 0.0), 1.0))
    tau_min = intercept + slope * T.min()
    return TdcFit(float(slope / tau_min * 1e6), float(intercept), r2, float(slope))


@dataclass
class MeasurementReport:
    """One simultaneous C-OTDR acquisition (or a set of groups sharing a center core)."""

    temperature: float
    center_core_id: str
    records: dict[str, CoreDelayRecord]
    skews: dict[str, float]
    truth: dict[str, float] | None = None  # injected one-way delays, when simulated
    tdc_fit: dict[str, TdcFit] = field(default_factory=dict)
    skew_vs_temperature: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    @property
    def delays(self) -> dict[str, float]:
        return {cid: r.one_way_delay for cid, r in self.records.items()}

    @classmethod
    def from_records(cls, records, center_core_id: str, truth=None) -> "MeasurementReport":
        if not isinstance(records, Mapping):
            records = {r.core_id: r for r in records}
        skews = compute_skew(records, center_core_id)
        temperature = next(iter(records.values())).temperature
        return cls(temperature, center_core_id, dict(records), skews, truth)

    def to_dict(self) -> dict:
        out = {
            "temperature_c": self.temperature,
            "center_core_id": self.center_core_id,
            "cores": {},
        }
        for cid, rec in self.records.items():
            entry = {
                "one_way_delay_s": rec.one_way_delay,
                "skew_ps": self.skews[cid] * 1e12,
                "reference_peak_s": rec.reference_peak.position,
                "end_peak_s": rec.end_peak.position,
                "end_peak_fwhm_ps": rec.end_peak.fwhm * 1e12,
                "end_peak_rms_residual": rec.end_peak.rms_residual,
            }
            if self.truth is not None:
                entry["true_one_way_delay_s"] = self.truth[cid]
                entry["delay_error_ps"] = (rec.one_way_delay - self.truth[cid]) * 1e12
            out["cores"][cid] = entry
        return out


def skew_vs_temperature(reports: Sequence[MeasurementReport]) -> dict[str, list[tuple[float, float]]]:
    """Skew of each core minus its skew at the lowest temperature of the sweep."""
    if not reports:
        raise TimingError("empty sweep")
    core_set = set(reports[0].skews)
    for r in reports[1:]:
        if set(r.skews) != core_set:
            raise TimingError("reports cover different core sets")
    temps = [r.temperature for r in reports]
    if any(b <= a for a, b in zip(temps, temps[1:])):
        raise TimingError("sweep temperatures must be strictly increasing")
    base = reports[0].skews
    return {
        cid: [(r.temperature, r.skews[cid] - base[cid]) for r in reports]
        for cid in reports[0].skews
    }


def peak_to_peak(table: Mapping[str, list[tuple[float, float]]]) -> dict[str, float]:
    return {cid: float(np.ptp([v for _, v in rows])) for cid, rows in table.items()}


@dataclass
class SweepReport:
    reports: list[MeasurementReport]
    tdc_fit: dict[str, TdcFit]
    skew_table: dict[str, list[tuple[float, float]]]

    @classmethod
    def from_reports(cls, reports: Sequence[MeasurementReport]) -> "SweepReport":
        reports = sorted(reports, key=lambda r: r.temperature)
        table = skew_vs_temperature(reports)
        tdc = {
            cid: fit_tdc([(r.temperature, r.records[cid].one_way_delay) for r in reports])
            for cid in reports[0].records
        }
        for r in reports:
            r.tdc_fit = tdc
            r.skew_vs_temperature = table
        return cls(list(reports), tdc, table)

    @property
    def peak_to_peak(self) -> dict[str, float]:
        return peak_to_peak(self.skew_table)

    def to_dict(self) -> dict:
        return {
            "temperatures_c": [r.temperature for r in self.reports],
            "tdc_fit": {
                cid: {
                    "slope_ppm_per_k": f.slope_ppm_per_k,
                    "slope_s_per_k": f.slope,
                    "intercept_s": f.intercept,
                    "r_squared": f.r_squared,
                }
                for cid, f in self.tdc_fit.items()
            },
            "skew_vs_temperature_ps": {
                cid: [[T, v * 1e12] for T, v in rows] for cid, rows in self.skew_table.items()
            },
            "skew_peak_to_peak_ps": {cid: v * 1e12 for cid, v in self.peak_to_peak.items()},
            "measurements": [r.to_dict() for r in self.reports],
        }


def write_json(obj: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def write_delay_csv(reports: Sequence[MeasurementReport], path) -> None:
    """One row per core per temperature: delays in seconds, skews in ps."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["temperature_c", "core_id", "one_way_delay_s", "skew_ps", "normalized_skew_ps"]
        has_truth = all(r.truth is not None for r in reports)
        if has_truth:
            header += ["true_one_way_delay_s", "delay_error_ps"]
        w.writerow(header)
        for r in reports:
            for cid, rec in r.records.items():
                norm = dict(r.skew_vs_temperature.get(cid, [])).get(r.temperature)
                row = [
                    f"{r.temperature:g}",
                    cid,
                    f"{rec.one_way_delay:.15e}",
                    f"{r.skews[cid] * 1e12:.4f}",
                    "" if norm is None else f"{norm * 1e12:.4f}",
                ]
                if has_truth:
                    row += [f"{r.truth[cid]:.15e}", f"{(rec.one_way_delay - r.truth[cid]) * 1e12:.4f}"]
                w.writerow(row)
