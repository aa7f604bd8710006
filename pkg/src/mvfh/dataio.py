"""CSV input parsing and report construction.

Input schema (two files joined on area_id):

    areas file:       area_id, y_1..y_k, x_1_1..x_k_s   (X_i row-major)
    covariance file:  area_id, d_1_1..d_k_k             (D_i row-major)

Headers must match this layout exactly; k and s are inferred from them.
Floats are written with repr() so a written file parses back to the same
values. Report payloads are plain dicts with top-level keys meta, per_area,
and per_group, shared by the JSON writer, the CSV writers, and the figure
renderers.
"""

import csv
import json
import math
import re
from pathlib import Path

import numpy as np

from .covariance import CovarianceEstimate
from .errors import DimensionMismatch, MissingArea, ParseError
from .model import AreaRecord, Dataset, validate_dataset
from .simulation import GROUP_LABELS, PREDICTORS

_NAME_RE = re.compile(r"^([a-z]+)_(\d+)(?:_(\d+))?$")


def _fmt(x: float) -> str:
    return repr(float(x))


def _matrix_names(prefix: str, rows: int, cols: int) -> list[str]:
    return [f"{prefix}_{r + 1}_{c + 1}" for r in range(rows) for c in range(cols)]


def _vector_names(prefix: str, n: int) -> list[str]:
    return [f"{prefix}_{j + 1}" for j in range(n)]


def _parse_floats(fields: list[str], line: int) -> list[float]:
    out = []
    for f in fields:
        try:
            out.append(float(f))
        except ValueError:
            raise ParseError(f"not a number: {f!r}", line=line) from None
    return out


def _read_table(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    """Header plus (line_number, fields) rows; blank lines are skipped."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        rows = []
        for line, fields in enumerate(reader, start=1):
            if not fields or all(f.strip() == "" for f in fields):
                continue
            if header is None:
                header = [f.strip() for f in fields]
            else:
                rows.append((line, [f.strip() for f in fields]))
    if header is None:
        raise ParseError(f"{path}: empty file")
    return header, rows


def _areas_dims(header: list[str], path) -> tuple[int, int]:
    """Infer (k, s) from an areas header and insist on the canonical layout."""
    if not header or header[0] != "area_id":
        raise ParseError(f"{path}: first column must be area_id, got {header[:1]}", line=1)
    k = 0
    pos = 1
    while pos < len(header) and header[pos] == f"y_{k + 1}":
        k += 1
        pos += 1
    if k == 0:
        raise ParseError(f"{path}: expected y_1.. after area_id", line=1)
    n_x = len(header) - pos
    if n_x % k != 0:
        raise ParseError(f"{path}: {n_x} covariate columns do not form k x s with k={k}", line=1)
    s = n_x // k
    expected = ["area_id"] + _vector_names("y", k) + _matrix_names("x", k, s)
    if header != expected:
        raise ParseError(f"{path}: header must be {','.join(expected)}", line=1)
    return k, s


def _cov_dims(header: list[str], path) -> int:
    if not header or header[0] != "area_id":
        raise ParseError(f"{path}: first column must be area_id, got {header[:1]}", line=1)
    k = math.isqrt(len(header) - 1)
    expected = ["area_id"] + _matrix_names("d", k, k)
    if header != expected:
        raise ParseError(f"{path}: header must be area_id,d_1_1..d_k_k for square k", line=1)
    return k


def load_dataset(areas_path, cov_path) -> Dataset:
    """Read the two CSV files, join them on area_id, and validate the result.

    Raises ParseError for malformed files, MissingArea when the join fails
    in either direction, and the validate_dataset errors for bad values.
    """
    a_header, a_rows = _read_table(areas_path)
    k, s = _areas_dims(a_header, areas_path)
    c_header, c_rows = _read_table(cov_path)
    kc = _cov_dims(c_header, cov_path)
    if kc != k:
        raise DimensionMismatch(f"{cov_path}: covariance file has k={kc}, areas file has k={k}")

    cov: dict[str, np.ndarray] = {}
    for line, fields in c_rows:
        if len(fields) != 1 + k * k:
            raise ParseError(f"expected {1 + k * k} fields, got {len(fields)}", line=line)
        area_id = fields[0]
        if area_id in cov:
            raise ParseError(f"duplicate area id {area_id!r}", line=line)
        vals = _parse_floats(fields[1:], line)
        cov[area_id] = np.array(vals).reshape(k, k)

    areas = []
    seen = set()
    for line, fields in a_rows:
        if len(fields) != 1 + k + k * s:
            raise ParseError(f"expected {1 + k + k * s} fields, got {len(fields)}", line=line)
        area_id = fields[0]
        if area_id in seen:
            raise ParseError(f"duplicate area id {area_id!r}", line=line)
        seen.add(area_id)
        vals = _parse_floats(fields[1:], line)
        y = np.array(vals[:k])
        X = np.array(vals[k:]).reshape(k, s)
        if area_id not in cov:
            raise MissingArea(area_id, detail="present in areas file, absent from covariance file")
        areas.append(AreaRecord(area_id, y, X, cov[area_id]))

    extra = set(cov) - seen
    if extra:
        raise MissingArea(sorted(extra)[0], detail="present in covariance file, absent from areas file")
    return validate_dataset(areas)


def write_dataset(data: Dataset, areas_path, cov_path) -> None:
    """Write a dataset back out in the canonical two-file layout."""
    with open(areas_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id"] + _vector_names("y", data.k) + _matrix_names("x", data.k, data.s))
        for rec in data.areas:
            w.writerow([rec.area_id] + [_fmt(v) for v in rec.y] + [_fmt(v) for v in rec.X.ravel()])
    with open(cov_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["area_id"] + _matrix_names("d", data.k, data.k))
        for rec in data.areas:
            w.writerow([rec.area_id] + [_fmt(v) for v in rec.D.ravel()])


# ---------------------------------------------------------------------------
# report payloads


def _listify(a: np.ndarray):
    """Nested lists with NaN mapped to None so payloads stay JSON-clean."""
    if isinstance(a, np.ndarray):
        a = a.tolist()
    if isinstance(a, list):
        return [_listify(v) for v in a]
    if isinstance(a, float) and math.isnan(a):
        return None
    return a


def _estimate_payload(est: CovarianceEstimate) -> dict:
    proj = est.projected
    sd = np.sqrt(np.clip(np.diag(proj), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        corr = proj / np.outer(sd, sd)
    corr = np.where(np.outer(sd, sd) > 0.0, corr, np.nan)
    return {
        "variant": est.variant,
        "raw": _listify(est.raw),
        "projected": _listify(proj),
        "eigenvalues_raw": _listify(est.eigenvalues_raw),
        "truncated": [bool(t) for t in est.truncated],
        "correlation": _listify(corr),
    }


def fit_report(data: Dataset, estimates: dict[str, CovarianceEstimate], fit, table: list[dict], variant: str) -> dict:
    """Payload for the fit command: coefficients, covariance estimates, residuals."""
    fitted = data.x_arr @ fit.beta_hat if data.s > 0 else np.zeros((data.m, data.k))
    per_area = [
        {
            "area_id": rec.area_id,
            "y": _listify(rec.y),
            "fitted": _listify(fitted[i]),
            "residual": _listify(rec.y - fitted[i]),
        }
        for i, rec in enumerate(data.areas)
    ]
    return {
        "meta": {
            "command": "fit",
            "k": data.k,
            "s": data.s,
            "m": data.m,
            "psi_variant": variant,
        },
        "model": {
            "beta": _listify(fit.beta_hat),
            "coefficients": table,
            "psi": {name: _estimate_payload(est) for name, est in estimates.items()},
        },
        "per_area": per_area,
        "per_group": [],
    }


def predict_report(data: Dataset, predictions, reports, variant: str) -> dict:
    """Payload for the predict command: one entry per area."""
    per_area = []
    for rec, pred, rep in zip(data.areas, predictions, reports):
        per_area.append(
            {
                "area_id": pred.area_id,
                "y": _listify(rec.y),
                "theta_hat": _listify(pred.theta_hat),
                "shrinkage": _listify(pred.shrinkage),
                "fitted": _listify(pred.fitted),
                "msem_estimate": _listify(rep.estimate),
                "msem_components": {
                    "g1": _listify(rep.g1),
                    "g2": _listify(rep.g2),
                    "g3": _listify(rep.g3),
                    "g4": _listify(rep.g4),
                },
                "msem_estimate_psd": rep.estimate_psd,
            }
        )
    return {
        "meta": {
            "command": "predict",
            "k": data.k,
            "s": data.s,
            "m": data.m,
            "psi_variant": variant,
        },
        "per_area": per_area,
        "per_group": [],
    }


def simulate_report(result, prial_rep, relbias) -> dict:
    """Payload for the simulate command: group tables plus per-area MSEMs.

    Matrix values inside per_group are raw; the CSV writers scale by 100 to
    match the usual presentation.
    """
    design = result.design
    n = design.group_size
    per_group = []
    for t, label in enumerate(GROUP_LABELS):
        entry = {
            "group": label,
            "d_value": float(design.d_values[t * n]),
            "msem": {name: _listify(result.group_msem[name][t]) for name in PREDICTORS},
            "prial_vs_direct": float(prial_rep.vs_direct[t]),
            "prial_vs_univariate": float(prial_rep.vs_univariate[t]),
        }
        if result.estimate_group_mean is not None:
            entry["msem_estimate_mean"] = _listify(result.estimate_group_mean[t])
            entry["relative_bias_percent"] = _listify(relbias.percent[t])
            entry["relative_bias_not_applicable"] = _listify(relbias.not_applicable[t].astype(bool).tolist())
        per_group.append(entry)

    per_area = [
        {
            "area": i + 1,
            "group": GROUP_LABELS[i // n],
            "d_value": float(result.design.d_values[i]),
            "msem": {name: _listify(result.per_area_msem[name][i]) for name in PREDICTORS},
        }
        for i in range(design.m)
    ]
    return {
        "meta": {
            "command": "simulate",
            "k": design.k,
            "m": design.m,
            "rho": design.rho,
            "d_pattern": design.d_pattern,
            "reps": design.reps,
            "seed": design.seed,
            "psi_true": _listify(design.psi_true),
            "estimate_variant": result.estimate_variant,
            "truncation_rate_pr0": result.truncated_pr0 / design.reps,
            "truncation_rate_pr1": result.truncated_pr1 / design.reps,
            "psi0_mean": _listify(result.psi0_mean),
            "psi1_mean": _listify(result.psi1_mean),
        },
        "per_area": per_area,
        "per_group": per_group,
    }


# ---------------------------------------------------------------------------
# writers


def write_json_report(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=False)
        fh.write("\n")


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_fit_csv(out_dir, payload: dict) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []
    coef_path = out_dir / "fit_coefficients.csv"
    rows = [
        [r["index"], _fmt(r["coefficient"]), _fmt(r["std_error"]), _fmt(r["z_value"]), _fmt(r["p_value"])]
        for r in payload["model"]["coefficients"]
    ]
    _write_csv(coef_path, ["index", "coefficient", "std_error", "z_value", "p_value"], rows)
    paths.append(coef_path)

    cov_path = out_dir / "fit_covariance.csv"
    k = payload["meta"]["k"]
    rows = []
    for name, est in payload["model"]["psi"].items():
        for r in range(k):
            for c in range(k):
                corr = est["correlation"][r][c]
                rows.append(
                    [
                        name,
                        r + 1,
                        c + 1,
                        _fmt(est["raw"][r][c]),
                        _fmt(est["projected"][r][c]),
                        "" if corr is None else _fmt(corr),
                    ]
                )
    _write_csv(cov_path, ["variant", "row", "col", "raw", "projected", "correlation"], rows)
    paths.append(cov_path)

    resid_path = out_dir / "fit_residuals.csv"
    names = _vector_names("y", k) + _vector_names("fitted", k) + _vector_names("residual", k)
    rows = [
        [a["area_id"]] + [_fmt(v) for v in a["y"] + a["fitted"] + a["residual"]]
        for a in payload["per_area"]
    ]
    _write_csv(resid_path, ["area_id"] + names, rows)
    paths.append(resid_path)
    return paths


def write_predict_csv(out_dir, payload: dict) -> list[Path]:
    out_dir = Path(out_dir)
    k = payload["meta"]["k"]
    path = out_dir / "predict.csv"
    header = (
        ["area_id"]
        + _vector_names("theta", k)
        + _matrix_names("shrink", k, k)
        + _matrix_names("msem", k, k)
        + ["msem_psd"]
    )
    rows = []
    for a in payload["per_area"]:
        flat_shr = [v for row in a["shrinkage"] for v in row]
        flat_msem = [v for row in a["msem_estimate"] for v in row]
        rows.append(
            [a["area_id"]]
            + [_fmt(v) for v in a["theta_hat"]]
            + [_fmt(v) for v in flat_shr]
            + [_fmt(v) for v in flat_msem]
            + [int(a["msem_estimate_psd"])]
        )
    _write_csv(path, header, rows)
    return [path]


def write_simulate_csv(out_dir, payload: dict) -> list[Path]:
    """Group-level tables on the x100 scale plus the PRIAL table."""
    out_dir = Path(out_dir)
    k = payload["meta"]["k"]
    paths = []
    predictors = sorted(payload["per_group"][0]["msem"].keys())
    for name in predictors:
        path = out_dir / f"msem_{name}.csv"
        rows = []
        for g in payload["per_group"]:
            for r in range(k):
                for c in range(k):
                    rows.append([g["group"], r + 1, c + 1, _fmt(100.0 * g["msem"][name][r][c])])
        _write_csv(path, ["group", "row", "col", "msem_x100"], rows)
        paths.append(path)

    path = out_dir / "prial.csv"
    rows = [
        [g["group"], _fmt(g["prial_vs_direct"]), _fmt(g["prial_vs_univariate"])]
        for g in payload["per_group"]
    ]
    _write_csv(path, ["group", "prial_vs_direct", "prial_vs_univariate"], rows)
    paths.append(path)

    if "relative_bias_percent" in payload["per_group"][0]:
        path = out_dir / "relative_bias.csv"
        rows = []
        for g in payload["per_group"]:
            for r in range(k):
                for c in range(k):
                    val = g["relative_bias_percent"][r][c]
                    rows.append(
                        [
                            g["group"],
                            r + 1,
                            c + 1,
                            "" if val is None else _fmt(val),
                            int(g["relative_bias_not_applicable"][r][c]),
                        ]
                    )
        _write_csv(path, ["group", "row", "col", "percent", "not_applicable"], rows)
        paths.append(path)
    return paths
