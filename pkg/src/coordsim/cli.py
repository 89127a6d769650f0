"""Config-driven experiment runner.

One JSON config fully determines a run: experiment kind, target state,
extension, rates, blocklengths, trials and the seed (always explicit,
default 0).  Outputs are a JSON record (config echo, version, wall time,
rows, diagnostics) plus a CSV side file for curves and boundaries; identical
config and seed reproduce the CSV byte for byte.

Matrices are written as nested [re, im] pairs.  Rates are bits per symbol;
gaps are in trace-norm units on [0, 2].
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, cqmodel, region, softcover
from .config import Caps, Tolerances, caps_from_env
from .cqmodel import Topology
from .errors import (
    CoordSimError,
    DimensionCap,
    InfeasibleExtension,
    ParseError,
    ValidationError,
)
from . import protocols

KINDS = (
    "info",
    "resolvability",
    "simulate-two-node",
    "simulate-nc",
    "simulate-broadcast",
    "region-two-node",
    "region-nc",
    "region-broadcast",
    "oracle",
)

_COMMON_KEYS = {"kind", "seed", "name", "out_dir", "threads", "region_variant", "caps", "tolerances"}
_KIND_KEYS = {
    "info": ({"target", "extension"}, set()),
    "resolvability": ({"ensemble", "rate", "n_list", "trials"}, set()),
    "simulate-two-node": ({"target", "extension", "rates", "n_list", "trials"}, set()),
    "simulate-nc": ({"target", "extension", "rates", "n_list", "trials"}, set()),
    "simulate-broadcast": ({"target", "extension", "rates", "n_list", "trials"}, set()),
    "region-two-node": ({"target"}, {"r0_grid", "search"}),
    "region-nc": ({"target"}, {"search"}),
    "region-broadcast": ({"target", "r0_grid"}, {"search"}),
    "oracle": ({"target"}, {"oracle"}),
}

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE_EXTENSION = 3
EXIT_DIMENSION_CAP = 4
EXIT_INFEASIBLE_ENTANGLED = 5


@dataclasses.dataclass
class ExperimentConfig:
    data: dict

    @property
    def kind(self) -> str:
        return self.data["kind"]

    def get(self, key, default=None):
        return self.data.get(key, default)


@dataclasses.dataclass
class ResultRecord:
    config: dict
    version: str
    wall_time_s: float
    rows: list
    diagnostics: dict
    status: str
    json_path: str | None = None
    csv_path: str | None = None


# --- matrix / state serialization -------------------------------------------


def encode_matrix(mat) -> list:
    arr = np.asarray(mat, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in arr]


def decode_matrix(obj, field: str) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(field, f"not a matrix of [re, im] pairs: {exc}")
    if arr.ndim != 3 or arr.shape[-1] != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(field, f"expected square nested [re, im] entries, got shape {arr.shape}")
    return arr[..., 0] + 1j * arr[..., 1]


def _decode_stack(obj, field: str) -> np.ndarray:
    if not isinstance(obj, list) or not obj:
        raise ValidationError(field, "expected a nonempty list of matrices")
    return np.stack([decode_matrix(m, f"{field}[{i}]") for i, m in enumerate(obj)])


def decode_target(obj, field: str = "target") -> cqmodel.CqNetworkState:
    if not isinstance(obj, dict):
        raise ValidationError(field, "expected an object")
    topo = obj.get("topology")
    try:
        if topo == "two-node":
            _reject_unknown(obj, {"topology", "pmf", "conditionals"}, field)
            return cqmodel.two_node_target(obj["pmf"], _decode_stack(obj["conditionals"], f"{field}.conditionals"))
        if topo == "no-comm":
            _reject_unknown(obj, {"topology", "matrix", "dims"}, field)
            return cqmodel.no_comm_target(decode_matrix(obj["matrix"], f"{field}.matrix"), obj["dims"])
        if topo == "broadcast":
            _reject_unknown(obj, {"topology", "pmf", "conditionals", "dims"}, field)
            return cqmodel.broadcast_target(
                obj["pmf"], _decode_stack(obj["conditionals"], f"{field}.conditionals"), obj["dims"]
            )
    except ValidationError:
        raise
    except KeyError as exc:
        raise ValidationError(field, f"missing key {exc}")
    except Exception as exc:
        raise ValidationError(field, str(exc))
    raise ValidationError(f"{field}.topology", f"unknown topology {topo!r}")


def decode_extension(obj, topology: Topology, field: str = "extension") -> cqmodel.Extension:
    if not isinstance(obj, dict):
        raise ValidationError(field, "expected an object or 'auto'")
    try:
        if topology is Topology.TWO_NODE:
            _reject_unknown(obj, {"joint_pmf", "thetas"}, field)
            return cqmodel.two_node_extension(obj["joint_pmf"], _decode_stack(obj["thetas"], f"{field}.thetas"))
        if topology is Topology.NO_COMM:
            _reject_unknown(obj, {"p_u", "theta_a", "theta_b", "theta_c"}, field)
            return cqmodel.no_comm_extension(
                obj["p_u"],
                _decode_stack(obj["theta_a"], f"{field}.theta_a"),
                _decode_stack(obj["theta_b"], f"{field}.theta_b"),
                _decode_stack(obj["theta_c"], f"{field}.theta_c"),
            )
        _reject_unknown(obj, {"joint_pmf", "thetas_b1", "etas_b2"}, field)
        return cqmodel.broadcast_extension(
            obj["joint_pmf"],
            _decode_stack(obj["thetas_b1"], f"{field}.thetas_b1"),
            _decode_stack(obj["etas_b2"], f"{field}.etas_b2"),
        )
    except ValidationError:
        raise
    except KeyError as exc:
        raise ValidationError(field, f"missing key {exc}")
    except Exception as exc:
        raise ValidationError(field, str(exc))


def encode_extension(ext: cqmodel.Extension) -> dict:
    if ext.topology is Topology.TWO_NODE:
        return {
            "joint_pmf": [[float(v) for v in row] for row in ext.joint_pmf],
            "thetas": [encode_matrix(m) for m in ext.factors[0]],
        }
    if ext.topology is Topology.NO_COMM:
        return {
            "p_u": [float(v) for v in ext.joint_pmf],
            "theta_a": [encode_matrix(m) for m in ext.factors[0]],
            "theta_b": [encode_matrix(m) for m in ext.factors[1]],
            "theta_c": [encode_matrix(m) for m in ext.factors[2]],
        }
    return {
        "joint_pmf": [[float(v) for v in row] for row in ext.joint_pmf],
        "thetas_b1": [encode_matrix(m) for m in ext.factors[0]],
        "etas_b2": [encode_matrix(m) for m in ext.factors[1]],
    }


# --- config parsing -----------------------------------------------------------


def _reject_unknown(obj: dict, allowed: set, field: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ValidationError(field, f"unknown keys {sorted(unknown)}")


def _require_number(obj, field, minimum=None):
    if not isinstance(obj, (int, float)) or isinstance(obj, bool):
        raise ValidationError(field, "must be a number")
    if minimum is not None and obj < minimum:
        raise ValidationError(field, f"must be >= {minimum}" if minimum else "nonnegative")
    return float(obj)


def _validate_rates(obj, kind: str) -> None:
    if not isinstance(obj, dict):
        raise ValidationError("rates", "expected an object")
    allowed = {"r0"} if kind == "simulate-nc" else {"r0", "r1"}
    _reject_unknown(obj, allowed, "rates")
    if "r0" not in obj:
        raise ValidationError("R0", "missing")
    if _require_number(obj["r0"], "R0") < 0:
        raise ValidationError("R0", "nonnegative")
    if kind != "simulate-nc":
        if "r1" not in obj:
            raise ValidationError("R1", "missing")
        if _require_number(obj["r1"], "R1") < 0:
            raise ValidationError("R1", "nonnegative")


def _validate_n_list(obj) -> None:
    if not isinstance(obj, list) or not obj:
        raise ValidationError("n_list", "expected a nonempty list of positive integers")
    for n in obj:
        if not isinstance(n, int) or n < 1:
            raise ValidationError("n_list", f"bad blocklength {n!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an experiment config; defaults filled, unknown keys rejected."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {exc.lineno}: {exc.msg}")
    if not isinstance(raw, dict):
        raise ParseError("top level must be an object")
    kind = raw.get("kind")
    if kind not in KINDS:
        raise ValidationError("kind", f"must be one of {KINDS}, got {kind!r}")
    required, optional = _KIND_KEYS[kind]
    _reject_unknown(raw, _COMMON_KEYS | required | optional, "config")
    for key in required:
        if key not in raw:
            raise ValidationError(key, "missing")

    data = dict(raw)
    data.setdefault("seed", 0)
    if not isinstance(data["seed"], int):
        raise ValidationError("seed", "must be an integer")
    data.setdefault("threads", 1)
    if not isinstance(data["threads"], int) or data["threads"] < 1:
        raise ValidationError("threads", "must be a positive integer")
    data.setdefault("region_variant", "proof")
    if data["region_variant"] not in ("proof", "printed"):
        raise ValidationError("region_variant", "must be 'proof' or 'printed'")

    if "rates" in data:
        _validate_rates(data["rates"], kind)
    if "rate" in data:
        if _require_number(data["rate"], "rate") < 0:
            raise ValidationError("rate", "nonnegative")
    if "n_list" in data:
        _validate_n_list(data["n_list"])
    if "trials" in data:
        if not isinstance(data["trials"], int) or data["trials"] < 2:
            raise ValidationError("trials", "must be an integer >= 2")
    if "r0_grid" in data:
        if not isinstance(data["r0_grid"], list) or not data["r0_grid"]:
            raise ValidationError("r0_grid", "expected a nonempty list")
        for r in data["r0_grid"]:
            if _require_number(r, "r0_grid") < 0:
                raise ValidationError("r0_grid", "entries must be nonnegative")
    if "caps" in data:
        _reject_unknown(data["caps"], {"tensor", "blocks", "block_dim", "total", "codebook"}, "caps")
    if "tolerances" in data:
        _reject_unknown(
            data["tolerances"],
            {"tau_herm", "tau_tr", "tau_psd", "tau_num", "tau_feas"},
            "tolerances",
        )
    if "search" in data:
        _reject_unknown(
            data["search"],
            {"restarts", "u_max", "outer_iters", "theta_steps", "w_steps", "seed"},
            "search",
        )
    if "oracle" in data:
        _reject_unknown(
            data["oracle"], {"objective", "max_u", "grid_step", "point_budget"}, "oracle"
        )

    # decode stateful pieces once so bad configs fail at parse time
    if "target" in data:
        decode_target(data["target"])
    if "ensemble" in data:
        _decode_ensemble(data["ensemble"])
    if "extension" in data and data["extension"] != "auto":
        decode_extension(data["extension"], decode_target(data["target"]).topology)
    return ExperimentConfig(data)


def serialize_config(config: ExperimentConfig) -> str:
    return json.dumps(config.data, sort_keys=True, indent=2)


def _decode_ensemble(obj) -> softcover.CEnsemble:
    if not isinstance(obj, dict):
        raise ValidationError("ensemble", "expected an object")
    _reject_unknown(obj, {"pmf", "conditionals"}, "ensemble")
    try:
        return softcover.make_ensemble(obj["pmf"], _decode_stack(obj["conditionals"], "ensemble.conditionals"))
    except ValidationError:
        raise
    except KeyError as exc:
        raise ValidationError("ensemble", f"missing key {exc}")
    except Exception as exc:
        raise ValidationError("ensemble", str(exc))


def _caps_from_config(config: ExperimentConfig) -> Caps:
    base = caps_from_env()
    section = config.get("caps")
    if not section:
        return base
    mapping = {
        "tensor": "tensor_dim",
        "blocks": "classical_blocks",
        "block_dim": "block_dim",
        "total": "total_dim",
        "codebook": "codebook_symbols",
    }
    return dataclasses.replace(base, **{mapping[k]: int(v) for k, v in section.items()})


def _tolerances_from_config(config: ExperimentConfig) -> Tolerances:
    section = config.get("tolerances")
    if not section:
        return Tolerances()
    return dataclasses.replace(Tolerances(), **{k: float(v) for k, v in section.items()})


def _search_options(config: ExperimentConfig) -> region.SearchOptions:
    section = dict(config.get("search") or {})
    u_max = section.pop("u_max", None)
    if u_max is not None:
        section["u_values"] = tuple(range(1, int(u_max) + 1))
    section.setdefault("seed", config.get("seed", 0))
    return region.SearchOptions(**section)


# --- dispatch -----------------------------------------------------------------


def _float_repr(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def write_csv(path: str, rows: list[dict]) -> None:
    with open(path, "w", newline="") as handle:
        if not rows:
            return
        writer = csv.writer(handle)
        header = list(rows[0].keys())
        writer.writerow(header)
        for row in rows:
            writer.writerow([_float_repr(row.get(k)) for k in header])


def _auto_extension(target, config, tolerances):
    opts = _search_options(config)
    if target.topology is Topology.TWO_NODE:
        result = region.min_no_cr_rate(target, opts, tolerances)
    elif target.topology is Topology.NO_COMM:
        result = region.nc_capacity(target, opts, tolerances)
    else:
        result = region.broadcast_no_cr_rate(target, opts, tolerances)
    if result.status != region.FEASIBLE or result.argmin is None:
        raise InfeasibleExtension(f"auto extension search ended with status {result.status}")
    return result.argmin


def _run_rows(config: ExperimentConfig):
    kind = config.kind
    caps = _caps_from_config(config)
    tolerances = _tolerances_from_config(config)
    seed = config.get("seed", 0)
    workers = config.get("threads", 1)
    diagnostics = {}
    status = "ok"

    if kind == "resolvability":
        ens = _decode_ensemble(config.data["ensemble"])
        rows = softcover.resolvability_curve(
            ens, config.data["rate"], config.data["n_list"], config.data["trials"],
            seed, caps, workers,
        )
        return [dataclasses.asdict(r) for r in rows], diagnostics, status

    if kind == "info":
        target = decode_target(config.data["target"])
        ext = decode_extension(config.data["extension"], target.topology)
        residual = cqmodel.feasibility_residual(ext, target, tolerances)
        if target.topology is Topology.TWO_NODE:
            ixu, ixbu = cqmodel.info_two_node(ext, tolerances)
            row = {"topology": "two-node", "i_xu": ixu, "i_xbu": ixbu, "residual": residual}
        elif target.topology is Topology.NO_COMM:
            row = {
                "topology": "no-comm",
                "i_uabc": cqmodel.info_nc(ext, tolerances),
                "residual": residual,
            }
        else:
            ixu, ixbu = cqmodel.info_broadcast(ext, tolerances)
            row = {"topology": "broadcast", "i_xu": ixu, "i_xbu": ixbu, "residual": residual}
        return [row], diagnostics, status

    if kind.startswith("simulate-"):
        target = decode_target(config.data["target"])
        if config.data["extension"] == "auto":
            ext = _auto_extension(target, config, tolerances)
            diagnostics["auto_extension"] = encode_extension(ext)
        else:
            ext = decode_extension(config.data["extension"], target.topology)
        rates = config.data["rates"]
        n_list, trials = config.data["n_list"], config.data["trials"]
        if kind == "simulate-two-node":
            rows = protocols.run_two_node(
                target, ext, rates["r0"], rates["r1"], n_list, trials, seed, caps, tolerances, workers
            )
        elif kind == "simulate-nc":
            rows = protocols.run_no_comm(
                target, ext, rates["r0"], n_list, trials, seed, caps, tolerances, workers
            )
        else:
            rows = protocols.run_broadcast(
                target, ext, rates["r0"], rates["r1"], n_list, trials, seed, caps, tolerances, workers
            )
        return [dataclasses.asdict(r) for r in rows], diagnostics, status

    if kind == "region-two-node":
        target = decode_target(config.data["target"])
        opts = _search_options(config)
        comm = region.min_comm_rate(target, opts, tolerances)
        no_cr = region.min_no_cr_rate(target, opts, tolerances)
        rows = [
            {
                "objective": comm.objective,
                "value": comm.value,
                "status": comm.status,
                "r0_sufficient": comm.r0_sufficient,
            },
            {"objective": no_cr.objective, "value": no_cr.value, "status": no_cr.status, "r0_sufficient": None},
        ]
        diagnostics = {"min_comm": comm.diagnostics, "min_no_cr": no_cr.diagnostics}
        if config.get("r0_grid"):
            boundary = region.trace_two_node_region(
                target, config.data["r0_grid"], opts, config.data["region_variant"], tolerances
            )
            rows = [
                {"objective": "boundary", "r0": a, "r1": b, "status": boundary.status}
                for a, b in zip(boundary.r0_values, boundary.r1_values)
            ] + rows
            diagnostics["variant"] = boundary.variant
        return rows, diagnostics, status

    if kind == "region-nc":
        target = decode_target(config.data["target"])
        result = region.nc_capacity(target, _search_options(config), tolerances)
        row = {"objective": result.objective, "value": result.value, "status": result.status}
        if result.ppt_certificate:
            row["ppt_cut"], row["ppt_min_eigenvalue"] = result.ppt_certificate
            status = region.INFEASIBLE_ENTANGLED
        diagnostics = result.diagnostics
        if result.argmin is not None:
            diagnostics["argmin"] = encode_extension(result.argmin)
        return [row], diagnostics, status

    if kind == "region-broadcast":
        target = decode_target(config.data["target"])
        boundary = region.broadcast_region(
            target, config.data["r0_grid"], _search_options(config),
            config.data["region_variant"], tolerances,
        )
        rows = [
            {"r0": a, "r1": b, "status": boundary.status}
            for a, b in zip(boundary.r0_values, boundary.r1_values)
        ]
        if boundary.status == region.INFEASIBLE_ENTANGLED:
            status = region.INFEASIBLE_ENTANGLED
        return rows, boundary.diagnostics, status

    if kind == "oracle":
        target = decode_target(config.data["target"])
        section = dict(config.get("oracle") or {})
        value = region.brute_force_oracle(
            target,
            objective=section.get("objective", "joint"),
            max_u=int(section.get("max_u", 4)),
            grid_step=float(section.get("grid_step", 1.0 / 64)),
            point_budget=int(section.get("point_budget", 5_000_000)),
        )
        row = {
            "objective": section.get("objective", "joint"),
            "max_u": int(section.get("max_u", 4)),
            "grid_step": float(section.get("grid_step", 1.0 / 64)),
            "value": value,
        }
        return [row], diagnostics, status

    raise ValidationError("kind", f"unhandled kind {kind!r}")


def run(config: ExperimentConfig, out_dir: str | None = None) -> ResultRecord:
    """Execute the experiment; optionally write <out>/<name>.json and .csv."""
    start = time.perf_counter()
    rows, diagnostics, status = _run_rows(config)
    wall = time.perf_counter() - start
    record = ResultRecord(
        config=config.data,
        version=__version__,
        wall_time_s=wall,
        rows=rows,
        diagnostics=diagnostics,
        status=status,
    )
    out_dir = out_dir or config.get("out_dir")
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        name = config.get("name") or f"{config.kind}-{time.strftime('%Y%m%dT%H%M%S')}"
        record.json_path = os.path.join(out_dir, f"{name}.json")
        record.csv_path = os.path.join(out_dir, f"{name}.csv")
        with open(record.json_path, "w") as handle:
            json.dump(
                {
                    "config": record.config,
                    "version": record.version,
                    "wall_time_s": record.wall_time_s,
                    "status": record.status,
                    "rows": record.rows,
                    "diagnostics": record.diagnostics,
                },
                handle,
                indent=2,
                default=_json_default,
            )
        write_csv(record.csv_path, rows)
    return record


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(obj)}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="coordsim", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", required=True, help="path to a JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker pool size (default: available execution units)")
        p.add_argument("--region-variant", choices=("proof", "printed"), default=None)
    args = parser.parse_args(argv)

    try:
        with open(args.config) as handle:
            config = parse_config(handle.read())
        if config.kind != args.kind:
            raise ValidationError("kind", f"config kind {config.kind!r} does not match subcommand {args.kind!r}")
        if args.seed is not None:
            config.data["seed"] = args.seed
        if args.threads is not None:
            config.data["threads"] = args.threads
        elif "threads" not in config.data or config.data["threads"] == 1:
            config.data["threads"] = os.cpu_count() or 1
        if args.region_variant is not None:
            config.data["region_variant"] = args.region_variant
        record = run(config, out_dir=args.out)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleExtension as exc:
        print(f"infeasible extension: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE_EXTENSION
    except DimensionCap as exc:
        print(f"dimension cap: {exc}", file=sys.stderr)
        return EXIT_DIMENSION_CAP
    except CoordSimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    for row in record.rows:
        print(json.dumps(row, default=_json_default))
    if record.csv_path:
        print(f"wrote {record.csv_path}", file=sys.stderr)
    if record.status == region.INFEASIBLE_ENTANGLED:
        return EXIT_INFEASIBLE_ENTANGLED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
