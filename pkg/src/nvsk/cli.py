"""Command-line front end: `nvsk <module> <verb>`.

Commands emit plot-ready CSV/JSON plus a manifest sidecar; figure rendering
is left to the caller's plotting stack. Exit codes: 0 success, 1 input
validation error, 2 computation failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import __version__, charge, dataio, photophysics, ramsey, strainmap
from .config import ResolvedConfig, default_config, parse_config
from .dephasing import combine_budget, dq_t2star, spin_bath_budget, strain_rate_from_fwhm
from .errors import ComputationError, NvskError, ValidationError
from .sensitivity import optimal_nitrogen, sensitivity_ratio, volume_normalized_sensitivity


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _threads_cap() -> int:
    """Upper bound on worker threads; computations are currently serial."""
    raw = os.environ.get("NVSK_THREADS", "")
    if not raw:
        return 1
    try:
        cap = int(raw)
    except ValueError:
        raise ValidationError(f"NVSK_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ValidationError(f"NVSK_THREADS must be >= 1, got {cap}")
    return cap


def parse_grid(spec: str, default_count: int = 25) -> np.ndarray:
    """Grid syntax: start:stop:log[:count] or start:stop:lin[:count]."""
    parts = spec.split(":")
    if len(parts) not in (3, 4):
        raise ValidationError(
            f"grid must be start:stop:log|lin[:count], got {spec!r}"
        )
    try:
        start, stop = float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"bad grid endpoints in {spec!r}") from None
    scale = parts[2]
    count = default_count
    if len(parts) == 4:
        try:
            count = int(parts[3])
        except ValueError:
            raise ValidationError(f"bad grid count in {spec!r}") from None
    if count < 2:
        raise ValidationError(f"grid needs >= 2 points, got {count}")
    if scale == "log":
        if start <= 0 or stop <= start:
            raise ValidationError(f"log grid needs 0 < start < stop, got {spec!r}")
        return np.logspace(math.log10(start), math.log10(stop), count)
    if scale == "lin":
        if stop <= start:
            raise ValidationError(f"grid needs start < stop, got {spec!r}")
        return np.linspace(start, stop, count)
    raise ValidationError(f"grid scale must be 'log' or 'lin', got {scale!r}")


def parenthesis_format(value: float, sigma: float, unit: str = "") -> str:
    """Compact uncertainty notation, e.g. 17.7(4)."""
    if sigma <= 0 or not math.isfinite(sigma):
        return f"{value:g}{unit}"
    exponent = math.floor(math.log10(sigma))
    digit = round(sigma / 10**exponent)
    if digit == 10:
        digit = 1
        exponent += 1
    decimals = max(0, -exponent)
    return f"{value:.{decimals}f}({digit}){unit}"


def _load_config(path) -> ResolvedConfig:
    return parse_config(path) if path else default_config()


def _manifest(args, cfg: ResolvedConfig, seed=None) -> dataio.RunManifest:
    manifest = dataio.RunManifest(
        command=sys.argv[1:] if sys.argv[0].endswith(("nvsk", "cli.py")) else list(sys.argv),
        config=cfg.as_dict(),
        seed=seed,
    )
    if getattr(args, "config", None):
        manifest.add_input("config", args.config)
    return manifest


# --- dephasing ---


def cmd_dephasing(args) -> int:
    cfg = _load_config(args.config)
    sample = cfg.sample()
    budget = spin_bath_budget(sample, cfg.bath_coefficients())
    strain_rate = 0.0
    if args.strain_fwhm_khz is not None:
        strain_rate = strain_rate_from_fwhm(args.strain_fwhm_khz)
    full = combine_budget(
        rate_ns0=budget.rate_ns0,
        rate_c13=budget.rate_c13,
        rate_nv_nv=budget.rate_nv_nv,
        rate_strain=strain_rate,
        rate_bias=cfg.bias_rate_per_us,
    )
    result = {"units": {"rates": "1/us", "t2": "us"}}
    result.update(full.as_dict())
    result["t2_star_sq_us"] = full.t2_star_total
    result["t2_star_dq_us"] = dq_t2star(full)
    if args.out:
        dataio.emit_json(result, args.out, _manifest(args, cfg))
    else:
        print(dataio.format_json(result))
    return 0


# --- sensitivity ---


def _sweep_rows(sample, table, grid, protocol, cfg):
    rows = []
    for intensity in grid:
        rows.append(
            volume_normalized_sensitivity(
                sample,
                table,
                intensity,
                protocol,
                constants=cfg.constants(),
                coeffs=cfg.bath_coefficients(),
                photon_model=cfg.photon_model(),
                readout_window_us=cfg.readout_window_us,
                bias_rate_per_us=cfg.bias_rate_per_us,
            )
        )
    return rows


def cmd_sensitivity_sweep(args) -> int:
    cfg = _load_config(args.sample)
    sample = cfg.sample()
    table = dataio.ingest_intensity_table(args.table)
    if args.grid:
        grid = parse_grid(args.grid)
    else:
        lo, hi = table.intensity_range
        grid = np.logspace(math.log10(lo), math.log10(hi), 25)
    rows = _sweep_rows(sample, table, grid, args.protocol, cfg)
    manifest = dataio.RunManifest(command=sys.argv[1:], config=cfg.as_dict())
    manifest.add_input("sample", args.sample)
    manifest.add_input("table", args.table)
    dataio.emit_csv(
        [
            ("intensity_mw_um2", [r.intensity for r in rows]),
            ("tau_opt_us", [r.tau for r in rows]),
            ("eta_g_sqrt_us_cm3", [r.eta for r in rows]),
        ],
        args.out,
        manifest,
    )
    return 0


def cmd_sensitivity_optimal_n(args) -> int:
    cfg = _load_config(args.config)
    grid = parse_grid(args.to_grid)
    n_opt = [
        optimal_nitrogen(t_o, cfg.metric_config()).concentration.ppm for t_o in grid
    ]
    dataio.emit_csv(
        [("t_overhead_us", grid), ("n_opt_ppm", n_opt)],
        args.out,
        _manifest(args, cfg),
    )
    return 0


def cmd_sensitivity_compare(args) -> int:
    cfg_a = _load_config(args.sample_a)
    cfg_b = _load_config(args.sample_b)
    table_a = dataio.ingest_intensity_table(args.table_a)
    table_b = dataio.ingest_intensity_table(args.table_b)
    if args.grid:
        grid = parse_grid(args.grid)
    else:
        lo = max(table_a.intensity_range[0], table_b.intensity_range[0])
        hi = min(table_a.intensity_range[1], table_b.intensity_range[1])
        if not hi > lo:
            raise ValidationError("tables share no overlapping intensity range")
        grid = np.logspace(math.log10(lo), math.log10(hi), 25)
    ratios = [
        sensitivity_ratio(
            cfg_a.sample(),
            table_a,
            cfg_b.sample(),
            table_b,
            intensity,
            args.protocol,
        )
        for intensity in grid
    ]
    manifest = dataio.RunManifest(
        command=sys.argv[1:], config={"a": cfg_a.as_dict(), "b": cfg_b.as_dict()}
    )
    for label, p in (
        ("sample_a", args.sample_a),
        ("table_a", args.table_a),
        ("sample_b", args.sample_b),
        ("table_b", args.table_b),
    ):
        manifest.add_input(label, p)
    dataio.emit_csv(
        [("intensity_mw_um2", grid), ("eta_ratio_a_over_b", ratios)],
        args.out,
        manifest,
    )
    return 0


# --- photophysics ---


def cmd_photophysics_simulate(args) -> int:
    cfg = _load_config(args.config)
    params = cfg.five_level_params()
    s = photophysics.saturation_parameter(args.intensity, args.isat)
    dt = args.dt if args.dt else photophysics.max_stable_dt(params, s)
    t_end = args.t_end if args.t_end else photophysics.default_trace_window(params, s)
    n_points = int(math.ceil(t_end / dt)) + 1
    if n_points > 5_000_000:
        raise ValidationError(
            f"grid of {n_points:,} points is too large for a trajectory trace; "
            "pass a shorter --t-end (or use ti-band for slow-pumping regimes)"
        )
    trajectory = photophysics.evolve(
        params, s, photophysics.GROUND_MS0, t_end=t_end, dt=dt
    )
    trace = photophysics.lowpass(photophysics.pl_rate(trajectory))
    curve = photophysics.contrast_trace(
        params, args.intensity, args.isat, t_end=t_end, dt=dt
    )
    n = min(len(trace.values), len(curve.contrast))
    manifest = _manifest(args, cfg)
    dataio.emit_csv(
        [
            ("t_us", trace.times[:n]),
            ("pl_rate_per_us", trace.values[:n]),
            ("contrast", curve.contrast[:n]),
        ],
        args.out,
        manifest,
    )
    return 0


def cmd_photophysics_ti_band(args) -> int:
    cfg = _load_config(args.config)
    params = cfg.five_level_params()
    grid = parse_grid(args.grid, default_count=40)
    band = photophysics.ti_band(params, grid)
    dataio.emit_csv(
        [
            ("intensity_mw_um2", band.intensities),
            ("t_i_lower_us", band.lower),
            ("t_i_upper_us", band.upper),
        ],
        args.out,
        _manifest(args, cfg),
    )
    return 0


# --- ramsey ---


def cmd_ramsey_synth(args) -> int:
    cfg = _load_config(args.config)
    model = ramsey.RamseyModel(
        t2_star=args.t2,
        p=args.p,
        detuning=args.detuning,
        hyperfine_splitting=args.splitting,
        n_hyperfine=args.lines,
        amplitude=args.amplitude,
        baseline=args.baseline,
    )
    tau = np.arange(args.dtau, args.tau_end + 0.5 * args.dtau, args.dtau)
    signal = ramsey.synthesize(model, tau, noise_sigma=args.noise_sigma, seed=args.seed)
    dataio.emit_csv(
        [("tau_us", tau), ("contrast", signal)],
        args.out,
        _manifest(args, cfg, seed=args.seed),
    )
    return 0


def cmd_ramsey_fit(args) -> int:
    cfg = _load_config(args.config)
    data = np.genfromtxt(args.signal, delimiter=",", names=True)
    if data.dtype.names is None or not {"tau_us", "contrast"} <= set(data.dtype.names):
        raise ValidationError(f"{args.signal}: expected columns tau_us, contrast")
    result = ramsey.fit(data["tau_us"], data["contrast"], n_hyperfine=args.lines)
    payload = result.as_dict()
    payload["t2_star_formatted"] = parenthesis_format(
        result.t2_star, result.t2_star_sigma, " us"
    )
    manifest = _manifest(args, cfg)
    manifest.add_input("signal", args.signal)
    if args.out:
        dataio.emit_json(payload, args.out, manifest)
    else:
        print(dataio.format_json(payload))
    return 0


# --- strain ---


def cmd_strain_analyze(args) -> int:
    cfg = _load_config(args.config)
    strain_map = dataio.load_strain_map(args.map)
    sizes = parse_grid(args.sizes, default_count=12)
    if args.other_rate_per_us is not None:
        other_rate = args.other_rate_per_us
    elif args.config:
        other_rate = (
            spin_bath_budget(cfg.sample(), cfg.bath_coefficients()).bath_rate
            + cfg.bias_rate_per_us
        )
    else:
        other_rate = 0.0
    centered = strainmap.mean_subtract(strain_map)
    full_fit = strainmap.histogram_fwhm(centered, args.bin_width_khz)
    stats = strainmap.partition_sweep(
        strain_map,
        sizes,
        tile_offset=(args.tile_offset, args.tile_offset),
        bin_width_khz=args.bin_width_khz,
    )
    scaling = strainmap.scaling_metric(stats, other_rate)
    result = {
        "full_map": full_fit.as_dict(),
        "other_rate_per_us": other_rate,
        "partitions": [s.as_dict() for s in stats],
        "scaling": scaling.as_dict(),
    }
    manifest = _manifest(args, cfg)
    manifest.add_input("map", args.map)
    if args.out:
        dataio.emit_json(result, args.out, manifest)
    else:
        print(dataio.format_json(result))
    return 0


def cmd_strain_synth(args) -> int:
    shape = tuple(int(x) for x in args.shape.split("x"))
    if len(shape) != 2:
        raise ValidationError(f"--shape must be ROWSxCOLS, got {args.shape!r}")
    if args.model == "stationary":
        strain_map = strainmap.synth_stationary(
            shape, args.pitch_um, args.scale_khz, seed=args.seed
        )
    else:
        strain_map = strainmap.synth_two_region(
            shape,
            args.pitch_um,
            args.scale_khz,
            hot_scale_khz=args.hot_scale_khz,
            seed=args.seed,
        )
    dataio.save_strain_map(strain_map, args.out)
    manifest = _manifest(args, _load_config(args.config), seed=args.seed)
    dataio.write_manifest(args.out, manifest)
    return 0


# --- charge ---


def cmd_charge_decompose(args) -> int:
    measured = dataio.load_spectrum(args.measured)
    basis_minus = dataio.load_spectrum(args.basis_minus)
    basis_zero = dataio.load_spectrum(args.basis_zero)
    result = charge.decompose_to_psi(
        measured,
        basis_minus,
        basis_zero,
        brightness_ratio=args.brightness_ratio,
        intensity_mw_um2=args.intensity,
    )
    manifest = _manifest(args, _load_config(args.config))
    for label, p in (
        ("measured", args.measured),
        ("basis_minus", args.basis_minus),
        ("basis_zero", args.basis_zero),
    ):
        manifest.add_input(label, p)
    if args.out:
        dataio.emit_json(result.as_dict(), args.out, manifest)
    else:
        print(dataio.format_json(result.as_dict()))
    return 0


# --- wiring ---


def build_parser() -> _Parser:
    parser = _Parser(prog="nvsk", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nvsk {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dephasing", help="T2* budget for a sample config")
    p.add_argument("--config", required=True)
    p.add_argument("--strain-fwhm-khz", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dephasing)

    sens = sub.add_parser("sensitivity", help="sensitivity sweeps and comparisons")
    sens_sub = sens.add_subparsers(dest="verb", required=True)

    p = sens_sub.add_parser("sweep")
    p.add_argument("--sample", "--config", dest="sample", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--protocol", choices=("sq", "dq"), default="sq")
    p.add_argument("--grid", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity_sweep)

    p = sens_sub.add_parser("optimal-n")
    p.add_argument("--to-grid", required=True, help="overhead grid, e.g. 0.1:100:log")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity_optimal_n)

    p = sens_sub.add_parser("compare")
    p.add_argument("--sample-a", required=True)
    p.add_argument("--table-a", required=True)
    p.add_argument("--sample-b", required=True)
    p.add_argument("--table-b", required=True)
    p.add_argument("--protocol", choices=("sq", "dq"), default="sq")
    p.add_argument("--grid", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sensitivity_compare)

    photo = sub.add_parser("photophysics", help="five-level model simulations")
    photo_sub = photo.add_subparsers(dest="verb", required=True)

    p = photo_sub.add_parser("simulate")
    p.add_argument("--intensity", type=float, required=True, help="mW/um^2")
    p.add_argument("--isat", type=float, required=True, help="mW/um^2")
    p.add_argument("--t-end", type=float, default=None, help="us")
    p.add_argument("--dt", type=float, default=None, help="us")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_photophysics_simulate)

    p = photo_sub.add_parser("ti-band")
    p.add_argument("--grid", required=True, help="e.g. 1e-3:1e1:log:40")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_photophysics_ti_band)

    rams = sub.add_parser("ramsey", help="free-induction synthesis and fitting")
    rams_sub = rams.add_subparsers(dest="verb", required=True)

    p = rams_sub.add_parser("synth")
    p.add_argument("--t2", type=float, required=True, help="us")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--detuning", type=float, required=True, help="MHz")
    p.add_argument("--splitting", type=float, default=ramsey.DEFAULT_HYPERFINE_MHZ)
    p.add_argument("--lines", type=int, default=3)
    p.add_argument("--amplitude", type=float, default=0.02)
    p.add_argument("--baseline", type=float, default=0.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--tau-end", type=float, default=None, help="us; default 3*T2")
    p.add_argument("--dtau", type=float, default=0.06, help="us")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ramsey_synth)

    p = rams_sub.add_parser("fit")
    p.add_argument("signal", help="CSV with tau_us, contrast")
    p.add_argument("--lines", type=int, default=3)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ramsey_fit)

    strain = sub.add_parser("strain", help="strain-map statistics")
    strain_sub = strain.add_subparsers(dest="verb", required=True)

    p = strain_sub.add_parser("analyze")
    p.add_argument("map", help="CSV grid with JSON sidecar")
    p.add_argument("--sizes", required=True, help="e.g. 30:3000:log:12 (um)")
    p.add_argument("--tile-offset", type=int, default=0, help="pixels")
    p.add_argument("--bin-width-khz", type=float, default=None)
    p.add_argument("--other-rate-per-us", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_strain_analyze)

    p = strain_sub.add_parser("synth")
    p.add_argument("--model", choices=("stationary", "two-region"), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--shape", default="512x512")
    p.add_argument("--pitch-um", type=float, default=6.0)
    p.add_argument("--scale-khz", type=float, default=10.0)
    p.add_argument("--hot-scale-khz", type=float, default=60.0)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_strain_synth)

    chg = sub.add_parser("charge", help="charge-state decomposition")
    chg_sub = chg.add_subparsers(dest="verb", required=True)

    p = chg_sub.add_parser("decompose")
    p.add_argument("--measured", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--basis-minus", required=True)
    p.add_argument("--basis-zero", required=True)
    p.add_argument("--brightness-ratio", type=float, default=charge.DEFAULT_BRIGHTNESS_RATIO)
    p.add_argument("--intensity", type=float, default=None, help="mW/um^2")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_charge_decompose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        _threads_cap()
        args = parser.parse_args(argv)
        if getattr(args, "command", None) == "ramsey" and getattr(args, "verb", "") == "synth":
            if args.tau_end is None:
                args.tau_end = 3.0 * args.t2
        return args.func(args)
    except ValidationError as exc:
        print(f"nvsk: {exc}", file=sys.stderr)
        return 1
    except ComputationError as exc:
        print(f"nvsk: {exc}", file=sys.stderr)
        return 2
    except NvskError as exc:
        print(f"nvsk: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
