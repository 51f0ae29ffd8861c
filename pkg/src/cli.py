#!/usr/bin/env python3
"""
ETDG CLI - Command-line interface for the ETD-RKDG stability and accuracy experiments
Runs: critical step searches, growth profiles, accuracy tables, linear/h-p/nonlinear/2D runs
"""

import argparse
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from src import __version__

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNSTABLE = 2
EXIT_MISMATCH = 3


class EtdgCLI:
    def __init__(self):
        self.version = __version__
        self.commands = {
            "tau0": "Search the critical step tau0 (semidiscrete or fully discrete)",
            "profile": "Sample rho(G)^2 over phases at one (tau, h)",
            "accuracy": "L2 error / order table for the sin x problem, tau = h",
            "stability": "Max-norm histories at tau0*d/a^2 and 1.1x",
            "hp": "Stability on 1:9 graded meshes and alternating degrees",
            "nonlinear1d": "Viscous Burgers and Buckley-Leverett runs",
            "bl2d": "Two-dimensional viscous Buckley-Leverett run",
            "imex-remark": "IMEX stability at tau = c0 h for large h",
            "version": "Show version",
            "help": "Show help",
        }

    def main(self, argv: Optional[List[str]] = None) -> int:
        """Main entry point"""
        argv = sys.argv[1:] if argv is None else argv
        if not argv:
            self.show_help()
            return EXIT_OK

        command, args = argv[0], argv[1:]
        handlers = {
            "tau0": self.cmd_tau0,
            "profile": self.cmd_profile,
            "accuracy": self.cmd_accuracy,
            "stability": self.cmd_stability,
            "hp": self.cmd_hp,
            "nonlinear1d": self.cmd_nonlinear1d,
            "bl2d": self.cmd_bl2d,
            "imex-remark": self.cmd_imex_remark,
        }
        if command == "version":
            print(f"ETDG v{self.version}")
            return EXIT_OK
        if command in ("help", "-h", "--help"):
            self.show_help()
            return EXIT_OK
        if command not in handlers:
            print(f"❌ Unknown command: {command}")
            print("Try 'etdg help' for more information")
            return EXIT_ERROR
        try:
            return handlers[command](args)
        except Exception as e:
            print(f"❌ Error: {e}")
            return EXIT_ERROR

    def show_help(self):
        """Show help message"""
        print("╔═══════════════════════════════════════════╗")
        print("║        ETDG Command Line Interface        ║")
        print("║   ETD-RK + DG for advection-diffusion     ║")
        print("╚═══════════════════════════════════════════╝")
        print()
        print("USAGE: etdg <command> [options]")
        print()
        print("COMMANDS:")
        for cmd, desc in self.commands.items():
            print(f"  {cmd:<15} {desc}")
        print()
        print("GLOBAL OPTIONS:")
        print("  --config FILE   --out DIR   --threads N   --precision {double,extended}")
        print("  --full-scale    --quiet")
        print()
        print("EXAMPLES:")
        print("  etdg tau0                          # Semidiscrete tau0 of ETD-RK1..4")
        print("  etdg tau0 --scheme imex-rk2        # IMEX-RK2 critical step")
        print("  etdg tau0 --mode full --degree 2   # Fully discrete, P2 central+LDG")
        print("  etdg profile --scheme etd-rk2 --tau 3.94")
        print("  etdg stability --scheme etd-rk4    # tau0 and 1.1x runs at h = pi/1000")
        print("  etdg bl2d --full-scale             # 600x600 Q3 run")
        print()

    # Argument handling

    def _parser(self, command: str) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(prog=f"etdg {command}", description=self.commands[command])
        parser.add_argument("--config", default=None, help="Configuration file (default etdg.json)")
        parser.add_argument("--out", default=None, help="Output directory for CSV files")
        parser.add_argument("--threads", type=int, default=None, help="Worker threads")
        parser.add_argument("--precision", choices=["double", "extended"], default=None)
        parser.add_argument("--full-scale", action="store_true", help="Full-size grids (N=2000 1D, 600x600 2D)")
        parser.add_argument("--quiet", action="store_true", help="Suppress progress output")
        return parser

    def _settings(self, command: str, opts: argparse.Namespace):
        from src.config import CONFIG_FILE, EtdgConfig

        project = EtdgConfig(opts.config or CONFIG_FILE)
        full_scale = opts.full_scale or bool(project.get("full_scale"))
        section = project.section(command, full_scale)
        for key, value in vars(opts).items():
            if key in section and value is not None:
                section[key] = value
        out = Path(project.get("output_dir", opts.out)) / command
        threads = int(project.get("threads", opts.threads))
        precision = project.get("precision", opts.precision)
        return section, out, threads, precision, not opts.quiet

    @staticmethod
    def _flux(section: dict):
        from src.dg_core import FluxChoice

        return FluxChoice.parse(section.get("advection_flux", "central"),
                                section.get("diffusion_flux", "ldg-alternating"),
                                section.get("sigma"))

    @staticmethod
    def _schemes(section: dict, key: str = "schemes"):
        from src.integrators import SchemeSpec

        names = section[key] if isinstance(section[key], list) else [section[key]]
        return [SchemeSpec.parse(name) for name in names]

    @staticmethod
    def _exit_code(results) -> int:
        if any(r.unexpected_instability for r in results):
            return EXIT_UNSTABLE
        mismatched = [r for r in results if not r.as_expected]
        for r in mismatched:
            print(f"⚠️  {r.name}: {r.verdict}, expected {r.expected}")
        return EXIT_MISMATCH if mismatched else EXIT_OK

    # Commands

    def cmd_tau0(self, args: list) -> int:
        """Critical step search"""
        from src.output import write_csv
        from src.stability import KNOWN_TAU0, ScanConfig, Spatial, find_tau0

        parser = self._parser("tau0")
        parser.add_argument("--scheme", dest="schemes", action="append", default=None)
        parser.add_argument("--mode", choices=["semidiscrete", "full"], default=None)
        parser.add_argument("--degree", dest="degrees", type=int, action="append", default=None)
        parser.add_argument("--advection-flux", dest="advection_flux", default=None)
        parser.add_argument("--diffusion-flux", dest="diffusion_flux", default=None)
        parser.add_argument("--sigma", type=float, default=None)
        opts = parser.parse_args(args)
        section, out, threads, precision, verbose = self._settings("tau0", opts)

        spatials = [None]
        if section["mode"] == "full":
            flux = self._flux(section)
            spatials = [Spatial(int(k), flux) for k in section["degrees"]]
        for scheme in self._schemes(section):
            for spatial in spatials:
                label = "semidiscrete" if spatial is None else spatial.label
                if verbose:
                    print(f"▶️  {scheme.name}, {label}")
                cfg = ScanConfig(scheme, spatial, xi_samples=int(section["xi_samples"]),
                                 tau_bracket=tuple(section["tau_bracket"]), precision=precision,
                                 threads=threads)
                report = find_tau0(cfg, progress=verbose)
                known = KNOWN_TAU0[scheme.family].get(scheme.order)
                marker = "✅" if known is None or abs(report.tau0 - known) < 1e-9 else "⚠️ "
                print(f"{marker} {scheme.name} [{label}]: tau0 = {report.tau0_str}")
                stem = f"{scheme.name}-{label.replace(' ', '_').replace('+', '_')}"
                meta = {"scheme": scheme.name, "spatial": label, "tau0": report.tau0,
                        "argmax_xi": report.argmax[0], "argmax_h": report.argmax[1],
                        "precision": precision}
                rows = [(t, h, r, float(s)) for t, h, r, s in report.verdicts]
                for path in (write_csv(out / f"{stem}-search.csv", ["tau", "h", "sup_rho", "verdict"], rows, meta),
                             write_csv(out / f"{stem}-profile.csv", ["xi", "rho_squared"], report.sup_curve, meta)):
                    if verbose:
                        print(f"  📄 {path}")
        return EXIT_OK

    def cmd_profile(self, args: list) -> int:
        """Growth-factor profile at one step"""
        from src.output import write_csv
        from src.stability import ScanConfig, Spatial, scan_profile

        parser = self._parser("profile")
        parser.add_argument("--scheme", default=None)
        parser.add_argument("--tau", type=float, default=None)
        parser.add_argument("--mode", choices=["semidiscrete", "full"], default=None)
        parser.add_argument("--degree", type=int, default=None)
        parser.add_argument("--h", type=float, default=None)
        parser.add_argument("--advection-flux", dest="advection_flux", default=None)
        parser.add_argument("--diffusion-flux", dest="diffusion_flux", default=None)
        opts = parser.parse_args(args)
        section, out, _, precision, verbose = self._settings("profile", opts)

        scheme = self._schemes(section, "scheme")[0]
        full = section["mode"] == "full"
        spatial = Spatial(int(section["degree"]), self._flux(section)) if full else None
        h = float(section["h"]) if full else None
        cfg = ScanConfig(scheme, spatial, (h,) if full else (), int(section["xi_samples"]),
                         precision=precision)
        curve = scan_profile(cfg, float(section["tau"]), h)
        peak = float(curve[:, 1].max())
        marker = "✅" if peak <= 1.0 + 1e-12 else "⚠️ "
        print(f"{marker} {scheme.name} tau={section['tau']}: max rho^2 = {peak:.15g}")
        path = write_csv(out / f"{scheme.name}-tau{section['tau']:g}.csv", ["xi", "rho_squared"], curve,
                         {"scheme": scheme.name, "tau": section["tau"], "h": h,
                          "spatial": "semidiscrete" if spatial is None else spatial.label})
        if verbose:
            print(f"  📄 {path}")
        return EXIT_OK

    def cmd_accuracy(self, args: list) -> int:
        """Accuracy table"""
        from src.harness import AccuracyConfig, run_accuracy

        parser = self._parser("accuracy")
        parser.add_argument("--scheme", dest="schemes", action="append", default=None)
        parser.add_argument("--degree", dest="degrees", type=int, action="append", default=None)
        opts = parser.parse_args(args)
        section, out, threads, _, verbose = self._settings("accuracy", opts)

        cfg = AccuracyConfig(self._schemes(section), [int(k) for k in section["degrees"]],
                             [int(n) for n in section["cells"]], float(section["a"]), float(section["d"]),
                             float(section["T"]), output=out, threads=threads, verbose=verbose)
        table = run_accuracy(cfg)
        print(f"  {'scheme':<8} {'P':>2} {'N':>5} {'L2 error':>10} {'order':>6}")
        for row in table.rows:
            order = "" if math.isnan(row.order) else f"{row.order:6.2f}"
            print(f"  {row.scheme:<8} {row.degree:>2} {row.N:>5} {row.error:10.2e} {order:>6}")
        return EXIT_OK

    def cmd_stability(self, args: list) -> int:
        """Linear advection-dominated stability runs"""
        from src.harness import run_stability, run_sweep, stability_config

        parser = self._parser("stability")
        parser.add_argument("--scheme", dest="schemes", action="append", default=None)
        parser.add_argument("--degree", type=int, default=None)
        parser.add_argument("--N", type=int, default=None)
        parser.add_argument("--h", type=float, default=None, help="Mesh size, overrides N")
        parser.add_argument("--T", type=float, default=None)
        parser.add_argument("--factor", dest="tau_factors", type=float, action="append", default=None)
        opts = parser.parse_args(args)
        section, out, threads, _, verbose = self._settings("stability", opts)

        flux = self._flux(section)
        configs = [stability_config(scheme, float(f), int(section["degree"]), int(section["N"]),
                                    float(section["T"]), section["h"], flux=flux, output=out,
                                    verbose=verbose)
                   for scheme in self._schemes(section) for f in section["tau_factors"]]
        return self._exit_code(run_sweep(configs, run_stability, threads))

    def cmd_hp(self, args: list) -> int:
        """Graded-mesh and alternating-degree stability runs"""
        from src.harness import hp_config, run_hp_variation, run_sweep

        parser = self._parser("hp")
        parser.add_argument("--scheme", dest="schemes", action="append", default=None)
        parser.add_argument("--mode", dest="modes", choices=["h", "p"], action="append", default=None)
        parser.add_argument("--k", dest="k_values", type=int, action="append", default=None)
        parser.add_argument("--N", type=int, default=None)
        parser.add_argument("--T", type=float, default=None)
        parser.add_argument("--factor", dest="tau_factors", type=float, action="append", default=None)
        opts = parser.parse_args(args)
        section, out, threads, _, verbose = self._settings("hp", opts)

        configs = []
        for scheme in self._schemes(section):
            for mode in section["modes"]:
                ks = [int(section["degree"])] if mode == "h" else [int(k) for k in section["k_values"]]
                for k in ks:
                    for f in section["tau_factors"]:
                        configs.append(hp_config(scheme, mode, k, float(f), int(section["N"]),
                                                 float(section["T"]), output=out, verbose=verbose))
        return self._exit_code(run_sweep(configs, run_hp_variation, threads))

    def cmd_nonlinear1d(self, args: list) -> int:
        """Viscous Burgers and Buckley-Leverett"""
        from src.harness import nonlinear_config, run_nonlinear, run_sweep

        parser = self._parser("nonlinear1d")
        parser.add_argument("--problem", dest="problems", action="append", default=None)
        parser.add_argument("--N", type=int, default=None)
        parser.add_argument("--no-self-check", dest="self_check", action="store_false", default=None)
        opts = parser.parse_args(args)
        section, out, threads, _, verbose = self._settings("nonlinear1d", opts)

        scheme = self._schemes(section, "scheme")[0]
        configs = [nonlinear_config(name, int(section["N"]), int(section["degree"]), scheme,
                                    tau_rule=section["tau_rule"], self_check=bool(section["self_check"]),
                                    output=out, verbose=verbose)
                   for name in section["problems"]]
        return self._exit_code(run_sweep(configs, run_nonlinear, threads))

    def cmd_bl2d(self, args: list) -> int:
        """2D Buckley-Leverett"""
        from src.dg_core import FluxChoice
        from src.harness import bl2d_config, run_2d

        parser = self._parser("bl2d")
        parser.add_argument("--N", type=int, default=None)
        parser.add_argument("--T", type=float, default=None)
        opts = parser.parse_args(args)
        section, out, _, _, verbose = self._settings("bl2d", opts)

        cfg = bl2d_config(int(section["N"]), int(section["degree"]), self._schemes(section, "scheme")[0],
                          flux=FluxChoice.parse("central", section["diffusion_flux"]),
                          tau_rule=section["tau_rule"], T=float(section["T"]), output=out,
                          verbose=verbose)
        return self._exit_code([run_2d(cfg)])

    def cmd_imex_remark(self, args: list) -> int:
        """IMEX stability at tau = c0 h"""
        from src.output import write_csv
        from src.stability import Spatial, check_imex_cfl_remark, imex_remark_h_range

        parser = self._parser("imex-remark")
        parser.add_argument("--scheme", dest="schemes", action="append", default=None)
        parser.add_argument("--degree", dest="degrees", type=int, action="append", default=None)
        parser.add_argument("--c0", type=float, default=None)
        opts = parser.parse_args(args)
        section, out, _, _, verbose = self._settings("imex-remark", opts)

        flux = self._flux(section)
        unstable = False
        for scheme in self._schemes(section):
            for k in section["degrees"]:
                spatial = Spatial(int(k), flux)
                h_range = imex_remark_h_range(scheme, int(k), int(section["h_count"]),
                                              float(section["h_max"]), section["c0"])
                report = check_imex_cfl_remark(scheme, spatial, h_range, section["c0"])
                unstable |= report.any_unstable
                worst = max(r for _, _, r, _ in report.rows) if report.rows else float("nan")
                marker = "❌" if report.any_unstable else "✅"
                print(f"{marker} {scheme.name} [{spatial.label}]: max rho = {worst:.15g} "
                      f"over h in [{h_range[0]:.3g}, {h_range[-1]:.3g}]")
                path = write_csv(out / f"{scheme.name}-P{k}.csv", ["h", "tau", "sup_rho", "verdict"],
                                 np.asarray([(h, t, r, float(s)) for h, t, r, s in report.rows]).reshape(-1, 4),
                                 {"scheme": scheme.name, "spatial": spatial.label, "c0": section["c0"]})
                if verbose:
                    print(f"  📄 {path}")
        return EXIT_UNSTABLE if unstable else EXIT_OK


def main():
    cli = EtdgCLI()
    sys.exit(cli.main())


if __name__ == "__main__":
    main()
