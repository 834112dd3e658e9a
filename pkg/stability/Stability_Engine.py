import json
import logging
import threading
import time
from abc import ABC, abstractmethod
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy
from django.conf import settings
from django.db import DatabaseError
from django.utils import timezone

import prandtl_lab

from . import reporting
from .config import ExperimentConfig, dump_config
from .exceptions import DegeneracyError, LabError, ParameterError
from .models import RunReport, StageLog
from .numerics.evolve import (
    ModeSeeds, StructuredSeeds, energy_balance, evolve_linear, measure_growth, sweep,
)
from .numerics.grid import WeightedNorm, make_grid
from .numerics.layer_ode import (
    companion_check, jump_errors, jump_tolerance, jumps, rescale_physical, solve_canonical,
)
from .numerics.modes import (
    boundary_values, build_mode, c2_mismatch, divergence_error, fit_sandwich, localization, predicted_sigma0,
    residual_scaling_study,
)
from .numerics.nonlinear import evolve_nonlinear, linearization_study, low_mode_seed, proportional_gap
from .numerics.shear import build_family, evolve_shear, find_critical_points, track_critical_point
from .numerics.transformed import (
    default_seed, evolve_transformed, inverse_transform, transform_monotone, two_route_gap,
)
from .schema import FULL_STAGE, REPORT_FILE, STAGES

logger = logging.getLogger(__name__)

FULL_PIPELINE = ("eigen", "mode", "residual", "evolve-linear", "sweep")

# largest |(Uc, Vc)| at Z_max relative to the sup norm of the mode
ZMAX_DECAY_REL = 1e-6


class SkipStage(Exception):
    """The stage does not apply to the configured shear family."""


class StageRunner(ABC):
    """
    Abstract Base Class for the stages of a run.
    Defines the contract between a stage and the control tower.
    """
    name = ""

    @abstractmethod
    def execute(self, lab, cfg, writer, workers) -> dict:
        """Runs the stage with this run's worker count and returns its JSON payload.
        Raises LabError on failure and SkipStage when not applicable."""
        raise NotImplementedError

    def check(self, result, cfg) -> list:
        """Acceptance failures for a completed stage; empty when all pass."""
        return []


def _spread(values):
    values = np.asarray(values, float)
    return float((values.max() - values.min()) / abs(values.mean())) if values.size else 0.0


class EigenRunner(StageRunner):
    name = "eigen"

    def execute(self, lab, cfg, writer, workers):
        pair = lab.eigenpair(cfg)
        tau = pair.tau_t
        try:
            cp = lab.critical_point(cfg)
        except DegeneracyError:
            cp = None
        wpp = cp.wpp if cp is not None else 2.0 * pair.sign
        profile = rescale_physical(pair, wpp)
        result = {
            "tau": {"re": tau.real, "im": tau.imag},
            "roots": [{"re": r.real, "im": r.imag} for r in pair.roots],
            "partner": {"re": -tau.real, "im": tau.imag},
            "residual": pair.residual,
            "jumps": {key: {"re": v.real, "im": v.imag} for key, v in jumps(profile).items()},
            "jump_errors": jump_errors(profile),
            "jump_tolerance": jump_tolerance(profile),
            "companion": companion_check(profile, cp.usp, cp.uspp) if cp is not None else None,
            "critical_point": cp.as_dict() if cp is not None else None,
            "convergence": None,
        }
        if cfg.eigen.convergence:
            e = cfg.eigen
            wide = solve_canonical(-1, 2 * e.L, 2 * e.n, guess=tau)
            fine = solve_canonical(-1, e.L, 2 * e.n, guess=tau)
            result["convergence"] = {
                "L": abs(wide.tau_t - tau) / abs(tau),
                "n": abs(fine.tau_t - tau) / abs(tau),
            }
        result["resolution"] = {"L": pair.L, "n": pair.n}
        rows = ((z, w.real, w.imag) for z, w in zip(pair.Z, pair.Wt))
        result["artifacts"] = [writer.write_csv("eigen/profile.csv", "eigen", rows),
                               writer.write_svg("eigen/profile.svg", reporting.eigen_figure(pair))]
        return result

    def check(self, result, cfg):
        failures = []
        if not result["tau"]["im"] < 0:
            failures.append("eigen: Im tau is not negative")
        conv = result["convergence"]
        if conv is not None:
            for key, rel in conv.items():
                if rel > 1e-6:
                    failures.append(f"eigen: doubling {key} moves tau by {rel:.2e} > 1e-6")
        tol = result["jump_tolerance"]
        for key, err in result["jump_errors"].items():
            if err > tol:
                failures.append(f"eigen: jump [{key}] off by {err:.2e} > {tol:.2e}")
        comp = result["companion"]
        if comp is not None:
            for key, res in comp["residual"].items():
                if res > 1e-4:
                    failures.append(f"eigen: companion {key} residual {res:.2e} > 1e-4")
            for key, err in comp["jumps"].items():
                if err > comp["tol_jump"]:
                    failures.append(f"eigen: companion jump {key} off by {err:.2e}")
        return failures


class ModeRunner(StageRunner):
    name = "mode"

    def execute(self, lab, cfg, writer, workers):
        if cfg.shear.family == "structured":
            raise SkipStage("structured shear has no unstable critical point")
        shear, cp, pair, traj = lab.shear(cfg), lab.critical_point(cfg), lab.eigenpair(cfg), lab.track(cfg)
        norm = WeightedNorm(cfg.mode.alpha)
        entries, artifacts = [], []
        for k in cfg.mode.ks:
            entry = {"k": k}
            try:
                mode = build_mode(shear, cp, pair, k, traj=traj, phi_radius=cfg.mode.phi_radius)
                entry.update({
                    "eps": mode.eps, "k1": mode.k1, "k2": mode.k2,
                    "boundary": boundary_values(mode),
                    "divergence": divergence_error(mode),
                    "c2_mismatch": c2_mismatch(mode),
                    "localization": localization(mode),
                    "sandwich": fit_sandwich(mode, norm, tuple(cfg.evolve.window)),
                    "phi_radius": mode.phi_radius,
                    "samples": int(mode.times.size),
                    "error": None,
                })
                artifacts.append(writer.write_csv(f"mode/k{k}.csv", "mode", mode.rows(cfg.output.csv_every)))
            except LabError as exc:
                logger.warning("mode k=%d failed: %s", k, exc)
                entry["error"] = exc.as_dict()
            entries.append(entry)
        return {"entries": entries, "track": traj.summary(),
                "resolution": shear.grid.describe(), "artifacts": artifacts}

    def check(self, result, cfg):
        failures = []
        good = [e for e in result["entries"] if e["error"] is None]
        failures += [f"mode: k={e['k']} failed ({e['error']['code']})" for e in result["entries"] if e["error"]]
        for e in good:
            if e["boundary"]["z0"] != 0.0:
                failures.append(f"mode: k={e['k']} does not vanish at z = 0")
            if e["boundary"]["zmax_rel"] > ZMAX_DECAY_REL:
                failures.append(f"mode: k={e['k']} keeps {e['boundary']['zmax_rel']:.2e} of its amplitude at Z_max")
            if e["divergence"] > 1e-2:
                failures.append(f"mode: k={e['k']} divergence error {e['divergence']:.2e}")
            if e["c2_mismatch"] > 1e-3:
                failures.append(f"mode: k={e['k']} C2 mismatch {e['c2_mismatch']:.2e} > 1e-3")
        if len(good) > 1:
            for key in ("sigma0", "C0"):
                spread = _spread([e["sandwich"][key] for e in good])
                if spread > 0.15:
                    failures.append(f"mode: fitted {key} varies by {spread:.0%} across k")
        return failures


class ResidualRunner(StageRunner):
    name = "residual"

    def execute(self, lab, cfg, writer, workers):
        if cfg.shear.family == "structured":
            raise SkipStage("structured shear has no unstable critical point")
        shear, cp, pair, traj = lab.shear(cfg), lab.critical_point(cfg), lab.eigenpair(cfg), lab.track(cfg)
        eps_list = [1.0 / (cp.q * k) for k in cfg.mode.residual_k]
        study = residual_scaling_study(shear, cp, pair, eps_list, cfg.mode.residual_t, traj=traj,
                                       norm=WeightedNorm(cfg.mode.alpha), phi_radius=cfg.mode.phi_radius)
        rows = ((r["eps"], r["R1norm"], r["R2norm"], r["decomposition"]["R1"]["1"],
                 r["decomposition"]["R1"]["2"], r["decomposition"]["R1"]["3"]) for r in study["residual_t0"])
        artifacts = [writer.write_csv("residual/residual.csv", "residual", rows),
                     writer.write_svg("residual/residual.svg", reporting.residual_figure(study))]
        return {"study": study, "resolution": shear.grid.describe(), "artifacts": artifacts}

    def check(self, result, cfg):
        failures = []
        study = result["study"]
        total = study["eps_slopes"]["total"]
        if "slope" not in total:
            return [f"residual: eps fit failed ({total.get('error')})"]
        floor = 0.8 if cfg.shear.family == "special-quadratic" else -0.3
        if total["slope"] < floor:
            failures.append(f"residual: eps slope {total['slope']:.3f} < {floor}")
        if cfg.shear.family == "special-quadratic":
            t_slope = study["t_slope"].get("slope")
            if t_slope is None or t_slope < 1.8:
                failures.append(f"residual: small-t slope {t_slope} < 1.8")
        return failures


class LinearRunner(StageRunner):
    name = "evolve-linear"

    def execute(self, lab, cfg, writer, workers):
        shear = lab.shear(cfg)
        k = max(cfg.mode.ks)
        seed = lab.seeds(cfg)(k)
        norm = WeightedNorm(cfg.mode.alpha)
        window = tuple(cfg.evolve.window)
        traj = evolve_linear(seed, shear, cfg.evolve.T, cfg.evolve.dt, samples=cfg.evolve.samples)
        sigma, r2 = measure_growth(traj, norm, window)
        frozen_sigma = None
        if cfg.evolve.frozen_too:
            frozen = evolve_linear(seed, shear, cfg.evolve.T, traj.dt, frozen=True, samples=cfg.evolve.samples)
            frozen_sigma, _ = measure_growth(frozen, norm, window)
        predicted = None
        if cfg.shear.family != "structured":
            cp, pair = lab.critical_point(cfg), lab.eigenpair(cfg)
            predicted = float(predicted_sigma0(pair.tau_t, cp.wpp) * np.sqrt(cp.q * k))
        norms = traj.norms(norm)
        fitted_line = norms[0] * np.exp(sigma * traj.times)
        artifacts = [
            writer.write_csv("evolve-linear/norm.csv", "evolve-linear", traj.rows(norm)),
            writer.write_svg("evolve-linear/norm.svg",
                             reporting.norm_figure(traj.times, norms, f"mode k={k}", fitted_line)),
        ]
        return {"k": k, "k1": traj.k1, "k2": traj.k2, "sigma": sigma, "r2": r2, "fitted": r2 >= 0.98,
                "frozen_sigma": frozen_sigma, "predicted": predicted, "energy_balance": energy_balance(traj),
                "resolution": {**shear.grid.describe(), "dt": traj.dt}, "artifacts": artifacts}

    def check(self, result, cfg):
        if not result["fitted"]:
            return [f"evolve-linear: growth fit R^2 {result['r2']:.3f} < 0.98"]
        return []


class SweepRunner(StageRunner):
    name = "sweep"

    def execute(self, lab, cfg, writer, workers):
        shear = lab.shear(cfg)
        structured = cfg.shear.family == "structured"
        cp = None if structured else lab.critical_point(cfg)
        tau_t = None if structured else lab.eigenpair(cfg).tau_t
        report = sweep(shear, cp, cfg.mode.ks, lab.seeds(cfg), cfg.evolve.T, cfg.evolve.dt,
                       window=tuple(cfg.evolve.window), norm=WeightedNorm(cfg.mode.alpha),
                       witness_m=tuple(cfg.mode.witness_m), workers=workers, tau_t=tau_t,
                       frozen_too=cfg.evolve.frozen_too, progress=True)
        result = report.as_dict()
        result["resolution"] = shear.grid.describe()
        result["artifacts"] = [writer.write_svg("sweep/sweep.svg", reporting.sweep_figure(report))]
        return result

    def check(self, result, cfg):
        fit = result["fit"]
        if "p" not in fit:
            return [f"sweep: power-law fit failed ({fit['error']['message']})"]
        failures = []
        if cfg.shear.family == "structured":
            if fit["ratio"] > 1.1:
                failures.append(f"sweep: max/min sigma {fit['ratio']:.3f} > 1.1")
            if fit["p"] > 0.1:
                failures.append(f"sweep: exponent {fit['p']:.3f} > 0.1")
            if result["flag"] != "stable":
                failures.append("sweep: structured shear flagged unstable")
            return failures
        if abs(fit["p"] - 0.5) > 0.1:
            failures.append(f"sweep: exponent {fit['p']:.3f} outside 0.5 +- 0.1")
        c_pred = result["prediction"].get("c")
        if c_pred and abs(fit["c"] - c_pred) > 0.2 * abs(c_pred):
            failures.append(f"sweep: prefactor {fit['c']:.4g} not within 20% of {c_pred:.4g}")
        witnesses = [e["witnesses"] for e in result["entries"] if e["error"] is None]
        for m in map(str, cfg.mode.witness_m):
            values = [w[m] for w in witnesses if m in w]
            if any(b <= a for a, b in zip(values, values[1:])):
                failures.append(f"sweep: operator-norm witness m={m} does not increase with k")
        return failures


class TransformedRunner(StageRunner):
    name = "evolve-transformed"

    def execute(self, lab, cfg, writer, workers):
        shear = lab.shear(cfg)
        structured = cfg.shear.family == "structured"
        norm = WeightedNorm(cfg.mode.alpha)
        section = cfg.transformed
        entries, artifacts = [], []
        for k in sorted(section.ks):
            tm0 = default_seed(shear.grid, k, structured=structured)
            traj = evolve_transformed(tm0, shear, section.T, section.dt, norm)
            entries.append(traj.summary())
            artifacts.append(writer.write_csv(f"evolve-transformed/k{k}.csv", "evolve-transformed", traj.rows()))
        first = default_seed(shear.grid, min(section.ks), structured=structured)
        physical = inverse_transform(first, shear, 0.0)
        back = inverse_transform(transform_monotone(physical, shear, 0.0), shear, 0.0)
        scale = np.linalg.norm(np.concatenate([physical.u, physical.v]))
        round_trip = float(np.linalg.norm(np.concatenate([back.u - physical.u, back.v - physical.v])) / scale)
        return {
            "entries": entries,
            "round_trip": round_trip,
            "two_route_gap": two_route_gap(first, shear, section.two_route_T),
            "resolution": shear.grid.describe(),
            "artifacts": artifacts,
        }

    def check(self, result, cfg):
        failures = []
        entries = result["entries"]
        by_k = {e["k"]: e for e in entries}
        for e in entries:
            if 2 * e["k"] in by_k:
                rho, rho2 = e["rho_hat"], by_k[2 * e["k"]]["rho_hat"]
                if rho > 0 and abs(rho2 - rho) > 0.15 * abs(rho):
                    failures.append(f"evolve-transformed: rho_hat moves {rho:.3g} -> {rho2:.3g} from k={e['k']}")
            if e["skew"] > 1e-10:
                failures.append(f"evolve-transformed: skew terms carry {e['skew']:.2e} of the energy rate")
        if cfg.shear.family == "structured" and len(entries) > 1:
            spread = _spread([e["max_slope"] for e in entries])
            if spread > 0.1:
                failures.append(f"evolve-transformed: structured slope varies {spread:.0%} with k")
        if result["two_route_gap"] > 1e-3:
            failures.append(f"evolve-transformed: two-route gap {result['two_route_gap']:.2e} > 1e-3")
        if result["round_trip"] > 1e-8:
            failures.append(f"evolve-transformed: round trip error {result['round_trip']:.2e} > 1e-8")
        return failures


class NonlinearRunner(StageRunner):
    name = "evolve-nonlinear"

    def execute(self, lab, cfg, writer, workers):
        shear = lab.shear(cfg)
        section = cfg.nonlinear
        structured = cfg.shear.family == "structured"
        c = cfg.shear.resolved_params().get("c") if structured else None
        ratio = section.ratio if section.ratio is not None else c
        state = low_mode_seed(shear.grid, section.M, seed=cfg.seed, kmax=section.kmax, ratio=ratio)
        study = linearization_study(state, shear, section.deltas, section.T, section.dt, m=section.m)
        gap = None
        if structured:
            traj = evolve_nonlinear(state, shear, max(section.deltas), section.T, section.dt, m=section.m)
            gap = proportional_gap(traj, c)
        return {**study, "proportional_gap": gap,
                "resolution": {**shear.grid.describe(), "M": section.M}, "artifacts": []}

    def check(self, result, cfg):
        failures = []
        for ratio, expected in zip(result["ratios"], result["delta_ratios"]):
            if abs(ratio / expected - 1.0) > 0.3:
                failures.append(f"evolve-nonlinear: distance ratio {ratio:.3f} vs delta ratio {expected:.3f}")
        return failures


RUNNERS = {runner.name: runner for runner in (
    EigenRunner(), ModeRunner(), ResidualRunner(), LinearRunner(), SweepRunner(), TransformedRunner(),
    NonlinearRunner(),
)}


def _key(*parts):
    return json.dumps(parts, sort_keys=True, default=str)


class LabMaster:
    """
    The 'Control Tower'.
    Implements the Singleton Pattern so shear trajectories, critical points
    and eigenpairs are computed once per configuration and shared read-only.
    """
    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        with cls._lock:
            if cls._instance is None:
                cls._instance = super(LabMaster, cls).__new__(cls)
                cls._instance._initialize()
        return cls._instance

    def _initialize(self):
        logger.info("Initializing LabMaster control tower")
        self._cache = {}
        self._cache_lock = threading.RLock()
        self.workers = getattr(settings, "LAB_WORKERS", 1)
        self.db_ready = True

    def reset(self):
        """Drops every cached result."""
        with self._cache_lock:
            self._cache.clear()

    def _cached(self, key, build):
        with self._cache_lock:
            if key not in self._cache:
                try:
                    self._cache[key] = (True, build())
                except LabError as exc:
                    self._cache[key] = (False, exc)
            ok, value = self._cache[key]
        if not ok:
            raise value
        return value

    # -- shared resources -------------------------------------------------

    def shear_pair(self, cfg):
        sh = cfg.shear
        return self._cached(_key("pair", sh.family, sh.resolved_params()),
                            lambda: build_family(sh.family, sh.resolved_params()))

    def grid(self, cfg):
        g, sh = cfg.grid, cfg.shear

        def build():
            if not g.stretch:
                return make_grid(g.n, g.z_max)
            center = g.stretch_center
            if center is None:
                params = sh.resolved_params()
                if "z0" in params:
                    center = params["z0"]
                else:
                    coarse = make_grid(g.n, g.z_max)
                    points = find_critical_points(self.shear_pair(cfg).sample(coarse), cfg.mode.q_max,
                                                  cfg.mode.tol_nondeg_rel)
                    center = points[0].z0 if points else None
            if center is None:
                return make_grid(g.n, g.z_max)
            return make_grid(g.n, g.z_max, stretch=(center, g.stretch_width))

        return self._cached(_key("grid", g.__dict__, sh.family, sh.resolved_params(), cfg.mode.q_max), build)

    def shear(self, cfg):
        sh = cfg.shear
        return self._cached(
            _key("shear", sh.__dict__, sh.resolved_params(), cfg.grid.__dict__, cfg.mode.q_max),
            lambda: evolve_shear(self.shear_pair(cfg), self.grid(cfg), sh.t_end, sh.dt, sh.frozen),
        )

    def critical_point(self, cfg):
        m = cfg.mode

        def build():
            state = self.shear(cfg).state_at(0.0)
            points = find_critical_points(state, m.q_max, m.tol_nondeg_rel)
            if len(points) <= m.critical_index:
                raise DegeneracyError(f"found {len(points)} non-degenerate critical point(s); "
                                      f"critical_index={m.critical_index}")
            return points[m.critical_index]

        return self._cached(_key("cp", cfg.shear.__dict__, cfg.shear.resolved_params(), cfg.grid.__dict__,
                                 m.q_max, m.tol_nondeg_rel, m.critical_index), build)

    def eigenpair(self, cfg):
        e = cfg.eigen
        return self._cached(
            _key("eigen", e.__dict__),
            lambda: solve_canonical(-1, e.L, e.n, max_seeds=e.max_seeds, re_range=e.re_range,
                                    im_range=e.im_range, shape=e.shape),
        )

    def track(self, cfg):
        m = cfg.mode
        return self._cached(
            _key("track", cfg.shear.__dict__, cfg.shear.resolved_params(), cfg.grid.__dict__,
                 m.q_max, m.tol_nondeg_rel, m.critical_index),
            lambda: track_critical_point(self.shear(cfg), self.critical_point(cfg), m.tol_nondeg_rel),
        )

    def seeds(self, cfg):
        shear = self.shear(cfg)
        if cfg.shear.family == "structured":
            c = cfg.shear.resolved_params()["c"]
            frac = Fraction(c).limit_denominator(cfg.mode.q_max)
            return StructuredSeeds(shear.grid, frac.numerator, frac.denominator, c)
        return ModeSeeds(shear, self.critical_point(cfg), self.eigenpair(cfg), self.track(cfg),
                         cfg.mode.phi_radius)

    # -- audit trail --------------------------------------------------------

    def _audit(self, action, *args, **kwargs):
        if not self.db_ready:
            return None
        try:
            return action(*args, **kwargs)
        except DatabaseError:
            logger.warning("Database tables not ready. Audit trail skipped.")
            self.db_ready = False
            return None

    def _log(self, run_id, stage, status, error_code=None, details=None):
        self._audit(StageLog.objects.create, run_id=run_id, stage=stage, status=status,
                    error_code=error_code, details=details)

    # -- runs -----------------------------------------------------------------

    def provenance(self, cfg):
        try:
            grid = self.grid(cfg).describe()
        except LabError:
            grid = None
        return {
            "code_version": prandtl_lab.__version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "grid": grid,
            "eigen": {"L": cfg.eigen.L, "n": cfg.eigen.n},
            "seed": cfg.seed,
        }

    def run(self, cfg: ExperimentConfig, stage, out_dir=None, check=False, workers=None):
        """
        Runs one stage (or the full pipeline), writes every artifact and
        report.json below the output directory and returns (report, exit_code).
        """
        if stage != FULL_STAGE and stage not in STAGES:
            raise ParameterError(f"unknown stage {stage!r}; choose one of {', '.join(STAGES + (FULL_STAGE,))}")
        stages = FULL_PIPELINE if stage == FULL_STAGE else (stage,)
        workers = self.workers if workers is None else max(1, int(workers))
        out_dir = Path(out_dir or cfg.output.dir)
        writer = reporting.ArtifactWriter(out_dir, svg=cfg.output.svg)
        config_hash = cfg.config_hash()
        writer.write_text("config.yml", dump_config(cfg))

        self.db_ready = True
        row = self._audit(RunReport.objects.create, config_hash=config_hash, stage=stage, out_dir=str(out_dir))
        run_id = row.run_id if row is not None else "offline"
        logger.info("run %s: stage %s, config %s, output %s", run_id, stage, config_hash[:12], out_dir)

        results, checks, timings, exit_code = {}, {}, {}, 0
        for name in stages:
            runner = RUNNERS[name]
            self._log(run_id, name, "STARTED")
            started = time.perf_counter()
            try:
                payload = runner.execute(self, cfg, writer, workers)
                results[name] = {"stage": name, "status": "ok", "error": None, **payload}
                self._log(run_id, name, "COMPLETED")
            except SkipStage as exc:
                results[name] = {"stage": name, "status": "skipped", "error": None, "reason": str(exc),
                                 "resolution": None, "artifacts": []}
                self._log(run_id, name, "SKIPPED", details=str(exc))
                logger.info("stage %s skipped: %s", name, exc)
            except LabError as exc:
                results[name] = {"stage": name, "status": "failed", "error": exc.as_dict(),
                                 "resolution": None, "artifacts": []}
                self._log(run_id, name, "FAILED", error_code=exc.code, details=exc.message)
                logger.error("stage %s failed [%s]: %s", name, exc.code, exc.message)
                exit_code = max(exit_code, exc.exit_code)
            timings[name] = time.perf_counter() - started
            if check and results[name]["status"] == "ok":
                failures = runner.check(results[name], cfg)
                checks[name] = {"passed": not failures, "failures": failures}
                if failures:
                    self._log(run_id, name, "CHECK_FAILED", error_code="acceptance", details="; ".join(failures))
                    for failure in failures:
                        logger.error("check failed: %s", failure)
                    exit_code = max(exit_code, 4)

        self._shear_artifact(cfg, writer, stages)
        provenance = self.provenance(cfg)
        manifest = writer.manifest_listing()
        report = reporting.report_document(config_hash, results, manifest, provenance, checks)
        (out_dir / REPORT_FILE).write_text(reporting.dumps(report), encoding="utf-8")
        logger.info("run %s finished with exit code %d (%d artifacts)", run_id, exit_code, len(manifest))

        if row is not None:
            row.finished = timezone.now()
            row.exit_code = exit_code
            row.manifest = manifest
            row.provenance = reporting.jsonable(provenance)
            row.timings = timings
            self._audit(row.save)
        return report, exit_code

    def _shear_artifact(self, cfg, writer, stages):
        """The background trajectory, when this run used one."""
        if stages == ("eigen",):
            return
        try:
            shear = self.shear(cfg)
        except LabError:
            return
        writer.write_csv("shear.csv", "shear", shear.rows(cfg.output.csv_every))
