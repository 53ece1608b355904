"""Steady-state search: warm start, homotopy continuation over the phonon
bath, adaptive sweeping, polishing, and multi-criterion certification."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from nemstn.diagnostics import (
    ObservableBundle,
    TorotropyOptions,
    currents,
    dot_occupation,
    observable_bundle,
    reduce_phonon,
)
from nemstn.liouville import (
    Liouvillian,
    SiteChain,
    build_left_vacuum,
    build_liouvillian,
    build_site_chain,
)
from nemstn.model import ModelSpec
from nemstn.tn_core import (
    QuadraticFormMinimizer,
    SweepOptions,
    TensorTrain,
    apply_operator,
    inner,
    residual_norm,
)


class CutoffInsufficientError(RuntimeError):
    """The steady state puts too much weight on the top Fock state; the
    calculation must be repeated with a larger phonon cutoff."""

    def __init__(self, message: str, result: "NessResult"):
        super().__init__(message)
        self.result = result


@dataclass
class SolverOptions:
    sweep: SweepOptions = field(default_factory=SweepOptions)
    liouvillian_tol: float = 1e-12
    bond_ceiling: int = 6000
    max_stage_sweeps: int = 12
    min_stage_sweeps: int = 2
    stage_rtol: float = 0.02
    polish_sweeps: int = 18
    drift_window: int = 3
    residual_accept_rel: float = 1e-6
    residual_accept_floor: float = 1e-8
    imbalance_abs: float = 1e-4
    imbalance_rel: float = 1e-3
    drift_tol: float = 1e-3
    top_weight_tol: float = 1e-6
    warmup_chi: int = 48
    max_stages: int = 6
    torotropy: TorotropyOptions = field(default_factory=TorotropyOptions)


@dataclass
class HomotopySchedule:
    stages: tuple[ModelSpec, ...]
    ramp_rule: str

    @property
    def n_stages(self) -> int:
        return len(self.stages)


@dataclass
class ConvergenceCertificate:
    residual: float
    residual_threshold: float
    energy: float
    imbalance: float
    imbalance_relative: float
    drifts: dict
    top_state_weight: float
    chi_profile: tuple[int, ...]
    wall_time: float
    accepted: bool
    cutoff_insufficient: bool
    reasons: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "residual": self.residual,
            "residual_threshold": self.residual_threshold,
            "energy": self.energy,
            "imbalance": self.imbalance,
            "imbalance_relative": self.imbalance_relative,
            "drifts": dict(self.drifts),
            "top_state_weight": self.top_state_weight,
            "chi_profile": list(self.chi_profile),
            "wall_time": self.wall_time,
            "accepted": self.accepted,
            "cutoff_insufficient": self.cutoff_insufficient,
            "reasons": list(self.reasons),
        }


@dataclass
class NessResult:
    state: TensorTrain
    certificate: ConvergenceCertificate
    spec: ModelSpec
    bundle: ObservableBundle
    schedule_trace: list[dict]
    liouvillian: Liouvillian
    metadata: dict


def initialize_state(spec: ModelSpec, chain: SiteChain | None = None) -> TensorTrain:
    """Factorized thermal-like start: each auxiliary dimer at its Lindblad
    fixed-point occupation, the dot at half filling, the phonon block the
    vectorized truncated Gibbs state; trace normalized."""
    if chain is None:
        chain = build_site_chain(spec)
    cores = []

    def pair_cores(w00: float, w11: float):
        a = np.zeros((1, 2, 2), dtype=complex)
        a[0, 0, 0] = 1.0
        a[0, 1, 1] = 1.0
        b = np.zeros((2, 2, 1), dtype=complex)
        b[0, 0, 0] = w00
        b[1, 1, 0] = w11
        return [a, b]

    for s_phys, _, desc in chain.pairs():
        if desc.kind == "fermion":
            if desc.mode == "dot":
                cores.extend(pair_cores(0.5, 0.5))
            else:
                side = desc.mode.split(":")[0].split("_")[1]
                l = int(desc.mode.split(":")[1])
                lead = spec.lead_L if side == "L" else spec.lead_R
                f = lead.aux_modes[l].fermi_occupation
                cores.extend(pair_cores(1.0 - f, f))
        else:
            j = desc.significance
            if spec.t_ph == 0.0:
                w = 0.0
            else:
                w = math.exp(-spec.omega0 * 2.0 ** (j - 1) / spec.t_ph)
            # pair weights (1, w); the product over bits normalizes to the
            # truncated Gibbs partition function
            cores.extend(pair_cores(1.0 / (1.0 + w), w / (1.0 + w)))
    return TensorTrain(cores, center=0)


def _geometric_path(start: float, target: float, k_intervals: int) -> list[float]:
    if k_intervals == 0:
        return [target]
    floor = 1e-12
    s = max(start, floor)
    t = max(target, floor)
    path = list(np.exp(np.linspace(math.log(s), math.log(t), k_intervals + 1)))
    path[-1] = target
    path[0] = start
    return path


def make_schedule(target: ModelSpec, start_hint: ModelSpec | None = None,
                  max_stages: int = 6) -> HomotopySchedule:
    """Geometric ramp of (gamma_ph, t_ph) from easy values to the target.

    A warm start from a neighboring parameter point skips the ramp entirely.
    """
    if start_hint is not None:
        return HomotopySchedule(stages=(target,), ramp_rule="warm-start-hop")
    g_target = target.gamma_ph
    t_target = target.t_ph
    g_start = max(10.0 * g_target, 0.1 * target.omega0)
    t_start = max(10.0 * t_target, 0.1 * target.omega0)
    if g_target >= g_start:
        return HomotopySchedule(stages=(target,), ramp_rule="degenerate-ramp")
    ratio = g_start / max(g_target, 1e-12)
    k = max(1, math.ceil(math.log(ratio) / math.log(math.sqrt(10.0))))
    if k + 1 > max_stages:
        k = max(max_stages - 1, math.ceil(math.log(ratio) / math.log(10.0)))
    g_path = _geometric_path(g_start, g_target, k)
    t_path = _geometric_path(t_start, t_target, k)
    stages = tuple(target.replace(gamma_ph=g, t_ph=t)
                   for g, t in zip(g_path, t_path))
    return HomotopySchedule(stages=stages, ramp_rule="geometric")


def _trace_normalize(state: TensorTrain, chain: SiteChain) -> complex:
    vac = build_left_vacuum(chain)
    tr = inner(vac, state)
    if abs(tr) < 1e-12 * state.norm() * vac.norm():
        return tr
    i = state.center if state.center is not None else 0
    state.cores[i] = state.cores[i] / tr
    return tr


def _sweep_metrics(minimizer: QuadraticFormMinimizer, liou: Liouvillian) -> dict:
    state = minimizer.state
    chain, spec = liou.chain, liou.spec
    i_l, i_r, j_coh = currents(state, chain, spec)
    ps = reduce_phonon_safely(state, chain)
    metrics = {
        "I_L": i_l, "I_R": i_r, "J": j_coh,
        "imbalance": abs(i_l - j_coh),
        "n_d": dot_occupation(state, chain),
    }
    if ps is not None:
        p = ps.populations
        m = np.arange(len(p), dtype=float)
        n_mean = float(m @ p)
        n2 = float((m**2) @ p)
        var = n2 - n_mean**2
        metrics.update({
            "n_ph": n_mean,
            "fano": var / n_mean if n_mean > 0 else float("nan"),
            "g2": (n2 - n_mean) / n_mean**2 if n_mean > 0 else float("nan"),
            "top_weight": ps.top_state_weight,
        })
    return metrics


def reduce_phonon_safely(state, chain):
    try:
        tmp = state.copy()
        vac = build_left_vacuum(chain)
        tr = inner(vac, tmp)
        if tr == 0:
            return None
        i = tmp.center if tmp.center is not None else 0
        tmp.cores[i] = tmp.cores[i] / tr
        return reduce_phonon(tmp, chain, trace_tol=1e-6)
    except ValueError:
        return None


def _relative_drift(values: list[float], floor: float = 1e-12) -> float:
    window = [v for v in values if not math.isnan(v)]
    if len(window) < 2:
        return float("inf")
    scale = max(abs(v) for v in window)
    if scale <= floor:
        return 0.0
    return (max(window) - min(window)) / scale


def certify(liou: Liouvillian, minimizer: QuadraticFormMinimizer,
            history: list[dict], r_init: float, opts: SolverOptions,
            wall_time: float) -> ConvergenceCertificate:
    """Multi-criterion acceptance: residual, current balance, observable
    stability over the last sweeps, and the phonon-cutoff occupancy check."""
    if len(history) < opts.drift_window:
        raise ValueError(f"need at least {opts.drift_window} sweeps of history")
    state = minimizer.state
    energy = minimizer.energy()
    residual = math.sqrt(max(energy, 0.0))
    threshold = max(opts.residual_accept_rel * r_init, opts.residual_accept_floor)
    last = history[-1]
    imbalance = last["imbalance"]
    j_abs = abs(last["J"])
    imb_ok = imbalance <= max(opts.imbalance_abs, opts.imbalance_rel * j_abs)
    window = history[-opts.drift_window:]
    drifts = {key: _relative_drift([h.get(key, float("nan")) for h in window])
              for key in ("n_ph", "fano", "g2")}
    top_weight = last.get("top_weight", 0.0)
    reasons = []
    if residual > threshold:
        reasons.append(f"residual {residual:.3e} above threshold {threshold:.3e}")
    if not imb_ok:
        reasons.append(f"current imbalance {imbalance:.3e} too large")
    for key, d in drifts.items():
        if d > opts.drift_tol:
            reasons.append(f"{key} drift {d:.3e} over last {opts.drift_window} sweeps")
    cutoff_bad = top_weight > opts.top_weight_tol
    if cutoff_bad:
        reasons.append(f"top Fock-state weight {top_weight:.3e} exceeds "
                       f"{opts.top_weight_tol:.1e}")
    return ConvergenceCertificate(
        residual=residual,
        residual_threshold=threshold,
        energy=energy,
        imbalance=imbalance,
        imbalance_relative=imbalance / j_abs if j_abs > 0 else float("inf"),
        drifts=drifts,
        top_state_weight=top_weight,
        chi_profile=tuple(state.bond_dims),
        wall_time=wall_time,
        accepted=not reasons,
        cutoff_insufficient=cutoff_bad,
        reasons=tuple(reasons),
    )


def solve(target: ModelSpec, opts: SolverOptions | None = None,
          warm: NessResult | None = None, cutoff_policy: str = "raise",
          progress=None) -> NessResult:
    """Homotopy-continued variational steady-state solve (stage loop, then
    polishing with decaying perturbation, then certification).

    ``cutoff_policy`` is "raise" (abort on an insufficient phonon cutoff) or
    "flag" (return the result with the certificate marked).
    """
    if cutoff_policy not in ("raise", "flag"):
        raise ValueError("cutoff_policy must be 'raise' or 'flag'")
    opts = opts or SolverOptions()
    t0 = time.monotonic()
    chain = build_site_chain(target)
    warm_state = None
    warm_hint = None
    if warm is not None and warm.state.n_sites == chain.n_sites \
            and warm.spec.phonon_cutoff_M == target.phonon_cutoff_M:
        warm_state = warm.state.copy()
        warm_hint = warm.spec
    schedule = make_schedule(target, warm_hint, opts.max_stages)
    init = initialize_state(target, chain)
    target_liou = build_liouvillian(target, chain, tol=opts.liouvillian_tol,
                                    bond_ceiling=opts.bond_ceiling)
    r_init = residual_norm(target_liou.train, init)
    state = warm_state if warm_state is not None else init.copy()
    trace: list[dict] = []
    history: list[dict] = []
    minimizer = None
    for k, stage_spec in enumerate(schedule.stages):
        final_stage = k == schedule.n_stages - 1
        liou = target_liou if stage_spec == target else build_liouvillian(
            stage_spec, chain, tol=opts.liouvillian_tol, bond_ceiling=opts.bond_ceiling)
        stage_sweep = SweepOptions(**{**opts.sweep.__dict__})
        if not final_stage:
            stage_sweep.chi_max = min(opts.sweep.chi_max, opts.warmup_chi)
        minimizer = QuadraticFormMinimizer(liou.train, state, stage_sweep)
        history = []
        budget = opts.polish_sweeps if final_stage else opts.max_stage_sweeps
        prev = None
        for sweep_idx in range(budget):
            rec = minimizer.sweep()
            _trace_normalize(minimizer.state, chain)
            metrics = _sweep_metrics(minimizer, liou)
            metrics["energy"] = rec.energy
            metrics["residual"] = math.sqrt(max(rec.energy, 0.0))
            history.append(metrics)
            record = {
                "stage": k, "sweep": sweep_idx, "energy": rec.energy,
                "residual": metrics["residual"],
                "chi_max": rec.chi_max_reached,
                "discarded_weight": rec.total_discarded,
                "imbalance": metrics["imbalance"],
                "noise": rec.noise,
            }
            trace.append(record)
            if progress is not None:
                progress(record)
            if final_stage:
                done = (len(history) >= opts.drift_window
                        and rec.noise == 0.0
                        and metrics["residual"] <= max(
                            opts.residual_accept_rel * r_init,
                            opts.residual_accept_floor)
                        and all(_relative_drift(
                            [h.get(key, float("nan"))
                             for h in history[-opts.drift_window:]]) <= opts.drift_tol
                            for key in ("n_ph", "fano", "g2")))
                if done:
                    break
            else:
                floor = max(opts.residual_accept_rel * r_init,
                            opts.residual_accept_floor)
                if sweep_idx + 1 >= opts.min_stage_sweeps:
                    if metrics["residual"] <= floor:
                        break
                    if prev is not None:
                        r_now, r_prev = metrics["residual"], prev["residual"]
                        stable_r = abs(r_now - r_prev) <= opts.stage_rtol * max(
                            r_now, floor)
                        imb_scale = max(metrics["imbalance"], prev["imbalance"], 1e-300)
                        stable_i = (abs(metrics["imbalance"] - prev["imbalance"])
                                    <= opts.stage_rtol * imb_scale
                                    or metrics["imbalance"] <= opts.imbalance_abs)
                        if stable_r and stable_i:
                            break
                prev = metrics
        state = minimizer.state
    while len(history) < opts.drift_window:
        rec = minimizer.sweep()
        _trace_normalize(minimizer.state, chain)
        m = _sweep_metrics(minimizer, target_liou)
        m["energy"] = rec.energy
        m["residual"] = math.sqrt(max(rec.energy, 0.0))
        history.append(m)
    wall = time.monotonic() - t0
    cert = certify(target_liou, minimizer, history, r_init, opts, wall)
    final = minimizer.state.copy()
    _trace_normalize(final, chain)
    bundle = observable_bundle(final, target_liou, opts.torotropy)
    result = NessResult(
        state=final, certificate=cert, spec=target, bundle=bundle,
        schedule_trace=trace, liouvillian=target_liou,
        metadata={
            "svd_convention": "squared-relative",
            "r_init": r_init,
            "ramp_rule": schedule.ramp_rule,
            "n_stages": schedule.n_stages,
            "a_mode": minimizer.mode,
        })
    if cert.cutoff_insufficient and cutoff_policy == "raise":
        raise CutoffInsufficientError(
            f"top Fock-state weight {cert.top_state_weight:.3e} exceeds "
            f"{opts.top_weight_tol:.1e}; repeat with a larger phonon cutoff",
            result)
    return result
