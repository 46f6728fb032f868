"""Inline validation for optimize.py."""
import sys
import numpy as np

sys.path.insert(0, "/root/pkg/src")

from qestim._linalg import pauli
from qestim.scheme import (
    ControlSpec, DecayChannel, HamiltonianSpec, MeasurementSpec, ProbeState,
    Scheme, make_general_scheme, plus_state, sic_povm,
)
from qestim.dynamics import LindbladSpec, evolve
from qestim.metrology import qfim, cfim
from qestim.optimize import (
    ControlOpt, StateOpt, MeasurementOpt, CompOpt, ObjectiveConfig,
    GRAPE, PSO, DE, optimize, _Problem, _grape_value_and_grad,
)

sx, sy, sz = pauli()
I2 = np.eye(2)
rng = np.random.default_rng(5)

def qubit_scheme(gamma=0.0, n_seg=4, tspan=None, povm=None, ctrl0=None):
    omega = 1.0
    ham = HamiltonianSpec.parametric(
        lambda th: 0.5 * th * sz, lambda th: [0.5 * sz], omega
    )
    if tspan is None:
        tspan = np.linspace(0.0, 2.0, 9)
    ctrl = ControlSpec(
        hc=(sx, sy),
        ctrl=ctrl0 if ctrl0 is not None else np.zeros((2, n_seg)),
        bounds=(-2.0, 2.0),
    )
    decays = (DecayChannel(sz, gamma),) if gamma > 0 else ()
    spec = LindbladSpec(ham, tspan, controls=ctrl, decays=decays, dyn_method="expm")
    meas = (povm if isinstance(povm, MeasurementSpec) else MeasurementSpec(povm)) if povm is not None else None
    return make_general_scheme(plus_state(), spec, measurement=meas)

# ---- 1. GRAPE gradient vs central FD, single-param QFI
sch = qubit_scheme(gamma=0.1, ctrl0=rng.uniform(-0.5, 0.5, (2, 4)))
prob = _Problem(sch, ControlOpt(), ObjectiveConfig(kind="QFIM"))
x = prob.x0.copy()
v, g = _grape_value_and_grad(prob, x)
h = 1e-6
gfd = np.empty_like(g)
for i in range(len(x)):
    xp = x.copy(); xp[i] += h
    xm = x.copy(); xm[i] -= h
    gfd[i] = (prob.value(xp) - prob.value(xm)) / (2 * h)
rel = np.max(np.abs(g - gfd)) / max(np.max(np.abs(gfd)), 1e-12)
print(f"1a. QFI grad vs FD rel err: {rel:.3e}  {'OK' if rel < 1e-4 else 'FAIL'}")

# single-param CFI gradient
povmz = (np.outer([1,0],[1,0]).astype(complex), np.outer([0,1],[0,1]).astype(complex))
schc = qubit_scheme(gamma=0.1, povm=povmz, ctrl0=rng.uniform(-0.5, 0.5, (2, 4)))
probc = _Problem(schc, ControlOpt(), ObjectiveConfig(kind="CFIM"))
x = probc.x0.copy()
v, g = _grape_value_and_grad(probc, x)
gfd = np.empty_like(g)
for i in range(len(x)):
    xp = x.copy(); xp[i] += h
    xm = x.copy(); xm[i] -= h
    gfd[i] = (probc.value(xp) - probc.value(xm)) / (2 * h)
rel = np.max(np.abs(g - gfd)) / max(np.max(np.abs(gfd)), 1e-12)
print(f"1b. CFI grad vs FD rel err: {rel:.3e}  {'OK' if rel < 1e-4 else 'FAIL'}")

# ---- 1c. multi-param Tr(WF^-1) gradient
ham2 = HamiltonianSpec.parametric(
    lambda th: 0.5 * (th[0] * sz + th[1] * sx),
    lambda th: [0.5 * sz, 0.5 * sx],
    [1.0, 0.5],
)
ctrl2 = ControlSpec(hc=(sy,), ctrl=rng.uniform(-0.5, 0.5, (1, 4)), bounds=(-2, 2))
spec2 = LindbladSpec(ham2, np.linspace(0, 1.5, 9), controls=ctrl2,
                     decays=(DecayChannel(sz, 0.05),), dyn_method="expm")
sch2 = make_general_scheme(plus_state(), spec2)
prob2 = _Problem(sch2, ControlOpt(), ObjectiveConfig(kind="QFIM"))
x = prob2.x0.copy()
v, g = _grape_value_and_grad(prob2, x)
gfd = np.empty_like(g)
for i in range(len(x)):
    xp = x.copy(); xp[i] += h
    xm = x.copy(); xm[i] -= h
    gfd[i] = (prob2.value(xp) - prob2.value(xm)) / (2 * h)
rel = np.max(np.abs(g - gfd)) / max(np.max(np.abs(gfd)), 1e-12)
print(f"1c. Tr(WF^-1) grad vs FD rel err: {rel:.3e}  {'OK' if rel < 1e-4 else 'FAIL'}")

# multi-param CFIM objective gradient
sic2 = sic_povm(2)  # already a MeasurementSpec
sch2c = make_general_scheme(plus_state(), spec2, measurement=sic2)
prob2c = _Problem(sch2c, ControlOpt(), ObjectiveConfig(kind="CFIM"))
x = prob2c.x0.copy()
v, g = _grape_value_and_grad(prob2c, x)
gfd = np.empty_like(g)
for i in range(len(x)):
    xp = x.copy(); xp[i] += h
    xm = x.copy(); xm[i] -= h
    gfd[i] = (prob2c.value(xp) - prob2c.value(xm)) / (2 * h)
rel = np.max(np.abs(g - gfd)) / max(np.max(np.abs(gfd)), 1e-12)
print(f"1d. CFIM Tr(WF^-1) grad vs FD rel err: {rel:.3e}  {'OK' if rel < 1e-4 else 'FAIL'}")

# ---- 2. GRAPE run from a degraded random control: monotone log, real ascent
schg = qubit_scheme(gamma=0.1, n_seg=8,
                    ctrl0=np.random.default_rng(0).uniform(-1, 1, (2, 8)))
base = qfim(schg).values[-1]
best, rec = optimize(schg, ControlOpt(), GRAPE(max_episode=60))
mono = np.all(np.diff(rec.objectives) >= -1e-12)
print(f"2.  GRAPE: start QFI {base:.6f} -> {rec.best_objective:.6f}, "
      f"monotone={mono}  {'OK' if rec.best_objective > base + 0.05 and mono else 'FAIL'}")

# objective on returned scheme equals final logged value
vcheck = _Problem(best, ControlOpt(), ObjectiveConfig(kind="QFIM")).v0
dv = abs(vcheck - rec.best_objective)
print(f"3.  returned-scheme objective matches log: |dv|={dv:.3e}  {'OK' if dv < 1e-10 else 'FAIL'}")

# bounds respected
amp = best.param.controls.amplitudes(best.param.tspan)
inb = np.all(amp >= -2 - 1e-12) and np.all(amp <= 2 + 1e-12)
print(f"4.  bounds respected: {'OK' if inb else 'FAIL'}")

# ---- 5. PSO determinism (bit-identical logs)
s1, r1 = optimize(schg, ControlOpt(), PSO(max_episode=8, seed=42))
s2, r2 = optimize(schg, ControlOpt(), PSO(max_episode=8, seed=42))
same = np.array_equal(r1.objectives, r2.objectives) and np.array_equal(
    r1.best_variables["controls"], r2.best_variables["controls"])
print(f"5.  PSO seeded determinism: {'OK' if same else 'FAIL'}")

d1, q1 = optimize(schg, ControlOpt(), DE(max_episode=8, seed=42))
d2, q2 = optimize(schg, ControlOpt(), DE(max_episode=8, seed=42))
same = np.array_equal(q1.objectives, q2.objectives) and np.array_equal(
    q1.best_variables["controls"], q2.best_variables["controls"])
print(f"6.  DE seeded determinism: {'OK' if same else 'FAIL'}")

# DE/PSO logs monotone nondecreasing best-so-far (max direction)
mono = np.all(np.diff(r1.objectives) >= -1e-15) and np.all(np.diff(q1.objectives) >= -1e-15)
print(f"7.  PSO/DE logs monotone: {'OK' if mono else 'FAIL'}")

# ---- 8. StateOpt on noiseless qubit: QFI -> t^2 (optimum on equator)
hamz = HamiltonianSpec.parametric(lambda th: 0.5 * th * sz, lambda th: [0.5 * sz], 1.0)
specz = LindbladSpec(hamz, np.linspace(0, 2, 5), dyn_method="expm")
worst = make_general_scheme(ProbeState.from_array([1.0, 0.0]), specz)
bests, recs = optimize(worst, StateOpt(), DE(max_episode=150, seed=3))
t = 2.0
print(f"8.  StateOpt QFI {recs.best_objective:.6f} vs t^2={t*t:.6f}  "
      f"{'OK' if recs.best_objective > 0.99 * t * t else 'FAIL'}")
nrm = abs(np.linalg.norm(bests.probe.data) - 1.0)
print(f"    probe normalized: |1-norm|={nrm:.2e}  {'OK' if nrm < 1e-8 else 'FAIL'}")

# ---- 9. MeasurementOpt(Projection): CFI -> QFI, POVM valid
schm = qubit_scheme(gamma=0.0, n_seg=1, povm=sic_povm(2))
qv = qfim(schm).values[-1]
bestm, recm = optimize(schm, MeasurementOpt(mtype="Projection"),
                       DE(max_episode=200, seed=11), ObjectiveConfig(kind="CFIM"))
povm = bestm.measurement.povm
comp = np.max(np.abs(sum(povm) - np.eye(2)))
print(f"9.  ProjOpt CFI {recm.best_objective:.6f} <= QFI {qv:.6f}, gap "
      f"{qv - recm.best_objective:+.2e}, completeness {comp:.2e}  "
      f"{'OK' if recm.best_objective <= qv + 1e-8 and comp < 1e-8 and recm.best_objective > 0.9 * qv else 'FAIL'}")

# ---- 10. LC and Rotation measurement blocks produce valid POVMs
bestl, recl = optimize(schm, MeasurementOpt(mtype="LC"),
                       DE(max_episode=40, seed=7), ObjectiveConfig(kind="CFIM"))
compl_ = np.max(np.abs(sum(bestl.measurement.povm) - np.eye(2)))
bestr, recr = optimize(schm, MeasurementOpt(mtype="Rotation"),
                       DE(max_episode=40, seed=7), ObjectiveConfig(kind="CFIM"))
compr = np.max(np.abs(sum(bestr.measurement.povm) - np.eye(2)))
okl = compl_ < 1e-8 and recl.best_objective <= qv + 1e-8
okr = compr < 1e-8 and recr.best_objective <= qv + 1e-8
print(f"10. LC completeness {compl_:.2e} CFI {recl.best_objective:.4f}; "
      f"Rotation completeness {compr:.2e} CFI {recr.best_objective:.4f}  "
      f"{'OK' if okl and okr else 'FAIL'}")

# ---- 11. CompOpt SCM runs and improves over start
schsm = qubit_scheme(gamma=0.1, n_seg=4, povm=sic_povm(2))
start_cfi = cfim(schsm).values[-1]
bsc, rsc = optimize(schsm, CompOpt(type="SCM"), DE(max_episode=30, seed=9),
                    ObjectiveConfig(kind="CFIM"))
print(f"11. CompOpt SCM CFI {start_cfi:.4f} -> {rsc.best_objective:.4f}  "
      f"{'OK' if rsc.best_objective >= start_cfi - 1e-9 else 'FAIL'}")

# ---- 12. error paths
try:
    optimize(schm, MeasurementOpt(), DE(max_episode=3), ObjectiveConfig(kind="QFIM"))
    print("12a. FAIL (no error for QFIM measurement opt)")
except Exception as e:
    print(f"12a. measurement+QFIM rejected: OK ({type(e).__name__})")
try:
    optimize(schg, StateOpt(), GRAPE(max_episode=3))
    print("12b. FAIL (GRAPE accepted StateOpt)")
except Exception as e:
    print(f"12b. GRAPE StateOpt rejected: OK ({type(e).__name__})")
try:
    PSO(population=1)
    print("12c. FAIL")
except Exception:
    print("12c. population>=2 enforced: OK")

# non-finite initial objective -> error: two params sharing one generator,
# F is exactly rank one so Tr(W F^-1) = inf at the initial point.
hdeg = HamiltonianSpec.parametric(
    lambda th: 0.5 * (th[0] + th[1]) * sz,
    lambda th: [0.5 * sz, 0.5 * sz],
    [1.0, 0.5],
)
specdeg = LindbladSpec(hdeg, np.linspace(0, 1, 3), dyn_method="expm")
schdeg = make_general_scheme(plus_state(), specdeg)
try:
    _Problem(schdeg, StateOpt(), ObjectiveConfig(kind="QFIM"))
    print("12d. FAIL (no error for non-finite initial objective)")
except Exception as e:
    print(f"12d. non-finite initial objective rejected: OK ({type(e).__name__})")

# ---- 13. savefile history + file outputs
import tempfile, os, glob
with tempfile.TemporaryDirectory() as td:
    _, rh = optimize(schg, ControlOpt(), DE(max_episode=4, seed=1),
                     savefile=True, out_dir=td)
    files = sorted(os.listdir(td))
    ok = (rh.history is not None and len(rh.history) == len(rh.objectives)
          and any(f.endswith(".csv") for f in files)
          and any(f.endswith(".json") for f in files))
    print(f"13. savefile history len {len(rh.history)} == log len {len(rh.objectives)}, "
          f"files {files}  {'OK' if ok else 'FAIL'}")
    _, rn = optimize(schg, ControlOpt(), DE(max_episode=4, seed=1), savefile=False)
    print(f"    savefile=False history is None: {'OK' if rn.history is None else 'FAIL'}")

# ---- 14. convergence flag on flat objective
# no-control, no-noise scheme where DE can't improve past exact optimum quickly:
# use max_episode large on tiny problem; check reason strings exist
_, rc = optimize(schm, MeasurementOpt(mtype="LC"), DE(max_episode=1000, seed=2),
                 ObjectiveConfig(kind="CFIM"))
print(f"14. converged={rc.converged} after {len(rc.objectives)} iters, reason={rc.reason!r}")
