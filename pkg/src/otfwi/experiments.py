"""Experiment drivers behind the ``otfwi`` commands.

Every ``run_*`` function takes a validated :class:`ExperimentConfig` and an
output directory, writes its artifacts (CSV and binary grids/gathers) and
returns the computed arrays so tests can inspect them directly.
"""

from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .encoding import EncodingConfig
from .misfit import L2, W2, evaluate, forward_gathers, model_gradient, l2_misfit
from .optim import OptimizerConfig, minimize
from .ot import TimeGrid, displacement_interpolation, transport_cost, transport_gradient
from .storage import (
    read_gather,
    read_grid,
    write_csv,
    write_gather,
    write_grid,
    write_grid_array,
    write_history,
)
from .wave import (
    Acquisition,
    CFLError,
    GeometryError,
    SlownessModel,
    WaveSolver,
    bandpass,
    ricker,
)


class CheckFailed(RuntimeError):
    """A numerical check run by a command did not pass."""


# models ---------------------------------------------------------------------

def depth_axis(nz, dz):
    return np.arange(nz) * dz


def linear_gradient_model(nx, nz, dx, dz, v0, alpha, water_depth=50.0, water_velocity=1500.0):
    """Water layer over ``v0 + alpha * z`` (z in meters from the surface)."""
    z = depth_axis(nz, dz)
    v = np.where(z < water_depth, water_velocity, v0 + alpha * z)
    return SlownessModel.from_velocity(np.tile(v, (nx, 1)), dx, dz)


def layered_model(nx, nz, dx, dz, velocities, interfaces):
    """Flat layers; ``interfaces`` are the top depths of the layers, the first 0."""
    z = depth_axis(nz, dz)
    layer = np.searchsorted(np.asarray(interfaces), z, side="right") - 1
    v = np.asarray(velocities, dtype=float)[layer]
    return SlownessModel.from_velocity(np.tile(v, (nx, 1)), dx, dz)


def smooth_model(model, sigma):
    """Gaussian smoothing of the velocity with ``sigma`` in grid cells."""
    if sigma <= 0:
        return model
    v = gaussian_filter(model.velocity, sigma, mode="nearest")
    return SlownessModel.from_velocity(v, model.dx, model.dz)


def starting_model(true, sigma, fixed_depth=0.0):
    """Smoothed ``true`` with the cells above ``fixed_depth`` (m) kept exact.

    Returns the model and the mask of kept cells, which an inversion should
    hold fixed (a known water layer, typically).
    """
    start = smooth_model(true, sigma)
    fixed = np.zeros(true.shape, bool)
    fixed[:, depth_axis(true.shape[1], true.dz) < fixed_depth] = True
    m = np.where(fixed, true.m, start.m)
    return true.with_m(m), (fixed if fixed.any() else None)


def build_model(cfg):
    p = cfg["model"]
    if p["source"] == "file":
        model = read_grid(cfg.resolve(p["path"]))
    elif p["builder"] == "homogeneous":
        model = SlownessModel.from_velocity(np.full((p["nx"], p["nz"]), p["velocity"]), p["dx"], p["dz"])
    elif p["builder"] == "layered":
        model = layered_model(p["nx"], p["nz"], p["dx"], p["dz"], p["velocities"], p["interfaces"])
    else:
        model = linear_gradient_model(p["nx"], p["nz"], p["dx"], p["dz"], p["v0"], p["alpha"],
                                      p["water_depth"], p["water_velocity"])
    try:
        model.check_bounds(p["vmin"], p["vmax"])
    except ValueError as exc:
        raise cfg.error("model", None, str(exc)) from None
    return model


def build_wavelet(cfg):
    a, w = cfg["acquisition"], cfg["wavelet"]
    n = int(round(a["record_time"] / a["dt"])) + 1
    delay = w["delay"] if w["delay"] is not None else 1.2 / w["f_peak"]
    wav = ricker(w["f_peak"], TimeGrid(n, a["dt"]), delay)
    if w["band"]:
        try:
            wav = bandpass(wav, a["dt"], *w["band"])
        except ValueError as exc:
            raise cfg.error("wavelet", "band", str(exc)) from None
    return wav


def build_acquisition(cfg, model):
    a = cfg["acquisition"]
    sources = [[x, a["source_z"]] for x in a["source_x"]]
    rx = np.arange(a["receiver_x0"], a["receiver_x1"] + 0.5 * a["receiver_dx"], a["receiver_dx"])
    receivers = np.c_[rx, np.full(rx.size, a["receiver_z"])]
    acq = Acquisition(sources, receivers, build_wavelet(cfg), a["dt"], a["record_stride"])
    try:
        acq.validate(model)
    except CFLError as exc:
        raise cfg.error("acquisition", "dt", str(exc)) from None
    except GeometryError as exc:
        raise cfg.error("acquisition", None, str(exc)) from None
    return acq


def solver_kw(cfg):
    return {"pml": cfg["solver"]["pml"], "pml_velocity": cfg["solver"]["pml_velocity"]}


def make_w2(beta, floor_ratio=0.0, amp_scale=None):
    return W2(beta=beta, floor_ratio=floor_ratio, amp_scale=amp_scale)


def build_objective(cfg):
    o = cfg["objective"]
    if o["name"] == "l2":
        return L2()
    return make_w2(o["beta"], o["floor_ratio"], o["amp_scale"])


# helpers --------------------------------------------------------------------

def count_local_minima(values):
    """Strict local minima of a 1-D sequence, end points included."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return int(v.size)
    inner = (v[1:-1] < v[:-2]) & (v[1:-1] < v[2:])
    return int(inner.sum() + (v[0] < v[1]) + (v[-1] < v[-2]))


def row_minima(surface):
    """Sum over rows (fixed second parameter) of minima along the first axis."""
    return sum(count_local_minima(surface[:, j]) for j in range(surface.shape[1]))


def relative_slowness_rmse(model, true, region=None):
    s, s_true = np.sqrt(model.m), np.sqrt(true.m)
    rel = (s - s_true) / s_true
    if region is not None:
        rel = rel[region]
    return float(np.sqrt(np.mean(rel**2)))


def _out(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# forward --------------------------------------------------------------------

def run_forward(cfg, out):
    """Simulate every shot, write ``model.bin`` and ``shot_XXX.bin`` gathers."""
    model = build_model(cfg)
    acq = build_acquisition(cfg, model)
    out = _out(out)
    gathers = forward_gathers(model, acq, **solver_kw(cfg))
    write_grid(model, out / "model.bin")
    dt = acq.record_grid.dt
    for i, g in enumerate(gathers):
        write_gather(g, dt, acq.receivers, out / f"shot_{i:03d}.bin")
    rows = [(i, float(np.abs(g).max())) for i, g in enumerate(gathers)]
    write_csv(out / "forward.csv", ["shot", "peak_amplitude"], rows)
    return gathers


# landscape ------------------------------------------------------------------

def landscape_scan(model_kw, acq, objectives, v0s, alphas, reference, solver=None):
    """Normalized misfit surfaces over the ``(v0, alpha)`` grid.

    ``model_kw`` holds the grid and water-layer parameters of
    :func:`linear_gradient_model`; observed data come from ``reference``.
    Returns ``{name: array (len(v0s), len(alphas))}`` scaled to unit maximum.
    """
    solver = solver or {}
    true = linear_gradient_model(v0=reference[0], alpha=reference[1], **model_kw)
    obs = forward_gathers(true, acq, **solver)
    dt = acq.record_grid.dt
    raw = {name: np.zeros((len(v0s), len(alphas))) for name in objectives}
    for i, v0 in enumerate(v0s):
        for j, alpha in enumerate(alphas):
            model = linear_gradient_model(v0=v0, alpha=alpha, **model_kw)
            syn = forward_gathers(model, acq, **solver)
            for name, obj in objectives.items():
                raw[name][i, j] = sum(obj(s, o, dt).value for s, o in zip(syn, obs))
    return {name: v / v.max() for name, v in raw.items()}


def landscape_objectives(betas, include_l2=True):
    objs = {f"w2_beta{b:g}": make_w2(b) for b in betas}
    if include_l2:
        objs["l2"] = L2()
    return objs


def run_landscape(cfg, out):
    p, ls = cfg["model"], cfg["landscape"]
    if p["source"] != "builder" or p["builder"] != "linear_gradient":
        raise cfg.error("model", "builder", "landscape scans need builder = linear_gradient")
    v0s = np.linspace(ls["v0_min"], ls["v0_max"], ls["n_v0"])
    alphas = np.linspace(ls["alpha_min"], ls["alpha_max"], ls["n_alpha"])
    model_kw = {k: p[k] for k in ("nx", "nz", "dx", "dz", "water_depth", "water_velocity")}
    reference = (p["v0"], p["alpha"])
    # every scan model must respect the bounds and the time step
    fastest = linear_gradient_model(v0=v0s.max(), alpha=max(alphas.max(), 0.0), **model_kw)
    slowest = linear_gradient_model(v0=v0s.min(), alpha=min(alphas.min(), 0.0), **model_kw)
    for m in (fastest, slowest):
        try:
            m.check_bounds(p["vmin"], p["vmax"])
        except ValueError as exc:
            raise cfg.error("landscape", None, f"scan model out of bounds: {exc}") from None
    acq = build_acquisition(cfg, fastest)
    objectives = landscape_objectives(ls["betas"], ls["include_l2"])
    surfaces = landscape_scan(model_kw, acq, objectives, v0s, alphas, reference, solver_kw(cfg))
    out = _out(out)
    summary = []
    for name, surf in surfaces.items():
        rows = [(v0, a, surf[i, j]) for i, v0 in enumerate(v0s) for j, a in enumerate(alphas)]
        write_csv(out / f"landscape_{name}.csv", ["v0", "alpha", "misfit"], rows)
        i, j = np.unravel_index(np.argmin(surf), surf.shape)
        summary.append((name, row_minima(surf), v0s[i], alphas[j]))
    write_csv(out / "landscape_summary.csv", ["objective", "row_minima", "argmin_v0", "argmin_alpha"], summary)
    return v0s, alphas, surfaces


# geodesic -------------------------------------------------------------------

def geodesic_interpolants(p0, p1, t, alphas, beta, constant=None):
    """Interpolants between two traces under three geometries.

    ``"l2"`` blends pointwise, ``"w2_constant"`` and ``"w2_softplus"`` are
    displacement interpolations of the add-constant and softplus encodings.
    Traces are divided by their joint peak amplitude first. Each entry is an
    array ``(len(alphas), nt)``.
    """
    scale = max(np.abs(p0).max(), np.abs(p1).max())
    u0, u1 = p0 / scale, p1 / scale
    if constant is None:
        constant = 1.1 * max(-u0.min(), -u1.min(), 0.0) + 1e-3
    soft = EncodingConfig(beta=beta)
    const = EncodingConfig(scheme="add_constant", constant=constant)
    out = {"l2": np.array([(1 - a) * u0 + a * u1 for a in alphas])}
    for name, enc in (("w2_constant", const), ("w2_softplus", soft)):
        q0, q1 = enc.encode(u0).pdf, enc.encode(u1).pdf
        out[name] = np.array([displacement_interpolation(q0, q1, t, a) for a in alphas])
    return out


def run_geodesic(cfg, out):
    g = cfg["geodesic"]
    grid = TimeGrid(g["nt"], g["dt"])
    t = grid.nodes
    if g["delay"] + g["shift"] > t[-1]:
        raise cfg.error("geodesic", "shift", "shifted wavelet leaves the time window")
    p0 = ricker(g["f_peak"], grid, g["delay"])
    p1 = ricker(g["f_peak"], grid, g["delay"] + g["shift"])
    curves = geodesic_interpolants(p0, p1, t, g["alphas"], g["beta"], g["constant"])
    out = _out(out)
    header = ["t"] + [f"{name}_{a:g}" for name in curves for a in g["alphas"]]
    cols = [t] + [c for name in curves for c in curves[name]]
    write_csv(out / "geodesic.csv", header, zip(*cols))
    peaks = [(name, a, t[np.argmax(c)]) for name in curves for a, c in zip(g["alphas"], curves[name])]
    write_csv(out / "geodesic_peaks.csv", ["scheme", "alpha", "peak_time"], peaks)
    return t, curves


# freqscan -------------------------------------------------------------------

def frequency_scan(nt, dt, amplitude, modes):
    """Transport and L2 misfits between the uniform density and ``k``-mode sinusoidal perturbations.

    Perturbations have equal energy for every ``k``; index 0 is the
    unperturbed pair.
    """
    grid = TimeGrid(nt, dt)
    t = grid.nodes
    period = nt * dt
    p0 = np.full(nt, 1.0 / nt)
    w2, l2 = [], []
    for k in range(modes + 1):
        p = p0 * (1 + amplitude * np.sin(2 * np.pi * k * t / period))
        p /= p.sum()
        w2.append(transport_cost(p0, p, t))
        l2.append(l2_misfit(p, p0, dt).value)
    return np.array(w2), np.array(l2)


def run_freqscan(cfg, out):
    f = cfg["freqscan"]
    w2, l2 = frequency_scan(f["nt"], f["dt"], f["amplitude"], f["modes"])
    out = _out(out)
    write_csv(out / "freqscan.csv", ["k", "transport", "l2"], [(k, w2[k], l2[k]) for k in range(w2.size)])
    decreasing = bool(np.all(np.diff(w2[1:]) < 0))
    spread = float(l2[1:].max() / l2[1:].min() - 1.0)
    if not decreasing:
        raise CheckFailed("transport misfit is not strictly decreasing in k")
    return w2, l2, spread


# gradcheck ------------------------------------------------------------------

def _fd_best(f, x, h, eps_list):
    out = []
    for eps in eps_list:
        out.append((f(x + eps * h) - f(x - eps * h)) / (2 * eps))
    return out


def check_ot(rng, n_pairs=20, nt=64):
    t = TimeGrid(nt, 0.004).nodes
    worst = 0.0
    for _ in range(n_pairs):
        p0, p1 = rng.random(nt) + 0.1, rng.random(nt) + 0.1
        p0 /= p0.sum()
        p1 /= p1.sum()
        h = rng.standard_normal(nt)
        h -= h.mean()
        g = transport_gradient(p0, p1, t) @ h
        fds = _fd_best(lambda q: transport_cost(p0, q, t), p1, h, (1e-5, 1e-6, 1e-7))
        worst = max(worst, min(abs(fd - g) / max(abs(fd), 1e-300) for fd in fds))
    return worst


def check_encoding(rng, n=50, nt=40):
    cfg = EncodingConfig(beta=2.0)
    worst = 0.0
    for _ in range(n):
        u, h, phi = rng.standard_normal((3, nt))
        eps = 1e-5
        dpdf = (cfg.encode(u + eps * h).pdf - cfg.encode(u - eps * h).pdf) / (2 * eps)
        rhs = phi @ dpdf
        worst = max(worst, abs(cfg.adjoint(u, phi) @ h - rhs) / max(abs(rhs), 1e-12))
    constant = float(np.abs(cfg.adjoint(rng.standard_normal(nt), np.full(nt, 1e3))).max())
    return worst, constant


def dot_product_test(model, acq, rng, **solver):
    solver_ = WaveSolver(model, acq, **solver)
    f = rng.standard_normal(acq.n_steps)
    d = solver_.forward(wavelet=f, store=False).gather
    g = rng.standard_normal(d.shape)
    _, src = solver_.adjoint(g, store=False, sample_sources=True)
    lhs = np.sum(d * g) * acq.record_grid.dt
    rhs = np.sum(f[:-1] * src[0, 1:])
    return abs(lhs - rhs) / abs(lhs)


def pipeline_fd(model, acq, obs, objective, cells, sign=1.0, eps_list=(1e-3, 1e-4, 1e-5), **solver):
    """Relative error of the adjoint gradient against central differences, per cell."""
    _, grad = model_gradient(model, acq, obs, objective, **solver)
    grad = sign * grad
    errs = []
    for i, k in cells:
        best = np.inf
        for eps in eps_list:
            e = eps * model.m[i, k]
            mp, mm = model.m.copy(), model.m.copy()
            mp[i, k] += e
            mm[i, k] -= e
            fd = (evaluate(model.with_m(mp), acq, obs, objective, **solver)
                  - evaluate(model.with_m(mm), acq, obs, objective, **solver)) / (2 * e)
            best = min(best, abs(fd - grad[i, k]) / abs(fd))
        errs.append(best)
    return np.array(errs), grad


def pick_cells(grad, n, rng, margin=5, floor=1e-2):
    """Random interior cells where the gradient is not negligibly small."""
    nx, nz = grad.shape
    ok = np.zeros(grad.shape, bool)
    ok[margin:nx - margin, margin:nz - margin] = True
    ok &= np.abs(grad) >= floor * np.abs(grad).max()
    cand = np.argwhere(ok)
    choice = rng.choice(len(cand), size=min(n, len(cand)), replace=False)
    return [tuple(int(v) for v in cand[c]) for c in sorted(choice)]


def run_gradcheck(cfg, out, seed=0):
    g = cfg["gradcheck"]
    rng = np.random.default_rng(seed)
    true = build_model(cfg)
    acq = build_acquisition(cfg, true)
    solver = solver_kw(cfg)
    start = smooth_model(true, g["smooth_sigma"])
    obs = forward_gathers(true, acq, **solver)
    sign = -1.0 if g["sabotage"] else 1.0

    rows = [("ot_gradient", check_ot(rng), 1e-4)]
    duality, constant = check_encoding(rng)
    rows += [("encode_duality", duality, 1e-6), ("encode_constant", constant, 1e-12)]
    rows.append(("dot_product", dot_product_test(start, acq, rng, **solver), 1e-8))
    for name in g["objectives"]:
        objective = L2() if name == "l2" else make_w2(g["beta"])
        _, grad = model_gradient(start, acq, obs, objective, **solver)
        cells = pick_cells(grad, g["n_cells"], rng)
        errs, _ = pipeline_fd(start, acq, obs, objective, cells, sign=sign, **solver)
        rows.append((f"pipeline_{name}", float(errs.max()), g["tolerance"]))

    report = [(name, err, tol, "PASS" if err < tol else "FAIL") for name, err, tol in rows]
    write_csv(_out(out) / "gradcheck.csv", ["check", "error", "tolerance", "status"], report)
    return report


# invert ---------------------------------------------------------------------

def load_observed(cfg, acq):
    """Gathers ``shot_XXX.bin`` used as stored.

    They are not band-passed again: synthetics come from the band-passed
    wavelet, and the taper applied twice would not match them.
    """
    src = cfg["invert"]["observed"]
    files = sorted(cfg.resolve(src).glob("shot_*.bin"))
    if len(files) != len(acq.sources):
        raise cfg.error("invert", "observed", f"{len(files)} gather files for {len(acq.sources)} sources")
    gathers = []
    for f in files:
        d, dt, rec = read_gather(f)
        if d.shape != (len(acq.receivers), acq.record_grid.nt) or not np.isclose(dt, acq.record_grid.dt):
            raise cfg.error("invert", "observed", f"{f}: gather geometry does not match the acquisition")
        gathers.append(d)
    return gathers


def invert(true, start, acq, objective, opt, observed=None, solver=None, n_jobs=1,
           callback=None, fixed=None):
    """Bounded L-BFGS on ``x = m / m_start`` (dimensionless, order one).

    The objective is divided by its value at the starting model, so the
    relative-decrease stopping rule, whose denominator is floored at 1,
    sees values of order one whatever the data units. Cells where the
    boolean mask ``fixed`` is set keep their starting values.
    """
    solver = solver or {}
    obs = observed if observed is not None else forward_gathers(true, acq, **solver)
    m0 = start.m
    scale = []

    def fun(x):
        model = start.with_m(x.reshape(m0.shape) * m0)
        value, grad = model_gradient(model, acq, obs, objective, n_jobs=n_jobs, **solver)
        if not scale:
            scale.append(1.0 / value if value > 0 else 1.0)
        grad = grad * m0 * scale[0]
        if fixed is not None:
            grad[fixed] = 0.0
        return value * scale[0], grad

    cfg = OptimizerConfig(
        memory=opt.get("memory", 10), max_iters=opt.get("max_iters", 50),
        stop_tol=opt.get("stop_tol", 1e-5),
        lower=(1.0 / opt["vmax"] ** 2) / m0, upper=(1.0 / opt["vmin"] ** 2) / m0,
    )
    res = minimize(np.ones(m0.size), fun, cfg, callback=callback)
    final = start.with_m(res.x * m0.ravel())
    return final, res


def run_invert(cfg, out, seed=0):
    inv, opt = cfg["invert"], cfg["optimizer"]
    true = build_model(cfg)
    acq = build_acquisition(cfg, true)
    solver = solver_kw(cfg)
    start, fixed = starting_model(true, inv["smooth_sigma"], inv["fixed_depth"])
    vmin, vmax = start.velocity.min(), start.velocity.max()
    if vmin < opt["vmin"] or vmax > opt["vmax"]:
        raise cfg.error("optimizer", "vmin", f"initial model [{vmin:.0f}, {vmax:.0f}] m/s outside bounds")
    if inv["observed"] == "synthetic":
        obs = forward_gathers(true, acq, **solver)
        if inv["noise"] > 0:
            rng = np.random.default_rng(seed)
            obs = [d + inv["noise"] * d.std() * rng.standard_normal(d.shape) for d in obs]
    else:
        obs = load_observed(cfg, acq)
    objective = build_objective(cfg)
    final, res = invert(true, start, acq, objective, opt, observed=obs, solver=solver,
                        n_jobs=cfg["run"]["n_jobs"], fixed=fixed)
    out = _out(out)
    write_grid(start, out / "initial_model.bin")
    write_grid(final, out / "final_model.bin")
    write_grid(true, out / "true_model.bin")
    write_grid_array((final.m - true.m) / true.m, true.dx, true.dz, out / "relative_difference.bin")
    write_history(res.history, out / "history.csv")
    top = (slice(None), slice(0, true.shape[1] // 3))
    metrics = {
        "status": res.status,
        "iterations": res.n_iters,
        "rmse_initial": relative_slowness_rmse(start, true),
        "rmse_final": relative_slowness_rmse(final, true),
        "rmse_top_initial": relative_slowness_rmse(start, true, top),
        "rmse_top_final": relative_slowness_rmse(final, true, top),
    }
    write_csv(out / "metrics.csv", ["metric", "value"], list(metrics.items()))
    return final, res, metrics
