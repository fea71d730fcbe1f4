"""Central finite-difference check of ``compute_gradients`` on the tiny instance."""
import numpy as np

from dynamix.model import ModelConfig, init_model
from dynamix.training import TrainConfig, compute_gradients

TINY = dict(N=2, M=4, P=1, J=2, T_seq=12, T_C=8, overlap=2, tau=3)


def tiny_problem(seed=0, B=2):
    t = TINY
    model = init_model(ModelConfig(N=t["N"], M=t["M"], P=t["P"], J=t["J"]), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for k, arr in model.params.items():
        if k in ("A",):
            continue
        model.params[k] = arr + rng.normal(0, 0.3, arr.shape)
    model.params["sigma"] = rng.uniform(0.05, 0.3, t["N"])
    model.params["t_att"] = np.array([0.8])
    model.params["t_exp"] = np.array([0.6])
    X = rng.standard_normal((B, t["N"], t["T_seq"]))
    cfg = TrainConfig(tau_force=t["tau"], context_length=t["T_C"], overlap=t["overlap"], lam_reg=0.01)
    K = t["T_seq"] - 1 - (t["T_C"] - t["overlap"])
    noise = rng.standard_normal((B, K, t["N"]))
    return model, X, cfg, noise


def fd_check(model, X, cfg, noise, kernels=None, h=1e-5):
    """Worst-case error per block, as (name, max_rel_err, max_abs_err_on_small_entries)."""
    _, _, grads = compute_gradients(model, X, cfg, noise=noise, kernels=kernels)

    def total():
        mse, reg, _ = compute_gradients(model, X, cfg, noise=noise, kernels=kernels)
        return mse + reg

    report = []
    for name, arr in model.params.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        worst_rel, worst_abs = 0.0, 0.0
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = total()
            flat[i] = old - h
            dn = total()
            flat[i] = old
            fd = (up - dn) / (2 * h)
            if abs(fd) < 1e-4 and abs(g[i]) < 1e-4:
                worst_abs = max(worst_abs, abs(fd - g[i]))
            else:
                worst_rel = max(worst_rel, abs(fd - g[i]) / max(abs(fd), abs(g[i])))
        report.append((name, worst_rel, worst_abs))
    return report


def fd_passes(report, rel_tol=1e-4, abs_tol=1e-8):
    return all(r <= rel_tol and a <= abs_tol for _, r, a in report)
