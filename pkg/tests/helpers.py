"""Shared finite-difference oracles for the test suite."""
import numpy as np
import torch

from elastmap.net import FieldNetwork, NetworkSpec, get_flat, set_flat


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    scale = np.abs(b) + 1e-3 * np.max(np.abs(b)) + 1e-12
    return float(np.max(np.abs(a - b) / scale))


def spatial_fd_errors(net: FieldNetwork, xy: np.ndarray, h: float = 1e-5) -> dict:
    """Jet derivatives vs central differences of values (first) and of first derivatives (second)."""
    j = net.jet(torch.tensor(xy), order=2).detach().numpy()
    ex, ey = np.array([h, 0.0]), np.array([0.0, h])

    def val(p):
        return net.jet(torch.tensor(p), order=0)[0].detach().numpy()

    def d1(p):
        return net.jet(torch.tensor(p), order=1)[1:3].detach().numpy()

    fdx = (val(xy + ex) - val(xy - ex)) / (2 * h)
    fdy = (val(xy + ey) - val(xy - ey)) / (2 * h)
    gx = (d1(xy + ex) - d1(xy - ex)) / (2 * h)
    gy = (d1(xy + ey) - d1(xy - ey)) / (2 * h)
    return {
        "dx": rel_err(j[1], fdx),
        "dy": rel_err(j[2], fdy),
        "dxx": rel_err(j[3], gx[0]),
        "dyy": rel_err(j[4], gy[1]),
        "dxy": rel_err(j[5], gx[1]),
        "dyx": rel_err(j[5], gy[0]),
    }


def autograd_errors(net: FieldNetwork, xy: np.ndarray) -> float:
    """Jet vs plain nested torch autograd on the value path."""
    p = torch.tensor(xy, requires_grad=True)
    v = net.jet(p, order=0)[0]
    j = net.jet(torch.tensor(xy), order=2).detach()
    worst = 0.0
    for k in range(v.shape[1]):
        (g,) = torch.autograd.grad(v[:, k].sum(), p, create_graph=True)
        (gxx,) = torch.autograd.grad(g[:, 0].sum(), p, retain_graph=True)
        (gyy,) = torch.autograd.grad(g[:, 1].sum(), p, retain_graph=True)
        pairs = [
            (j[1, :, k], g[:, 0]),
            (j[2, :, k], g[:, 1]),
            (j[3, :, k], gxx[:, 0]),
            (j[4, :, k], gyy[:, 1]),
            (j[5, :, k], gxx[:, 1]),
        ]
        for a, b in pairs:
            worst = max(worst, rel_err(a.detach().numpy(), b.detach().numpy()))
    return worst


def second_order_loss(xy):
    """A scalar loss containing values, first and second spatial derivatives of every output."""
    xy_t = torch.tensor(xy)

    def fn(net):
        j = net.jet(xy_t, order=2)
        return torch.mean(j[0] ** 2) + torch.mean(j[1] * j[2]) + torch.mean(j[3] ** 2 + j[4] ** 2 + j[5] ** 2)

    return fn


def param_grad_fd_error(net: FieldNetwork, loss_fn, n_params: int = 20, h: float = 1e-6, seed: int = 0) -> float:
    params = list(net.parameters())
    loss = loss_fn(net)
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    g = torch.cat([(gi if gi is not None else torch.zeros_like(p)).reshape(-1) for gi, p in zip(grads, params)])
    g = g.detach().numpy()
    base = get_flat(net).numpy()
    rng = np.random.default_rng(seed)
    # favour parameters with non-negligible gradient so the relative check is meaningful
    order = np.argsort(-np.abs(g))
    picks = rng.choice(order[: max(n_params * 20, 200)], size=n_params, replace=False)
    fd = np.empty(n_params)
    for k, i in enumerate(picks):
        for sign, slot in ((1, 0), (-1, 1)):
            w = base.copy()
            w[i] += sign * h
            set_flat(net, w)
            with torch.no_grad():
                val = float(loss_fn(net))
            if slot == 0:
                plus = val
            else:
                fd[k] = (plus - val) / (2 * h)
    set_flat(net, base)
    return rel_err(g[picks], fd)


def make_net(fcnn, fourier, seed=0):
    return FieldNetwork(NetworkSpec(fcnn=fcnn, fourier=fourier, seed=seed))
