"""Small numpy building blocks with hand-written backward passes.

Each component keeps its parameters in ``self.params`` (name -> array)
and accumulates gradients of the same shapes in ``self.grads``.
``forward`` returns (output, cache); ``backward`` consumes the cache and
the upstream gradient, accumulates parameter gradients, and returns the
gradient with respect to the input.  Sequences are arrays of shape
(time, features).
"""

import numpy as np


def glorot(rng, shape, dtype=np.float64):
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng, shape, dtype=np.float64):
    a = rng.standard_normal(shape)
    q, r = np.linalg.qr(a if shape[0] >= shape[1] else a.T)
    q = q * np.sign(np.diag(r))
    if shape[0] < shape[1]:
        q = q.T
    return q[: shape[0], : shape[1]].astype(dtype)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_backward(p, d_p, axis=-1):
    """Gradient through y = softmax(x) given p = y and dL/dy."""
    dot = np.sum(p * d_p, axis=axis, keepdims=True)
    return p * (d_p - dot)


class Component:
    def __init__(self):
        self.params = {}
        self.grads = {}

    def _add_param(self, name, value):
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def zero_grads(self):
        for g in self.grads.values():
            g[:] = 0.0


class Linear(Component):
    def __init__(self, rng, d_in, d_out, dtype=np.float64):
        super().__init__()
        self._add_param("W", glorot(rng, (d_in, d_out), dtype))
        self._add_param("b", np.zeros(d_out, dtype=dtype))

    def forward(self, x):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, d_out):
        x = cache
        self.grads["W"] += x.T @ d_out
        self.grads["b"] += d_out.sum(axis=0)
        return d_out @ self.params["W"].T


class Gru(Component):
    """Single-direction GRU scanning a (s, d_in) sequence.

    Gate order: update z, reset r, candidate n.  An optional recurrent
    dropout mask (shape (hidden,), same mask at every step) multiplies the
    previous hidden state on the gate inputs only.
    """

    def __init__(self, rng, d_in, hidden, dtype=np.float64):
        super().__init__()
        self.hidden = hidden
        self._add_param(
            "W", np.concatenate([glorot(rng, (d_in, hidden), dtype) for _ in range(3)], axis=1)
        )
        self._add_param(
            "U",
            np.concatenate([orthogonal(rng, (hidden, hidden), dtype) for _ in range(3)], axis=1),
        )
        self._add_param("b", np.zeros(3 * hidden, dtype=dtype))

    def forward(self, x, rec_mask=None):
        H = self.hidden
        s = x.shape[0]
        dtype = self.params["W"].dtype
        xw = x @ self.params["W"] + self.params["b"]
        U = self.params["U"]
        hs = np.zeros((s + 1, H), dtype=dtype)
        zs, rs, ns, hms = [], [], [], []
        h = hs[0]
        for t in range(s):
            hm = h * rec_mask if rec_mask is not None else h
            hu = hm @ U
            z = _sigmoid(xw[t, :H] + hu[:H])
            r = _sigmoid(xw[t, H : 2 * H] + hu[H : 2 * H])
            n = np.tanh(xw[t, 2 * H :] + (r * hm) @ U[:, 2 * H :])
            h = (1.0 - z) * h + z * n
            hs[t + 1] = h
            zs.append(z)
            rs.append(r)
            ns.append(n)
            hms.append(hm)
        cache = (x, hs, zs, rs, ns, hms, rec_mask)
        return hs[1:], cache

    def backward(self, cache, d_h_seq, d_h_last=None):
        x, hs, zs, rs, ns, hms, rec_mask = cache
        H = self.hidden
        s = x.shape[0]
        U = self.params["U"]
        d_x = np.zeros_like(x)
        d_W = self.grads["W"]
        d_U = self.grads["U"]
        d_b = self.grads["b"]
        d_h = np.zeros(H, dtype=x.dtype)
        if d_h_last is not None:
            d_h = d_h + d_h_last
        for t in range(s - 1, -1, -1):
            d_h = d_h + d_h_seq[t]
            h_prev, hm = hs[t], hms[t]
            z, r, n = zs[t], rs[t], ns[t]
            d_z = d_h * (n - h_prev)
            d_n = d_h * z
            d_hprev = d_h * (1.0 - z)

            d_n_pre = d_n * (1.0 - n * n)
            d_z_pre = d_z * z * (1.0 - z)
            # through n: inputs x W_n + (r*hm) U_n
            d_rhm = d_n_pre @ U[:, 2 * H :].T
            d_r = d_rhm * hm
            d_hm = d_rhm * r
            d_r_pre = d_r * r * (1.0 - r)

            d_pre = np.concatenate([d_z_pre, d_r_pre, d_n_pre])
            d_W += np.outer(x[t], d_pre)
            d_b += d_pre
            d_x[t] = d_pre @ self.params["W"].T

            d_U[:, :H] += np.outer(hm, d_z_pre)
            d_U[:, H : 2 * H] += np.outer(hm, d_r_pre)
            d_U[:, 2 * H :] += np.outer(r * hm, d_n_pre)
            d_hm = d_hm + d_z_pre @ U[:, :H].T + d_r_pre @ U[:, H : 2 * H].T
            if rec_mask is not None:
                d_hprev = d_hprev + d_hm * rec_mask
            else:
                d_hprev = d_hprev + d_hm
            d_h = d_hprev
        return d_x


class Lstm(Component):
    """Single-direction LSTM scanning a (s, d_in) sequence.

    Gate order: input i, forget f, cell g, output o.
    """

    def __init__(self, rng, d_in, hidden, dtype=np.float64):
        super().__init__()
        self.hidden = hidden
        self._add_param(
            "W", np.concatenate([glorot(rng, (d_in, hidden), dtype) for _ in range(4)], axis=1)
        )
        self._add_param(
            "U",
            np.concatenate([orthogonal(rng, (hidden, hidden), dtype) for _ in range(4)], axis=1),
        )
        self._add_param("b", np.zeros(4 * hidden, dtype=dtype))

    def forward(self, x):
        H = self.hidden
        s = x.shape[0]
        dtype = self.params["W"].dtype
        xw = x @ self.params["W"] + self.params["b"]
        U = self.params["U"]
        hs = np.zeros((s + 1, H), dtype=dtype)
        cs = np.zeros((s + 1, H), dtype=dtype)
        gates = []
        for t in range(s):
            pre = xw[t] + hs[t] @ U
            i = _sigmoid(pre[:H])
            f = _sigmoid(pre[H : 2 * H])
            g = np.tanh(pre[2 * H : 3 * H])
            o = _sigmoid(pre[3 * H :])
            cs[t + 1] = f * cs[t] + i * g
            hs[t + 1] = o * np.tanh(cs[t + 1])
            gates.append((i, f, g, o))
        cache = (x, hs, cs, gates)
        return hs[1:], cache

    def backward(self, cache, d_h_seq, d_h_last=None):
        x, hs, cs, gates = cache
        H = self.hidden
        s = x.shape[0]
        U = self.params["U"]
        d_x = np.zeros_like(x)
        d_h = np.zeros(H, dtype=x.dtype)
        d_c = np.zeros(H, dtype=x.dtype)
        if d_h_last is not None:
            d_h = d_h + d_h_last
        for t in range(s - 1, -1, -1):
            d_h = d_h + d_h_seq[t]
            i, f, g, o = gates[t]
            tc = np.tanh(cs[t + 1])
            d_o = d_h * tc
            d_c = d_c + d_h * o * (1.0 - tc * tc)
            d_i = d_c * g
            d_g = d_c * i
            d_f = d_c * cs[t]
            d_c = d_c * f
            d_pre = np.concatenate(
                [
                    d_i * i * (1.0 - i),
                    d_f * f * (1.0 - f),
                    d_g * (1.0 - g * g),
                    d_o * o * (1.0 - o),
                ]
            )
            self.grads["W"] += np.outer(x[t], d_pre)
            self.grads["U"] += np.outer(hs[t], d_pre)
            self.grads["b"] += d_pre
            d_x[t] = d_pre @ self.params["W"].T
            d_h = d_pre @ U.T
        return d_x


class _Bi:
    """Two independent recurrent cells, one scanning forward and one over
    the reversed sequence; outputs are concatenated per position."""

    cell_cls = None

    def __init__(self, rng, d_in, hidden, dtype=np.float64):
        self.hidden = hidden
        self.f = self.cell_cls(rng, d_in, hidden, dtype)
        self.b = self.cell_cls(rng, d_in, hidden, dtype)

    @property
    def params(self):
        out = {f"f_{k}": v for k, v in self.f.params.items()}
        out.update({f"b_{k}": v for k, v in self.b.params.items()})
        return out

    @property
    def grads(self):
        out = {f"f_{k}": v for k, v in self.f.grads.items()}
        out.update({f"b_{k}": v for k, v in self.b.grads.items()})
        return out

    def zero_grads(self):
        self.f.zero_grads()
        self.b.zero_grads()

    def forward(self, x, **kw):
        hf, cf = self.f.forward(x, **kw)
        hb_rev, cb = self.b.forward(x[::-1], **kw)
        out = np.concatenate([hf, hb_rev[::-1]], axis=1)
        return out, (cf, cb)

    def backward(self, cache, d_out):
        cf, cb = cache
        H = self.hidden
        d_x = self.f.backward(cf, d_out[:, :H])
        d_x = d_x + self.b.backward(cb, d_out[::-1, H:])[::-1]
        return d_x

    def final_states(self, out):
        """Concatenated last forward and last backward states (the
        backward cell's last state sits at position 0 of its block)."""
        return np.concatenate([out[-1, : self.hidden], out[0, self.hidden :]])

    def backward_from_final(self, cache, d_final, seq_len):
        H = self.hidden
        d_out = np.zeros((seq_len, 2 * H), dtype=d_final.dtype)
        d_out[-1, :H] = d_final[:H]
        d_out[0, H:] = d_final[H:]
        return self.backward(cache, d_out)


class BiLstm(_Bi):
    cell_cls = Lstm


class BiGru(_Bi):
    cell_cls = Gru


def clip_global_norm(grad_arrays, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grad_arrays))
    if total > max_norm and total > 0:
        scale = max_norm / total
        for g in grad_arrays:
            g *= scale
    return total


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in named_params.items()}
        self.v = {k: np.zeros_like(v) for k, v in named_params.items()}

    def step(self, named_params, named_grads):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for k, p in named_params.items():
            g = named_grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
