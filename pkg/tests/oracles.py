"""Independent reference implementations used by the tests.

Everything here is written with explicit loops or textbook formulas and
shares no code with the package under test.
"""

import math
from fractions import Fraction

import numpy as np


def conv2d_loop(x, w, b=None, padding=1):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    ho, wo = h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((n, o, ho, wo))
    for ni in range(n):
        for oi in range(o):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for di in range(k):
                            for dj in range(k):
                                acc += xp[ni, ci, i + di, j + dj] * w[oi, ci, di, dj]
                    out[ni, oi, i, j] = acc + (0.0 if b is None else b[oi])
    return out


def maxpool_loop(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for a in range(n):
        for b in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[a, b, i, j] = max(x[a, b, 2 * i, 2 * j], x[a, b, 2 * i + 1, 2 * j],
                                          x[a, b, 2 * i, 2 * j + 1], x[a, b, 2 * i + 1, 2 * j + 1])
    return out


def gelu_tanh(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


def softmax_rows(x):
    out = np.empty_like(x, dtype=float)
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        e = np.array([math.exp(v - max(row)) for v in row])
        out[idx] = e / e.sum()
    return out


def t5_bucket(rel, num_buckets=32, max_distance=128):
    """Scalar T5 bidirectional bucket, written from the reference description."""
    half = num_buckets // 2
    ret = half if rel > 0 else 0
    n = abs(rel)
    max_exact = half // 2
    if n < max_exact:
        return ret + n
    val = max_exact + int(math.log(n / max_exact) / math.log(max_distance / max_exact) * (half - max_exact))
    return ret + min(val, half - 1)


def batchnorm_train_ref(x, gamma, beta, eps):
    out = np.empty_like(x)
    for c in range(x.shape[1]):
        v = x[:, c]
        mu = v.mean()
        var = ((v - mu) ** 2).mean()
        out[:, c] = gamma[c] * (v - mu) / math.sqrt(var + eps) + beta[c]
    return out


def rmsnorm_ref(x, g, eps):
    out = np.empty_like(x)
    for idx in np.ndindex(x.shape[:-1]):
        row = x[idx]
        out[idx] = row / math.sqrt(sum(v * v for v in row) / len(row) + eps) * g
    return out


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def lstm_ref(x, w_ih, w_hh, b_ih, b_hh):
    """Per-step scalar-free LSTM with gate order i, f, g, o."""
    b, t, _ = x.shape
    hs = w_hh.shape[0]
    h = np.zeros((b, hs))
    c = np.zeros((b, hs))
    out = np.zeros((b, t, hs))
    sig = np.vectorize(_sig)
    for s in range(t):
        z = x[:, s] @ w_ih + b_ih + h @ w_hh + b_hh
        i, f, g, o = sig(z[:, :hs]), sig(z[:, hs:2 * hs]), np.tanh(z[:, 2 * hs:3 * hs]), sig(z[:, 3 * hs:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[:, s] = h
    return out


def gru_ref(x, w_ih, w_hh, b_ih, b_hh):
    b, t, _ = x.shape
    hs = w_hh.shape[0]
    h = np.zeros((b, hs))
    out = np.zeros((b, t, hs))
    sig = np.vectorize(_sig)
    for s in range(t):
        gi = x[:, s] @ w_ih + b_ih
        gh = h @ w_hh + b_hh
        r = sig(gi[:, :hs] + gh[:, :hs])
        z = sig(gi[:, hs:2 * hs] + gh[:, hs:2 * hs])
        n = np.tanh(gi[:, 2 * hs:] + r * gh[:, 2 * hs:])
        h = (1 - z) * n + z * h
        out[:, s] = h
    return out


def rnn_ref(x, w_ih, w_hh, b_ih, b_hh):
    b, t, _ = x.shape
    h = np.zeros((b, w_hh.shape[0]))
    out = np.zeros((b, t, w_hh.shape[0]))
    for s in range(t):
        h = np.tanh(x[:, s] @ w_ih + b_ih + h @ w_hh + b_hh)
        out[:, s] = h
    return out


def adjacency_ref(emb_mean, w_adj):
    """Elementwise A_final from batch-mean node vectors."""
    m = emb_mean.shape[0]
    dyn = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                dyn[i, j] = 1.0
                continue
            ni = math.sqrt(sum(v * v for v in emb_mean[i]))
            nj = math.sqrt(sum(v * v for v in emb_mean[j]))
            cos = 0.0 if ni == 0 or nj == 0 else float(np.dot(emb_mean[i], emb_mean[j])) / (ni * nj)
            cos = min(1.0, max(-1.0, cos))
            dyn[i, j] = (cos + 1.0) / 2.0
    final = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            final[i, j] = dyn[i, j] * _sig(w_adj[i, j]) + (0.5 if i == j else 0.0)
    return dyn, final


def window_slider(n_samples, window, stride):
    """Brute-force slider: count every start whose full window fits."""
    count, start = 0, 0
    while start + window <= n_samples:
        count += 1
        start += stride
    return count


def confusion_loop(y_true, y_pred, c):
    cm = [[0] * c for _ in range(c)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    return cm


def macro_f1_from_cm(cm):
    """Per-class precision/recall in exact fractions, averaged, rounded once."""
    c = len(cm)
    f1s = []
    for k in range(c):
        tp = cm[k][k]
        fp = sum(cm[r][k] for r in range(c)) - tp
        fn = sum(cm[k]) - tp
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        rec = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
    return float(sum(f1s) / c)


def interp_scalar(ts, vs, t):
    for i in range(len(ts) - 1):
        if ts[i] <= t <= ts[i + 1]:
            a = (t - ts[i]) / (ts[i + 1] - ts[i])
            return vs[i] + a * (vs[i + 1] - vs[i])
    raise ValueError("outside span")


def adamw_scalar(theta, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * wd * theta
        theta = theta - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def sinusoid_table(c, d):
    out = np.zeros((c, d))
    for p in range(c):
        for i in range(0, d, 2):
            ang = p / (10000 ** (i / d))
            out[p, i] = math.sin(ang)
            out[p, i + 1] = math.cos(ang)
    return out


def entropy_balance(p_bar):
    e = len(p_bar)
    h = -sum(p * math.log(p) for p in p_bar if p > 0)
    return math.log(e) - h


def bandpass_energy(x, rate, freqs):
    """Projection energy of each channel onto sin/cos at each frequency (no FFT)."""
    t = np.arange(x.shape[0]) / rate
    feats = []
    for f in freqs:
        s, c = np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t)
        e = 0.0
        for ch in range(x.shape[1]):
            e += float(x[:, ch] @ s) ** 2 + float(x[:, ch] @ c) ** 2
        feats.append(e)
    return np.array(feats)


def expert_ref(expert, x):
    """Numpy re-evaluation of one expert from its raw weights."""
    h1 = gelu_tanh(x @ expert.fc1.weight.data + expert.fc1.bias.data)
    h2 = gelu_tanh(h1 @ expert.fc2.weight.data + expert.fc2.bias.data)
    n = rmsnorm_ref(h1 + h2, expert.norm.gain.data, expert.norm.eps)
    return n @ expert.out.weight.data + expert.out.bias.data


def moe_bruteforce(moe, x):
    flat = x.reshape(-1, x.shape[-1])
    logits = flat @ moe.gate.weight.data
    out = np.zeros_like(flat)
    for i, row in enumerate(logits):
        order = sorted(range(len(row)), key=lambda e: (-row[e], e))[: moe.top_k]
        ex = [math.exp(row[e] - max(row[o] for o in order)) for e in order]
        for e, w in zip(order, ex):
            out[i] += w / sum(ex) * expert_ref(moe.experts[e], flat[i:i + 1])[0]
    return out.reshape(x.shape)
