"""Unhooked reference GPT-2 written with explicit loops in float64.

Shares nothing with the package's forward code beyond reading weight arrays.
Intervention points are plain callables keyed by (site, layer) that receive and
return the oracle's own per-head lists / matrices:

    ("resid_pre", l)  -> (N, D) array
    ("value", l)      -> list over heads of (N, d) arrays
    ("pattern", l)    -> list over heads of (N, N) arrays
    ("head_out", l)   -> list over heads of (N, D) arrays
    ("mlp_out", l)    -> (N, D) array
"""

from __future__ import annotations

import math

import numpy as np


def _ln(vec, w, b, eps):
    mu = sum(vec) / len(vec)
    var = sum((x - mu) ** 2 for x in vec) / len(vec)
    return np.array([(x - mu) / math.sqrt(var + eps) for x in vec]) * w + b


def _gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


class NaiveGPT2:
    def __init__(self, bundle):
        self.cfg = bundle.config
        f = lambda a: np.array(a, dtype=np.float64)  # noqa: E731
        self.W_E = f(bundle.W_E)
        self.W_pos = f(bundle.W_pos)
        self.lnf = (f(bundle.lnf_w), f(bundle.lnf_b))
        self.layers = []
        for layer in bundle.layers:
            self.layers.append({name: f(getattr(layer, name)) for name in layer.__dataclass_fields__})

    def run(self, tokens, overrides=None):
        overrides = overrides or {}
        cfg = self.cfg
        H, d, eps = cfg.n_heads, cfg.d_head, cfg.ln_epsilon
        tokens = [int(t) for t in tokens]
        N = len(tokens)
        acts = {}
        resid = np.stack([self.W_E[tok] + self.W_pos[i] for i, tok in enumerate(tokens)])
        for l, w in enumerate(self.layers):
            if ("resid_pre", l) in overrides:
                resid = np.array(overrides["resid_pre", l](resid.copy()))
            acts["resid_pre", l] = resid.copy()
            normed = [_ln(resid[i], w["ln1_w"], w["ln1_b"], eps) for i in range(N)]
            qs = [[normed[i] @ w["W_Q"][h] + w["b_Q"][h] for i in range(N)] for h in range(H)]
            ks = [[normed[i] @ w["W_K"][h] + w["b_K"][h] for i in range(N)] for h in range(H)]
            values = [np.stack([normed[i] @ w["W_V"][h] + w["b_V"][h] for i in range(N)]) for h in range(H)]
            if ("value", l) in overrides:
                values = overrides["value", l]([v.copy() for v in values])
            acts["value", l] = [v.copy() for v in values]

            patterns = []
            for h in range(H):
                pat = np.zeros((N, N))
                for i in range(N):
                    logits = [float(qs[h][i] @ ks[h][j]) / math.sqrt(d) for j in range(i + 1)]
                    top = max(logits)
                    exps = [math.exp(s - top) for s in logits]
                    total = sum(exps)
                    for j in range(i + 1):
                        pat[i, j] = exps[j] / total
                patterns.append(pat)
            if ("pattern", l) in overrides:
                patterns = overrides["pattern", l]([p.copy() for p in patterns])
            acts["pattern", l] = [p.copy() for p in patterns]

            head_outs = []
            for h in range(H):
                rows = []
                for i in range(N):
                    mixed = sum(patterns[h][i, j] * values[h][j] for j in range(N))
                    rows.append(mixed @ w["W_O"][h])
                head_outs.append(np.stack(rows))
            if ("head_out", l) in overrides:
                head_outs = overrides["head_out", l]([o.copy() for o in head_outs])
            acts["head_out", l] = [o.copy() for o in head_outs]

            attn = sum(head_outs) + w["b_O"]
            mid = resid + attn
            mlp = np.stack(
                [
                    _gelu(_ln(mid[i], w["ln2_w"], w["ln2_b"], eps) @ w["W_in"] + w["b_in"]) @ w["W_out"] + w["b_out"]
                    for i in range(N)
                ]
            )
            if ("mlp_out", l) in overrides:
                mlp = np.array(overrides["mlp_out", l](mlp.copy()))
            acts["mlp_out", l] = mlp.copy()
            resid = mid + mlp
            acts["resid_post", l] = resid.copy()
        final = np.stack([_ln(resid[i], *self.lnf, eps) for i in range(N)])
        acts["logits"] = final @ self.W_E.T
        return acts


def splice_rows(source, positions):
    """Override that copies ``positions`` rows of ``source`` into the activation."""

    def fn(act):
        act = np.array(act)
        for p in positions:
            act[p] = source[p]
        return act

    return fn


def splice_head(source_list, head, positions=None):
    """Override for per-head lists: copy one head's rows (all rows if positions is None)."""

    def fn(acts):
        out = [a.copy() for a in acts]
        if positions is None:
            out[head] = np.array(source_list[head])
        else:
            for p in positions:
                out[head][p] = source_list[head][p]
        return out

    return fn


def logit_diff(logits, answer, distractor, position=-1):
    return float(logits[position, answer] - logits[position, distractor])
