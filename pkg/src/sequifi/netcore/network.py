"""Forward pass, loss, and exact manual backpropagation for the classifier.

Topology: stacked LSTM layers over the input sequence, the hidden state at
each sample's final step feeding a stack of dense blocks (linear, batch norm,
ReLU, dropout), then a linear head with softmax. Pooled feature vectors enter
as length-1 sequences; frame sequences exercise full backpropagation through
time.

The backward pass differentiates the exact training objective, including the
batch-statistics coupling of train-mode batch norm, so gradients match finite
differences to first order everywhere the objective is smooth.
"""

from __future__ import annotations

import numpy as np

from ..validation import check_feature_array
from .params import NetworkParams

BN_EPS = 1e-8
BN_MOMENTUM = 0.9
PROB_FLOOR = 1e-12

TRAIN_MODE = "train"
EVAL_MODE = "eval"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def forward(
    params: NetworkParams,
    x,
    mode: str = EVAL_MODE,
    rng: np.random.Generator | None = None,
    dropout_rate: float = 0.0,
    lengths=None,
    bn_batch_stats: bool = True,
) -> tuple[np.ndarray, dict]:
    """Class probabilities (B, num_classes) plus the activation cache.

    Train mode normalizes with batch statistics, draws dropout masks from
    ``rng``, and stores updated running stats in the cache (the caller applies
    them). Eval mode uses running stats and no dropout, so it is bitwise
    deterministic.

    ``bn_batch_stats=False`` makes train-mode normalization use the running
    statistics instead of the batch's own (running stats still update with
    the usual momentum). Batch statistics of a single-class batch are
    degenerate: they subtract out exactly the class evidence. Single-class
    fine-tuning phases therefore train against running statistics.
    """
    if mode not in (TRAIN_MODE, EVAL_MODE):
        raise ValueError(f"mode must be '{TRAIN_MODE}' or '{EVAL_MODE}'")
    x = check_feature_array(x, name="batch")
    batch, steps, dim = x.shape
    if dim != params.arch.input_dim:
        raise ValueError(f"batch has dimension {dim}, network expects {params.arch.input_dim}")
    if lengths is None:
        lengths = np.full(batch, steps, dtype=np.int64)
    else:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > steps:
            raise ValueError("lengths must be (B,) integers in 1..T")
    training = mode == TRAIN_MODE
    use_dropout = training and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")

    tensors = params.tensors
    bn_coupled = training and bn_batch_stats
    cache: dict = {
        "mode": mode,
        "params": params,
        "lengths": lengths,
        "dropout_rate": dropout_rate if use_dropout else 0.0,
        "bn_coupled": bn_coupled,
        "lstm": [],
        "dense": [],
        "bn_updates": {},
    }

    seq = x
    for i in range(1, len(params.arch.lstm_units) + 1):
        w_x, w_h, b = tensors[f"lstm{i}.w_x"], tensors[f"lstm{i}.w_h"], tensors[f"lstm{i}.b"]
        units = w_h.shape[0]
        gates_i = np.empty((batch, steps, units))
        gates_f = np.empty((batch, steps, units))
        gates_g = np.empty((batch, steps, units))
        gates_o = np.empty((batch, steps, units))
        cells = np.empty((batch, steps, units))
        tanh_c = np.empty((batch, steps, units))
        hidden = np.empty((batch, steps, units))
        h = np.zeros((batch, units))
        c = np.zeros((batch, units))
        for t in range(steps):
            pre = seq[:, t] @ w_x + h @ w_h + b
            gi = _sigmoid(pre[:, :units])
            gf = _sigmoid(pre[:, units : 2 * units])
            gg = np.tanh(pre[:, 2 * units : 3 * units])
            go = _sigmoid(pre[:, 3 * units :])
            c = gf * c + gi * gg
            tc = np.tanh(c)
            h = go * tc
            gates_i[:, t], gates_f[:, t], gates_g[:, t], gates_o[:, t] = gi, gf, gg, go
            cells[:, t], tanh_c[:, t], hidden[:, t] = c, tc, h
        cache["lstm"].append(
            {"inputs": seq, "i": gates_i, "f": gates_f, "g": gates_g, "o": gates_o,
             "c": cells, "tanh_c": tanh_c, "h": hidden}
        )
        seq = hidden

    a = seq[np.arange(batch), lengths - 1]  # hidden state at each sample's last step
    cache["last_hidden_in"] = a

    for k in range(1, len(params.arch.dense_units) + 1):
        w, b = tensors[f"dense{k}.w"], tensors[f"dense{k}.b"]
        gamma, beta = tensors[f"bn{k}.gamma"], tensors[f"bn{k}.beta"]
        z = a @ w + b
        if training:
            cache["bn_updates"][f"bn{k}.mean"] = (
                BN_MOMENTUM * params.stats[f"bn{k}.mean"] + (1 - BN_MOMENTUM) * z.mean(axis=0)
            )
            cache["bn_updates"][f"bn{k}.var"] = (
                BN_MOMENTUM * params.stats[f"bn{k}.var"] + (1 - BN_MOMENTUM) * z.var(axis=0)
            )
        if bn_coupled:
            mean = z.mean(axis=0)
            inv_std = 1.0 / np.sqrt(z.var(axis=0) + BN_EPS)
        else:
            mean = params.stats[f"bn{k}.mean"]
            inv_std = 1.0 / np.sqrt(params.stats[f"bn{k}.var"] + BN_EPS)
        xhat = (z - mean) * inv_std
        bn_out = gamma * xhat + beta
        relu_out = np.maximum(bn_out, 0.0)
        if use_dropout:
            mask = (rng.random(relu_out.shape) >= dropout_rate) / (1.0 - dropout_rate)
            a_next = relu_out * mask
        else:
            mask = None
            a_next = relu_out
        cache["dense"].append(
            {"a_in": a, "xhat": xhat, "inv_std": inv_std, "bn_out": bn_out, "mask": mask}
        )
        a = a_next

    cache["head_in"] = a
    logits = a @ tensors["head.w"] + tensors["head.b"]
    probs = _softmax_rows(logits)
    cache["probs"] = probs
    return probs, cache


def loss(
    probs: np.ndarray,
    labels: np.ndarray,
    params: NetworkParams,
    l2_lambda: float,
    l2_on_recurrent: bool = True,
) -> float:
    """Mean cross-entropy plus l2_lambda * sum of squared weight-matrix entries."""
    labels = np.asarray(labels, dtype=np.int64)
    picked = probs[np.arange(labels.size), labels]
    ce = -np.mean(np.log(np.maximum(picked, PROB_FLOOR)))
    if l2_lambda == 0.0:
        return float(ce)
    reg = sum(
        np.sum(params.tensors[name] ** 2)
        for name in params.arch.weight_matrix_names(include_recurrent=l2_on_recurrent)
    )
    return float(ce + l2_lambda * reg)


def backward(
    cache: dict,
    labels: np.ndarray,
    l2_lambda: float = 0.0,
    l2_on_recurrent: bool = True,
) -> dict[str, np.ndarray]:
    """Gradients of the loss for every trainable tensor, from a forward cache."""
    params: NetworkParams = cache["params"]
    tensors = params.tensors
    labels = np.asarray(labels, dtype=np.int64)
    probs = cache["probs"]
    batch = probs.shape[0]
    bn_coupled = cache["bn_coupled"]

    grads = {name: np.zeros_like(arr) for name, arr in tensors.items()}

    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch

    grads["head.w"] = cache["head_in"].T @ dlogits
    grads["head.b"] = dlogits.sum(axis=0)
    da = dlogits @ tensors["head.w"].T

    for k in range(len(params.arch.dense_units), 0, -1):
        block = cache["dense"][k - 1]
        if block["mask"] is not None:
            da = da * block["mask"]
        drelu = da * (block["bn_out"] > 0.0)
        xhat, inv_std = block["xhat"], block["inv_std"]
        grads[f"bn{k}.gamma"] = (drelu * xhat).sum(axis=0)
        grads[f"bn{k}.beta"] = drelu.sum(axis=0)
        dxhat = drelu * tensors[f"bn{k}.gamma"]
        if bn_coupled:
            # batch statistics couple every row: full batch-norm backward
            dz = (inv_std / batch) * (
                batch * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            )
        else:
            dz = dxhat * inv_std
        grads[f"dense{k}.w"] = block["a_in"].T @ dz
        grads[f"dense{k}.b"] = dz.sum(axis=0)
        da = dz @ tensors[f"dense{k}.w"].T

    # scatter the dense-stack gradient to each sample's final time step
    top = cache["lstm"][-1]
    steps = top["h"].shape[1]
    dseq = np.zeros_like(top["h"])
    dseq[np.arange(batch), cache["lengths"] - 1] = da

    for i in range(len(params.arch.lstm_units), 0, -1):
        layer = cache["lstm"][i - 1]
        w_x, w_h = tensors[f"lstm{i}.w_x"], tensors[f"lstm{i}.w_h"]
        units = w_h.shape[0]
        gi, gf, gg, go = layer["i"], layer["f"], layer["g"], layer["o"]
        cells, tanh_c, inputs = layer["c"], layer["tanh_c"], layer["inputs"]

        d_wx = np.zeros_like(w_x)
        d_wh = np.zeros_like(w_h)
        d_b = np.zeros_like(tensors[f"lstm{i}.b"])
        dinputs = np.zeros_like(inputs)
        dh_carry = np.zeros((batch, units))
        dc_carry = np.zeros((batch, units))
        for t in range(steps - 1, -1, -1):
            dh = dseq[:, t] + dh_carry
            do = dh * tanh_c[:, t]
            dc = dc_carry + dh * go[:, t] * (1.0 - tanh_c[:, t] ** 2)
            di = dc * gg[:, t]
            dg = dc * gi[:, t]
            c_prev = cells[:, t - 1] if t > 0 else np.zeros((batch, units))
            df = dc * c_prev
            dc_carry = dc * gf[:, t]
            dpre = np.concatenate(
                [
                    di * gi[:, t] * (1.0 - gi[:, t]),
                    df * gf[:, t] * (1.0 - gf[:, t]),
                    dg * (1.0 - gg[:, t] ** 2),
                    do * go[:, t] * (1.0 - go[:, t]),
                ],
                axis=1,
            )
            d_wx += inputs[:, t].T @ dpre
            h_prev = layer["h"][:, t - 1] if t > 0 else np.zeros((batch, units))
            d_wh += h_prev.T @ dpre
            d_b += dpre.sum(axis=0)
            dinputs[:, t] = dpre @ w_x.T
            dh_carry = dpre @ w_h.T
        grads[f"lstm{i}.w_x"] = d_wx
        grads[f"lstm{i}.w_h"] = d_wh
        grads[f"lstm{i}.b"] = d_b
        dseq = dinputs

    if l2_lambda != 0.0:
        for name in params.arch.weight_matrix_names(include_recurrent=l2_on_recurrent):
            grads[name] += 2.0 * l2_lambda * tensors[name]
    return grads


def predict_proba(params: NetworkParams, x, lengths=None) -> np.ndarray:
    probs, _ = forward(params, x, mode=EVAL_MODE, lengths=lengths)
    return probs


def predict_classes(params: NetworkParams, x, lengths=None) -> np.ndarray:
    """Argmax over class probabilities; ties resolve to the lowest class code."""
    return np.argmax(predict_proba(params, x, lengths), axis=1)
