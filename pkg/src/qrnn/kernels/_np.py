"""Vectorized numpy implementation of the statevector kernels.

Every kernel works in place on a contiguous float64 statevector.  The
program drivers loop over opcodes in Python and dispatch to the kernels; they
are the reference path and the fallback when numba is disabled.
"""

from functools import lru_cache

import numpy as np

from . import opcodes as op


@lru_cache(maxsize=64)
def _indices(size):
    idx = np.arange(size, dtype=np.int64)
    idx.setflags(write=False)
    return idx


@lru_cache(maxsize=256)
def _outcome_map(size, lanes):
    idx = _indices(size)
    k = np.zeros(size, dtype=np.int64)
    for j, lane in enumerate(lanes):
        k |= ((idx >> lane) & 1) << j
    k.setflags(write=False)
    return k


def _halves(state, lane):
    v = state.reshape(-1, 2, 1 << lane)
    return v[:, 0, :], v[:, 1, :]


def rotate(state, lane, c, s):
    a0, a1 = _halves(state, lane)
    x0 = a0.copy()
    a0 *= c
    a0 -= s * a1
    a1 *= c
    a1 += s * x0


def flip(state, lane):
    v = state.reshape(-1, 2, 1 << lane)
    v[:] = v[:, ::-1, :].copy()


def branch_rotate(state, lane, bmap, alpha, beta):
    """Apply ``[[alpha, -beta], [beta, alpha]]`` per branch, unnormalized.

    ``bmap`` maps pair index to a position in ``alpha``/``beta``.
    """
    a0, a1 = _halves(state, lane)
    al = alpha[bmap].reshape(a0.shape)
    be = beta[bmap].reshape(a0.shape)
    x0 = a0.copy()
    a0 *= al
    a0 -= be * a1
    a1 *= al
    a1 += be * x0


def branch_rotate_adjoint(state, lane, bmap, alpha, beta):
    a0, a1 = _halves(state, lane)
    al = alpha[bmap].reshape(a0.shape)
    be = beta[bmap].reshape(a0.shape)
    x0 = a0.copy()
    a0 *= al
    a0 += be * a1
    a1 *= al
    a1 -= be * x0


def norm2(state):
    return float(np.dot(state, state))


def renormalize(state):
    """Scale to unit norm when the squared norm is positive; returns it."""
    p = float(np.dot(state, state))
    if p > 0.0:
        state /= np.sqrt(p)
    return p


def project(state, mask, value):
    """Zero every amplitude off the outcome; returns the kept weight.

    The state is renormalized only when the weight is positive.
    """
    keep = (_indices(state.size) & mask) == value
    state[~keep] = 0.0
    p = float(np.dot(state, state))
    if p > 0.0:
        state /= np.sqrt(p)
    return p


def marginal(state, lanes):
    k = _outcome_map(state.size, tuple(int(x) for x in lanes))
    return np.bincount(k, weights=state * state, minlength=1 << len(lanes))


def _angle(ref, params, consts):
    return params[ref] if ref >= 0 else consts[-1 - ref]


def forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
            state, ckpt, outputs, events, floor, save=True):
    """Run a program in place on ``state``.

    Returns ``opcodes.OK`` or the index of the first projection (or neuron)
    whose kept weight fell below ``floor``.  With ``save`` false no
    checkpoints are written.
    """
    for i, (code, a, b, c, d, e) in enumerate(ops.tolist()):
        if code == op.FLIP:
            flip(state, a)
        elif code == op.ROT:
            th = _angle(b, params, consts)
            rotate(state, a, np.cos(th), np.sin(th))
        elif code == op.NEURON:
            if save:
                ckpt[e] = state
            branch_rotate(state, nrn_target[a], nrn_bmap[a], alpha, beta)
            p = renormalize(state)
            events[i] = p
            if p < floor:
                return i
        elif code == op.PROJECT:
            if save:
                ckpt[e] = state
            p = project(state, a, b)
            events[i] = p
            outputs[c] = p
            if p < floor:
                return i
        elif code == op.MARGINAL:
            outputs[c:c + (1 << b)] = marginal(state, aux[a:a + b])
    return op.OK


def backward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
             state, ckpt, events, grad_outputs, grad_params, dalpha, dbeta):
    """Reverse sweep.  ``state`` holds the final state and is consumed.

    Rotation-angle gradients accumulate into ``grad_params`` (or nowhere for
    constant angles); neuron gradients accumulate per branch into ``dalpha``
    and ``dbeta``.
    """
    lam = np.zeros_like(state)
    rows = ops.tolist()
    for i in range(len(rows) - 1, -1, -1):
        code, a, b, c, d, e = rows[i]
        if code == op.FLIP:
            flip(state, a)
            flip(lam, a)
        elif code == op.ROT:
            th = _angle(b, params, consts)
            s0, s1 = _halves(state, a)
            l0, l1 = _halves(lam, a)
            if b >= 0:
                grad_params[b] += float(np.sum(l1 * s0) - np.sum(l0 * s1))
            cth, sth = np.cos(th), np.sin(th)
            rotate(state, a, cth, -sth)
            rotate(lam, a, cth, -sth)
        elif code == op.NEURON:
            p = events[i]
            sq = np.sqrt(p)
            mu = (lam - np.dot(lam, state) * state) / sq
            prev = ckpt[e]
            lane = nrn_target[a]
            bmap = nrn_bmap[a]
            a0, a1 = _halves(prev, lane)
            m0, m1 = _halves(mu, lane)
            flat = bmap.reshape(a0.shape)
            dalpha += np.bincount(flat.ravel(), weights=(m0 * a0 + m1 * a1).ravel(),
                                  minlength=dalpha.size)
            dbeta += np.bincount(flat.ravel(), weights=(m1 * a0 - m0 * a1).ravel(),
                                 minlength=dbeta.size)
            branch_rotate_adjoint(mu, lane, bmap, alpha, beta)
            lam = mu
            state = prev.copy()
        elif code == op.PROJECT:
            p = events[i]
            sq = np.sqrt(p)
            mu = (lam - np.dot(lam, state) * state) / sq + 2.0 * grad_outputs[c] * sq * state
            keep = (_indices(state.size) & a) == b
            mu[~keep] = 0.0
            lam = mu
            state = ckpt[e].copy()
        elif code == op.MARGINAL:
            k = _outcome_map(state.size, tuple(int(x) for x in aux[a:a + b]))
            lam += 2.0 * state * grad_outputs[c:c + (1 << b)][k]
    return lam


def count_slots(ops):
    codes = ops[:, 0]
    n_ckpt = int(np.count_nonzero((codes == op.NEURON) | (codes == op.PROJECT)))
    n_out = 0
    for code, a, b, c, d, e in ops.tolist():
        if code == op.PROJECT:
            n_out = max(n_out, c + 1)
        elif code == op.MARGINAL:
            n_out = max(n_out, c + (1 << b))
    return n_ckpt, n_out


def _event_stats(ops, events):
    is_event = (ops[:, 0] == op.NEURON) | (ops[:, 0] == op.PROJECT)
    ev = events[is_event]
    log_overhead = -0.5 * float(np.sum(np.log(ev))) if ev.size else 0.0
    min_p = float(ev.min()) if ev.size else 1.0
    return log_overhead, min_p


def _cross_entropy(ops, outputs, weight):
    grad_out = np.zeros(outputs.size)
    loss = 0.0
    for code, a, b, c, d, e in ops.tolist():
        if code == op.MARGINAL and d >= 0:
            q = outputs[c + d]
            loss -= weight * np.log(q)
            grad_out[c + d] -= weight / q
    return loss, grad_out


def evaluate(ops, aux, n_out, params, consts, nrn_target, nrn_bmap, alpha, beta,
             n_lanes, floor, weight):
    """Forward only: ``(status, loss, outputs, log_overhead, min_p)``."""
    state = np.zeros(1 << n_lanes)
    state[0] = 1.0
    outputs = np.zeros(n_out)
    events = np.ones(len(ops))
    status = forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
                     state, np.empty((0, state.size)), outputs, events, floor, False)
    if status != op.OK:
        return status, np.inf, outputs, np.inf, float(events[status])
    log_overhead, min_p = _event_stats(ops, events)
    loss, _ = _cross_entropy(ops, outputs, weight)
    return status, loss, outputs, log_overhead, min_p


def batch_evaluate(ops_all, op_off, aux_all, aux_off, n_out, out_off, weights,
                   params, consts, nrn_target, nrn_bmap, alpha, beta, n_lanes, floor):
    n = len(op_off) - 1
    status = np.full(n, op.OK, dtype=np.int64)
    loss = np.zeros(n)
    outs = np.zeros(out_off[-1])
    logo = np.zeros(n)
    minp = np.ones(n)
    for k in range(n):
        ops = ops_all[op_off[k]:op_off[k + 1]]
        aux = aux_all[aux_off[k]:aux_off[k + 1]]
        status[k], loss[k], outs[out_off[k]:out_off[k + 1]], logo[k], minp[k] = evaluate(
            ops, aux, n_out[k], params, consts, nrn_target, nrn_bmap, alpha, beta,
            n_lanes, floor, weights[k])
    return status, loss, outs, logo, minp


def value_and_grad(ops, aux, n_ckpt, n_out, params, consts, nrn_target, nrn_bmap,
                   alpha, beta, n_lanes, floor, weight):
    """Forward, weighted cross-entropy on marked marginals, backward.

    Returns ``(status, loss, grad_params, dalpha, dbeta, log_overhead, min_p)``
    where ``log_overhead = -0.5 * sum(ln p)`` over all postselection events.
    """
    size = 1 << n_lanes
    state = np.zeros(size)
    state[0] = 1.0
    ckpt = np.empty((n_ckpt, size))
    outputs = np.zeros(n_out)
    events = np.ones(len(ops))
    grad_params = np.zeros(params.size)
    dalpha = np.zeros(alpha.size)
    dbeta = np.zeros(beta.size)
    status = forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
                     state, ckpt, outputs, events, floor)
    if status != op.OK:
        return status, np.inf, grad_params, dalpha, dbeta, np.inf, float(events[status])
    log_overhead, min_p = _event_stats(ops, events)
    loss, grad_out = _cross_entropy(ops, outputs, weight)
    backward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
             state, ckpt, events, grad_out, grad_params, dalpha, dbeta)
    return status, loss, grad_params, dalpha, dbeta, log_overhead, min_p


def batch_value_and_grad(ops_all, op_off, aux_all, aux_off, n_ckpt, n_out, weights,
                         params, consts, nrn_target, nrn_bmap, alpha, beta, n_lanes, floor):
    """Per-sample results for a packed batch of programs (see ``value_and_grad``)."""
    n = len(op_off) - 1
    status = np.full(n, op.OK, dtype=np.int64)
    loss = np.zeros(n)
    grads = np.zeros((n, params.size))
    dal = np.zeros((n, alpha.size))
    dbe = np.zeros((n, beta.size))
    logo = np.zeros(n)
    minp = np.ones(n)
    for k in range(n):
        ops = ops_all[op_off[k]:op_off[k + 1]]
        aux = aux_all[aux_off[k]:aux_off[k + 1]]
        st, lo, g, da, db, lg, mp = value_and_grad(
            ops, aux, n_ckpt[k], n_out[k], params, consts, nrn_target, nrn_bmap,
            alpha, beta, n_lanes, floor, weights[k])
        status[k], loss[k], grads[k], dal[k], dbe[k], logo[k], minp[k] = st, lo, g, da, db, lg, mp
    return status, loss, grads, dal, dbe, logo, minp
