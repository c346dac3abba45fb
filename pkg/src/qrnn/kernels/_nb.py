"""numba implementation of the statevector kernels.

Mirrors ``_np`` function for function; the loops walk amplitude pairs
directly instead of building reshaped views.
"""

import numpy as np
from numba import njit

from .._numba_settings import numba_default
from . import opcodes as op

_FLIP = op.FLIP
_ROT = op.ROT
_NEURON = op.NEURON
_PROJECT = op.PROJECT
_MARGINAL = op.MARGINAL
_OK = op.OK


@njit(**numba_default)
def _pair_base(j, lane):
    low = (1 << lane) - 1
    return ((j >> lane) << (lane + 1)) | (j & low)


@njit(**numba_default)
def rotate(state, lane, c, s):
    bit = 1 << lane
    for j in range(state.size >> 1):
        i0 = _pair_base(j, lane)
        i1 = i0 | bit
        x0 = state[i0]
        x1 = state[i1]
        state[i0] = c * x0 - s * x1
        state[i1] = s * x0 + c * x1


@njit(**numba_default)
def flip(state, lane):
    bit = 1 << lane
    for j in range(state.size >> 1):
        i0 = _pair_base(j, lane)
        i1 = i0 | bit
        x0 = state[i0]
        state[i0] = state[i1]
        state[i1] = x0


@njit(**numba_default)
def branch_rotate(state, lane, bmap, alpha, beta):
    bit = 1 << lane
    for j in range(state.size >> 1):
        i0 = _pair_base(j, lane)
        i1 = i0 | bit
        k = bmap[j]
        al = alpha[k]
        be = beta[k]
        x0 = state[i0]
        x1 = state[i1]
        state[i0] = al * x0 - be * x1
        state[i1] = be * x0 + al * x1


@njit(**numba_default)
def branch_rotate_adjoint(state, lane, bmap, alpha, beta):
    bit = 1 << lane
    for j in range(state.size >> 1):
        i0 = _pair_base(j, lane)
        i1 = i0 | bit
        k = bmap[j]
        al = alpha[k]
        be = beta[k]
        x0 = state[i0]
        x1 = state[i1]
        state[i0] = al * x0 + be * x1
        state[i1] = -be * x0 + al * x1


@njit(**numba_default)
def norm2(state):
    acc = 0.0
    for i in range(state.size):
        acc += state[i] * state[i]
    return acc


@njit(**numba_default)
def renormalize(state):
    """Scale to unit norm when the squared norm is positive; returns it."""
    p = norm2(state)
    if p > 0.0:
        inv = 1.0 / np.sqrt(p)
        for i in range(state.size):
            state[i] *= inv
    return p


@njit(**numba_default)
def project(state, mask, value):
    p = 0.0
    for i in range(state.size):
        if (i & mask) == value:
            p += state[i] * state[i]
        else:
            state[i] = 0.0
    if p > 0.0:
        inv = 1.0 / np.sqrt(p)
        for i in range(state.size):
            state[i] *= inv
    return p


@njit(**numba_default)
def _outcome(i, lanes):
    k = 0
    for j in range(lanes.size):
        k |= ((i >> lanes[j]) & 1) << j
    return k


@njit(**numba_default)
def marginal(state, lanes):
    out = np.zeros(1 << lanes.size)
    for i in range(state.size):
        out[_outcome(i, lanes)] += state[i] * state[i]
    return out


@njit(**numba_default)
def _angle(ref, params, consts):
    if ref >= 0:
        return params[ref]
    return consts[-1 - ref]


@njit(**numba_default)
def forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
            state, ckpt, outputs, events, floor, save):
    for i in range(ops.shape[0]):
        code = ops[i, 0]
        a = ops[i, 1]
        b = ops[i, 2]
        c = ops[i, 3]
        e = ops[i, 5]
        if code == _FLIP:
            flip(state, a)
        elif code == _ROT:
            th = _angle(b, params, consts)
            rotate(state, a, np.cos(th), np.sin(th))
        elif code == _NEURON:
            if save:
                ckpt[e, :] = state
            branch_rotate(state, nrn_target[a], nrn_bmap[a], alpha, beta)
            p = renormalize(state)
            events[i] = p
            if p < floor:
                return i
        elif code == _PROJECT:
            if save:
                ckpt[e, :] = state
            p = project(state, a, b)
            events[i] = p
            outputs[c] = p
            if p < floor:
                return i
        elif code == _MARGINAL:
            lanes = aux[a:a + b]
            for k in range(state.size):
                outputs[c + _outcome(k, lanes)] += state[k] * state[k]
    return _OK


@njit(**numba_default)
def _renorm_adjoint(lam, state, sq):
    dot = 0.0
    for k in range(state.size):
        dot += lam[k] * state[k]
    mu = np.empty_like(lam)
    for k in range(state.size):
        mu[k] = (lam[k] - dot * state[k]) / sq
    return mu


@njit(**numba_default)
def backward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
             state, ckpt, events, grad_outputs, grad_params, dalpha, dbeta):
    lam = np.zeros_like(state)
    half = state.size >> 1
    for i in range(ops.shape[0] - 1, -1, -1):
        code = ops[i, 0]
        a = ops[i, 1]
        b = ops[i, 2]
        c = ops[i, 3]
        e = ops[i, 5]
        if code == _FLIP:
            flip(state, a)
            flip(lam, a)
        elif code == _ROT:
            th = _angle(b, params, consts)
            cth = np.cos(th)
            sth = np.sin(th)
            bit = 1 << a
            g = 0.0
            for j in range(half):
                i0 = _pair_base(j, a)
                i1 = i0 | bit
                g += lam[i1] * state[i0] - lam[i0] * state[i1]
                x0 = state[i0]
                x1 = state[i1]
                state[i0] = cth * x0 + sth * x1
                state[i1] = -sth * x0 + cth * x1
                y0 = lam[i0]
                y1 = lam[i1]
                lam[i0] = cth * y0 + sth * y1
                lam[i1] = -sth * y0 + cth * y1
            if b >= 0:
                grad_params[b] += g
        elif code == _NEURON:
            mu = _renorm_adjoint(lam, state, np.sqrt(events[i]))
            lane = nrn_target[a]
            bmap = nrn_bmap[a]
            bit = 1 << lane
            for k in range(state.size):
                state[k] = ckpt[e, k]
            for j in range(half):
                i0 = _pair_base(j, lane)
                i1 = i0 | bit
                t = bmap[j]
                a0 = state[i0]
                a1 = state[i1]
                m0 = mu[i0]
                m1 = mu[i1]
                dalpha[t] += m0 * a0 + m1 * a1
                dbeta[t] += m1 * a0 - m0 * a1
                al = alpha[t]
                be = beta[t]
                lam[i0] = al * m0 + be * m1
                lam[i1] = -be * m0 + al * m1
        elif code == _PROJECT:
            sq = np.sqrt(events[i])
            mu = _renorm_adjoint(lam, state, sq)
            gp = 2.0 * grad_outputs[c] * sq
            for k in range(state.size):
                if (k & a) == b:
                    lam[k] = mu[k] + gp * state[k]
                else:
                    lam[k] = 0.0
                state[k] = ckpt[e, k]
        elif code == _MARGINAL:
            lanes = aux[a:a + b]
            for k in range(state.size):
                lam[k] += 2.0 * state[k] * grad_outputs[c + _outcome(k, lanes)]
    return lam


@njit(**numba_default)
def _event_stats(ops, events):
    log_overhead = 0.0
    min_p = 1.0
    for i in range(ops.shape[0]):
        code = ops[i, 0]
        if code == _NEURON or code == _PROJECT:
            log_overhead -= 0.5 * np.log(events[i])
            if events[i] < min_p:
                min_p = events[i]
    return log_overhead, min_p


@njit(**numba_default)
def _cross_entropy(ops, outputs, weight):
    grad_out = np.zeros(outputs.size)
    loss = 0.0
    for i in range(ops.shape[0]):
        if ops[i, 0] == _MARGINAL and ops[i, 4] >= 0:
            slot = ops[i, 3] + ops[i, 4]
            q = outputs[slot]
            loss -= weight * np.log(q)
            grad_out[slot] -= weight / q
    return loss, grad_out


@njit(**numba_default)
def evaluate(ops, aux, n_out, params, consts, nrn_target, nrn_bmap, alpha, beta,
             n_lanes, floor, weight):
    state = np.zeros(1 << n_lanes)
    state[0] = 1.0
    outputs = np.zeros(n_out)
    events = np.ones(ops.shape[0])
    status = forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
                     state, np.empty((0, state.size)), outputs, events, floor, False)
    if status != _OK:
        return status, np.inf, outputs, np.inf, events[status]
    log_overhead, min_p = _event_stats(ops, events)
    loss, _ = _cross_entropy(ops, outputs, weight)
    return status, loss, outputs, log_overhead, min_p


@njit(**numba_default)
def batch_evaluate(ops_all, op_off, aux_all, aux_off, n_out, out_off, weights,
                   params, consts, nrn_target, nrn_bmap, alpha, beta, n_lanes, floor):
    n = op_off.size - 1
    status = np.full(n, _OK, dtype=np.int64)
    loss = np.zeros(n)
    outs = np.zeros(out_off[n])
    logo = np.zeros(n)
    minp = np.ones(n)
    for k in range(n):
        ops = ops_all[op_off[k]:op_off[k + 1]]
        aux = aux_all[aux_off[k]:aux_off[k + 1]]
        st, lo, o, lg, mp = evaluate(ops, aux, n_out[k], params, consts, nrn_target, nrn_bmap,
                                     alpha, beta, n_lanes, floor, weights[k])
        status[k] = st
        loss[k] = lo
        outs[out_off[k]:out_off[k + 1]] = o
        logo[k] = lg
        minp[k] = mp
    return status, loss, outs, logo, minp


@njit(**numba_default)
def value_and_grad(ops, aux, n_ckpt, n_out, params, consts, nrn_target, nrn_bmap,
                   alpha, beta, n_lanes, floor, weight):
    size = 1 << n_lanes
    state = np.zeros(size)
    state[0] = 1.0
    ckpt = np.empty((n_ckpt, size))
    outputs = np.zeros(n_out)
    events = np.ones(ops.shape[0])
    grad_params = np.zeros(params.size)
    dalpha = np.zeros(alpha.size)
    dbeta = np.zeros(beta.size)
    status = forward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
                     state, ckpt, outputs, events, floor, True)
    if status != _OK:
        return status, np.inf, grad_params, dalpha, dbeta, np.inf, events[status]
    log_overhead, min_p = _event_stats(ops, events)
    loss, grad_out = _cross_entropy(ops, outputs, weight)
    backward(ops, aux, params, consts, nrn_target, nrn_bmap, alpha, beta,
             state, ckpt, events, grad_out, grad_params, dalpha, dbeta)
    return status, loss, grad_params, dalpha, dbeta, log_overhead, min_p


@njit(**numba_default)
def batch_value_and_grad(ops_all, op_off, aux_all, aux_off, n_ckpt, n_out, weights,
                         params, consts, nrn_target, nrn_bmap, alpha, beta, n_lanes, floor):
    n = op_off.size - 1
    status = np.full(n, _OK, dtype=np.int64)
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
        status[k] = st
        loss[k] = lo
        grads[k, :] = g
        dal[k, :] = da
        dbe[k, :] = db
        logo[k] = lg
        minp[k] = mp
    return status, loss, grads, dal, dbe, logo, minp


def count_slots(ops):
    from ._np import count_slots as _count

    return _count(ops)
