# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused hot loops: per-slot link dynamics, state encoding, network kernels.

Must stay arithmetically identical to the reference implementations in
``env.py`` (same operation order, so results match bit for bit) and
numerically equivalent to ``nn.py`` (summation order may differ from BLAS,
agreement is to rounding error). Any semantic change must land in both.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

ctypedef cnp.int64_t i64
ctypedef cnp.uint8_t u8

DEF MAX_SLICES = 8
DEF MAX_USERS = 64
DEF MAX_WIDTH = 1024


def run_slots(i64[:, ::1] q_arrival, i64[:, ::1] q_user, i64[:, ::1] q_meta,
              i64[::1] alloc,
              i64[::1] user_slice, u8[::1] user_onoff, double[::1] user_flip,
              i64[::1] user_bps, i64[::1] user_accum, u8[::1] user_active,
              double[::1] user_budget, u8[::1] user_critical,
              u8[::1] counted, i64[:, ::1] counters,
              double[:, ::1] uniforms, double[::1] phi_out,
              long start_slot, long n_slots,
              long packet_bits, long slot_bits, long n_blocks, long q_capacity):
    """Advance ``n_slots`` slots under a fixed allocation, in place."""
    cdef long n_slices = q_arrival.shape[0]
    cdef long rc = q_arrival.shape[1]
    cdef long n_users = user_slice.shape[0]
    if n_slices > MAX_SLICES or n_users > MAX_USERS:
        raise ValueError("too many slices or users for the compiled core")
    if phi_out.shape[0] != n_slots:
        raise ValueError("phi_out length must equal n_slots")

    cdef double util_sum[MAX_SLICES]
    cdef long chi[MAX_SLICES]
    cdef long omega[MAX_SLICES]
    cdef long generated[MAX_SLICES]
    cdef long cap[MAX_SLICES]
    cdef long n_counted = 0
    cdef long s, k, slot, u, i, pos, head, length, tail, cnt, take, delay
    cdef double f, budget, acc_phi
    cdef long tot

    for s in range(n_slices):
        if counted[s]:
            n_counted += 1
        cap[s] = (alloc[s] * slot_bits) // (packet_bits * n_blocks)

    for k in range(n_slots):
        slot = start_slot + k

        # on-off transitions, in user order
        for u in range(n_users):
            if user_onoff[u] and uniforms[slot, u] < user_flip[u]:
                user_active[u] = 0 if user_active[u] else 1

        # transmission: drain each queue head, accumulating delay utilities
        for s in range(n_slices):
            head = q_meta[s, 0]
            length = q_meta[s, 1]
            take = cap[s]
            if length < take:
                take = length
            chi[s] = take
            util_sum[s] = 0.0
            for i in range(take):
                pos = head + i
                if pos >= rc:
                    pos -= rc
                delay = slot - q_arrival[s, pos]
                u = q_user[s, pos]
                budget = user_budget[u]
                if user_critical[u]:
                    f = 1.0 if delay <= budget else 0.0
                else:
                    f = 1.0 if delay <= budget else budget / delay
                util_sum[s] += f
            head += take
            if head >= rc:
                head -= rc
            q_meta[s, 0] = head
            q_meta[s, 1] = length - take

        # packet generation straight into the rings, in user order
        for s in range(n_slices):
            generated[s] = 0
        for u in range(n_users):
            if not user_active[u]:
                continue
            user_accum[u] = user_accum[u] + user_bps[u]
            cnt = user_accum[u] // packet_bits
            if cnt == 0:
                continue
            user_accum[u] = user_accum[u] - cnt * packet_bits
            s = user_slice[u]
            generated[s] += cnt
            head = q_meta[s, 0]
            length = q_meta[s, 1]
            if length + cnt > rc:
                raise OverflowError("ring buffer exhausted; arrivals outgrew the ring")
            for i in range(cnt):
                tail = head + length + i
                if tail >= rc:
                    tail -= rc
                q_arrival[s, tail] = slot
                q_user[s, tail] = u
            q_meta[s, 1] = length + cnt

        # overflow: drop the oldest packets past capacity
        for s in range(n_slices):
            length = q_meta[s, 1]
            tot = length - q_capacity
            if tot < 0:
                tot = 0
            omega[s] = tot
            if tot > 0:
                head = q_meta[s, 0] + tot
                if head >= rc:
                    head -= rc
                q_meta[s, 0] = head
                q_meta[s, 1] = length - tot
            counters[s, 0] += generated[s]
            counters[s, 1] += chi[s]
            counters[s, 2] += omega[s]

        # slot utility over the slices that have users
        acc_phi = 0.0
        for s in range(n_slices):
            if not counted[s]:
                continue
            tot = chi[s] + omega[s]
            if tot > 0:
                acc_phi += util_sum[s] / tot
        phi_out[k] = acc_phi / n_counted if n_counted > 0 else 0.0


def build_state(i64[:, ::1] q_arrival, i64[:, ::1] q_user, i64[:, ::1] q_meta,
                i64[::1] alloc, double[::1] user_budget,
                long current_slot, long q_capacity,
                long packet_bits, long slot_bits, long n_blocks,
                double delay_budget_max, double[::1] out):
    """Mirror of ``env.build_state`` over the shared ring arrays."""
    cdef long n_slices = q_arrival.shape[0]
    cdef long rc = q_arrival.shape[1]
    cdef long full_cap = (n_blocks * slot_bits) // (packet_bits * n_blocks)
    cdef long s, i, pos, head, length, cap, m
    cdef double total, low, rem

    for s in range(n_slices):
        head = q_meta[s, 0]
        length = q_meta[s, 1]
        out[4 * s] = <double>length / <double>q_capacity
        if length == 0:
            out[4 * s + 1] = 1.0
            out[4 * s + 2] = 1.0
        else:
            total = 0.0
            low = 1e300
            for i in range(length):
                pos = head + i
                if pos >= rc:
                    pos -= rc
                rem = user_budget[q_user[s, pos]] - <double>(current_slot - q_arrival[s, pos])
                if rem > delay_budget_max:
                    rem = delay_budget_max
                elif rem < -delay_budget_max:
                    rem = -delay_budget_max
                total += rem
                if rem < low:
                    low = rem
            out[4 * s + 1] = (total / length) / delay_budget_max
            out[4 * s + 2] = low / delay_budget_max
        cap = (alloc[s] * slot_bits) // (packet_bits * n_blocks)
        m = length if length < cap else cap
        out[4 * s + 3] = <double>m / <double>full_cap


cdef inline void _fwd(const double* p, const double* x,
                      double* z1, double* h1v, double* z2, double* h2v, double* q,
                      long n_in, long h1, long h2, long n_out) noexcept:
    cdef long i, j
    cdef double xi
    cdef const double* w1 = p
    cdef const double* b1 = p + n_in * h1
    cdef const double* w2 = b1 + h1
    cdef const double* b2 = w2 + h1 * h2
    cdef const double* w3 = b2 + h2
    cdef const double* b3 = w3 + h2 * n_out

    for j in range(h1):
        z1[j] = b1[j]
    for i in range(n_in):
        xi = x[i]
        if xi != 0.0:
            for j in range(h1):
                z1[j] += xi * w1[i * h1 + j]
    for j in range(h1):
        h1v[j] = z1[j] if z1[j] > 0.0 else 0.0

    for j in range(h2):
        z2[j] = b2[j]
    for i in range(h1):
        xi = h1v[i]
        if xi != 0.0:
            for j in range(h2):
                z2[j] += xi * w2[i * h2 + j]
    for j in range(h2):
        h2v[j] = z2[j] if z2[j] > 0.0 else 0.0

    for j in range(n_out):
        q[j] = b3[j]
    for i in range(h2):
        xi = h2v[i]
        if xi != 0.0:
            for j in range(n_out):
                q[j] += xi * w3[i * n_out + j]


def nn_forward(double[::1] params, double[::1] x, double[::1] out,
               long n_in, long h1, long h2, long n_out):
    if h1 > MAX_WIDTH or h2 > MAX_WIDTH or n_out > MAX_WIDTH:
        raise ValueError("layer too wide for the compiled core")
    cdef double z1[MAX_WIDTH]
    cdef double h1v[MAX_WIDTH]
    cdef double z2[MAX_WIDTH]
    cdef double h2v[MAX_WIDTH]
    _fwd(&params[0], &x[0], z1, h1v, z2, h2v, &out[0], n_in, h1, h2, n_out)


def nn_forward_batch(double[::1] params, double[:, ::1] states, double[:, ::1] out,
                     long n_in, long h1, long h2, long n_out):
    if h1 > MAX_WIDTH or h2 > MAX_WIDTH or n_out > MAX_WIDTH:
        raise ValueError("layer too wide for the compiled core")
    cdef double z1[MAX_WIDTH]
    cdef double h1v[MAX_WIDTH]
    cdef double z2[MAX_WIDTH]
    cdef double h2v[MAX_WIDTH]
    cdef long b
    for b in range(states.shape[0]):
        _fwd(&params[0], &states[b, 0], z1, h1v, z2, h2v, &out[b, 0],
             n_in, h1, h2, n_out)


def sarsa_chain(double[::1] params, double[::1] m, double[::1] v, long step0,
                double[:, ::1] states, i64[::1] actions, double[::1] rewards,
                double[:, ::1] next_states, i64[::1] next_actions,
                double gamma, double lr, double beta1, double beta2, double eps,
                long n_in, long h1, long h2, long n_out):
    """One optimizer step per transition, in order: the fused hot path of
    training with unit minibatches. Semantically identical to computing the
    bootstrapped target, the TD-loss gradient and an Adam update per sample.
    Returns the new optimizer step count.
    """
    if h1 > MAX_WIDTH or h2 > MAX_WIDTH or n_out > MAX_WIDTH:
        raise ValueError("layer too wide for the compiled core")
    cdef long n = states.shape[0]
    cdef long n_params = params.shape[0]
    if (actions.shape[0] != n or rewards.shape[0] != n
            or next_states.shape[0] != n or next_actions.shape[0] != n):
        raise ValueError("batch arrays disagree on length")
    if m.shape[0] != n_params or v.shape[0] != n_params:
        raise ValueError("optimizer state does not match the parameters")
    cdef long chk
    for chk in range(n):
        if not 0 <= actions[chk] < n_out or not 0 <= next_actions[chk] < n_out:
            raise ValueError("action index out of range")
    cdef double z1[MAX_WIDTH]
    cdef double h1v[MAX_WIDTH]
    cdef double z2[MAX_WIDTH]
    cdef double h2v[MAX_WIDTH]
    cdef double q[MAX_WIDTH]
    cdef double dz2[MAX_WIDTH]
    cdef long o_b1 = n_in * h1
    cdef long o_w2 = o_b1 + h1
    cdef long o_b2 = o_w2 + h1 * h2
    cdef long o_w3 = o_b2 + h2
    cdef long o_b3 = o_w3 + h2 * n_out
    cdef const double* w2
    cdef const double* w3
    cdef long b, a, i, k, j
    cdef double d3, target, dz1_i, dh1, gi, c1, c2, m_hat, v_hat

    grad_buf = np.zeros(n_params, dtype=np.float64)
    cdef double[::1] grad = grad_buf
    cdef long t_now = step0

    for b in range(n):
        # bootstrapped target from the current parameters, held fixed
        _fwd(&params[0], &next_states[b, 0], z1, h1v, z2, h2v, q,
             n_in, h1, h2, n_out)
        target = rewards[b] + gamma * q[next_actions[b]]

        for i in range(n_params):
            grad[i] = 0.0
        w2 = &params[o_w2]
        w3 = &params[o_w3]
        a = actions[b]
        _fwd(&params[0], &states[b, 0], z1, h1v, z2, h2v, q, n_in, h1, h2, n_out)
        d3 = 2.0 * (q[a] - target)
        grad[o_b3 + a] += d3
        for k in range(h2):
            grad[o_w3 + k * n_out + a] += h2v[k] * d3
            dz2[k] = w3[k * n_out + a] * d3 if z2[k] > 0.0 else 0.0
            grad[o_b2 + k] += dz2[k]
        for i in range(h1):
            if z1[i] > 0.0:
                dh1 = 0.0
                for k in range(h2):
                    grad[o_w2 + i * h2 + k] += h1v[i] * dz2[k]
                    dh1 += w2[i * h2 + k] * dz2[k]
                dz1_i = dh1
                grad[o_b1 + i] += dz1_i
                for j in range(n_in):
                    grad[j * h1 + i] += states[b, j] * dz1_i

        # bias-corrected Adam, matching the numpy reference expression order
        t_now += 1
        c1 = 1.0 - beta1 ** t_now
        c2 = 1.0 - beta2 ** t_now
        for i in range(n_params):
            gi = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
            m_hat = m[i] / c1
            v_hat = v[i] / c2
            params[i] = params[i] - lr * m_hat / (sqrt(v_hat) + eps)
    return t_now


def nn_td_grad_batch(double[::1] params, double[:, ::1] states,
                     i64[::1] actions, double[::1] targets, double[::1] grad,
                     long n_in, long h1, long h2, long n_out):
    """Accumulate the mean of per-sample gradients of (Q(s,a) - target)^2.

    ``grad`` must come in zeroed and matches the flat parameter layout.
    Returns the mean loss over the batch.
    """
    if h1 > MAX_WIDTH or h2 > MAX_WIDTH or n_out > MAX_WIDTH:
        raise ValueError("layer too wide for the compiled core")
    cdef long n = states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if actions.shape[0] != n or targets.shape[0] != n:
        raise ValueError("batch arrays disagree on length")
    cdef long chk
    for chk in range(n):
        if not 0 <= actions[chk] < n_out:
            raise ValueError("action index out of range")
    cdef double z1[MAX_WIDTH]
    cdef double h1v[MAX_WIDTH]
    cdef double z2[MAX_WIDTH]
    cdef double h2v[MAX_WIDTH]
    cdef double q[MAX_WIDTH]
    cdef double dz2[MAX_WIDTH]
    cdef long o_b1 = n_in * h1
    cdef long o_w2 = o_b1 + h1
    cdef long o_b2 = o_w2 + h1 * h2
    cdef long o_w3 = o_b2 + h2
    cdef long o_b3 = o_w3 + h2 * n_out
    cdef double* gw1 = &grad[0]
    cdef double* gb1 = &grad[o_b1]
    cdef double* gw2 = &grad[o_w2]
    cdef double* gb2 = &grad[o_b2]
    cdef double* gw3 = &grad[o_w3]
    cdef double* gb3 = &grad[o_b3]
    cdef const double* w2 = &params[o_w2]
    cdef const double* w3 = &params[o_w3]
    cdef long b, a, i, k, j
    cdef double d3, resid, dz1_i, dh1, loss = 0.0

    for b in range(n):
        a = actions[b]
        _fwd(&params[0], &states[b, 0], z1, h1v, z2, h2v, q, n_in, h1, h2, n_out)
        resid = q[a] - targets[b]
        loss += resid * resid
        d3 = 2.0 * resid / n
        gb3[a] += d3
        for k in range(h2):
            gw3[k * n_out + a] += h2v[k] * d3
            dz2[k] = w3[k * n_out + a] * d3 if z2[k] > 0.0 else 0.0
            gb2[k] += dz2[k]
        for i in range(h1):
            # z1 <= 0 means h1v[i] == 0: the row contributes nothing anywhere
            if z1[i] > 0.0:
                dh1 = 0.0
                for k in range(h2):
                    gw2[i * h2 + k] += h1v[i] * dz2[k]
                    dh1 += w2[i * h2 + k] * dz2[k]
                dz1_i = dh1
                gb1[i] += dz1_i
                for j in range(n_in):
                    gw1[j * h1 + i] += states[b, j] * dz1_i
    return loss / n
