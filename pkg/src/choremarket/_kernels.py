"""Jitted inner loops for the price dynamics.

One kernel advances a run by up to `batch` iterations, recording rows on a
stride and maintaining exact per-step statistics (price-sum deviation, barrier
crossings, naive-mode monotonicity). Semantics mirror the pure-numpy step
functions in `dynamics`/`excess`; tests assert both paths agree step for step.

Stop codes: 0 batch exhausted, 1 eps reached, 2 diverged, 3 entered the
all-prices-above-threshold region, 4 prices left the nonnegative orthant.
"""

import math

import numpy as np
from numba import njit

CONTINUE = 0
STOP_EPS = 1
STOP_DIVERGED = 2
STOP_ENTERED = 3
STOP_BAD_PRICE = 4


@njit(cache=True)
def _selection(p, d, B, rho, tie_kind, tie_w, tie_tol, x_out, z_out):
    """Demand selection and excess demand at p. Returns False on bad prices."""
    n, m = d.shape
    pmax = 0.0
    for j in range(m):
        if p[j] > pmax:
            pmax = p[j]
    if pmax <= 0.0:
        return False
    for j in range(m):
        z_out[j] = -1.0
        for i in range(n):
            x_out[i, j] = 0.0
    for i in range(n):
        if rho[i] == 1.0:
            best = -1.0
            for j in range(m):
                r = p[j] / d[i, j]
                if r > best:
                    best = r
            thr = best * (1.0 - tie_tol)
            if tie_kind == 1:  # lowest index
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        x_out[i, j] = B[i] / p[j]
                        z_out[j] += x_out[i, j]
                        break
            elif tie_kind == 2:  # fixed weighting over the tie set
                tot = 0.0
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        tot += tie_w[j]
                cnt = 0
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        cnt += 1
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        share = tie_w[j] / tot if tot > 0.0 else 1.0 / cnt
                        x_out[i, j] = share * B[i] / p[j]
                        z_out[j] += x_out[i, j]
            else:  # uniform split
                cnt = 0
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        cnt += 1
                for j in range(m):
                    if p[j] > 0.0 and p[j] / d[i, j] >= thr:
                        x_out[i, j] = B[i] / (cnt * p[j])
                        z_out[j] += x_out[i, j]
        else:
            inv = 1.0 / (rho[i] - 1.0)
            tmax = -1.0e308
            for j in range(m):
                if p[j] > 0.0:
                    t = (math.log(p[j]) - math.log(d[i, j])) * inv + math.log(p[j])
                    if t > tmax:
                        tmax = t
            den = 0.0
            for j in range(m):
                if p[j] > 0.0:
                    t = (math.log(p[j]) - math.log(d[i, j])) * inv + math.log(p[j])
                    den += math.exp(t - tmax)
            for j in range(m):
                if p[j] > 0.0:
                    lw = (math.log(p[j]) - math.log(d[i, j])) * inv
                    x_out[i, j] = B[i] * math.exp(lw - tmax) / den
                    z_out[j] += x_out[i, j]
    return True


@njit(cache=True)
def _potential(p, d, B, rho, sigma):
    """f(p) = -sum p + sum_i B_i log d_i^o(p), stable in log space."""
    n, m = d.shape
    f = 0.0
    for j in range(m):
        f -= p[j]
    for i in range(n):
        if rho[i] == 1.0:
            best = -1.0e308
            for j in range(m):
                if p[j] > 0.0:
                    r = math.log(p[j]) - math.log(d[i, j])
                    if r > best:
                        best = r
            f += B[i] * best
        else:
            tmax = -1.0e308
            for j in range(m):
                if p[j] > 0.0:
                    t = sigma[i] * math.log(p[j]) + (1.0 - sigma[i]) * math.log(d[i, j])
                    if t > tmax:
                        tmax = t
            s = 0.0
            for j in range(m):
                if p[j] > 0.0:
                    t = sigma[i] * math.log(p[j]) + (1.0 - sigma[i]) * math.log(d[i, j])
                    s += math.exp(t - tmax)
            f += B[i] * (tmax + math.log(s)) / sigma[i]
    return f


@njit(cache=True)
def run_batch(p, d, B, rho, sigma, Bsum, ell0,
              naive, tie_kind, tie_w, tie_tol,
              sched_kind, eta_const, c_harm, cap,
              k0, kmax, eps, div_threshold, stop_below,
              rec_every, rec_k, rec_p, rec_eta, rec_f, rec_zt, rec_zi,
              crossed_l0, crossed_half, stats):
    """Advance the dynamics in place from iteration k0 up to kmax.

    Returns (k_end, stop_code, rows_recorded). `stats` holds
    [max |sum p - Bsum|, naive-sum-monotone flag, barrier(l0 -> l0/2) flag,
    barrier(l0/2 sticky) flag] and is updated in place, as are the crossing
    flag arrays.
    """
    n, m = d.shape
    x = np.empty((n, m))
    z = np.empty(m)
    nrec = 0
    k = k0
    while True:
        ok = _selection(p, d, B, rho, tie_kind, tie_w, tie_tol, x, z)
        if not ok:
            return k, STOP_BAD_PRICE, nrec

        # Mean-center twice so the step direction sums to ~1 ulp of zero.
        mu = 0.0
        for j in range(m):
            mu += z[j]
        mu /= m
        res = 0.0
        for j in range(m):
            res += z[j] - mu
        mu += res / m

        ztn = 0.0
        zin = 0.0
        for j in range(m):
            c = z[j] - mu
            ztn += c * c
            if abs(z[j]) > zin:
                zin = abs(z[j])
        ztn = math.sqrt(ztn)

        if sched_kind == 0:
            eta = eta_const
        else:
            eta = c_harm / (k + 1.0)
            if eta > cap:
                eta = cap

        if rec_every > 0 and k % rec_every == 0:
            rec_k[nrec] = k
            for j in range(m):
                rec_p[nrec, j] = p[j]
            rec_eta[nrec] = eta
            rec_f[nrec] = _potential(p, d, B, rho, sigma)
            rec_zt[nrec] = ztn
            rec_zi[nrec] = zin
            nrec += 1

        if naive:
            zn = 0.0
            psum = 0.0
            for j in range(m):
                zn += z[j] * z[j]
                psum += p[j]
            if math.sqrt(zn) <= eps:
                return k, STOP_EPS, nrec
            if div_threshold > 0.0 and psum > div_threshold:
                return k, STOP_DIVERGED, nrec
        else:
            if ztn <= eps:
                return k, STOP_EPS, nrec
            if stop_below > 0.0:
                pmin = p[0]
                for j in range(1, m):
                    if p[j] < pmin:
                        pmin = p[j]
                if pmin >= stop_below:
                    return k, STOP_ENTERED, nrec

        if k >= kmax:
            return k, CONTINUE, nrec

        old_sum = 0.0
        for j in range(m):
            old_sum += p[j]
        if naive:
            for j in range(m):
                p[j] -= eta * z[j]
        else:
            for j in range(m):
                p[j] -= eta * (z[j] - mu)
        k += 1

        new_sum = 0.0
        for j in range(m):
            new_sum += p[j]
        if naive:
            if new_sum <= old_sum:
                stats[1] = 0.0
        else:
            dev = abs(new_sum - Bsum)
            if dev > stats[0]:
                stats[0] = dev
        half = 0.5 * ell0
        for j in range(m):
            if crossed_l0[j] == 1 and p[j] < half:
                stats[2] = 0.0
            if crossed_half[j] == 1 and p[j] < half:
                stats[3] = 0.0
            if p[j] > ell0:
                crossed_l0[j] = 1
            if p[j] >= half:
                crossed_half[j] = 1
