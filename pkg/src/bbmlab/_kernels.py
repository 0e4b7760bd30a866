"""Numba kernels for the particle simulations.

Particle storage is packed: ``PF[:, 0]`` absolute position, ``PF[:, 1]`` remaining branch
clock, ``PF[:, 2]`` time offset reached inside the current step. ``PI_[:, 0]`` tier,
``PI_[:, 1]`` excursion index (-1 when the particle is not in an excursion), ``PI_[:, 2]`` id,
``PI_[:, 3]`` parent id, ``PI_[:, 4]`` dead flag.
"""
import math

import numpy as np
from numba import njit

# counters
C_N, C_NEXC, C_NRET, C_NLOG, C_NEXTID, C_R, C_STATUS, C_BIRTHS, C_KILL_LEFT, C_BRANCH, C_KILL_RIGHT = range(11)
N_COUNTERS = 11

# excursion float columns
E_TAU, E_LINE0, E_Z, E_Y, E_TMAX, E_XBASE = range(6)
# excursion int columns
E_PENDING, E_ROOT_TIER, E_FUGITIVE, E_STATUS = range(4)
EXC_ACTIVE, EXC_DONE, EXC_TRUNCATED = 0, 1, 2

EV_BRANCH, EV_ABSORB_LEFT, EV_HIT_A, EV_RETURN, EV_KILL_RIGHT, EV_DEATH = range(6)
EVENT_NAMES = ("branch", "absorb_left", "hit_a", "return_to_line", "kill_right", "death")

STATUS_OK, STATUS_CAP, STATUS_GROW = 0, 1, 2


@njit(cache=True)
def weight_w(x, a, mu):
    return a * math.exp(mu * (x - a)) * math.sin(math.pi * x / a)


@njit(cache=True)
def sample_k(rng, cdf, ks):
    u = rng.random()
    for j in range(cdf.shape[0]):
        if u < cdf[j]:
            return ks[j]
    return ks[cdf.shape[0] - 1]


@njit(cache=True)
def _crossed(rng, d0, d1, h):
    """Did a Brownian bridge with end gaps d0, d1 above a linear boundary touch it?"""
    if d1 <= 0.0 or d0 <= 0.0:
        return True
    q = 2.0 * d0 * d1 / h
    # probability below e^-40: no draw needed
    if q > 40.0:
        return False
    return rng.random() < math.exp(-q)


@njit(cache=True)
def _log(LF, LI, C, t, etype, pid, parent, pos, tier):
    k = C[C_NLOG]
    LF[k, 0] = t
    LF[k, 1] = pos
    LI[k, 0] = etype
    LI[k, 1] = pid
    LI[k, 2] = parent
    LI[k, 3] = tier
    C[C_NLOG] = k + 1


@njit(cache=True)
def _new_excursion(EF, EI, C, tau, line0, xbase, tier, fugitive):
    e = C[C_NEXC]
    EF[e, E_TAU] = tau
    EF[e, E_LINE0] = line0
    EF[e, E_Z] = 0.0
    EF[e, E_Y] = 0.0
    EF[e, E_TMAX] = 0.0
    EF[e, E_XBASE] = xbase
    EI[e, E_PENDING] = 1
    EI[e, E_ROOT_TIER] = tier
    EI[e, E_FUGITIVE] = fugitive
    EI[e, E_STATUS] = EXC_ACTIVE
    C[C_NEXC] = e + 1
    return e


@njit(cache=True)
def _record_return(EF, EI, RF, RI, C, e, sigma, xrel, a, mu):
    w = weight_w(xrel, a, mu)
    yv = math.exp(mu * (xrel - a))
    EF[e, E_Z] += w
    EF[e, E_Y] += yv
    off = sigma - EF[e, E_TAU]
    if off > EF[e, E_TMAX]:
        EF[e, E_TMAX] = off
    EI[e, E_PENDING] -= 1
    if EI[e, E_PENDING] == 0 and EI[e, E_STATUS] == EXC_ACTIVE:
        EI[e, E_STATUS] = EXC_DONE
    k = C[C_NRET]
    RF[k, 0] = sigma
    RF[k, 1] = w
    RF[k, 2] = yv
    RF[k, 3] = xrel
    RI[k, 0] = e
    C[C_NRET] = k + 1


@njit(cache=True)
def run_steps(rng, PF, PI_, EF, EI, RF, RI, LF, LI, C, t0, h, Xb, k0, nsteps, resume_i,
              a, mu, y, slope, cdf, ks, kill_right, track_exc, log_events, cap,
              zs, ys, ns):
    """Advance one replica through steps ``k0 .. nsteps-1`` of length ``h``.

    ``Xb[k]`` is the absolute barrier position at ``t0 + k h``; the barrier is linear inside a
    step. Hitting ``barrier + a`` kills the particle when ``kill_right`` is set, otherwise it
    opens an excursion (when ``track_exc``) that ends on the line of the given slope started
    ``y`` below the hit level.

    Returns (steps completed, status, particle index to resume at). Storage is never
    reallocated here: when a table may overflow the kernel stops before drawing any random
    number and reports STATUS_GROW, so the caller can enlarge the tables and resume.
    """
    kmax = ks[ks.shape[0] - 1]
    for k in range(k0, nsteps):
        t = t0 + k * h
        b0 = Xb[k]
        b1 = Xb[k + 1]
        db = (b1 - b0) / h
        if resume_i < 0:
            for i in range(C[C_N]):
                PF[i, 2] = 0.0
            i = 0
        else:
            i = resume_i
            resume_i = -1
        while i < C[C_N]:
            while PI_[i, 4] == 0:
                s0 = PF[i, 2]
                rem = h - s0
                if rem <= 0.0:
                    break
                if (C[C_N] + kmax > PF.shape[0] or C[C_NEXC] + 1 > EF.shape[0]
                        or C[C_NRET] + 1 > RF.shape[0] or (log_events and C[C_NLOG] + 3 > LF.shape[0])):
                    C[C_STATUS] = STATUS_GROW
                    return k, STATUS_GROW, i
                clock = PF[i, 1]
                branching = clock < rem
                seg = clock if branching else rem
                s1 = s0 + seg
                x0 = PF[i, 0]
                x1 = x0 - mu * seg + math.sqrt(seg) * rng.standard_normal()
                e = PI_[i, 1]
                if e < 0:
                    bs0 = b0 + db * s0
                    bs1 = b0 + db * s1
                    if _crossed(rng, x0 - bs0, x1 - bs1, seg):
                        PI_[i, 4] = 1
                        C[C_KILL_LEFT] += 1
                        if log_events:
                            tm = t + 0.5 * (s0 + s1)
                            _log(LF, LI, C, tm, EV_ABSORB_LEFT, PI_[i, 2], PI_[i, 3], b0 + db * (tm - t), PI_[i, 0])
                        break
                    if (kill_right or track_exc) and _crossed(rng, bs0 + a - x0, bs1 + a - x1, seg):
                        sm = 0.5 * (s0 + s1)
                        tm = t + sm
                        lvl = b0 + db * sm + a
                        if PI_[i, 0] == 0 or kill_right:
                            C[C_R] += 1
                        if kill_right:
                            PI_[i, 4] = 1
                            C[C_KILL_RIGHT] += 1
                            if log_events:
                                _log(LF, LI, C, tm, EV_KILL_RIGHT, PI_[i, 2], PI_[i, 3], lvl, PI_[i, 0])
                            break
                        if log_events:
                            _log(LF, LI, C, tm, EV_HIT_A, PI_[i, 2], PI_[i, 3], lvl, PI_[i, 0])
                        PI_[i, 0] += 1
                        if track_exc:
                            e = _new_excursion(EF, EI, C, tm, lvl - y, b0 + db * sm, PI_[i, 0], PI_[i, 2])
                            PI_[i, 1] = e
                            # remaining piece of the substep, started on the hit level
                            if x1 <= lvl - y + slope * (s1 - sm):
                                tr = 0.5 * (sm + s1)
                                xr = lvl - y + slope * (tr - sm) - (b0 + db * tr)
                                _record_return(EF, EI, RF, RI, C, e, t + tr, xr, a, mu)
                                PI_[i, 1] = -1
                else:
                    tau = EF[e, E_TAU]
                    l0 = EF[e, E_LINE0] + slope * (t + s0 - tau)
                    l1 = EF[e, E_LINE0] + slope * (t + s1 - tau)
                    if _crossed(rng, x0 - l0, x1 - l1, seg):
                        tr = t + 0.5 * (s0 + s1)
                        xr = EF[e, E_LINE0] + slope * (tr - tau) - (b0 + db * (tr - t))
                        _record_return(EF, EI, RF, RI, C, e, tr, xr, a, mu)
                        if log_events:
                            _log(LF, LI, C, tr, EV_RETURN, PI_[i, 2], PI_[i, 3], xr + b0 + db * (tr - t), PI_[i, 0])
                        PI_[i, 1] = -1
                PF[i, 0] = x1
                PF[i, 2] = s1
                if not branching:
                    PF[i, 1] = clock - seg
                    break
                kk = sample_k(rng, cdf, ks)
                C[C_BRANCH] += 1
                e = PI_[i, 1]
                if kk == 0:
                    PI_[i, 4] = 1
                    if e >= 0:
                        EI[e, E_PENDING] -= 1
                        if EI[e, E_PENDING] == 0 and EI[e, E_STATUS] == EXC_ACTIVE:
                            EI[e, E_STATUS] = EXC_DONE
                    if log_events:
                        _log(LF, LI, C, t + s1, EV_DEATH, PI_[i, 2], PI_[i, 3], x1, PI_[i, 0])
                    break
                parent = PI_[i, 2]
                if log_events:
                    _log(LF, LI, C, t + s1, EV_BRANCH, parent, PI_[i, 3], x1, PI_[i, 0])
                m = C[C_N]
                if m + kk - 1 > cap:
                    C[C_STATUS] = STATUS_CAP
                    return k, STATUS_CAP, i
                PI_[i, 2] = C[C_NEXTID]
                PI_[i, 3] = parent
                C[C_NEXTID] += 1
                PF[i, 1] = rng.standard_exponential()
                for j in range(1, kk):
                    PF[m, 0] = x1
                    PF[m, 1] = rng.standard_exponential()
                    PF[m, 2] = s1
                    PI_[m, 0] = PI_[i, 0]
                    PI_[m, 1] = e
                    PI_[m, 2] = C[C_NEXTID]
                    PI_[m, 3] = parent
                    PI_[m, 4] = 0
                    C[C_NEXTID] += 1
                    m += 1
                C[C_N] = m
                C[C_BIRTHS] += kk - 1
                if e >= 0:
                    EI[e, E_PENDING] += kk - 1
            i += 1
        # stable compaction
        n = C[C_N]
        j = 0
        zsum = 0.0
        ysum = 0.0
        cnt = 0
        for i in range(n):
            if PI_[i, 4] == 0:
                if j != i:
                    for c in range(PF.shape[1]):
                        PF[j, c] = PF[i, c]
                    for c in range(PI_.shape[1]):
                        PI_[j, c] = PI_[i, c]
                if PI_[j, 1] < 0:
                    xr = PF[j, 0] - b1
                    zsum += weight_w(xr, a, mu)
                    ysum += math.exp(mu * (xr - a))
                    cnt += 1
                j += 1
        C[C_N] = j
        zs[k] = zsum
        ys[k] = ysum
        ns[k] = cnt
    C[C_STATUS] = STATUS_OK
    return nsteps, STATUS_OK, -1


@njit(cache=True)
def release_excursion(PF, PI_, EF, EI, C, e, xb, a, mu):
    """Truncate excursion ``e``: its pending particles count at their current place (w >= 0)."""
    n = C[C_N]
    for i in range(n):
        if PI_[i, 4] == 0 and PI_[i, 1] == e:
            xr = PF[i, 0] - xb
            w = weight_w(xr, a, mu)
            if w > 0.0:
                EF[e, E_Z] += w
            EF[e, E_Y] += math.exp(mu * (xr - a))
            PI_[i, 1] = -1
    EI[e, E_PENDING] = 0
    EI[e, E_STATUS] = EXC_TRUNCATED


@njit(cache=True)
def hit_above(rng, PF, PI_, EF, EI, C, t, xb, a, y, track_exc):
    """Particles at or above the hit level at an epoch start count as immediate hits."""
    n = C[C_N]
    for i in range(n):
        if PI_[i, 4] == 0 and PI_[i, 1] < 0 and PF[i, 0] - xb >= a:
            if PI_[i, 0] == 0:
                C[C_R] += 1
            PI_[i, 0] += 1
            if track_exc:
                PI_[i, 1] = _new_excursion(EF, EI, C, t, xb + a - y, xb, PI_[i, 0], PI_[i, 2])


# ---------------------------------------------------------------- exact absorbed BBM

@njit(cache=True)
def _absorb_or_branch(rng, u, c0, nu, ks, cdf):
    """One lifetime of a particle at height u above a line, relative drift -c0.

    Returns (absorbed, duration, new_height).
    """
    p_abs = math.exp(-u * (nu - c0))
    if rng.random() < p_abs:
        # hitting time conditioned to precede an Exp(1) clock: tilted inverse Gaussian
        return True, rng.wald(u / nu, u * u), 0.0
    while True:
        e = rng.standard_exponential()
        v = u - c0 * e + math.sqrt(e) * rng.standard_normal()
        if v > 0.0 and rng.random() >= math.exp(-2.0 * u * v / e):
            return False, e, v


@njit(cache=True)
def absorbed_run(rng, y, c0, cdf, ks, max_events, max_stack):
    """Count particles absorbed at depth y for BBM with drift -c0 started at 0.

    Returns (count, last absorption time, discarded flag).
    """
    nu = math.sqrt(c0 * c0 + 2.0)
    hs = np.empty(1024)
    ts = np.empty(1024)
    hs[0] = y
    ts[0] = 0.0
    top = 1
    count = 0
    events = 0
    tlast = 0.0
    while top > 0:
        top -= 1
        u = hs[top]
        t = ts[top]
        absorbed, d, v = _absorb_or_branch(rng, u, c0, nu, ks, cdf)
        events += 1
        if events > max_events:
            return count, tlast, True
        if absorbed:
            count += 1
            if t + d > tlast:
                tlast = t + d
            continue
        k = sample_k(rng, cdf, ks)
        if top + k > max_stack:
            return count, tlast, True
        if top + k > hs.shape[0]:
            m = max(2 * hs.shape[0], top + k)
            hs2 = np.empty(m)
            ts2 = np.empty(m)
            hs2[:top] = hs[:top]
            ts2[:top] = ts[:top]
            hs = hs2
            ts = ts2
        for j in range(k):
            hs[top] = v
            ts[top] = t + d
            top += 1
    return count, tlast, False


@njit(cache=True)
def excursion_run(rng, a, mu, y, c0, zeta, threshold, cdf, ks, early_stop, max_events):
    """Exact excursion from the hit level down to the critical line.

    Returns (Z', Y', tau_max, n_returns, truncated, stopped_early). Returns after ``zeta``
    are clipped: the run stops as soon as one is seen. With ``early_stop`` the run also
    stops once Z' exceeds ``threshold``.
    """
    nu = math.sqrt(c0 * c0 + 2.0)
    slope = c0 - mu
    hs = np.empty(1024)
    ts = np.empty(1024)
    hs[0] = y
    ts[0] = 0.0
    top = 1
    z = 0.0
    yy = 0.0
    tmax = 0.0
    nret = 0
    events = 0
    while top > 0:
        top -= 1
        u = hs[top]
        t = ts[top]
        absorbed, d, v = _absorb_or_branch(rng, u, c0, nu, ks, cdf)
        events += 1
        if events > max_events:
            return z, yy, tmax, nret, True, True
        if absorbed:
            s = t + d
            if s > tmax:
                tmax = s
            if s > zeta:
                return z, yy, tmax, nret, True, True
            x = a - y + slope * s
            z += weight_w(x, a, mu)
            yy += math.exp(mu * (x - a))
            nret += 1
            if early_stop and z > threshold:
                return z, yy, tmax, nret, False, True
            continue
        k = sample_k(rng, cdf, ks)
        if top + k > hs.shape[0]:
            m = max(2 * hs.shape[0], top + k)
            hs2 = np.empty(m)
            ts2 = np.empty(m)
            hs2[:top] = hs[:top]
            ts2[:top] = ts[:top]
            hs = hs2
            ts = ts2
        for j in range(k):
            hs[top] = v
            ts[top] = t + d
            top += 1
    return z, yy, tmax, nret, False, False
