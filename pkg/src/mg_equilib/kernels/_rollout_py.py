"""Pure-Python rollout kernel (fallback for the compiled ``_rollout`` module)."""

from __future__ import annotations

import numpy as np

from ..rng import categorical, rollout_state, uniform


def rollout_batch(P, R, bernoulli, s1, action_counts, pol_start, pol_count,
                  pol_w, pol_fac, aoff, cover_p, cycle, override,
                  override_mask, key, start, count, stop):
    m = len(action_counts)
    num_cover = pol_start.shape[0]
    states = np.zeros((count, stop + 1), dtype=np.int64)
    actions = np.zeros((count, stop, m), dtype=np.int64)
    rewards = np.zeros((count, stop, m), dtype=np.float64)
    picks = np.zeros(count, dtype=np.int64)

    # plain lists: indexing numpy scalars one by one is slower than this copy
    Pl = P.tolist()
    Rl = R.tolist()
    wl = pol_w.tolist()
    facl = pol_fac.tolist()
    ovl = override.tolist()
    cpl = cover_p.tolist()
    startl = pol_start.tolist()
    cntl = pol_count.tolist()
    acl = [int(a) for a in action_counts]
    aol = [int(a) for a in aoff]
    mask = [bool(x) for x in override_mask]

    for idx in range(count):
        j = start + idx
        st = rollout_state(key, j)
        d = 0
        if cycle:
            ell = j % num_cover
        else:
            ell = categorical(cpl, uniform(st, d))
            d += 1
        picks[idx] = ell
        s = s1
        states[idx, 0] = s
        for h in range(stop):
            c0 = startl[ell][h][s]
            nc = cntl[ell][h][s]
            c = c0 + categorical(wl[c0:c0 + nc], uniform(st, d))
            d += 1
            final = h == stop - 1
            jidx = 0
            for p in range(m):
                lo = aol[p]
                hi = lo + acl[p]
                if final and mask[p]:
                    a = categorical(ovl[s][lo:hi], uniform(st, d))
                else:
                    a = categorical(facl[c][lo:hi], uniform(st, d))
                d += 1
                actions[idx, h, p] = a
                jidx = jidx * acl[p] + a
            means = Rl[h][s][jidx]
            for p in range(m):
                if bernoulli:
                    r = 1.0 if uniform(st, d) < means[p] else 0.0
                    d += 1
                else:
                    r = means[p]
                rewards[idx, h, p] = r
            s = categorical(Pl[h][s][jidx], uniform(st, d))
            d += 1
            states[idx, h + 1] = s
    return states, actions, rewards, picks
