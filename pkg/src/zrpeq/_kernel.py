"""JIT-compiled event loop for the two-species zero-range process."""

import numpy as np
from numba import njit


@njit(cache=True)
def build_tree(tree, leaves, n_leaves, offset):
    for i in range(tree.shape[0]):
        tree[i] = 0.0
    for i in range(n_leaves):
        tree[offset + i] = leaves[i]
    for i in range(offset - 1, 0, -1):
        tree[i] = tree[2 * i] + tree[2 * i + 1]


@njit(cache=True)
def _set_leaf(tree, offset, leaf, value):
    i = offset + leaf
    tree[i] = value
    i //= 2
    while i >= 1:
        tree[i] = tree[2 * i] + tree[2 * i + 1]
        i //= 2


@njit(cache=True)
def _select(tree, offset, target):
    i = 1
    while i < offset:
        left = tree[2 * i]
        if target < left:
            i = 2 * i
        else:
            target -= left
            i = 2 * i + 1
    return i - offset


@njit(cache=True)
def _pick(cum, u):
    n = cum.shape[0]
    for j in range(n):
        if u < cum[j]:
            return j
    return n - 1


@njit(cache=True)
def run_chunk(eta, g1tab, g2tab, disp1, cum1, disp2, cum2, tree, offset,
              uniforms, state, hist1, hist2, acc, measure_from,
              code_weights, occ_time, flux, loc_samples, n_loc, thin):
    """Advance the chain by ``uniforms.shape[0]`` events.

    ``state`` holds [t, max1, max2, code, event_counter]; ``acc`` collects
    time integrals [T, int M1, int M2] once ``event_counter >= measure_from``.
    Returns the number of location samples written to ``loc_samples``.
    """
    L = eta.shape[0]
    t = state[0]
    max1 = np.int64(state[1])
    max2 = np.int64(state[2])
    code = np.int64(state[3])
    counter = np.int64(state[4])
    track_states = occ_time.shape[0] > 0
    track_flux = flux.shape[0] > 0
    for e in range(uniforms.shape[0]):
        total = tree[1]
        if total <= 0.0:
            state[0] = t
            state[1] = max1
            state[2] = max2
            state[3] = code
            state[4] = counter
            return -1 - n_loc
        dt = -np.log(1.0 - uniforms[e, 1]) / total
        measuring = counter >= measure_from
        if measuring:
            acc[0] += dt
            acc[1] += dt * max1
            acc[2] += dt * max2
            if track_states:
                occ_time[code] += dt
        t += dt
        leaf = _select(tree, offset, uniforms[e, 0] * total)
        if leaf >= 2 * L:
            leaf = 2 * L - 1
        x = leaf // 2
        species = leaf % 2
        if species == 0:
            d = disp1[_pick(cum1, uniforms[e, 2])]
        else:
            d = disp2[_pick(cum2, uniforms[e, 2])]
        y = (x + d) % L
        if y < 0:
            y += L
        if y != x:
            old_code = code
            code -= code_weights[x] * (eta[x, 0] * (g1tab.shape[1]) + eta[x, 1])
            code -= code_weights[y] * (eta[y, 0] * (g1tab.shape[1]) + eta[y, 1])
            if species == 0:
                a = eta[x, 0]
                hist1[a] -= 1
                hist1[a - 1] += 1
                if a == max1 and hist1[a] == 0:
                    max1 -= 1
                eta[x, 0] = a - 1
                c = eta[y, 0]
                hist1[c] -= 1
                hist1[c + 1] += 1
                eta[y, 0] = c + 1
                if c + 1 > max1:
                    max1 = c + 1
            else:
                a = eta[x, 1]
                hist2[a] -= 1
                hist2[a - 1] += 1
                if a == max2 and hist2[a] == 0:
                    max2 -= 1
                eta[x, 1] = a - 1
                c = eta[y, 1]
                hist2[c] -= 1
                hist2[c + 1] += 1
                eta[y, 1] = c + 1
                if c + 1 > max2:
                    max2 = c + 1
            code += code_weights[x] * (eta[x, 0] * (g1tab.shape[1]) + eta[x, 1])
            code += code_weights[y] * (eta[y, 0] * (g1tab.shape[1]) + eta[y, 1])
            if track_flux and measuring:
                flux[old_code, code] += 1
            _set_leaf(tree, offset, 2 * x, g1tab[eta[x, 0], eta[x, 1]])
            _set_leaf(tree, offset, 2 * x + 1, g2tab[eta[x, 0], eta[x, 1]])
            _set_leaf(tree, offset, 2 * y, g1tab[eta[y, 0], eta[y, 1]])
            _set_leaf(tree, offset, 2 * y + 1, g2tab[eta[y, 0], eta[y, 1]])
        counter += 1
        if measuring and thin > 0 and counter % thin == 0 and n_loc < loc_samples.shape[0]:
            b1 = 0
            b2 = 0
            for z in range(L):
                if eta[z, 0] > eta[b1, 0]:
                    b1 = z
                if eta[z, 1] > eta[b2, 1]:
                    b2 = z
            loc_samples[n_loc, 0] = t
            loc_samples[n_loc, 1] = max1
            loc_samples[n_loc, 2] = max2
            loc_samples[n_loc, 3] = b1
            loc_samples[n_loc, 4] = b2
            n_loc += 1
    state[0] = t
    state[1] = max1
    state[2] = max2
    state[3] = code
    state[4] = counter
    return n_loc
