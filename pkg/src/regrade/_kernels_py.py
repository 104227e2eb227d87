"""Pure-Python (numpy) twin of the compiled transport kernel."""

import numpy as np


def ssp_transport(cost, supply, demand, eps):
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, m = cost.shape
    flow = np.zeros((n, m))
    if n == 0 or m == 0:
        return flow, 0
    sup = np.array(supply, dtype=np.float64)
    dem = np.array(demand, dtype=np.float64)
    V = n + m
    pot = np.zeros(V)
    left_sup = float(sup.sum())
    left_dem = float(dem.sum())
    augmentations = 0

    while left_sup > eps and left_dem > eps:
        dist = np.full(V, np.inf)
        pred = np.full(V, -1, dtype=np.intp)
        done = np.zeros(V, dtype=bool)
        dist[:n][sup > eps] = 0.0
        target = -1
        while True:
            masked = np.where(done, np.inf, dist)
            best = int(np.argmin(masked))
            bestd = masked[best]
            if not np.isfinite(bestd):
                break
            done[best] = True
            if best >= n:
                j = best - n
                if dem[j] > eps:
                    target = best
                    break
                cand = (~done[:n]) & (flow[:, j] > eps)
                idx = np.flatnonzero(cand)
                if idx.size:
                    rc = np.maximum(-cost[idx, j] + pot[best] - pot[idx], 0.0)
                    nd = bestd + rc
                    better = nd < dist[idx]
                    dist[idx[better]] = nd[better]
                    pred[idx[better]] = best
            else:
                sinks = ~done[n:]
                idx = np.flatnonzero(sinks)
                if idx.size:
                    rc = np.maximum(cost[best, idx] + pot[best] - pot[n + idx], 0.0)
                    nd = bestd + rc
                    better = nd < dist[n + idx]
                    dist[n + idx[better]] = nd[better]
                    pred[n + idx[better]] = best
        if target < 0:
            break

        D = dist[target]
        pot += np.minimum(dist, D)

        delta = dem[target - n]
        v = target
        while True:
            u = pred[v]
            if u < 0:
                root = v
                break
            if v < n and flow[v, u - n] < delta:
                delta = flow[v, u - n]
            v = u
        delta = min(delta, sup[root])

        v = target
        while True:
            u = pred[v]
            if u < 0:
                break
            if v >= n:
                flow[u, v - n] += delta
            else:
                flow[v, u - n] -= delta
                if flow[v, u - n] <= eps:
                    flow[v, u - n] = 0.0
            v = u

        sup[root] -= delta
        dem[target - n] -= delta
        left_sup -= delta
        left_dem -= delta
        if sup[root] <= eps:
            sup[root] = 0.0
        if dem[target - n] <= eps:
            dem[target - n] = 0.0
        augmentations += 1

    return flow, augmentations
