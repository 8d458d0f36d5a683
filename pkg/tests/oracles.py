"""Brute-force reference implementations shared by the unit and acceptance tests."""
import math


def psnr_loop(a, b):
    total = 0.0
    for v, w in zip(a.ravel().tolist(), b.ravel().tolist()):
        total += (v - w) ** 2
    return 10 * math.log10(1.0 / (total / a.size))


def nmse_loop(a, b):
    num = den = 0.0
    for v, w in zip(a.ravel().tolist(), b.ravel().tolist()):
        num += (v - w) ** 2
        den += w * w
    return num / den


def ssim_loop(a, b):
    """Windowed SSIM with explicit loops over every valid window position."""
    g = [math.exp(-((i - 5) ** 2) / (2 * 1.5 ** 2)) for i in range(11)]
    s = sum(g)
    w = [[gi * gj / (s * s) for gj in g] for gi in g]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, wd = a.shape
    vals = []
    for i in range(h - 10):
        for j in range(wd - 10):
            ma = mb = saa = sbb = sab = 0.0
            for u in range(11):
                for v in range(11):
                    x, y, k = a[i + u, j + v], b[i + u, j + v], w[u][v]
                    ma += k * x
                    mb += k * y
                    saa += k * x * x
                    sbb += k * y * y
                    sab += k * x * y
            va, vb, cov = saa - ma * ma, sbb - mb * mb, sab - ma * mb
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return sum(vals) / len(vals)


def js_oracle(p, q, eps=1e-8):
    total = 0.0
    for a, b in zip(p, q):
        m = 0.5 * (a + b)
        lm = math.log(max(m, eps))
        total += 0.5 * a * (math.log(max(a, eps)) - lm) + 0.5 * b * (math.log(max(b, eps)) - lm)
    return max(total, 0.0)


def random_distribution(rng, d):
    x = rng.random(d) ** 3
    return x / x.sum()
